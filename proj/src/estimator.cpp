#include "sparsecap/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sparsecap/errors.hpp"
#include "sparsecap/nn/checkpoint.hpp"
#include "sparsecap/nn/ops.hpp"
#include "sparsecap/nn/optim.hpp"

namespace sparsecap {

using nn::Matrix;
using nn::Var;

namespace {

void put6(Matrix& m, Eigen::Index row, int col, const Rot6& r) {
  for (int k = 0; k < 6; ++k) m(row, col + k) = r[k];
}

void put3(Matrix& m, Eigen::Index row, int col, const Vec3& v) {
  for (int k = 0; k < 3; ++k) m(row, col + k) = v[k];
}

std::vector<double> default_joint_weights(const SkeletonModel& skeleton) {
  std::vector<double> w(skeleton.joint_count(), 1.0);
  for (int j : skeleton.end_effectors()) w[j] = 2.0;
  return w;
}

std::vector<int> xyz_columns(std::span<const int> joints) {
  std::vector<int> cols;
  for (int j : joints) {
    for (int k = 0; k < 3; ++k) cols.push_back(3 * j + k);
  }
  return cols;
}

Var fk_from_motion(const Var& motion, const SkeletonModel& skeleton) {
  const Var root = nn::slice_cols(motion, 0, 3);
  const Var rot = nn::rot6d_to_matrix(nn::slice_cols(motion, 3, 6 * kJointCount));
  return nn::fk_positions(root, rot, skeleton);
}

}  // namespace

WindowInput assemble_window(const HeadTrajectory& head, const ImuStream& imu, int start, int length,
                            std::span<const double> floor_levels) {
  if (length <= 0 || start < 0) throw ValidationError("assemble_window: invalid window range");
  const std::size_t end = static_cast<std::size_t>(start) + static_cast<std::size_t>(length);
  if (end > head.size() || head.up.size() != head.size()) {
    throw ValidationError("assemble_window: head trajectory does not cover frames [" + std::to_string(start) + ", " +
                          std::to_string(end) + ")");
  }
  if (end > imu.size()) {
    throw ValidationError("assemble_window: IMU stream does not cover frames [" + std::to_string(start) + ", " +
                          std::to_string(end) + ")");
  }
  if (floor_levels.size() != static_cast<std::size_t>(length)) {
    throw ValidationError("assemble_window: expected one floor level per window frame");
  }

  WindowInput in;
  in.world_to_head = head.poses[start].inverse();
  const Rotation& to_head = in.world_to_head.rotation;
  in.features.resize(length, kInputWidth);
  for (int i = 0; i < length; ++i) {
    const std::size_t t = static_cast<std::size_t>(start + i);
    const RigidTransform h = in.world_to_head * head.poses[t];
    put3(in.features, i, input_cols::kHeadPosition, h.translation);
    put6(in.features, i, input_cols::kHeadRotation, h.rotation.six_d());
    for (int s = 0; s < 2; ++s) {
      const ImuSample& sample = imu.frames[t][s];
      put6(in.features, i, input_cols::kWristRotation + 6 * s, (to_head * sample.orientation).six_d());
      put3(in.features, i, input_cols::kWristAcceleration + 3 * s, to_head * sample.acceleration);
    }
    in.features(i, input_cols::kHeight) = head.poses[t].translation.z() - floor_levels[i];
    put3(in.features, i, input_cols::kUp, head.up[t]);
  }
  if (!in.features.allFinite()) throw ValidationError("assemble_window: non-finite input values");
  return in;
}

Matrix encode_motion_rows(std::span<const Pose> frames) {
  Matrix m(static_cast<Eigen::Index>(frames.size()), kMotionWidth);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Pose& p = frames[i];
    if (static_cast<int>(p.rotations.size()) != kJointCount) throw ValidationError("pose must hold 22 rotations");
    put3(m, static_cast<Eigen::Index>(i), 0, p.root_translation);
    for (int j = 0; j < kJointCount; ++j) put6(m, static_cast<Eigen::Index>(i), 3 + 6 * j, p.rotations[j].six_d());
  }
  return m;
}

std::vector<Pose> decode_motion_rows(const Matrix& rows) {
  if (rows.cols() != kMotionWidth) throw ValidationError("motion rows must be 135 wide");
  std::vector<Pose> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if (!rows.row(i).allFinite()) throw NumericalError("non-finite motion row " + std::to_string(i));
    Pose& p = out[static_cast<std::size_t>(i)];
    p.root_translation = Vec3(rows(i, 0), rows(i, 1), rows(i, 2));
    for (int j = 0; j < kJointCount; ++j) {
      std::array<double, 6> v;
      for (int k = 0; k < 6; ++k) v[k] = rows(i, 3 + 6 * j + k);
      try {
        p.rotations[j] = Rotation::from_6d(v);
      } catch (const ValidationError& e) {
        throw NumericalError("motion row " + std::to_string(i) + ", joint " + std::to_string(j) + ": " + e.what());
      }
    }
  }
  return out;
}

Matrix end_effector_rows(const SkeletonModel& skeleton, std::span<const Pose> frames) {
  Matrix m(static_cast<Eigen::Index>(frames.size()), kMidWidth);
  const auto ee = skeleton.end_effectors();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const GlobalPose g = forward_kinematics(skeleton, frames[i]);
    for (int e = 0; e < 4; ++e) put3(m, static_cast<Eigen::Index>(i), 3 * e, g.positions[ee[e]]);
  }
  return m;
}

// ---------------------------------------------------------------------------

EstimatorConfig EstimatorConfig::full() {
  EstimatorConfig c;
  c.end_width = 1280;
  c.body_input_width = 640;
  c.body_mid_width = 640;
  c.heads = 10;
  c.layers = 4;
  return c;
}

EstimatorConfig EstimatorConfig::from(const KeyValueConfig& cfg, const EstimatorConfig& base) {
  EstimatorConfig c = base;
  if (cfg.get_string("preset", "") == "full") c = full();
  c.window = cfg.get_int("window", c.window);
  c.end_width = cfg.get_int("end_width", c.end_width);
  c.body_input_width = cfg.get_int("body_input_width", c.body_input_width);
  c.body_mid_width = cfg.get_int("body_mid_width", c.body_mid_width);
  c.heads = cfg.get_int("heads", c.heads);
  c.layers = cfg.get_int("layers", c.layers);
  c.ffn_multiplier = cfg.get_int("ffn_multiplier", c.ffn_multiplier);
  c.mlp_hidden = cfg.get_int("mlp_hidden", c.mlp_hidden);
  c.validate();
  return c;
}

EstimatorConfig EstimatorConfig::from(const KeyValueConfig& cfg) { return from(cfg, toy()); }

void EstimatorConfig::validate() const {
  if (window < 4) throw ValidationError("estimator window must be at least 4 frames");
  if (end_width <= 0 || body_input_width <= 0 || body_mid_width <= 0 || mlp_hidden <= 0 || ffn_multiplier <= 0) {
    throw ValidationError("estimator widths must be positive");
  }
  if (heads <= 0 || layers <= 0) throw ValidationError("estimator needs at least one head and one layer");
  if (end_width % heads != 0 || body_width() % heads != 0) {
    throw ValidationError("estimator embedding widths must be divisible by the head count");
  }
}

std::vector<ParameterShape> estimator_parameter_shapes(const EstimatorConfig& c) {
  c.validate();
  std::vector<ParameterShape> s;
  auto linear = [&](const std::string& p, int in, int out) {
    s.push_back({p + ".weight", in, out});
    s.push_back({p + ".bias", 1, out});
  };
  auto norm = [&](const std::string& p, int w) {
    s.push_back({p + ".gamma", 1, w});
    s.push_back({p + ".beta", 1, w});
  };
  auto encoder = [&](const std::string& p, int w) {
    for (int l = 0; l < c.layers; ++l) {
      const std::string q = p + ".layer" + std::to_string(l);
      for (const char* n : {".attn.q", ".attn.k", ".attn.v", ".attn.out"}) linear(q + n, w, w);
      norm(q + ".norm1", w);
      norm(q + ".norm2", w);
      linear(q + ".ff1", w, c.ffn_multiplier * w);
      linear(q + ".ff2", c.ffn_multiplier * w, w);
    }
  };
  auto mlp = [&](const std::string& p, int in, int out) {
    linear(p + ".fc1", in, c.mlp_hidden);
    linear(p + ".fc2", c.mlp_hidden, out);
  };
  linear("end.embed", kInputWidth, c.end_width);
  encoder("end.encoder", c.end_width);
  mlp("end.head", c.end_width, kMidWidth);
  linear("body.embed_input", kInputWidth, c.body_input_width);
  linear("body.embed_mid", kMidWidth, c.body_mid_width);
  encoder("body.encoder", c.body_width());
  mlp("body.contact", c.body_width(), kContactWidth);
  mlp("body.motion", c.body_width() + kContactWidth, kMotionWidth);
  return s;
}

MotionEstimator::MotionEstimator(const EstimatorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  nn::Rng rng(seed);
  const int ew = config_.end_width, bw = config_.body_width();
  end_embed_ = nn::Linear(kInputWidth, ew, rng);
  end_encoder_ = nn::TransformerEncoder(ew, config_.heads, config_.ffn_multiplier * ew, config_.layers, rng);
  end_head_ = nn::Mlp(ew, config_.mlp_hidden, kMidWidth, rng);
  body_input_embed_ = nn::Linear(kInputWidth, config_.body_input_width, rng);
  body_mid_embed_ = nn::Linear(kMidWidth, config_.body_mid_width, rng);
  body_encoder_ = nn::TransformerEncoder(bw, config_.heads, config_.ffn_multiplier * bw, config_.layers, rng);
  contact_head_ = nn::Mlp(bw, config_.mlp_hidden, kContactWidth, rng);
  motion_head_ = nn::Mlp(bw + kContactWidth, config_.mlp_hidden, kMotionWidth, rng);
}

Var MotionEstimator::f_end(const Var& x) const {
  nn::require_shape(x.cols() == kInputWidth && x.rows() > 0 && x.rows() % config_.window == 0, "f_end",
                    "input must be (windows * " + std::to_string(config_.window) + ") x 31");
  Var h = nn::add_positional_encoding(end_embed_(x), config_.window);
  h = end_encoder_(h, config_.window);
  return end_head_(h);
}

MotionEstimator::Output MotionEstimator::f_body(const Var& x, const Var& mid) const {
  nn::require_shape(x.cols() == kInputWidth && x.rows() > 0 && x.rows() % config_.window == 0, "f_body",
                    "input must be (windows * " + std::to_string(config_.window) + ") x 31");
  nn::require_shape(mid.cols() == kMidWidth && mid.rows() == x.rows(), "f_body", "mid must match the input rows, 12 wide");
  Var h = nn::concat_cols({body_input_embed_(x), body_mid_embed_(mid)});
  h = nn::add_positional_encoding(h, config_.window);
  h = body_encoder_(h, config_.window);
  Output out;
  out.mid = mid;
  out.contacts = nn::sigmoid(contact_head_(h));
  out.motion = motion_head_(nn::concat_cols({h, out.contacts}));
  return out;
}

nn::ParameterSet MotionEstimator::parameters() const {
  nn::ParameterSet p;
  end_embed_.collect("end.embed", p);
  end_encoder_.collect("end.encoder", p);
  end_head_.collect("end.head", p);
  body_input_embed_.collect("body.embed_input", p);
  body_mid_embed_.collect("body.embed_mid", p);
  body_encoder_.collect("body.encoder", p);
  contact_head_.collect("body.contact", p);
  motion_head_.collect("body.motion", p);
  return p;
}

void MotionEstimator::zero_output_layers() {
  end_head_.fc2.zero();
  contact_head_.fc2.zero();
  motion_head_.fc2.zero();
}

// ---------------------------------------------------------------------------

LossWeights LossWeights::from(const KeyValueConfig& cfg) {
  LossWeights w;
  w.pos = cfg.get_double("w_pos", w.pos);
  w.rot = cfg.get_double("w_rot", w.rot);
  w.root = cfg.get_double("w_root", w.root);
  w.mid = cfg.get_double("w_mid", w.mid);
  w.contact = cfg.get_double("w_contact", w.contact);
  w.footvel = cfg.get_double("w_footvel", w.footvel);
  w.cons = cfg.get_double("w_cons", w.cons);
  if (cfg.has("end_effector_weight")) {
    const double ee = cfg.get_double("end_effector_weight", 2.0);
    const SkeletonModel body = SkeletonModel::mean_body();
    w.joint_weights.assign(body.joint_count(), 1.0);
    for (int j : body.end_effectors()) w.joint_weights[j] = ee;
  }
  return w;
}

Var training_loss(const MotionEstimator::Output& out, const WindowTargets& targets, const SkeletonModel& skeleton,
                  const LossWeights& weights, int seq_len, double frame_rate, LossBreakdown* breakdown) {
  const Eigen::Index rows = out.motion.rows();
  if (targets.contacts.rows() != rows || targets.contacts.cols() != kContactWidth) {
    throw ValidationError("training_loss: ground-truth contacts are missing or misshaped");
  }
  if (targets.motion.rows() != rows || targets.motion.cols() != kMotionWidth || targets.mid.rows() != rows ||
      targets.mid.cols() != kMidWidth) {
    throw ValidationError("training_loss: targets do not match the output shape");
  }
  if (out.mid.rows() != rows || out.contacts.rows() != rows) throw ValidationError("training_loss: output row mismatch");
  if (skeleton.joint_count() != kJointCount) throw ValidationError("training_loss: skeleton must have 22 joints");
  if (seq_len <= 1 || rows % seq_len != 0) throw ValidationError("training_loss: rows must be whole windows");

  std::vector<double> jw = weights.joint_weights.empty() ? default_joint_weights(skeleton) : weights.joint_weights;
  if (static_cast<int>(jw.size()) != skeleton.joint_count()) throw ValidationError("training_loss: joint weight count");
  std::vector<double> pos_weights;
  for (double w : jw) pos_weights.insert(pos_weights.end(), 3, w);

  const double n = static_cast<double>(rows);
  const Var gt_motion = Var::constant(targets.motion);
  const Var pos = fk_from_motion(out.motion, skeleton);
  const Var gt_pos = fk_from_motion(gt_motion, skeleton);

  const auto& named = skeleton.named();
  const std::array<int, 2> feet = {named.l_foot, named.r_foot};
  const auto ee = skeleton.end_effectors();
  const std::vector<int> foot_cols = xyz_columns(feet);
  const std::vector<int> ee_cols = xyz_columns(ee);

  const Var l_pos = nn::l1_loss(pos, gt_pos, n, pos_weights);
  const int body_cols = 6 * (kJointCount - 1);
  const Var l_rot = nn::l1_loss(nn::slice_cols(out.motion, 9, body_cols), nn::slice_cols(gt_motion, 9, body_cols), n);
  const Var l_root = nn::l1_loss(nn::slice_cols(out.motion, 0, 9), nn::slice_cols(gt_motion, 0, 9), n);
  const Var l_mid = nn::l1_loss(out.mid, Var::constant(targets.mid), n);
  const Var l_contact = nn::bce_loss(out.contacts, Var::constant(targets.contacts), n);
  const Var vel = nn::time_derivative(nn::gather_cols(pos, foot_cols), seq_len, frame_rate);
  const Var gt_vel = nn::time_derivative(nn::gather_cols(gt_pos, foot_cols), seq_len, frame_rate);
  const Var l_footvel = nn::l1_loss(vel, gt_vel, n);
  const Var l_cons = nn::l1_loss(nn::gather_cols(pos, ee_cols), out.mid, n);

  Var total = nn::scale(l_pos, weights.pos);
  total = nn::add(total, nn::scale(l_rot, weights.rot));
  total = nn::add(total, nn::scale(l_root, weights.root));
  total = nn::add(total, nn::scale(l_mid, weights.mid));
  total = nn::add(total, nn::scale(l_contact, weights.contact));
  total = nn::add(total, nn::scale(l_footvel, weights.footvel));
  total = nn::add(total, nn::scale(l_cons, weights.cons));

  if (breakdown) {
    breakdown->pos = l_pos.item();
    breakdown->rot = l_rot.item();
    breakdown->root = l_root.item();
    breakdown->mid = l_mid.item();
    breakdown->contact = l_contact.item();
    breakdown->footvel = l_footvel.item();
    breakdown->cons = l_cons.item();
    breakdown->total = total.item();
  }
  return total;
}

WindowDataset build_window_dataset(const std::vector<TrainingSequence>& sequences, const SkeletonModel& skeleton,
                                   int window, int stride) {
  if (window < 2 || stride < 1) throw ValidationError("dataset window must be >= 2 and stride >= 1");
  std::vector<std::pair<std::size_t, int>> starts;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    const std::size_t T = seq.motion.size();
    if (seq.motion.contacts.size() != T) throw ValidationError("training sequence " + std::to_string(s) + " has no contact labels");
    if (seq.head.size() != T || seq.imu.size() != T || seq.floor_levels.size() != T) {
      throw ValidationError("training sequence " + std::to_string(s) + " has misaligned streams");
    }
    if (T < static_cast<std::size_t>(window)) continue;
    const int last = static_cast<int>(T) - window;
    for (int a = 0; a <= last; a += stride) starts.emplace_back(s, a);
    if (last % stride != 0) starts.emplace_back(s, last);
  }
  if (starts.empty()) throw ValidationError("no training sequence is as long as one window");

  WindowDataset d;
  d.window = window;
  const Eigen::Index rows = static_cast<Eigen::Index>(starts.size()) * window;
  d.inputs.resize(rows, kInputWidth);
  d.targets.motion.resize(rows, kMotionWidth);
  d.targets.mid.resize(rows, kMidWidth);
  d.targets.contacts.resize(rows, kContactWidth);
  for (std::size_t w = 0; w < starts.size(); ++w) {
    const auto& seq = sequences[starts[w].first];
    const int a = starts[w].second;
    const Eigen::Index r0 = static_cast<Eigen::Index>(w) * window;
    const WindowInput in = assemble_window(seq.head, seq.imu, a, window,
                                           std::span<const double>(seq.floor_levels).subspan(a, window));
    d.inputs.middleRows(r0, window) = in.features;
    std::vector<Pose> frames;
    for (int i = 0; i < window; ++i) frames.push_back(transform_pose(in.world_to_head, seq.motion.frames[a + i]));
    d.targets.motion.middleRows(r0, window) = encode_motion_rows(frames);
    d.targets.mid.middleRows(r0, window) = end_effector_rows(skeleton, frames);
    for (int i = 0; i < window; ++i) {
      d.targets.contacts(r0 + i, 0) = seq.motion.contacts[a + i][0];
      d.targets.contacts(r0 + i, 1) = seq.motion.contacts[a + i][1];
    }
  }
  return d;
}

EstimatorTrainingOptions EstimatorTrainingOptions::from(const KeyValueConfig& cfg) {
  EstimatorTrainingOptions o;
  o.steps = cfg.get_int("steps", o.steps);
  o.batch_windows = cfg.get_int("batch_windows", o.batch_windows);
  o.lr = cfg.get_double("lr", o.lr);
  o.weight_decay = cfg.get_double("weight_decay", o.weight_decay);
  o.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<int>(o.seed)));
  o.log_every = cfg.get_int("log_every", o.log_every);
  o.weights = LossWeights::from(cfg);
  return o;
}

namespace {

LossBreakdown evaluate_dataset(const MotionEstimator& model, const WindowDataset& data, const SkeletonModel& skeleton,
                               const LossWeights& weights, double frame_rate) {
  constexpr int kChunk = 32;
  LossBreakdown sum;
  const int count = data.count();
  for (int w0 = 0; w0 < count; w0 += kChunk) {
    const int n = std::min(kChunk, count - w0);
    const Eigen::Index r0 = static_cast<Eigen::Index>(w0) * data.window, rows = static_cast<Eigen::Index>(n) * data.window;
    WindowTargets t{data.targets.motion.middleRows(r0, rows), data.targets.mid.middleRows(r0, rows),
                    data.targets.contacts.middleRows(r0, rows)};
    const auto out = model.forward(Var::constant(data.inputs.middleRows(r0, rows)));
    LossBreakdown b;
    training_loss(out, t, skeleton, weights, data.window, frame_rate, &b);
    const double f = static_cast<double>(n) / count;
    sum.pos += f * b.pos;
    sum.rot += f * b.rot;
    sum.root += f * b.root;
    sum.mid += f * b.mid;
    sum.contact += f * b.contact;
    sum.footvel += f * b.footvel;
    sum.cons += f * b.cons;
    sum.total += f * b.total;
  }
  return sum;
}

}  // namespace

TrainingReport train_estimator(MotionEstimator& model, const WindowDataset& data, const SkeletonModel& skeleton,
                               const EstimatorTrainingOptions& options,
                               const std::function<void(int, const LossBreakdown&)>& on_log) {
  if (data.window != model.config().window) throw ValidationError("dataset window does not match the model window");
  if (data.count() == 0) throw ValidationError("empty training dataset");
  if (options.steps < 0 || options.batch_windows < 1) throw ValidationError("invalid training step or batch count");
  const double rate = kDefaultFrameRate;

  TrainingReport report;
  report.initial = evaluate_dataset(model, data, skeleton, options.weights, rate);
  nn::AdamW opt(model.parameters(), {options.lr, 0.9, 0.999, 1e-8, options.weight_decay});
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> pick(0, data.count() - 1);
  const int N = data.window;
  const Eigen::Index rows = static_cast<Eigen::Index>(options.batch_windows) * N;
  Matrix x(rows, kInputWidth);
  WindowTargets t{Matrix(rows, kMotionWidth), Matrix(rows, kMidWidth), Matrix(rows, kContactWidth)};

  for (int step = 0; step < options.steps; ++step) {
    for (int b = 0; b < options.batch_windows; ++b) {
      const Eigen::Index src = static_cast<Eigen::Index>(pick(rng)) * N, dst = static_cast<Eigen::Index>(b) * N;
      x.middleRows(dst, N) = data.inputs.middleRows(src, N);
      t.motion.middleRows(dst, N) = data.targets.motion.middleRows(src, N);
      t.mid.middleRows(dst, N) = data.targets.mid.middleRows(src, N);
      t.contacts.middleRows(dst, N) = data.targets.contacts.middleRows(src, N);
    }
    // Cosine decay to 5% of the base rate.
    const double progress = options.steps > 1 ? static_cast<double>(step) / (options.steps - 1) : 0.0;
    opt.set_lr(options.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress))));
    LossBreakdown b;
    const Var loss = training_loss(model.forward(Var::constant(x)), t, skeleton, options.weights, N, rate, &b);
    if (!std::isfinite(b.total)) throw NumericalError("estimator training loss is not finite at step " + std::to_string(step));
    opt.zero_grad();
    nn::backward(loss);
    try {
      opt.step();
    } catch (const NumericalError& e) {
      throw NumericalError("estimator training step " + std::to_string(step) + ": " + e.what());
    }
    report.losses.push_back(b.total);
    if (on_log && options.log_every > 0 && (step + 1) % options.log_every == 0) on_log(step + 1, b);
  }
  report.final = evaluate_dataset(model, data, skeleton, options.weights, rate);
  return report;
}

void save_estimator(const std::string& path, const MotionEstimator& model) {
  const EstimatorConfig& c = model.config();
  std::map<std::string, std::string> meta = {
      {"kind", "motion-estimator"},
      {"window", std::to_string(c.window)},
      {"end_width", std::to_string(c.end_width)},
      {"body_input_width", std::to_string(c.body_input_width)},
      {"body_mid_width", std::to_string(c.body_mid_width)},
      {"heads", std::to_string(c.heads)},
      {"layers", std::to_string(c.layers)},
      {"ffn_multiplier", std::to_string(c.ffn_multiplier)},
      {"mlp_hidden", std::to_string(c.mlp_hidden)},
  };
  nn::save_checkpoint(path, nn::snapshot(model.parameters(), std::move(meta)));
}

MotionEstimator load_estimator(const std::string& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (!ckpt.has("end.embed.weight") || ckpt.meta.count("kind") == 0 || ckpt.meta_value("kind") != "motion-estimator") {
    throw ValidationError("'" + path + "' is not a motion estimator checkpoint");
  }
  KeyValueConfig cfg;
  for (const auto& [k, v] : ckpt.meta) cfg.set(k, v);
  MotionEstimator model(EstimatorConfig::from(cfg), 0);
  nn::restore(ckpt, model.parameters());
  return model;
}

// ---------------------------------------------------------------------------

WindowPrediction NeuralRegressor::predict(const WindowInput& input, int /*start*/) const {
  const auto out = model_->forward(Var::constant(input.features));
  WindowPrediction p;
  p.frames = decode_motion_rows(out.motion.value());
  const Matrix& c = out.contacts.value();
  for (Eigen::Index i = 0; i < c.rows(); ++i) p.contacts.push_back({c(i, 0), c(i, 1)});
  return p;
}

OracleRegressor::OracleRegressor(MotionSequence truth, int window) : truth_(std::move(truth)), window_(window) {
  if (truth_.contacts.size() != truth_.size()) throw ValidationError("oracle regressor needs contact labels");
  if (window_ < 1) throw ValidationError("oracle window must be positive");
}

WindowPrediction OracleRegressor::predict(const WindowInput& input, int start) const {
  const int n = static_cast<int>(input.features.rows());
  if (start < 0 || static_cast<std::size_t>(start + n) > truth_.size()) {
    throw ValidationError("oracle regressor asked for frames outside its sequence");
  }
  WindowPrediction p;
  for (int i = 0; i < n; ++i) {
    p.frames.push_back(transform_pose(input.world_to_head, truth_.frames[start + i]));
    p.contacts.push_back(truth_.contacts[start + i]);
  }
  return p;
}

InferenceResult infer_sequence(const HeadTrajectory& head, const ImuStream& imu, const PointCloud& cloud,
                               const WindowRegressor& regressor, const SkeletonModel& skeleton,
                               const InferenceOptions& options) {
  const int N = regressor.window();
  const int T = static_cast<int>(head.size());
  if (static_cast<int>(imu.size()) != T) {
    throw ValidationError("head trajectory (" + std::to_string(T) + " frames) and IMU stream (" +
                          std::to_string(imu.size()) + " frames) are not aligned");
  }
  if (T < N) throw ValidationError("sequence of " + std::to_string(T) + " frames is shorter than one window (" + std::to_string(N) + ")");
  if (options.stride < 1 || options.stride > N) throw ValidationError("inference stride must lie in [1, window]");

  std::vector<int> starts;
  for (int a = 0; a + N <= T; a += options.stride) starts.push_back(a);
  if (starts.back() + N < T) starts.push_back(T - N);

  InferenceResult result;
  result.motion.frame_rate = head.frame_rate;
  std::vector<Pose> frames(T);
  std::vector<ContactPair> contacts(T, {0.0, 0.0});
  std::vector<std::array<Vec3, 2>> feet(T);
  std::vector<double> levels(T, 0.0);
  const auto& named = skeleton.named();
  FloorState state;
  int written = 0, finalized = 0;

  for (std::size_t k = 0; k < starts.size(); ++k) {
    const int a = starts[k];
    std::vector<double> window_levels(N);
    for (int i = 0; i < N; ++i) window_levels[i] = a + i < finalized ? levels[a + i] : state.level;
    const WindowInput in = assemble_window(head, imu, a, N, window_levels);
    const WindowPrediction pred = regressor.predict(in, a);
    if (static_cast<int>(pred.frames.size()) != N || static_cast<int>(pred.contacts.size()) != N) {
      throw ValidationError("window regressor returned the wrong number of frames");
    }
    const std::vector<Pose> world = denormalize_frames(pred.frames, in.world_to_head);
    const int overlap = std::max(0, written - a);
    for (int i = 0; i < N; ++i) {
      const int t = a + i;
      ContactPair c = {std::clamp(pred.contacts[i][0], 0.0, 1.0), std::clamp(pred.contacts[i][1], 0.0, 1.0)};
      if (i < overlap) {
        const double w = static_cast<double>(i + 1) / (overlap + 1);
        Pose blended;
        blended.root_translation = (1.0 - w) * frames[t].root_translation + w * world[i].root_translation;
        for (int j = 0; j < kJointCount; ++j) blended.rotations[j] = slerp(frames[t].rotations[j], world[i].rotations[j], w);
        frames[t] = std::move(blended);
        for (int s = 0; s < 2; ++s) contacts[t][s] = (1.0 - w) * contacts[t][s] + w * c[s];
      } else {
        frames[t] = world[i];
        contacts[t] = c;
      }
    }
    written = a + N;

    const int next = k + 1 < starts.size() ? starts[k + 1] : T;
    for (int t = finalized; t < next; ++t) {
      const GlobalPose g = forward_kinematics(skeleton, frames[t]);
      feet[t] = {g.positions[named.l_foot], g.positions[named.r_foot]};
    }
    const std::span<const ContactPair> known(contacts.data(), static_cast<std::size_t>(written));
    const std::span<const std::array<Vec3, 2>> known_feet(feet.data(), static_cast<std::size_t>(next));
    for (int t = finalized; t < next; ++t) {
      if (t > 0) state = update_floor(state, t, known, known_feet, cloud, options.floor);
      levels[t] = state.level;
    }
    finalized = next;
  }

  result.motion.frames = std::move(frames);
  result.motion.contacts = std::move(contacts);
  result.floor_levels = std::move(levels);
  result.floor = std::move(state);
  return result;
}

}  // namespace sparsecap
