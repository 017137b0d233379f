#include "sparsecap/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "sparsecap/errors.hpp"
#include "sparsecap/nn/checkpoint.hpp"
#include "sparsecap/nn/ops.hpp"
#include "sparsecap/nn/optim.hpp"

namespace sparsecap {

using nn::Matrix;
using nn::Var;

namespace {

constexpr int kStride = 2;
constexpr int kMinFrames = 32;

int padded_length(int frames) {
  const int rounded = (frames + kTemporalDownsample - 1) / kTemporalDownsample * kTemporalDownsample;
  return std::max(kMinFrames, rounded);
}

Matrix pad_rows(const Matrix& rows, int length) {
  Matrix out(length, rows.cols());
  out.topRows(rows.rows()) = rows;
  for (Eigen::Index r = rows.rows(); r < length; ++r) out.row(r) = rows.row(rows.rows() - 1);
  return out;
}

Var fk_from_manifold(const Var& rows, const SkeletonModel& skeleton) {
  const Var root = nn::slice_cols(rows, manifold_cols::kRoot, 3);
  const Var rot = nn::rot6d_to_matrix(nn::slice_cols(rows, manifold_cols::kRotations, 6 * kJointCount));
  return nn::fk_positions(root, rot, skeleton);
}

std::vector<int> foot_columns(const SkeletonModel& skeleton) {
  std::vector<int> cols;
  for (int j : {skeleton.named().l_foot, skeleton.named().r_foot}) {
    for (int k = 0; k < 3; ++k) cols.push_back(3 * j + k);
  }
  return cols;
}

}  // namespace

RigidTransform heading_normalization(const Pose& first) {
  const Vec3 facing = first.rotations[0] * Vec3::UnitY();
  const double yaw = std::atan2(-facing.x(), facing.y());
  RigidTransform t;
  t.rotation = Rotation::about_z(-yaw);
  const Vec3 root = t.rotation * first.root_translation;
  t.translation = Vec3(-root.x(), -root.y(), 0.0);
  return t;
}

Matrix motion_to_manifold(const MotionSequence& motion, const RigidTransform& world_to_local) {
  const bool has_contacts = motion.contacts.size() == motion.size();
  if (!motion.contacts.empty() && !has_contacts) throw ValidationError("contact count does not match the frame count");
  Matrix m(static_cast<Eigen::Index>(motion.size()), kManifoldWidth);
  for (std::size_t t = 0; t < motion.size(); ++t) {
    const Eigen::Index r = static_cast<Eigen::Index>(t);
    const Pose p = transform_pose(world_to_local, motion.frames[t]);
    m(r, 0) = has_contacts ? motion.contacts[t][0] : 0.0;
    m(r, 1) = has_contacts ? motion.contacts[t][1] : 0.0;
    for (int k = 0; k < 3; ++k) m(r, manifold_cols::kRoot + k) = p.root_translation[k];
    for (int j = 0; j < kJointCount; ++j) {
      const Rot6 s = p.rotations[j].six_d();
      for (int k = 0; k < 6; ++k) m(r, manifold_cols::kRotations + 6 * j + k) = s[k];
    }
  }
  return m;
}

MotionSequence manifold_to_motion(const Matrix& rows, const RigidTransform& local_to_world, double frame_rate) {
  if (rows.cols() != kManifoldWidth) throw ValidationError("manifold rows must be 137 wide");
  MotionSequence out;
  out.frame_rate = frame_rate;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    if (!rows.row(r).allFinite()) throw NumericalError("non-finite manifold row " + std::to_string(r));
    Pose p;
    p.root_translation = rows.block<1, 3>(r, manifold_cols::kRoot).transpose();
    for (int j = 0; j < kJointCount; ++j) {
      std::array<double, 6> v;
      for (int k = 0; k < 6; ++k) v[k] = rows(r, manifold_cols::kRotations + 6 * j + k);
      try {
        p.rotations[j] = Rotation::from_6d(v);
      } catch (const ValidationError& e) {
        throw NumericalError("manifold row " + std::to_string(r) + ", joint " + std::to_string(j) + ": " + e.what());
      }
    }
    out.frames.push_back(transform_pose(local_to_world, p));
    out.contacts.push_back({std::clamp(rows(r, 0), 0.0, 1.0), std::clamp(rows(r, 1), 0.0, 1.0)});
  }
  return out;
}

// ---------------------------------------------------------------------------

AutoencoderConfig AutoencoderConfig::from(const KeyValueConfig& cfg) {
  AutoencoderConfig c = cfg.get_string("preset", "") == "full" ? full() : toy();
  c.channels = cfg.get_int("channels", c.channels);
  c.kernel = cfg.get_int("kernel", c.kernel);
  c.validate();
  return c;
}

void AutoencoderConfig::validate() const {
  if (channels <= 0) throw ValidationError("autoencoder channel count must be positive");
  if (kernel < 3 || kernel % 2 == 0) throw ValidationError("autoencoder kernel must be odd and at least 3");
}

MotionAutoencoder::MotionAutoencoder(const AutoencoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  nn::Rng rng(seed);
  const int c = config_.channels, k = config_.kernel, p = k / 2;
  enc_[0] = nn::Conv1d(kManifoldWidth, c, k, kStride, p, rng);
  enc_[1] = nn::Conv1d(c, c, k, kStride, p, rng);
  enc_[2] = nn::Conv1d(c, c, k, kStride, p, rng);
  dec_[0] = nn::ConvTranspose1d(c, c, k, kStride, p, 1, rng);
  dec_[1] = nn::ConvTranspose1d(c, c, k, kStride, p, 1, rng);
  dec_[2] = nn::ConvTranspose1d(c, kManifoldWidth, k, kStride, p, 1, rng);
  mean_ = Matrix::Zero(1, kManifoldWidth);
  scale_ = Matrix::Ones(1, kManifoldWidth);
}

Var MotionAutoencoder::encode(const Var& x) const {
  nn::require_shape(x.cols() == kManifoldWidth, "encode", "input must be 137 wide");
  nn::require_shape(x.rows() >= kMinFrames && x.rows() % kTemporalDownsample == 0, "encode",
                    "frame count " + std::to_string(x.rows()) + " must be a multiple of 8 and at least 32");
  Var h = nn::gelu(enc_[0](x));
  h = nn::gelu(enc_[1](h));
  return enc_[2](h);
}

Var MotionAutoencoder::decode(const Var& z) const {
  nn::require_shape(z.cols() == config_.channels && z.rows() > 0, "decode",
                    "latent must be " + std::to_string(config_.channels) + " wide");
  Var h = nn::gelu(dec_[0](z));
  h = nn::gelu(dec_[1](h));
  return dec_[2](h);
}

void MotionAutoencoder::set_statistics(const Matrix& mean, const Matrix& scale, double min_scale) {
  if (mean.rows() != 1 || mean.cols() != kManifoldWidth || scale.rows() != 1 || scale.cols() != kManifoldWidth) {
    throw ValidationError("standardization statistics must be 1 x 137");
  }
  if (!mean.allFinite() || !scale.allFinite()) throw NumericalError("non-finite standardization statistics");
  mean_ = mean;
  scale_ = scale.cwiseMax(min_scale);
}

Matrix MotionAutoencoder::standardize(const Matrix& rows) const {
  Matrix out = rows;
  out.rowwise() -= mean_.row(0);
  out.array().rowwise() /= scale_.row(0).array();
  return out;
}

Var MotionAutoencoder::destandardize(const Var& rows) const {
  const Var s = Var::constant(scale_.replicate(rows.rows(), 1));
  return nn::add_row(nn::mul(rows, s), Var::constant(mean_));
}

nn::ParameterSet MotionAutoencoder::parameters() const {
  nn::ParameterSet p;
  for (int i = 0; i < 3; ++i) enc_[i].collect("enc" + std::to_string(i), p);
  for (int i = 0; i < 3; ++i) dec_[i].collect("dec" + std::to_string(i), p);
  return p;
}

void MotionAutoencoder::zero() {
  for (auto& c : enc_) c.zero();
  for (auto& c : dec_) c.zero();
}

Var reconstruction_loss(const Var& predicted, const Matrix& target, const SkeletonModel& skeleton,
                        const ReconstructionWeights& weights, ReconstructionBreakdown* breakdown) {
  nn::require_shape(predicted.cols() == kManifoldWidth && target.cols() == kManifoldWidth &&
                        predicted.rows() == target.rows() && target.rows() > 0,
                    "reconstruction_loss", "prediction and target must be matching T x 137");
  const double T = static_cast<double>(target.rows());
  const Var tgt = Var::constant(target);
  auto mae = [&](int start, int count) {
    return nn::l1_loss(nn::slice_cols(predicted, start, count), nn::slice_cols(tgt, start, count), T * count);
  };
  const Var contact = mae(manifold_cols::kContacts, 2);
  const Var root = mae(manifold_cols::kRoot, 9);
  const Var rot = mae(manifold_cols::kRotations + 6, 6 * (kJointCount - 1));
  const Var pos = nn::l1_loss(fk_from_manifold(predicted, skeleton), fk_from_manifold(tgt, skeleton),
                              T * 3 * skeleton.joint_count());
  Var total = nn::add(nn::add(nn::scale(contact, weights.contact), nn::scale(root, weights.root)),
                      nn::add(nn::scale(rot, weights.rot), nn::scale(pos, weights.pos)));
  if (breakdown) {
    *breakdown = {contact.item(), root.item(), rot.item(), pos.item(), total.item()};
  }
  return total;
}

AutoencoderTrainingOptions AutoencoderTrainingOptions::from(const KeyValueConfig& cfg) {
  AutoencoderTrainingOptions o;
  o.steps = cfg.get_int("steps", o.steps);
  o.crop = cfg.get_int("crop", o.crop);
  o.lr = cfg.get_double("lr", o.lr);
  o.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<int>(o.seed)));
  o.log_every = cfg.get_int("log_every", o.log_every);
  o.weights.contact = cfg.get_double("w_contact", o.weights.contact);
  o.weights.root = cfg.get_double("w_root", o.weights.root);
  o.weights.rot = cfg.get_double("w_rot", o.weights.rot);
  o.weights.pos = cfg.get_double("w_pos", o.weights.pos);
  return o;
}

namespace {

Matrix crop_rows(const MotionSequence& seq, int start, int length) {
  MotionSequence crop;
  crop.frame_rate = seq.frame_rate;
  crop.frames.assign(seq.frames.begin() + start, seq.frames.begin() + start + length);
  if (seq.contacts.size() == seq.size()) crop.contacts.assign(seq.contacts.begin() + start, seq.contacts.begin() + start + length);
  return motion_to_manifold(crop, heading_normalization(crop.frames.front()));
}

ReconstructionBreakdown evaluate_crops(const MotionAutoencoder& model, const std::vector<Matrix>& crops,
                                       const SkeletonModel& skeleton, const ReconstructionWeights& weights) {
  ReconstructionBreakdown sum;
  for (const auto& c : crops) {
    ReconstructionBreakdown b;
    const Var out = model.destandardize(model.decode(model.encode(Var::constant(model.standardize(c)))));
    reconstruction_loss(out, c, skeleton, weights, &b);
    const double f = 1.0 / static_cast<double>(crops.size());
    sum.contact += f * b.contact;
    sum.root += f * b.root;
    sum.rot += f * b.rot;
    sum.pos += f * b.pos;
    sum.total += f * b.total;
  }
  return sum;
}

}  // namespace

AutoencoderReport train_autoencoder(MotionAutoencoder& model, const std::vector<MotionSequence>& sequences,
                                    const SkeletonModel& skeleton, const AutoencoderTrainingOptions& options,
                                    const std::function<void(int, const ReconstructionBreakdown&)>& on_log) {
  if (options.crop < kMinFrames || options.crop % kTemporalDownsample != 0) {
    throw ValidationError("autoencoder crop must be a multiple of 8 and at least 32 frames");
  }
  if (options.steps < 0) throw ValidationError("autoencoder step count must be non-negative");
  std::vector<std::pair<std::size_t, int>> pool;  // (sequence, last valid start)
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    if (static_cast<int>(sequences[s].size()) >= options.crop) {
      pool.emplace_back(s, static_cast<int>(sequences[s].size()) - options.crop);
    }
  }
  if (pool.empty()) throw ValidationError("no training sequence is as long as the autoencoder crop");

  // Statistics over every frame of every usable sequence, heading-normalized per sequence.
  Eigen::Index total_rows = 0;
  std::vector<Matrix> full;
  for (const auto& [s, last] : pool) {
    full.push_back(crop_rows(sequences[s], 0, static_cast<int>(sequences[s].size())));
    total_rows += full.back().rows();
  }
  Matrix mean = Matrix::Zero(1, kManifoldWidth), sq = Matrix::Zero(1, kManifoldWidth);
  for (const auto& m : full) mean += m.colwise().sum();
  mean /= static_cast<double>(total_rows);
  for (const auto& m : full) sq += (m.rowwise() - mean.row(0)).array().square().matrix().colwise().sum();
  model.set_statistics(mean, (sq / static_cast<double>(total_rows)).cwiseSqrt());

  std::vector<Matrix> eval_crops;
  for (const auto& [s, last] : pool) eval_crops.push_back(crop_rows(sequences[s], 0, options.crop));

  AutoencoderReport report;
  report.initial = evaluate_crops(model, eval_crops, skeleton, options.weights);
  nn::AdamW opt(model.parameters(), {options.lr, 0.9, 0.999, 1e-8, 0.0});
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_seq(0, pool.size() - 1);
  for (int step = 0; step < options.steps; ++step) {
    const auto& [s, last] = pool[pick_seq(rng)];
    const int start = last > 0 ? std::uniform_int_distribution<int>(0, last)(rng) : 0;
    const Matrix target = crop_rows(sequences[s], start, options.crop);
    const double progress = options.steps > 1 ? static_cast<double>(step) / (options.steps - 1) : 0.0;
    opt.set_lr(options.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress))));
    ReconstructionBreakdown b;
    const Var out = model.destandardize(model.decode(model.encode(Var::constant(model.standardize(target)))));
    const Var loss = reconstruction_loss(out, target, skeleton, options.weights, &b);
    if (!std::isfinite(b.total)) throw NumericalError("autoencoder training loss is not finite at step " + std::to_string(step));
    opt.zero_grad();
    nn::backward(loss);
    try {
      opt.step();
    } catch (const NumericalError& e) {
      throw NumericalError("autoencoder training step " + std::to_string(step) + ": " + e.what());
    }
    report.losses.push_back(b.total);
    if (on_log && options.log_every > 0 && (step + 1) % options.log_every == 0) on_log(step + 1, b);
  }
  report.final = evaluate_crops(model, eval_crops, skeleton, options.weights);
  return report;
}

MotionSequence reconstruct(const MotionAutoencoder& model, const MotionSequence& motion) {
  if (motion.size() == 0) throw ValidationError("cannot reconstruct an empty motion");
  const RigidTransform to_local = heading_normalization(motion.frames.front());
  const int T = static_cast<int>(motion.size());
  const Matrix x = pad_rows(motion_to_manifold(motion, to_local), padded_length(T));
  const Var out = model.destandardize(model.decode(model.encode(Var::constant(model.standardize(x)))));
  return manifold_to_motion(out.value().topRows(T), to_local.inverse(), motion.frame_rate);
}

void save_autoencoder(const std::string& path, const MotionAutoencoder& model) {
  nn::Checkpoint ckpt = nn::snapshot(model.parameters(), {{"kind", "motion-autoencoder"},
                                                           {"channels", std::to_string(model.config().channels)},
                                                           {"kernel", std::to_string(model.config().kernel)}});
  ckpt.tensors.emplace_back("stats.mean", model.mean());
  ckpt.tensors.emplace_back("stats.scale", model.scale());
  nn::save_checkpoint(path, ckpt);
}

MotionAutoencoder load_autoencoder(const std::string& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (ckpt.meta.count("kind") == 0 || ckpt.meta_value("kind") != "motion-autoencoder") {
    throw ValidationError("'" + path + "' is not a motion autoencoder checkpoint");
  }
  KeyValueConfig cfg;
  for (const auto& [k, v] : ckpt.meta) cfg.set(k, v);
  MotionAutoencoder model(AutoencoderConfig::from(cfg), 0);
  nn::restore(ckpt, model.parameters());
  model.set_statistics(ckpt.tensor("stats.mean"), ckpt.tensor("stats.scale"), 0.0);
  return model;
}

// ---------------------------------------------------------------------------

std::optional<Vec2> project(const PinholeCamera& camera, const Vec3& world_point) {
  const Vec3 x = camera.pose.inverse().apply(world_point);
  if (!(x.z() > 0)) return std::nullopt;
  return Vec2(camera.fx * x.x() / x.z() + camera.cx, camera.fy * x.y() / x.z() + camera.cy);
}

std::vector<double> default_pose_cue_weights(const SkeletonModel& skeleton) {
  std::vector<double> w(kJointCount - 1, 1.0);
  for (const char* side : {"l_", "r_"}) {
    for (const char* part : {"hip", "knee", "ankle"}) {
      w[skeleton.index_of(std::string(side) + part) - 1] = 2.0;
    }
  }
  return w;
}

namespace {

Rotation parse_quaternion(const nlohmann::json& q, const std::string& where) {
  if (!q.is_array() || q.size() != 4) throw ValidationError(where + ": quaternion must have 4 entries");
  Quat4 v;
  double n2 = 0.0;
  for (int k = 0; k < 4; ++k) {
    v[k] = q.at(k).get<double>();
    n2 += v[k] * v[k];
  }
  const double n = std::sqrt(n2);
  if (!(std::abs(n - 1.0) <= 1e-3)) throw ValidationError(where + ": quaternion is not unit norm");
  for (double& x : v) x /= n;
  return Rotation::from_quaternion(v);
}

Vec3 parse_vec3(const nlohmann::json& a, const std::string& where) {
  if (!a.is_array() || a.size() != 3) throw ValidationError(where + ": expected 3 numbers");
  return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
}

nlohmann::json quat_json(const Rotation& r) {
  const Quat4 q = r.quaternion();
  return nlohmann::json::array({q[0], q[1], q[2], q[3]});
}

}  // namespace

CueSet parse_cues(std::istream& in, const SkeletonModel& skeleton) {
  CueSet cues;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "cue line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      const int frame = j.at("t").get<int>();
      if (frame < 0) throw ValidationError(where + ": negative frame");
      if (kind == "e2d") {
        JointCue2D c;
        c.frame = frame;
        const auto& joint = j.at("joint");
        c.joint = joint.is_string() ? skeleton.index_of(joint.get<std::string>()) : joint.get<int>();
        if (c.joint < 0 || c.joint >= skeleton.joint_count()) throw ValidationError(where + ": joint out of range");
        const auto& uv = j.at("uv");
        if (!uv.is_array() || uv.size() != 2) throw ValidationError(where + ": uv must have 2 entries");
        c.uv = Vec2(uv.at(0).get<double>(), uv.at(1).get<double>());
        const auto& cam = j.at("cam");
        c.camera.pose.translation = parse_vec3(cam.at("p"), where);
        c.camera.pose.rotation = parse_quaternion(cam.at("q"), where);
        c.camera.fx = cam.at("fx").get<double>();
        c.camera.fy = cam.at("fy").get<double>();
        c.camera.cx = cam.at("cx").get<double>();
        c.camera.cy = cam.at("cy").get<double>();
        if (!(c.camera.fx > 0) || !(c.camera.fy > 0)) throw ValidationError(where + ": focal lengths must be positive");
        if (!c.uv.allFinite()) throw ValidationError(where + ": non-finite pixel coordinates");
        cues.joints2d.push_back(c);
      } else if (kind == "t3d") {
        PoseCue3D c;
        c.frame = frame;
        const auto& q = j.at("q");
        if (!q.is_array() || q.size() != kJointCount - 1) {
          throw ValidationError(where + ": expected " + std::to_string(kJointCount - 1) + " joint rotations");
        }
        for (const auto& qj : q) c.rotations.push_back(parse_quaternion(qj, where));
        if (j.contains("w")) {
          const auto& w = j.at("w");
          if (!w.is_array() || w.size() != kJointCount - 1) throw ValidationError(where + ": expected 21 weights");
          for (const auto& wj : w) {
            const double v = wj.get<double>();
            if (!(v >= 0) || !std::isfinite(v)) throw ValidationError(where + ": weights must be finite and non-negative");
            c.weights.push_back(v);
          }
        } else {
          c.weights = default_pose_cue_weights(skeleton);
        }
        cues.poses3d.push_back(std::move(c));
      } else {
        throw ValidationError(where + ": unknown cue kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      throw ValidationError(msg.rfind("cue line", 0) == 0 ? msg : where + ": " + msg);
    }
  }
  return cues;
}

CueSet load_cues(const std::string& path, const SkeletonModel& skeleton) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cue file '" + path + "'");
  return parse_cues(in, skeleton);
}

void write_cues(const std::string& path, const CueSet& cues, const SkeletonModel& skeleton) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write cue file '" + path + "'");
  for (const auto& c : cues.joints2d) {
    nlohmann::json j;
    j["kind"] = "e2d";
    j["t"] = c.frame;
    j["joint"] = skeleton.name(c.joint);
    j["uv"] = {c.uv.x(), c.uv.y()};
    const Vec3& p = c.camera.pose.translation;
    j["cam"] = {{"p", {p.x(), p.y(), p.z()}}, {"q", quat_json(c.camera.pose.rotation)}, {"fx", c.camera.fx},
                {"fy", c.camera.fy}, {"cx", c.camera.cx}, {"cy", c.camera.cy}};
    out << j.dump() << '\n';
  }
  for (const auto& c : cues.poses3d) {
    nlohmann::json j;
    j["kind"] = "t3d";
    j["t"] = c.frame;
    j["q"] = nlohmann::json::array();
    for (const auto& r : c.rotations) j["q"].push_back(quat_json(r));
    j["w"] = c.weights;
    out << j.dump() << '\n';
  }
}

Var reprojection_loss(const Var& positions, const std::vector<JointCue2D>& cues, int* skipped) {
  struct Term {
    Eigen::Index row;
    int col;
    Mat3 rot;  // camera-to-world rotation
    Vec3 x;    // camera-frame point
    Vec2 r;    // pixel residual
    double fx, fy, d;
  };
  std::vector<Term> terms;
  int skip = 0;
  for (const auto& c : cues) {
    nn::require_shape(c.frame >= 0 && c.frame < positions.rows() && 3 * c.joint + 2 < positions.cols(),
                      "reprojection_loss", "cue references a frame or joint outside the positions");
    const Vec3 p = positions.value().block<1, 3>(c.frame, 3 * c.joint).transpose();
    const Mat3& R = c.camera.pose.rotation.matrix();
    const Vec3 x = R.transpose() * (p - c.camera.pose.translation);
    if (!(x.z() > 0)) {
      ++skip;
      continue;
    }
    const Vec2 uv(c.camera.fx * x.x() / x.z() + c.camera.cx, c.camera.fy * x.y() / x.z() + c.camera.cy);
    const Vec2 r = uv - c.uv;
    terms.push_back({c.frame, 3 * c.joint, R, x, r, c.camera.fx, c.camera.fy, r.norm()});
  }
  if (skipped) *skipped = skip;
  Matrix y = Matrix::Zero(1, 1);
  const double n = static_cast<double>(terms.size());
  for (const auto& t : terms) y(0, 0) += t.d / n;
  return nn::make_op(std::move(y), {positions}, [positions, terms, n](const Matrix& g) {
    Matrix d = Matrix::Zero(positions.rows(), positions.cols());
    for (const auto& t : terms) {
      if (t.d <= 0) continue;
      const Vec2 dr = t.r / t.d;
      const double z = t.x.z();
      const Vec3 gx(dr.x() * t.fx / z, dr.y() * t.fy / z,
                    -(dr.x() * t.fx * t.x.x() + dr.y() * t.fy * t.x.y()) / (z * z));
      const Vec3 gp = t.rot * gx * (g(0, 0) / n);
      for (int k = 0; k < 3; ++k) d(t.row, t.col + k) += gp[k];
    }
    positions.accumulate(d);
  });
}

LatentOptions LatentOptions::from(const KeyValueConfig& cfg) {
  LatentOptions o;
  o.reg_weight = cfg.get_double("reg_weight", o.reg_weight);
  o.slip_weight = cfg.get_double("slip_weight", o.slip_weight);
  o.lr_2d = cfg.get_double("lr_2d", o.lr_2d);
  o.lr_3d = cfg.get_double("lr_3d", o.lr_3d);
  o.iterations = cfg.get_int("iterations", o.iterations);
  o.final_lr_fraction = cfg.get_double("final_lr_fraction", o.final_lr_fraction);
  o.patience = cfg.get_int("patience", o.patience);
  o.min_improvement = cfg.get_double("min_improvement", o.min_improvement);
  return o;
}

namespace {

// 6D columns (first two matrix columns) of joints 1..21 within R x 9J row-major rotation matrices.
std::vector<int> body_six_d_columns() {
  std::vector<int> cols;
  for (int j = 1; j < kJointCount; ++j) {
    for (int c = 0; c < 2; ++c) {
      for (int r = 0; r < 3; ++r) cols.push_back(9 * j + 3 * r + c);
    }
  }
  return cols;
}

Matrix pose_cue_target(const PoseCue3D& c) {
  Matrix t(1, 6 * (kJointCount - 1));
  for (int j = 0; j < kJointCount - 1; ++j) {
    const Rot6 s = c.rotations[j].six_d();
    for (int k = 0; k < 6; ++k) t(0, 6 * j + k) = s[k];
  }
  return t;
}

std::vector<double> six_d_weights(const PoseCue3D& c) {
  std::vector<double> w;
  for (double v : c.weights) w.insert(w.end(), 6, v);
  return w;
}

}  // namespace

double foot_slip(const MotionSequence& motion, const SkeletonModel& skeleton) {
  if (motion.size() < 2) throw ValidationError("foot slip needs at least two frames");
  if (motion.contacts.size() != motion.size()) throw ValidationError("foot slip needs contact labels");
  const JointTrack v = joint_velocities(skeleton, motion);
  const int feet[2] = {skeleton.named().l_foot, skeleton.named().r_foot};
  double sum = 0.0;
  for (std::size_t t = 0; t < motion.size(); ++t) {
    for (int s = 0; s < 2; ++s) sum += std::clamp(motion.contacts[t][s], 0.0, 1.0) * v[t][feet[s]].norm();
  }
  return sum / static_cast<double>(motion.size());
}

double pose_cue_error(const MotionSequence& motion, const std::vector<PoseCue3D>& cues) {
  if (cues.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : cues) {
    if (c.frame < 0 || c.frame >= static_cast<int>(motion.size())) throw ValidationError("pose cue frame out of range");
    for (int j = 1; j < kJointCount; ++j) {
      const Rot6 a = motion.frames[c.frame].rotations[j].six_d(), b = c.rotations[j - 1].six_d();
      for (int k = 0; k < 6; ++k) sum += c.weights[j - 1] * std::abs(a[k] - b[k]);
    }
  }
  return sum / static_cast<double>(cues.size());
}

LatentResult optimize_latent(const MotionSequence& motion, const CueSet& cues, const MotionAutoencoder& model,
                             const SkeletonModel& skeleton, const LatentOptions& options) {
  const int T = static_cast<int>(motion.size());
  if (T < 2) throw ValidationError("latent optimization needs at least two frames");
  for (const auto& c : cues.joints2d) {
    if (c.frame >= T) throw ValidationError("2D cue on frame " + std::to_string(c.frame) + " is outside the motion (" + std::to_string(T) + " frames)");
    if (c.joint < 0 || c.joint >= skeleton.joint_count()) throw ValidationError("2D cue joint out of range");
  }
  for (const auto& c : cues.poses3d) {
    if (c.frame >= T) throw ValidationError("3D cue on frame " + std::to_string(c.frame) + " is outside the motion (" + std::to_string(T) + " frames)");
    if (c.rotations.size() != kJointCount - 1 || c.weights.size() != kJointCount - 1) {
      throw ValidationError("3D cue must carry 21 rotations and 21 weights");
    }
  }
  if (options.iterations < 0 || options.patience < 1) throw ValidationError("invalid latent optimization schedule");

  const RigidTransform to_local = heading_normalization(motion.frames.front());
  const RigidTransform to_world = to_local.inverse();
  const Matrix x = model.standardize(pad_rows(motion_to_manifold(motion, to_local), padded_length(T)));

  std::vector<JointCue2D> local2d = cues.joints2d;
  for (auto& c : local2d) c.camera.pose = to_local * c.camera.pose;
  const std::vector<int> six_cols = body_six_d_columns();
  const std::vector<int> feet = foot_columns(skeleton);
  std::vector<Matrix> pose_targets;
  for (const auto& c : cues.poses3d) pose_targets.push_back(pose_cue_target(c));

  LatentResult result;
  result.z0 = model.encode(Var::constant(x)).value();
  const Var z0c = Var::constant(result.z0);
  const double numel = static_cast<double>(result.z0.size());

  auto evaluate = [&](const Var& z, LatentTerms& terms) {
    const Var rows = nn::slice_rows(model.destandardize(model.decode(z)), 0, T);
    const Var root = nn::slice_cols(rows, manifold_cols::kRoot, 3);
    const Var rot = nn::rot6d_to_matrix(nn::slice_cols(rows, manifold_cols::kRotations, 6 * kJointCount));
    const Var pos = nn::fk_positions(root, rot, skeleton);
    Var vis = Var::constant(Matrix::Zero(1, 1));
    if (!local2d.empty()) vis = nn::add(vis, reprojection_loss(pos, local2d, &result.skipped_cues));
    if (!cues.poses3d.empty()) {
      const Var six = nn::gather_cols(rot, six_cols);
      Var sum3d = Var::constant(Matrix::Zero(1, 1));
      for (std::size_t i = 0; i < cues.poses3d.size(); ++i) {
        const auto& c = cues.poses3d[i];
        sum3d = nn::add(sum3d, nn::l1_loss(nn::slice_rows(six, c.frame, 1), Var::constant(pose_targets[i]), 1.0, six_d_weights(c)));
      }
      vis = nn::add(vis, nn::scale(sum3d, 1.0 / static_cast<double>(cues.poses3d.size())));
    }
    const Var reg = nn::scale(nn::mse_loss(z, z0c), options.reg_weight * numel);
    const Var contact = nn::clamp(nn::slice_cols(rows, manifold_cols::kContacts, 2), 0.0, 1.0);
    const Var speed = nn::group_norms(nn::time_derivative(nn::gather_cols(pos, feet), T, motion.frame_rate), 3);
    const Var slip = nn::scale(nn::sum_all(nn::mul(contact, speed)), 1.0 / T);
    const Var total = nn::add(nn::add(vis, reg), nn::scale(slip, options.slip_weight));
    terms = {vis.item(), reg.item(), slip.item(), total.item()};
    if (!std::isfinite(terms.total)) throw NumericalError("latent optimization loss is not finite");
    return std::make_pair(total, rows);
  };

  Var z = Var::parameter(result.z0);
  auto [loss, rows] = evaluate(z, result.initial);
  result.best = result.initial;
  Matrix best_rows = rows.value();
  Matrix best_z = result.z0;

  if (!cues.empty()) {
    nn::ParameterSet params;
    params.add("z", z);
    const double lr = cues.joints2d.empty() ? options.lr_3d : options.lr_2d;
    nn::AdamW opt(params, {lr, 0.9, 0.999, 1e-8, 0.0});
    std::vector<double> best_history = {result.best.total};
    for (int it = 1; it <= options.iterations; ++it) {
      const double progress = options.iterations > 1 ? static_cast<double>(it - 1) / (options.iterations - 1) : 0.0;
      const double f = options.final_lr_fraction;
      opt.set_lr(lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress))));
      opt.zero_grad();
      nn::backward(loss);
      opt.step();
      LatentTerms terms;
      std::tie(loss, rows) = evaluate(z, terms);
      result.iterations = it;
      if (terms.vis <= result.initial.vis && terms.total < result.best.total) {
        result.best = terms;
        result.best_iteration = it;
        best_rows = rows.value();
        best_z = z.value();
      }
      best_history.push_back(result.best.total);
      if (it >= options.patience && best_history[it - options.patience] - result.best.total < options.min_improvement) break;
    }
  }
  result.z = best_z;
  result.motion = manifold_to_motion(best_rows, to_world, motion.frame_rate);
  return result;
}

}  // namespace sparsecap
