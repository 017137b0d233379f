#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sparsecap/config.hpp"
#include "sparsecap/floor.hpp"
#include "sparsecap/nn/layers.hpp"
#include "sparsecap/sensors.hpp"
#include "sparsecap/skeleton.hpp"

namespace sparsecap {

inline constexpr int kWindowLength = 40;
/// Head position 3, head 6D 6, wrist 6D 12, wrist acceleration 6, height 1, up 3.
inline constexpr int kInputWidth = 31;
/// Left wrist, right wrist, left foot, right foot positions.
inline constexpr int kMidWidth = 12;
/// Root translation 3 + 22 rotations in 6D.
inline constexpr int kMotionWidth = 3 + 6 * kJointCount;
inline constexpr int kContactWidth = 2;

/// Input column offsets.
namespace input_cols {
inline constexpr int kHeadPosition = 0;
inline constexpr int kHeadRotation = 3;
inline constexpr int kWristRotation = 9;
inline constexpr int kWristAcceleration = 21;
inline constexpr int kHeight = 27;
inline constexpr int kUp = 28;
}  // namespace input_cols

struct WindowInput {
  nn::Matrix features;  // length x 31
  /// World to first-frame head coordinates.
  RigidTransform world_to_head;
};

/// Builds the head-normalized input for frames [start, start + length).
/// floor_levels holds the floor level in effect at each of those frames.
WindowInput assemble_window(const HeadTrajectory& head, const ImuStream& imu, int start, int length,
                            std::span<const double> floor_levels);

/// Motion rows (135 wide) for poses.
nn::Matrix encode_motion_rows(std::span<const Pose> frames);
/// Inverse of encode_motion_rows; rotations go through Gram-Schmidt.
std::vector<Pose> decode_motion_rows(const nn::Matrix& rows);
/// End-effector positions (12 wide) from FK.
nn::Matrix end_effector_rows(const SkeletonModel& skeleton, std::span<const Pose> frames);

struct EstimatorConfig {
  int window = kWindowLength;
  int end_width = 64;
  int body_input_width = 32;
  int body_mid_width = 32;
  int heads = 4;
  int layers = 2;
  int ffn_multiplier = 4;
  int mlp_hidden = 256;

  static EstimatorConfig toy() { return {}; }
  /// 1280-wide F_end, 640 + 640 F_body, 10 heads, 4 layers.
  static EstimatorConfig full();
  /// Reads keys window, end_width, body_input_width, body_mid_width, heads,
  /// layers, ffn_multiplier, mlp_hidden on top of `base`.
  static EstimatorConfig from(const KeyValueConfig& cfg, const EstimatorConfig& base);
  static EstimatorConfig from(const KeyValueConfig& cfg);
  int body_width() const { return body_input_width + body_mid_width; }
  void validate() const;
};

struct ParameterShape {
  std::string name;
  int rows = 0, cols = 0;
};
/// Parameter names and shapes for a configuration without allocating them.
std::vector<ParameterShape> estimator_parameter_shapes(const EstimatorConfig& config);

/// Two-stage window regressor: F_end predicts end-effector positions, F_body
/// predicts contacts and then the full motion from encoder features and contacts.
class MotionEstimator {
 public:
  struct Output {
    nn::Var mid;       // rows x 12
    nn::Var contacts;  // rows x 2, in [0, 1]
    nn::Var motion;    // rows x 135
  };

  MotionEstimator(const EstimatorConfig& config, std::uint64_t seed);

  /// x holds whole windows stacked as row blocks of config().window rows.
  nn::Var f_end(const nn::Var& x) const;
  Output f_body(const nn::Var& x, const nn::Var& mid) const;
  Output forward(const nn::Var& x) const { return f_body(x, f_end(x)); }

  nn::ParameterSet parameters() const;
  const EstimatorConfig& config() const { return config_; }
  /// Zeroes the output layers of the mid, contact and motion heads.
  void zero_output_layers();

 private:
  EstimatorConfig config_;
  nn::Linear end_embed_;
  nn::TransformerEncoder end_encoder_;
  nn::Mlp end_head_;
  nn::Linear body_input_embed_, body_mid_embed_;
  nn::TransformerEncoder body_encoder_;
  nn::Mlp contact_head_, motion_head_;
};

struct LossWeights {
  double pos = 1.0, rot = 1.0, root = 1.0, mid = 1.0, contact = 1.0, footvel = 1.0, cons = 1.0;
  /// Per-joint position weights; empty means 1 with end-effectors at 2.
  std::vector<double> joint_weights;
  static LossWeights from(const KeyValueConfig& cfg);
};

struct LossBreakdown {
  double pos = 0, rot = 0, root = 0, mid = 0, contact = 0, footvel = 0, cons = 0, total = 0;
};

/// Ground truth for stacked windows in the normalized frame.
struct WindowTargets {
  nn::Matrix motion;    // rows x 135
  nn::Matrix mid;       // rows x 12
  nn::Matrix contacts;  // rows x 2
};

/// Sum of the seven weighted terms. L1 terms sum over components and average
/// over frames; the foot velocity term compares time derivatives of the FK foot positions.
nn::Var training_loss(const MotionEstimator::Output& out, const WindowTargets& targets, const SkeletonModel& skeleton,
                      const LossWeights& weights, int seq_len, double frame_rate, LossBreakdown* breakdown = nullptr);

/// One recorded or synthetic sequence with ground truth.
struct TrainingSequence {
  MotionSequence motion;  // must carry contacts
  HeadTrajectory head;
  ImuStream imu;
  std::vector<double> floor_levels;
};

struct WindowDataset {
  nn::Matrix inputs;
  WindowTargets targets;
  int window = kWindowLength;
  int count() const { return window > 0 ? static_cast<int>(inputs.rows()) / window : 0; }
};

WindowDataset build_window_dataset(const std::vector<TrainingSequence>& sequences, const SkeletonModel& skeleton,
                                   int window, int stride);

struct EstimatorTrainingOptions {
  int steps = 2000;
  int batch_windows = 8;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  LossWeights weights;
  /// Report every n steps through the callback (0 = never).
  int log_every = 0;
  static EstimatorTrainingOptions from(const KeyValueConfig& cfg);
};

struct TrainingReport {
  std::vector<double> losses;  // one per step
  LossBreakdown initial, final;
};

/// AdamW on random mini-batches of windows. Throws NumericalError with the
/// step index when the loss becomes non-finite.
TrainingReport train_estimator(MotionEstimator& model, const WindowDataset& data, const SkeletonModel& skeleton,
                               const EstimatorTrainingOptions& options,
                               const std::function<void(int, const LossBreakdown&)>& on_log = {});

void save_estimator(const std::string& path, const MotionEstimator& model);
MotionEstimator load_estimator(const std::string& path);

/// Normalized-frame prediction for one window.
struct WindowPrediction {
  std::vector<Pose> frames;
  std::vector<ContactPair> contacts;
};

class WindowRegressor {
 public:
  virtual ~WindowRegressor() = default;
  virtual int window() const = 0;
  /// `start` is the first frame of the window in the sequence.
  virtual WindowPrediction predict(const WindowInput& input, int start) const = 0;
};

class NeuralRegressor : public WindowRegressor {
 public:
  explicit NeuralRegressor(std::shared_ptr<const MotionEstimator> model) : model_(std::move(model)) {}
  int window() const override { return model_->config().window; }
  WindowPrediction predict(const WindowInput& input, int start) const override;

 private:
  std::shared_ptr<const MotionEstimator> model_;
};

/// Looks the answer up in a ground-truth sequence; used to test the inference plumbing.
class OracleRegressor : public WindowRegressor {
 public:
  OracleRegressor(MotionSequence truth, int window = kWindowLength);
  int window() const override { return window_; }
  WindowPrediction predict(const WindowInput& input, int start) const override;

 private:
  MotionSequence truth_;
  int window_;
};

struct InferenceOptions {
  int stride = kWindowLength / 2;
  FloorParams floor;
};

struct InferenceResult {
  MotionSequence motion;  // world frame, with contacts
  std::vector<double> floor_levels;
  FloorState floor;
};

/// Sliding-window inference. Overlapping frames crossfade toward the newer
/// window; after each window the frames that no later window covers are
/// finalized and the floor level is updated for them.
InferenceResult infer_sequence(const HeadTrajectory& head, const ImuStream& imu, const PointCloud& cloud,
                               const WindowRegressor& regressor, const SkeletonModel& skeleton,
                               const InferenceOptions& options = {});

}  // namespace sparsecap
