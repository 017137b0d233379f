#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sparsecap/config.hpp"
#include "sparsecap/nn/layers.hpp"
#include "sparsecap/skeleton.hpp"

namespace sparsecap {

/// Contacts 2 + root translation 3 + 22 rotations in 6D.
inline constexpr int kManifoldWidth = 2 + 3 + 6 * kJointCount;
/// Three stride-2 stages.
inline constexpr int kTemporalDownsample = 8;

namespace manifold_cols {
inline constexpr int kContacts = 0;
inline constexpr int kRoot = 2;
inline constexpr int kRotations = 5;
}  // namespace manifold_cols

/// Heading-only normalization: rotation about z and horizontal translation
/// taking the first frame's root to the origin, facing +y.
RigidTransform heading_normalization(const Pose& first);

/// T x 137 rows expressed in `world_to_local` coordinates. Missing contacts are zero.
nn::Matrix motion_to_manifold(const MotionSequence& motion, const RigidTransform& world_to_local);
/// Inverse mapping; rotations go through Gram-Schmidt, contacts are clamped to [0, 1].
MotionSequence manifold_to_motion(const nn::Matrix& rows, const RigidTransform& local_to_world, double frame_rate);

struct AutoencoderConfig {
  int channels = 64;
  int kernel = 25;
  static AutoencoderConfig toy() { return {}; }
  /// 256 channels.
  static AutoencoderConfig full() { return {256, 25}; }
  static AutoencoderConfig from(const KeyValueConfig& cfg);
  void validate() const;
};

/// Temporal convolutional autoencoder over standardized manifold rows.
class MotionAutoencoder {
 public:
  MotionAutoencoder(const AutoencoderConfig& config, std::uint64_t seed);

  /// T x 137 -> T/8 x channels; T must be a multiple of 8 and at least 32.
  nn::Var encode(const nn::Var& x) const;
  /// T/8 x channels -> T x 137.
  nn::Var decode(const nn::Var& z) const;

  /// Standardization statistics, 1 x 137 each.
  const nn::Matrix& mean() const { return mean_; }
  const nn::Matrix& scale() const { return scale_; }
  /// Scale entries are floored at `min_scale`.
  void set_statistics(const nn::Matrix& mean, const nn::Matrix& scale, double min_scale = 1e-2);
  nn::Matrix standardize(const nn::Matrix& rows) const;
  nn::Var destandardize(const nn::Var& rows) const;

  nn::ParameterSet parameters() const;
  const AutoencoderConfig& config() const { return config_; }
  void zero();

 private:
  AutoencoderConfig config_;
  nn::Conv1d enc_[3];
  nn::ConvTranspose1d dec_[3];
  nn::Matrix mean_, scale_;
};

struct ReconstructionWeights {
  double contact = 1.0, root = 1.0, rot = 1.0, pos = 1.0;
};

struct ReconstructionBreakdown {
  double contact = 0, root = 0, rot = 0, pos = 0, total = 0;
};

/// Weighted sum of mean absolute errors on contacts, root translation and root
/// 6D, joint 6D, and FK joint positions. Both inputs are unstandardized rows.
nn::Var reconstruction_loss(const nn::Var& predicted, const nn::Matrix& target, const SkeletonModel& skeleton,
                            const ReconstructionWeights& weights = {}, ReconstructionBreakdown* breakdown = nullptr);

struct AutoencoderTrainingOptions {
  int steps = 3000;
  /// Crop length in frames, multiple of 8.
  int crop = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  ReconstructionWeights weights;
  int log_every = 0;
  static AutoencoderTrainingOptions from(const KeyValueConfig& cfg);
};

struct AutoencoderReport {
  std::vector<double> losses;
  ReconstructionBreakdown initial, final;
};

/// Fits standardization statistics on the data, then trains on random crops.
/// Throws NumericalError naming the step when the loss is not finite.
AutoencoderReport train_autoencoder(MotionAutoencoder& model, const std::vector<MotionSequence>& sequences,
                                    const SkeletonModel& skeleton, const AutoencoderTrainingOptions& options,
                                    const std::function<void(int, const ReconstructionBreakdown&)>& on_log = {});

/// Encode and decode a whole sequence (padded to a multiple of 8, at least 32 frames).
MotionSequence reconstruct(const MotionAutoencoder& model, const MotionSequence& motion);

void save_autoencoder(const std::string& path, const MotionAutoencoder& model);
MotionAutoencoder load_autoencoder(const std::string& path);

// ---------------------------------------------------------------------------
// Visual cues

struct PinholeCamera {
  /// Camera-to-world pose; camera axes x right, y down, z forward.
  RigidTransform pose;
  double fx = 600, fy = 600, cx = 320, cy = 240;
};

/// Pixel coordinates of a world point, or nullopt when its depth is not positive.
std::optional<Vec2> project(const PinholeCamera& camera, const Vec3& world_point);

/// 2D joint location observed by the wearer's own camera.
struct JointCue2D {
  int frame = 0;
  int joint = 0;
  Vec2 uv = Vec2::Zero();
  PinholeCamera camera;
};

/// Body joint rotations (joints 1..21, parent-local) estimated by an observer.
struct PoseCue3D {
  int frame = 0;
  std::vector<Rotation> rotations;  // 21
  std::vector<double> weights;      // 21
};

struct CueSet {
  std::vector<JointCue2D> joints2d;
  std::vector<PoseCue3D> poses3d;
  bool empty() const { return joints2d.empty() && poses3d.empty(); }
};

/// Default per-joint weights for 3D pose cues: 2 on hips, knees and ankles, 1 elsewhere.
std::vector<double> default_pose_cue_weights(const SkeletonModel& skeleton);

/// JSON Lines with "kind": "e2d" or "t3d". Throws ValidationError naming the line.
CueSet load_cues(const std::string& path, const SkeletonModel& skeleton);
CueSet parse_cues(std::istream& in, const SkeletonModel& skeleton);
void write_cues(const std::string& path, const CueSet& cues, const SkeletonModel& skeleton);

/// Mean pixel distance between projected joints and cues; points with
/// non-positive depth are skipped and counted. positions is T x 3J.
nn::Var reprojection_loss(const nn::Var& positions, const std::vector<JointCue2D>& cues, int* skipped = nullptr);

struct LatentOptions {
  double reg_weight = 0.1;
  double slip_weight = 1.0;
  /// Learning rate per cue type; the 2D rate applies whenever 2D cues exist.
  double lr_2d = 7e-4;
  double lr_3d = 1e-3;
  int iterations = 300;
  /// Cosine decay of the learning rate to this fraction at the last iteration (1 = constant).
  double final_lr_fraction = 1.0;
  int patience = 20;
  double min_improvement = 1e-6;
  static LatentOptions from(const KeyValueConfig& cfg);
};

struct LatentTerms {
  double vis = 0, reg = 0, slip = 0, total = 0;
};

struct LatentResult {
  MotionSequence motion;
  LatentTerms initial, best;
  int iterations = 0;
  int best_iteration = 0;
  int skipped_cues = 0;
  nn::Matrix z0, z;
};

/// Refines a motion by gradient descent on the autoencoder latent code. Keeps
/// the lowest-loss iterate whose visual term does not exceed the initial one.
LatentResult optimize_latent(const MotionSequence& motion, const CueSet& cues, const MotionAutoencoder& model,
                             const SkeletonModel& skeleton, const LatentOptions& options = {});

/// Contact-weighted foot speed averaged over frames, on world-frame FK feet.
double foot_slip(const MotionSequence& motion, const SkeletonModel& skeleton);

/// Weighted L1 distance between pose cue rotations (6D) and a motion.
double pose_cue_error(const MotionSequence& motion, const std::vector<PoseCue3D>& cues);

}  // namespace sparsecap
