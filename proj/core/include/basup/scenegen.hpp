#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "basup/image.hpp"
#include "basup/instances.hpp"
#include "basup/io.hpp"

namespace basup::scene {

enum class Camera { before, after };

std::string to_string(Camera camera);
Camera parse_camera(const std::string& name);

/// Global affine color transform applied by one camera:
/// out_c = gain * in_c + luminance + tint_c.
struct LightingBias {
  double gain = 1.0;
  double luminance = 0.0;
  std::array<double, 3> tint{0.0, 0.0, 0.0};
};

struct SceneConfig {
  int image_size = 128;
  int frames_per_sequence = 20;
  int num_sequences_before = 10;
  int num_sequences_after = 10;
  int test_sequences_before = 3;
  int test_sequences_after = 3;
  int belt_speed = 8;
  int min_objects = 2;
  int max_objects = 5;
  double unwanted_fraction = 0.5;
  LightingBias before_light{1.0, 4.0, {3.0, 0.0, -3.0}};
  LightingBias after_light{1.0, -4.0, {-3.0, 0.0, 3.0}};
  double operator_miss_rate = 0.05;
  /// Object radius range as a fraction of image_size.
  double min_radius = 0.07;
  double max_radius = 0.12;
  /// Opacity range; values below 1 blend the object with the belt.
  double min_opacity = 0.75;
  double max_opacity = 1.0;
  /// Hue ranges in degrees (HSV) of each family outside hard mode.
  std::array<double, 2> unwanted_hue{-15.0, 50.0};
  std::array<double, 2> wanted_hue{190.0, 250.0};
  /// Hard mode: wanted and unwanted share the hue family and differ by shape.
  bool hard_mode = false;
  std::uint8_t belt_gray = 128;
  std::uint64_t seed = 0;

  /// Throws ConfigError on violated invariants.
  void validate() const;

  io::KeyValueFile to_kv(const std::string& prefix = "scene") const;
  static SceneConfig from_kv(const io::KeyValueFile& kv, const std::string& prefix = "scene");
};

enum class ObjectShape { ellipse, polygon };

/// An object in belt coordinates; its frame-t position is (cx + t*speed, cy).
struct BeltObject {
  std::uint16_t id = 0;
  ObjectShape shape = ObjectShape::ellipse;
  double cx = 0.0;
  double cy = 0.0;
  double rx = 0.0;
  double ry = 0.0;
  double angle = 0.0;
  std::vector<std::array<double, 2>> vertices;  // polygon, relative to center, CCW
  std::array<std::uint8_t, 3> color{};
  double opacity = 1.0;
  bool unwanted = false;

  double bounding_radius() const;
  bool contains(double px, double py, double frame_cx) const;
};

struct SyntheticFrame {
  Image image;
  Mask gt_unwanted;
  LabelMap gt_instances;  // sequence-stable object ids
  std::optional<FlowField> gt_flow_to_next;
  Camera camera = Camera::before;
  std::string split;  // "train" or "test"
  int sequence_id = 0;
  int frame_index = 0;
};

struct SyntheticSequence {
  Camera camera = Camera::before;
  std::string split;
  int sequence_id = 0;
  std::vector<BeltObject> objects;
  std::vector<SyntheticFrame> frames;
  /// Unwanted objects on the belt before the operator (for after streams,
  /// before removal) and how many of those survived into an after stream.
  int unwanted_total = 0;
  int unwanted_missed = 0;
};

/// Renders one sequence. Pure function of (config, split, camera, id).
SyntheticSequence generate_sequence(const SceneConfig& config, const std::string& split,
                                    Camera camera, int sequence_id);

/// Summary of an emitted tree.
struct SceneManifest {
  int train_before_frames = 0;
  int train_after_frames = 0;
  int test_before_frames = 0;
  int test_after_frames = 0;
  int unwanted_instances_before = 0;
  int unwanted_instances_after = 0;
  io::KeyValueFile to_kv(const SceneConfig& config) const;
};

/// Writes the canonical dataset tree plus ground truth under `<split>/gt/`.
SceneManifest generate_scene(const SceneConfig& config, const std::filesystem::path& root);

/// Ground-truth instances packaged as an instance-provider result.
InstanceMaskSet oracle_instances(const SyntheticFrame& frame);

/// Paths of ground-truth artifacts for one frame in the canonical tree.
struct GtPaths {
  std::filesystem::path mask;
  std::filesystem::path instances;
  std::filesystem::path flow;
};
GtPaths gt_paths(const std::filesystem::path& root, const std::string& split,
                 const std::string& camera, const std::string& sequence, int frame_index);

std::string sequence_dir_name(int sequence_id);
std::string frame_file_stem(int frame_index);

}  // namespace basup::scene
