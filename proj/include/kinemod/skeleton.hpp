#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kinemod/tensor.hpp"

namespace kinemod {

inline constexpr std::size_t kCoords = 3;
inline constexpr std::size_t kResampledFrames = 50;
inline constexpr std::size_t kMaxBodies = 2;

// 3-D joint positions (meters) laid out [body][xyz][frame][joint].
// original_frames is the length of the recording before any resampling.
struct SkeletonSequence {
  Tensor4 data;
  std::size_t original_frames = 0;
  std::optional<int> label;

  std::size_t bodies() const noexcept { return data.bodies(); }
  std::size_t frames() const noexcept { return data.frames(); }
  std::size_t joints() const noexcept { return data.joints(); }
};

// Builds a sequence and checks shape/finiteness invariants; throws DataError.
SkeletonSequence make_sequence(Tensor4 data, std::size_t original_frames,
                               std::optional<int> label = std::nullopt);

// Bones are addressed by the channel of their child joint; the root channel is the zero bone.
struct BonePair {
  std::size_t child;
  std::size_t parent;
  friend bool operator==(const BonePair&, const BonePair&) = default;
};

struct HingeDef {
  std::size_t bone_i;
  std::size_t bone_j;
  friend bool operator==(const HingeDef&, const HingeDef&) = default;
};

struct SkeletonTopology {
  std::size_t joint_count = 0;
  std::size_t root = 0;
  std::vector<BonePair> bones;
  std::vector<HingeDef> hinges;  // one per joint, indexed by joint

  // Throws DataError if the bones do not form a tree over joint_count joints
  // or a hinge is malformed.
  void validate() const;
};

// Dimensionless ratio original_frames / 50.
struct TimeScale {
  double gamma;
};

// Hinge rule: (bone into v, bone to v's first child); leaves use
// (bone into parent, bone into v); the root uses its first two child bones.
std::vector<HingeDef> derive_hinges(std::size_t joint_count, std::size_t root,
                                    const std::vector<BonePair>& bones);

// 25-joint NTU RGB+D layout rooted at the spine-shoulder joint (index 20).
SkeletonTopology default_topology();
// 5 joints: root 0 with children 1 and 2; 3 hangs off 1, 4 off 2.
SkeletonTopology toy_topology();

SkeletonTopology load_topology(const std::filesystem::path& path);
void save_topology(const SkeletonTopology& topo, const std::filesystem::path& path);
std::string format_topology(const SkeletonTopology& topo);
SkeletonTopology parse_topology(const std::string& text, const std::string& source = "<string>");

// Endpoint-anchored piecewise-linear resampling along time. original_frames is carried over.
SkeletonSequence resize_sequence(const SkeletonSequence& seq, std::size_t target_frames);

TimeScale time_scale(const SkeletonSequence& seq);

}  // namespace kinemod
