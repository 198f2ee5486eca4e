#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kinemod/common.hpp"
#include "kinemod/skeleton.hpp"
#include "kinemod/tensor.hpp"

namespace kinemod {

enum class ModalityKind : std::uint8_t {
  Joint,
  Motion,
  Bone,
  Acceleration,
  RotationAxis,
  AngularVelocity,
};

inline constexpr std::size_t kModalityCount = 6;
inline constexpr std::array<ModalityKind, kModalityCount> kAllModalities = {
    ModalityKind::Joint,        ModalityKind::Motion,       ModalityKind::Bone,
    ModalityKind::Acceleration, ModalityKind::RotationAxis, ModalityKind::AngularVelocity};
inline constexpr std::array<ModalityKind, 3> kFundamentalModalities = {
    ModalityKind::Joint, ModalityKind::Motion, ModalityKind::Bone};

std::string_view modality_name(ModalityKind kind);
std::optional<ModalityKind> parse_modality(std::string_view name);
constexpr std::size_t modality_index(ModalityKind kind) { return static_cast<std::size_t>(kind); }

// Norms below this count as degenerate: the rotation axis and joint angle become 0.
inline constexpr double kDegenerateNorm = 1e-8;

// [body][3][T][V]. Motion is pure displacement; Acceleration and AngularVelocity carry 1/γ factors.
struct ModalityTensor {
  ModalityKind kind;
  Tensor4 data;
};

// Hinge angles in radians, [body][1][T][V].
struct JointAngleTrack {
  Tensor4 theta;
};

ModalityTensor derive_joint(const SkeletonSequence& seq);
ModalityTensor derive_motion(const SkeletonSequence& seq, Exec exec = Exec::Parallel);
ModalityTensor derive_acceleration(const SkeletonSequence& seq, TimeScale gamma,
                                   Exec exec = Exec::Parallel);
ModalityTensor derive_bones(const SkeletonSequence& seq, const SkeletonTopology& topo,
                            Exec exec = Exec::Parallel);
ModalityTensor derive_rotation_axes(const ModalityTensor& bones, const SkeletonTopology& topo,
                                    Exec exec = Exec::Parallel);
JointAngleTrack derive_joint_angles(const ModalityTensor& bones, const SkeletonTopology& topo,
                                    Exec exec = Exec::Parallel);
ModalityTensor derive_angular_velocity(const ModalityTensor& axes, const JointAngleTrack& angles,
                                       TimeScale gamma, Exec exec = Exec::Parallel);

// All six modalities of one sequence, stored in kAllModalities order.
struct ModalitySet {
  std::array<ModalityTensor, kModalityCount> tensors;

  const ModalityTensor& operator[](ModalityKind kind) const { return tensors[modality_index(kind)]; }
};

ModalitySet derive_all(const SkeletonSequence& seq, const SkeletonTopology& topo,
                       Exec exec = Exec::Parallel);

// Derives every sequence of a batch; Exec::Parallel spreads samples over OpenMP threads.
std::vector<ModalitySet> derive_batch(std::span<const SkeletonSequence> seqs,
                                      const SkeletonTopology& topo, Exec exec = Exec::Parallel);

// Binary export: 16-byte header ("KMOD", u16 version, u16 modality count, u16 bodies,
// u16 channels, u16 frames, u16 joints), then little-endian float32 per modality in
// kAllModalities order, each laid out [body][C][T][V].
inline constexpr std::uint16_t kBlobVersion = 1;

void write_modality_blob(std::ostream& out, const ModalitySet& set);
void write_modality_blob(const std::filesystem::path& path, const ModalitySet& set);

struct ModalityBlob {
  std::size_t bodies = 0, channels = 0, frames = 0, joints = 0;
  std::array<std::vector<float>, kModalityCount> values;
};
ModalityBlob read_modality_blob(std::istream& in);
ModalityBlob read_modality_blob(const std::filesystem::path& path);

// Debug dump: one row per (body, t, v) with x/y/z columns for every modality.
void write_modality_csv(std::ostream& out, const ModalitySet& set);

}  // namespace kinemod
