#include "kinemod/modality.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <ostream>
#include <istream>

namespace kinemod {

namespace {

struct Vec3 {
  double x, y, z;
};

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 load(const Tensor4& t, std::size_t m, std::size_t f, std::size_t v) {
  return {t(m, 0, f, v), t(m, 1, f, v), t(m, 2, f, v)};
}

void check_gamma(TimeScale gamma) {
  if (!(gamma.gamma > 0.0) || !std::isfinite(gamma.gamma))
    throw DataError("time scale must be positive and finite");
}

void check_topology(const SkeletonTopology& topo, std::size_t joints) {
  if (topo.joint_count != joints)
    throw DataError("topology has " + std::to_string(topo.joint_count) + " joints, data has " +
                    std::to_string(joints));
}

void check_kind(const ModalityTensor& t, ModalityKind want) {
  if (t.kind != want)
    throw DataError("expected " + std::string(modality_name(want)) + " tensor, got " +
                    std::string(modality_name(t.kind)));
}

constexpr bool parallel(Exec e) { return e == Exec::Parallel; }

}  // namespace

std::string_view modality_name(ModalityKind kind) {
  switch (kind) {
    case ModalityKind::Joint: return "joint";
    case ModalityKind::Motion: return "motion";
    case ModalityKind::Bone: return "bone";
    case ModalityKind::Acceleration: return "acceleration";
    case ModalityKind::RotationAxis: return "rotation_axis";
    case ModalityKind::AngularVelocity: return "angular_velocity";
  }
  return "unknown";
}

std::optional<ModalityKind> parse_modality(std::string_view name) {
  for (auto k : kAllModalities)
    if (modality_name(k) == name) return k;
  return std::nullopt;
}

ModalityTensor derive_joint(const SkeletonSequence& seq) { return {ModalityKind::Joint, seq.data}; }

ModalityTensor derive_motion(const SkeletonSequence& seq, Exec exec) {
  const auto& x = seq.data;
  const std::size_t T = x.frames();
  if (T < 2) throw DataError("motion needs at least 2 frames");
  Tensor4 m(x.bodies(), kCoords, T, x.joints());
#pragma omp parallel for collapse(2) if (parallel(exec)) schedule(static)
  for (std::size_t b = 0; b < x.bodies(); ++b)
    for (std::size_t t = 1; t < T; ++t)
      for (std::size_t c = 0; c < kCoords; ++c)
        for (std::size_t v = 0; v < x.joints(); ++v) m(b, c, t, v) = x(b, c, t, v) - x(b, c, t - 1, v);
  return {ModalityKind::Motion, std::move(m)};
}

ModalityTensor derive_acceleration(const SkeletonSequence& seq, TimeScale gamma, Exec exec) {
  check_gamma(gamma);
  const auto& x = seq.data;
  const std::size_t T = x.frames();
  if (T < 3) throw DataError("acceleration needs at least 3 frames");
  const double g = gamma.gamma;
  Tensor4 a(x.bodies(), kCoords, T, x.joints());
  // a_t = (m_{t+1}/γ - m_t/γ)/γ with m_t = x_t - x_{t-1}; frames 0 and T-1 stay zero.
#pragma omp parallel for collapse(2) if (parallel(exec)) schedule(static)
  for (std::size_t b = 0; b < x.bodies(); ++b)
    for (std::size_t t = 1; t < T - 1; ++t)
      for (std::size_t c = 0; c < kCoords; ++c)
        for (std::size_t v = 0; v < x.joints(); ++v) {
          const double m_next = x(b, c, t + 1, v) - x(b, c, t, v);
          const double m_cur = x(b, c, t, v) - x(b, c, t - 1, v);
          a(b, c, t, v) = (m_next / g - m_cur / g) / g;
        }
  return {ModalityKind::Acceleration, std::move(a)};
}

ModalityTensor derive_bones(const SkeletonSequence& seq, const SkeletonTopology& topo, Exec exec) {
  check_topology(topo, seq.joints());
  const auto& x = seq.data;
  const std::size_t T = x.frames();
  Tensor4 out(x.bodies(), kCoords, T, x.joints());
#pragma omp parallel for collapse(2) if (parallel(exec)) schedule(static)
  for (std::size_t b = 0; b < x.bodies(); ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (const auto& bone : topo.bones)
        for (std::size_t c = 0; c < kCoords; ++c)
          out(b, c, t, bone.child) = x(b, c, t, bone.child) - x(b, c, t, bone.parent);
  return {ModalityKind::Bone, std::move(out)};
}

ModalityTensor derive_rotation_axes(const ModalityTensor& bones, const SkeletonTopology& topo,
                                    Exec exec) {
  check_kind(bones, ModalityKind::Bone);
  const auto& bt = bones.data;
  check_topology(topo, bt.joints());
  Tensor4 r(bt.bodies(), kCoords, bt.frames(), bt.joints());
#pragma omp parallel for collapse(2) if (parallel(exec)) schedule(static)
  for (std::size_t b = 0; b < bt.bodies(); ++b)
    for (std::size_t t = 0; t < bt.frames(); ++t)
      for (std::size_t v = 0; v < bt.joints(); ++v) {
        const auto& h = topo.hinges[v];
        const Vec3 axis = cross(load(bt, b, t, h.bone_i), load(bt, b, t, h.bone_j));
        const double n = norm(axis);
        if (n < kDegenerateNorm) continue;
        r(b, 0, t, v) = axis.x / n;
        r(b, 1, t, v) = axis.y / n;
        r(b, 2, t, v) = axis.z / n;
      }
  return {ModalityKind::RotationAxis, std::move(r)};
}

JointAngleTrack derive_joint_angles(const ModalityTensor& bones, const SkeletonTopology& topo,
                                    Exec exec) {
  check_kind(bones, ModalityKind::Bone);
  const auto& bt = bones.data;
  check_topology(topo, bt.joints());
  Tensor4 theta(bt.bodies(), 1, bt.frames(), bt.joints());
#pragma omp parallel for collapse(2) if (parallel(exec)) schedule(static)
  for (std::size_t b = 0; b < bt.bodies(); ++b)
    for (std::size_t t = 0; t < bt.frames(); ++t)
      for (std::size_t v = 0; v < bt.joints(); ++v) {
        const auto& h = topo.hinges[v];
        const Vec3 bi = load(bt, b, t, h.bone_i);
        const Vec3 bj = load(bt, b, t, h.bone_j);
        const double ni = norm(bi), nj = norm(bj);
        if (ni < kDegenerateNorm || nj < kDegenerateNorm) continue;
        theta(b, 0, t, v) = std::acos(std::clamp(dot(bi, bj) / (ni * nj), -1.0, 1.0));
      }
  return {std::move(theta)};
}

ModalityTensor derive_angular_velocity(const ModalityTensor& axes, const JointAngleTrack& angles,
                                       TimeScale gamma, Exec exec) {
  check_gamma(gamma);
  check_kind(axes, ModalityKind::RotationAxis);
  const auto& r = axes.data;
  const auto& th = angles.theta;
  if (th.bodies() != r.bodies() || th.frames() != r.frames() || th.joints() != r.joints())
    throw DataError("rotation axes and joint angles disagree in shape");
  const std::size_t T = r.frames();
  const double g = gamma.gamma;
  Tensor4 w(r.bodies(), kCoords, T, r.joints());
#pragma omp parallel for collapse(2) if (parallel(exec)) schedule(static)
  for (std::size_t b = 0; b < r.bodies(); ++b)
    for (std::size_t t = 0; t < T - 1; ++t)
      for (std::size_t v = 0; v < r.joints(); ++v) {
        const double rate = (th(b, 0, t + 1, v) - th(b, 0, t, v)) / g;
        for (std::size_t c = 0; c < kCoords; ++c) w(b, c, t, v) = r(b, c, t, v) * rate;
      }
  return {ModalityKind::AngularVelocity, std::move(w)};
}

ModalitySet derive_all(const SkeletonSequence& seq, const SkeletonTopology& topo, Exec exec) {
  const TimeScale gamma = time_scale(seq);
  ModalityTensor bones = derive_bones(seq, topo, exec);
  ModalityTensor axes = derive_rotation_axes(bones, topo, exec);
  const JointAngleTrack angles = derive_joint_angles(bones, topo, exec);
  ModalityTensor omega = derive_angular_velocity(axes, angles, gamma, exec);
  return ModalitySet{{derive_joint(seq), derive_motion(seq, exec),
                      std::move(bones), derive_acceleration(seq, gamma, exec), std::move(axes),
                      std::move(omega)}};
}

std::vector<ModalitySet> derive_batch(std::span<const SkeletonSequence> seqs,
                                      const SkeletonTopology& topo, Exec exec) {
  std::vector<std::optional<ModalitySet>> tmp(seqs.size());
  // Per-sample kernels run serially inside the sample-parallel loop.
  ParallelErrors errors;
#pragma omp parallel for if (parallel(exec)) schedule(dynamic)
  for (std::size_t i = 0; i < seqs.size(); ++i) errors.run([&] { tmp[i] = derive_all(seqs[i], topo, Exec::Serial); });
  errors.rethrow();
  std::vector<ModalitySet> out;
  out.reserve(seqs.size());
  for (auto& s : tmp) out.push_back(std::move(*s));
  return out;
}

namespace {

void put_u16(std::ostream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(bytes, 2);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char bytes[2];
  if (!in.read(reinterpret_cast<char*>(bytes), 2)) throw DataError("truncated modality blob header");
  return static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
}

void put_f32(std::ostream& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
  out.write(bytes, 4);
}

std::uint16_t checked_u16(std::size_t n) {
  if (n > 0xffff) throw DataError("dimension too large for modality blob");
  return static_cast<std::uint16_t>(n);
}

}  // namespace

void write_modality_blob(std::ostream& out, const ModalitySet& set) {
  const Tensor4& ref = set.tensors[0].data;
  out.write("KMOD", 4);
  put_u16(out, kBlobVersion);
  put_u16(out, static_cast<std::uint16_t>(kModalityCount));
  put_u16(out, checked_u16(ref.bodies()));
  put_u16(out, checked_u16(ref.channels()));
  put_u16(out, checked_u16(ref.frames()));
  put_u16(out, checked_u16(ref.joints()));
  for (const auto& t : set.tensors) {
    if (!t.data.same_shape(ref)) throw DataError("modality tensors disagree in shape");
    for (double x : t.data.values()) put_f32(out, static_cast<float>(x));
  }
}

void write_modality_blob(const std::filesystem::path& path, const ModalitySet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_modality_blob(out, set);
}

ModalityBlob read_modality_blob(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "KMOD")
    throw DataError("not a modality blob (bad magic)");
  if (get_u16(in) != kBlobVersion) throw DataError("unsupported modality blob version");
  if (get_u16(in) != kModalityCount) throw DataError("unexpected modality count in blob");
  ModalityBlob blob;
  blob.bodies = get_u16(in);
  blob.channels = get_u16(in);
  blob.frames = get_u16(in);
  blob.joints = get_u16(in);
  const std::size_t n = blob.bodies * blob.channels * blob.frames * blob.joints;
  for (auto& vals : blob.values) {
    vals.resize(n);
    for (auto& f : vals) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated modality blob");
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
      f = std::bit_cast<float>(bits);
    }
  }
  return blob;
}

ModalityBlob read_modality_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_modality_blob(in);
}

void write_modality_csv(std::ostream& out, const ModalitySet& set) {
  out << "body,t,v";
  for (auto k : kAllModalities)
    for (char axis : {'x', 'y', 'z'}) out << ',' << modality_name(k) << '_' << axis;
  out << '\n';
  const Tensor4& ref = set.tensors[0].data;
  out.precision(17);
  for (std::size_t b = 0; b < ref.bodies(); ++b)
    for (std::size_t t = 0; t < ref.frames(); ++t)
      for (std::size_t v = 0; v < ref.joints(); ++v) {
        out << b << ',' << t << ',' << v;
        for (const auto& m : set.tensors)
          for (std::size_t c = 0; c < kCoords; ++c) out << ',' << m.data(b, c, t, v);
        out << '\n';
      }
}

}  // namespace kinemod
