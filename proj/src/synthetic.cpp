#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "kinemod/common.hpp"
#include "kinemod/data_io.hpp"

namespace kinemod {

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;

Mat3 identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return r;
}

Vec3 xform(const Mat3& a, const Vec3& x) {
  return {a[0] * x[0] + a[1] * x[1] + a[2] * x[2], a[3] * x[0] + a[4] * x[1] + a[5] * x[2],
          a[6] * x[0] + a[7] * x[1] + a[8] * x[2]};
}

// Rodrigues rotation about a unit axis.
Mat3 axis_angle(const Vec3& u, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), k = 1.0 - c;
  return {c + u[0] * u[0] * k,        u[0] * u[1] * k - u[2] * s, u[0] * u[2] * k + u[1] * s,
          u[1] * u[0] * k + u[2] * s, c + u[1] * u[1] * k,        u[1] * u[2] * k - u[0] * s,
          u[2] * u[0] * k - u[1] * s, u[2] * u[1] * k + u[0] * s, c + u[2] * u[2] * k};
}

Vec3 unit(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

// Animation of one joint: rotates all bones leaving the joint.
struct JointDrive {
  bool active = false;
  int limb = -1;       // index into ClassProgram::limb_phase, -1 = trunk
  Vec3 axis{1, 0, 0};
  double bend = 0.0;   // rest angle keeps hinges away from the straight (degenerate) pose
  double gain = 0.0;   // fraction of the class amplitude
  double lag = 0.0;    // phase lag behind the limb root
};

struct Rig {
  std::vector<Vec3> offset;  // rest offset from parent, meters
  std::vector<JointDrive> drive;
  std::vector<std::size_t> order;  // parents before children
  std::vector<std::size_t> parent;
};

Rig ntu_rig(const SkeletonTopology& topo) {
  static const std::array<Vec3, 25> rest = {{
      {0.00, -0.55, 0.00},  {0.00, -0.28, 0.00},  {0.00, 0.08, 0.00},   {0.00, 0.22, 0.02},
      {-0.18, -0.02, 0.00}, {-0.21, -0.29, 0.00}, {-0.22, -0.54, 0.00}, {-0.22, -0.61, 0.00},
      {0.18, -0.02, 0.00},  {0.21, -0.29, 0.00},  {0.22, -0.54, 0.00},  {0.22, -0.61, 0.00},
      {-0.09, -0.58, 0.00}, {-0.10, -1.00, 0.00}, {-0.10, -1.40, 0.00}, {-0.10, -1.45, 0.10},
      {0.09, -0.58, 0.00},  {0.10, -1.00, 0.00},  {0.10, -1.40, 0.00},  {0.10, -1.45, 0.10},
      {0.00, 0.00, 0.00},   {-0.22, -0.68, 0.01}, {-0.19, -0.64, 0.04}, {0.22, -0.68, 0.01},
      {0.19, -0.64, 0.04},
  }};
  Rig rig;
  rig.offset.assign(25, Vec3{0, 0, 0});
  rig.drive.assign(25, JointDrive{});
  rig.parent.assign(25, topo.root);
  for (const auto& b : topo.bones) {
    rig.parent[b.child] = b.parent;
    for (int c = 0; c < 3; ++c) rig.offset[b.child][c] = rest[b.child][c] - rest[b.parent][c];
  }
  const Vec3 swing{1, 0, 0};
  const Vec3 shoulder = unit({1, 0, 0.6});
  auto set = [&](std::size_t v, int limb, Vec3 axis, double bend, double gain, double lag) {
    rig.drive[v] = {true, limb, axis, bend, gain, lag};
  };
  set(4, 0, shoulder, 0.5, 1.0, 0.0);
  set(5, 0, swing, 0.9, 0.7, 0.6);
  set(8, 1, {shoulder[0], shoulder[1], -shoulder[2]}, 0.5, 1.0, 0.0);
  set(9, 1, swing, 0.9, 0.7, 0.6);
  set(12, 2, swing, 0.3, 0.6, 0.0);
  set(13, 2, swing, 0.7, 0.6, 0.8);
  set(16, 3, swing, 0.3, 0.6, 0.0);
  set(17, 3, swing, 0.7, 0.6, 0.8);
  set(1, -1, swing, 0.1, 0.15, 0.0);
  return rig;
}

Rig generic_rig(const SkeletonTopology& topo) {
  const std::size_t J = topo.joint_count;
  Rig rig;
  rig.offset.assign(J, Vec3{0, 0, 0});
  rig.drive.assign(J, JointDrive{});
  rig.parent.assign(J, topo.root);
  std::vector<std::vector<std::size_t>> children(J);
  for (const auto& b : topo.bones) {
    rig.parent[b.child] = b.parent;
    children[b.parent].push_back(b.child);
  }
  // Limb = which child subtree of the root a joint hangs from.
  std::vector<int> limb(J, -1);
  const auto& top = children[topo.root];
  for (std::size_t k = 0; k < top.size(); ++k) {
    std::vector<std::size_t> stack{top[k]};
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      limb[v] = static_cast<int>(k % 4);
      for (auto c : children[v]) stack.push_back(c);
    }
  }
  for (std::size_t v = 0; v < J; ++v) {
    if (v == topo.root) continue;
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(J);
    const Vec3 dir = unit({0.6 * std::sin(phi), -1.0, 0.4 * std::cos(phi)});
    for (int c = 0; c < 3; ++c) rig.offset[v][c] = 0.25 * dir[c];
    if (!children[v].empty()) rig.drive[v] = {true, limb[v], {1, 0, 0}, 0.6, 0.8, 0.4};
  }
  return rig;
}

Rig make_rig(const SkeletonTopology& topo) {
  Rig rig = (topo.joint_count == 25 && topo.bones == default_topology().bones) ? ntu_rig(topo) : generic_rig(topo);
  std::vector<std::vector<std::size_t>> children(topo.joint_count);
  for (const auto& b : topo.bones) children[b.parent].push_back(b.child);
  rig.order.push_back(topo.root);
  for (std::size_t i = 0; i < rig.order.size(); ++i)
    for (auto c : children[rig.order[i]]) rig.order.push_back(c);
  return rig;
}

struct SampleDraw {
  double phase;
  double scale;
  double yaw;
  Vec3 offset;
  double amplitude;
};

}  // namespace

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic: need at least 2 classes");
  if (samples < classes) throw ConfigError("synthetic: need at least one sample per class");
  if (frame_choices.empty()) throw ConfigError("synthetic: frame_choices is empty");
  for (auto f : frame_choices)
    if (f < 2) throw ConfigError("synthetic: frames must be >= 2");
  if (!programs.empty() && programs.size() != classes)
    throw ConfigError(fmt::format("synthetic: {} programs for {} classes", programs.size(), classes));
  const auto progs = programs.empty() ? default_programs(classes, posture_step) : programs;
  for (std::size_t a = 0; a < progs.size(); ++a) {
    if (progs[a].limb_phase.size() != 4) throw ConfigError("synthetic: limb_phase needs 4 entries");
    if (!(progs[a].frequency > 0.0)) throw ConfigError("synthetic: frequency must be positive");
    for (std::size_t b = 0; b < a; ++b) {
      if (progs[a].frequency == progs[b].frequency && progs[a].amplitude == progs[b].amplitude &&
          progs[a].limb_phase == progs[b].limb_phase && progs[a].drift == progs[b].drift &&
          progs[a].posture == progs[b].posture)
        throw ConfigError(fmt::format("synthetic: classes {} and {} share a program", b, a));
    }
  }
  if (noise < 0.0 || phase_jitter < 0.0 || yaw_jitter < 0.0 || offset_jitter < 0.0)
    throw ConfigError("synthetic: jitters must be non-negative");
  if (scale_jitter < 0.0 || scale_jitter >= 1.0 || amplitude_jitter < 0.0 || amplitude_jitter >= 1.0)
    throw ConfigError("synthetic: scale/amplitude jitter must lie in [0, 1)");
  if (subjects == 0 || cameras == 0) throw ConfigError("synthetic: subjects and cameras must be positive");
}

std::vector<ClassProgram> default_programs(std::size_t classes, double posture_step) {
  constexpr double pi = std::numbers::pi;
  std::vector<ClassProgram> out;
  for (std::size_t k = 0; k < classes; ++k) {
    ClassProgram p;
    p.frequency = 1.5 * std::pow(1.45, static_cast<double>(k));
    p.amplitude = 0.45;
    const double s = 0.5 * pi * static_cast<double>(k % 3);
    p.limb_phase = {0.0, pi + s, pi, s};
    p.drift = 0.0;
    p.posture = posture_step * static_cast<double>(k);
    out.push_back(p);
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec, const SkeletonTopology& topo) {
  spec.validate();
  topo.validate();
  const auto programs = spec.programs.empty() ? default_programs(spec.classes, spec.posture_step) : spec.programs;
  const Rig rig = make_rig(topo);
  const std::size_t J = topo.joint_count;

  Dataset data;
  data.num_classes = spec.classes;
  data.samples.resize(spec.samples);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(spec.samples); ++si) {
    const auto i = static_cast<std::size_t>(si);
    const std::size_t label = i % spec.classes;
    const std::size_t round = i / spec.classes;
    const std::size_t T = spec.frame_choices[round % spec.frame_choices.size()];
    const auto& prog = programs[label];

    std::mt19937_64 rng(mix_seed(spec.seed, 0x5e9, i));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto sym = [&](double j) { return j * (2.0 * u01(rng) - 1.0); };
    SampleDraw d;
    d.phase = spec.phase_jitter * u01(rng);
    d.scale = 1.0 + sym(spec.scale_jitter);
    d.yaw = sym(spec.yaw_jitter);
    d.offset = {sym(spec.offset_jitter), sym(spec.offset_jitter), sym(spec.offset_jitter)};
    d.amplitude = prog.amplitude * (1.0 + sym(spec.amplitude_jitter));
    std::normal_distribution<double> noise(0.0, 1.0);

    Tensor4 x(1, kCoords, T, J);
    const Mat3 root_rot = axis_angle({0, 1, 0}, d.yaw);
    std::vector<Mat3> rot(J);
    std::vector<Vec3> pos(J);
    const double omega = 2.0 * std::numbers::pi * prog.frequency / 100.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double tt = static_cast<double>(t);
      const Vec3 drift = xform(root_rot, {prog.drift * tt / 100.0, 0.0, 0.0});
      for (int c = 0; c < 3; ++c) pos[topo.root][c] = d.offset[c] + drift[c];
      for (auto v : rig.order) {
        Mat3 local = identity();
        const auto& dr = rig.drive[v];
        if (dr.active) {
          const double limb_phase = dr.limb >= 0 ? prog.limb_phase[static_cast<std::size_t>(dr.limb)] : 0.0;
          const double angle = dr.bend + prog.posture + dr.gain * d.amplitude * std::sin(omega * tt + d.phase + limb_phase - dr.lag);
          local = axis_angle(dr.axis, angle);
        }
        if (v == topo.root) {
          rot[v] = mul(root_rot, local);
        } else {
          rot[v] = mul(rot[rig.parent[v]], local);
          const Vec3 off = xform(rot[rig.parent[v]], rig.offset[v]);
          for (int c = 0; c < 3; ++c) pos[v][c] = pos[rig.parent[v]][c] + d.scale * off[c];
        }
      }
      for (std::size_t v = 0; v < J; ++v)
        for (std::size_t c = 0; c < kCoords; ++c) x(0, c, t, v) = pos[v][c];
    }
    if (spec.noise > 0.0) {
      for (auto& value : x.values()) value += spec.noise * noise(rng);
    }

    Sample& s = data.samples[i];
    s.id = fmt::format("syn{:05d}", i);
    s.label = static_cast<int>(label);
    s.subject = static_cast<int>(round % spec.subjects) + 1;
    s.camera = static_cast<int>(i % spec.cameras) + 1;
    s.seq = make_sequence(std::move(x), T, s.label);
  }
  return data;
}

std::vector<std::vector<double>> synthetic_oracle_features(const SyntheticSpec& spec) {
  spec.validate();
  const auto programs = spec.programs.empty() ? default_programs(spec.classes, spec.posture_step) : spec.programs;
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const auto& p = programs[i % spec.classes];
    std::vector<double> f{p.frequency, p.amplitude, p.drift, p.posture};
    for (double ph : p.limb_phase) {
      f.push_back(std::cos(ph));
      f.push_back(std::sin(ph));
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace kinemod
