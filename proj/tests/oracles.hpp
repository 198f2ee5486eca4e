#pragma once

// Independent scalar-loop references used only by the tests. Everything here works on plain
// nested vectors and recomputes each quantity from its definition, without calling library
// kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "kinemod/contrastive.hpp"
#include "kinemod/distill.hpp"
#include "kinemod/skeleton.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline double rel_err(double a, double b) {
  const double d = std::abs(a - b);
  if (d == 0.0) return 0.0;
  return d / std::max(std::abs(a), std::abs(b));
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// ---- random inputs ----

inline kinemod::SkeletonSequence random_sequence(std::mt19937_64& rng, std::size_t bodies, std::size_t frames,
                                                 std::size_t joints, std::size_t original_frames,
                                                 double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  kinemod::Tensor4 t(bodies, 3, frames, joints);
  for (double& v : t.values()) v = n(rng);
  return kinemod::make_sequence(std::move(t), original_frames);
}

inline Vec random_unit(std::mt19937_64& rng, std::size_t width) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(width);
  double s = 0.0;
  for (double& x : v) {
    x = n(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  for (double& x : v) x /= s;
  return v;
}

// Proper rotation from a random unit quaternion.
inline std::array<std::array<double, 3>, 3> random_rotation(std::mt19937_64& rng) {
  const auto q = random_unit(rng, 4);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

// ---- resampling and modalities ----

// [T][V] scalar track of coordinate c, body m.
inline std::vector<Vec> track(const kinemod::Tensor4& t, std::size_t m, std::size_t c) {
  std::vector<Vec> out(t.frames(), Vec(t.joints()));
  for (std::size_t f = 0; f < t.frames(); ++f)
    for (std::size_t v = 0; v < t.joints(); ++v) out[f][v] = t(m, c, f, v);
  return out;
}

inline double interp(const Vec& samples, double pos) {
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= samples.size()) return samples.back();
  const double w = pos - static_cast<double>(lo);
  return samples[lo] + w * (samples[lo + 1] - samples[lo]);
}

inline double motion(const kinemod::Tensor4& x, std::size_t m, std::size_t c, std::size_t t, std::size_t v) {
  if (t == 0) return 0.0;
  return x(m, c, t, v) - x(m, c, t - 1, v);
}

inline double acceleration(const kinemod::Tensor4& x, double gamma, std::size_t m, std::size_t c, std::size_t t,
                           std::size_t v) {
  if (t == 0 || t + 1 >= x.frames()) return 0.0;
  const double next = motion(x, m, c, t + 1, v);
  const double cur = motion(x, m, c, t, v);
  return (next / gamma - cur / gamma) / gamma;
}

inline std::array<double, 3> bone(const kinemod::Tensor4& x, const kinemod::SkeletonTopology& topo, std::size_t m,
                                  std::size_t t, std::size_t joint) {
  std::array<double, 3> b{0.0, 0.0, 0.0};
  for (const auto& p : topo.bones)
    if (p.child == joint)
      for (std::size_t c = 0; c < 3; ++c) b[c] = x(m, c, t, p.child) - x(m, c, t, p.parent);
  return b;
}

inline std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double norm3(const std::array<double, 3>& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

inline std::array<double, 3> axis(const kinemod::Tensor4& x, const kinemod::SkeletonTopology& topo, std::size_t m,
                                  std::size_t t, std::size_t v) {
  const auto& h = topo.hinges[v];
  const auto r = cross(bone(x, topo, m, t, h.bone_i), bone(x, topo, m, t, h.bone_j));
  const double n = norm3(r);
  if (n < 1e-8) return {0.0, 0.0, 0.0};
  return {r[0] / n, r[1] / n, r[2] / n};
}

inline double angle(const kinemod::Tensor4& x, const kinemod::SkeletonTopology& topo, std::size_t m, std::size_t t,
                    std::size_t v) {
  const auto& h = topo.hinges[v];
  const auto bi = bone(x, topo, m, t, h.bone_i);
  const auto bj = bone(x, topo, m, t, h.bone_j);
  const double ni = norm3(bi), nj = norm3(bj);
  if (ni < 1e-8 || nj < 1e-8) return 0.0;
  double c = (bi[0] * bj[0] + bi[1] * bj[1] + bi[2] * bj[2]) / (ni * nj);
  c = std::min(1.0, std::max(-1.0, c));
  return std::acos(c);
}

inline double angular_velocity(const kinemod::Tensor4& x, const kinemod::SkeletonTopology& topo, double gamma,
                               std::size_t m, std::size_t c, std::size_t t, std::size_t v) {
  if (t + 1 >= x.frames()) return 0.0;
  const double rate = (angle(x, topo, m, t + 1, v) - angle(x, topo, m, t, v)) / gamma;
  return axis(x, topo, m, t, v)[c] * rate;
}

// ---- losses ----

inline double dotv(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec normalized(std::span<const double> x) {
  const double n = std::sqrt(dotv(x, x)) + 1e-12;
  Vec out(x.begin(), x.end());
  for (double& v : out) v /= n;
  return out;
}

inline std::vector<Vec> bank_rows(const kinemod::MemoryBank& bank) {
  std::vector<Vec> rows;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto e = bank.entry(i);
    rows.emplace_back(e.begin(), e.end());
  }
  return rows;
}

// Plain (no max-subtraction) InfoNCE with optional weighted extra positives.
inline double nce(const Vec& a, const Vec& p, const std::vector<Vec>& negatives, double tau,
                  const std::vector<std::pair<std::size_t, double>>& extra = {}) {
  if (negatives.empty()) return 0.0;
  const double pos = std::exp(dotv(a, p) / tau);
  double denom = pos;
  for (const auto& n : negatives) denom += std::exp(dotv(a, n) / tau);
  double numer = pos;
  for (const auto& [i, w] : extra) numer += w * std::exp(dotv(a, negatives[i]) / tau);
  return -std::log(numer / denom);
}

inline Vec row(const kinemod::EmbeddingMatrix& m, std::size_t b) {
  const auto r = m.row(b);
  return Vec(r.begin(), r.end());
}

inline double info_nce_batch(const kinemod::BatchState& batch, const std::vector<kinemod::MemoryBank>& banks,
                             double tau) {
  double total = 0.0;
  for (std::size_t u = 0; u < batch.query.size(); ++u) {
    const auto neg = bank_rows(banks[u]);
    double s = 0.0;
    for (std::size_t b = 0; b < batch.ids.size(); ++b) s += nce(row(batch.query[u], b), row(batch.key[u], b), neg, tau);
    total += s / static_cast<double>(batch.ids.size());
  }
  return total;
}

inline double ikem(const kinemod::BatchState& batch, const kinemod::MemoryBank& bank_c, double tau) {
  const auto neg = bank_rows(bank_c);
  double total = 0.0;
  for (std::size_t u = 0; u < batch.tilde.size(); ++u) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch.ids.size(); ++b) {
      Vec cat;
      for (const auto& k : batch.key) {
        const auto r = row(k, b);
        cat.insert(cat.end(), r.begin(), r.end());
      }
      s += nce(row(batch.tilde[u], b), normalized(cat), neg, tau);
    }
    total += s / static_cast<double>(batch.ids.size());
  }
  return total;
}

inline double ekem(const kinemod::BatchState& batch, const std::vector<kinemod::MemoryBank>& banks, double tau,
                   std::size_t topk) {
  const std::size_t n = batch.query.size();
  const std::size_t B = batch.ids.size();
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    const auto neg_u = bank_rows(banks[u]);
    double s = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      // weight per bank index, 0 when not mined by any partner modality
      Vec weight(neg_u.size(), 0.0);
      for (std::size_t v = 0; v < n; ++v) {
        if (v == u) continue;
        const auto neg_v = bank_rows(banks[v]);
        const auto zv = row(batch.query[v], b);
        Vec sims(neg_v.size());
        double z = 0.0;
        for (std::size_t i = 0; i < neg_v.size(); ++i) {
          sims[i] = dotv(zv, neg_v[i]) / tau;
          z += std::exp(sims[i]);
        }
        std::vector<bool> taken(neg_v.size(), false);
        for (std::size_t r = 0; r < std::min(topk, neg_v.size()); ++r) {
          std::size_t best = neg_v.size();
          for (std::size_t i = 0; i < neg_v.size(); ++i)
            if (!taken[i] && (best == neg_v.size() || sims[i] > sims[best])) best = i;
          taken[best] = true;
          weight[best] = std::max(weight[best], std::exp(sims[best]) / z);
        }
      }
      std::vector<std::pair<std::size_t, double>> extra;
      for (std::size_t i = 0; i < weight.size(); ++i)
        if (weight[i] > 0.0) extra.emplace_back(i, weight[i]);
      s += nce(row(batch.query[u], b), row(batch.key[u], b), neg_u, tau, extra);
    }
    total += s / static_cast<double>(B);
  }
  return total;
}

inline double distill(const kinemod::DistillBatch& batch, const kinemod::MemoryBank& bank,
                      const kinemod::DistillLossOptions& opts) {
  const std::size_t B = batch.ids.size();
  const std::size_t S = batch.teacher_modalities;
  const std::size_t w = batch.teacher.width / S;
  const double tau = opts.tau;
  double total = 0.0;
  for (std::size_t u = 0; u < batch.student.size(); ++u)
    for (std::size_t b = 0; b < B; ++b) {
      const auto zt = row(batch.teacher, b);
      const auto zu = row(batch.student[u], b);
      const double a = std::exp(dotv(zt, zu) / tau);
      for (std::size_t v = 0; v < S; ++v) {
        const auto tv = normalized(std::span<const double>(zt).subspan(v * w, w));
        const auto uv = normalized(std::span<const double>(zu).subspan(v * w, w));
        Vec sv, su;
        for (std::size_t i = 0; i < bank.size(); ++i) {
          if (opts.exclude_own_id && bank.id(i) == batch.ids[b]) continue;
          const auto m = normalized(bank.entry(i).subspan(v * w, w));
          sv.push_back(dotv(tv, m));
          su.push_back(dotv(uv, m));
        }
        std::size_t j = 0;
        for (std::size_t i = 1; i < sv.size(); ++i)
          if (sv[i] > sv[j]) j = i;
        double denom = a;
        for (std::size_t i = 0; i < sv.size(); ++i)
          if (!(opts.exclude_j_from_denominator && i == j)) denom += std::exp(su[i] * sv[i] / tau);
        const double numer = a + std::exp(su[j] * sv[j] / tau);
        total += -std::log(numer / denom) / static_cast<double>(B);
      }
    }
  return total;
}

// ---- fixtures ----

inline kinemod::MemoryBank random_bank(std::mt19937_64& rng, std::size_t capacity, std::size_t fill,
                                       std::size_t width, std::int64_t first_id = 100) {
  kinemod::MemoryBank bank(capacity, width);
  for (std::size_t i = 0; i < fill; ++i) bank.enqueue(random_unit(rng, width), first_id + static_cast<std::int64_t>(i));
  return bank;
}

// Random batch with n modalities of width cz; tilde has width n * cz; key_concat is filled.
inline kinemod::BatchState random_batch(std::mt19937_64& rng, std::size_t n, std::size_t batch, std::size_t cz) {
  kinemod::BatchState s;
  for (std::size_t b = 0; b < batch; ++b) s.ids.push_back(static_cast<std::int64_t>(b));
  auto fill = [&](std::size_t width) {
    kinemod::EmbeddingMatrix m(batch, width);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto v = random_unit(rng, width);
      std::copy(v.begin(), v.end(), m.row(b).begin());
    }
    return m;
  };
  for (std::size_t u = 0; u < n; ++u) {
    s.query.push_back(fill(cz));
    s.tilde.push_back(fill(n * cz));
    s.key.push_back(fill(cz));
  }
  kinemod::concat_keys(s);
  return s;
}

}  // namespace oracle
