// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "kinemod/config.hpp"
#include "kinemod/contrastive.hpp"
#include "kinemod/distill.hpp"
#include "kinemod/gradcheck.hpp"
#include "kinemod/modality.hpp"
#include "kinemod/pipeline.hpp"
#include "oracles.hpp"

using namespace kinemod;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s  %s  [%s; %.2f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

using Mat = std::array<std::array<double, 3>, 3>;

SkeletonSequence transformed(const SkeletonSequence& seq, const Mat& R, std::array<double, 3> shift) {
  SkeletonSequence out = seq;
  const auto& x = seq.data;
  for (std::size_t m = 0; m < x.bodies(); ++m)
    for (std::size_t t = 0; t < x.frames(); ++t)
      for (std::size_t v = 0; v < x.joints(); ++v)
        for (std::size_t r = 0; r < 3; ++r) {
          double s = shift[r];
          for (std::size_t c = 0; c < 3; ++c) s += R[r][c] * x(m, c, t, v);
          out.data(m, r, t, v) = s;
        }
  return out;
}

// Max |rotate(a) - b| over every 3-vector of a modality tensor.
double rotation_residual(const Tensor4& a, const Tensor4& b, const Mat& R) {
  double worst = 0.0;
  for (std::size_t m = 0; m < a.bodies(); ++m)
    for (std::size_t t = 0; t < a.frames(); ++t)
      for (std::size_t v = 0; v < a.joints(); ++v)
        for (std::size_t r = 0; r < 3; ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < 3; ++c) s += R[r][c] * a(m, c, t, v);
          worst = std::max(worst, std::abs(s - b(m, r, t, v)));
        }
  return worst;
}

std::vector<MemoryBank> aligned_banks(std::mt19937_64& rng, std::size_t n, std::size_t capacity, std::size_t fill,
                                      std::size_t width) {
  std::vector<MemoryBank> banks;
  for (std::size_t u = 0; u < n; ++u) banks.push_back(oracle::random_bank(rng, capacity, fill, width));
  return banks;
}

DistillBatch random_distill_batch(std::mt19937_64& rng, std::size_t students, std::size_t B, std::size_t slices,
                                  std::size_t cz) {
  DistillBatch batch;
  batch.teacher_modalities = slices;
  batch.teacher = EmbeddingMatrix(B, slices * cz);
  for (std::size_t b = 0; b < B; ++b) {
    batch.ids.push_back(static_cast<std::int64_t>(b));
    const auto v = oracle::random_unit(rng, slices * cz);
    std::copy(v.begin(), v.end(), batch.teacher.row(b).begin());
  }
  for (std::size_t u = 0; u < students; ++u) {
    EmbeddingMatrix m(B, slices * cz);
    for (std::size_t b = 0; b < B; ++b) {
      const auto v = oracle::random_unit(rng, slices * cz);
      std::copy(v.begin(), v.end(), m.row(b).begin());
    }
    batch.student.push_back(std::move(m));
  }
  return batch;
}

std::vector<const std::vector<double>*> blocks(const EncoderParams& p) {
  std::vector<const std::vector<double>*> out;
  EncoderParams::visit(p, [&](const std::string&, const std::vector<double>& v) { out.push_back(&v); });
  return out;
}

bool bit_identical(const EncoderParams& a, const EncoderParams& b) {
  const auto x = blocks(a), y = blocks(b);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (*x[i] != *y[i]) return false;
  return true;
}

// ---- criteria ----

Outcome modality_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  const auto topo = default_topology();
  const std::size_t originals[] = {40, 50, 75, 100};  // gamma 0.8, 1, 1.5, 2
  double worst = 0.0;
  std::size_t checked = 0;
  for (int s = 0; s < 100; ++s) {
    const std::size_t orig = originals[s % 4];
    const auto seq = oracle::random_sequence(rng, kMaxBodies, kResampledFrames, topo.joint_count, orig);
    const double gamma = static_cast<double>(orig) / 50.0;
    const auto set = derive_all(seq, topo);
    const auto theta = derive_joint_angles(set[ModalityKind::Bone], topo);
    const auto& x = seq.data;
    auto note = [&](double got, double want) {
      worst = std::max(worst, oracle::rel_err(got, want));
      ++checked;
    };
    for (std::size_t m = 0; m < x.bodies(); ++m)
      for (std::size_t t = 0; t < x.frames(); ++t)
        for (std::size_t v = 0; v < x.joints(); ++v) {
          const auto b = oracle::bone(x, topo, m, t, v);
          const auto r = oracle::axis(x, topo, m, t, v);
          note(theta.theta(m, 0, t, v), oracle::angle(x, topo, m, t, v));
          for (std::size_t c = 0; c < 3; ++c) {
            note(set[ModalityKind::Joint].data(m, c, t, v), x(m, c, t, v));
            note(set[ModalityKind::Motion].data(m, c, t, v), oracle::motion(x, m, c, t, v));
            note(set[ModalityKind::Acceleration].data(m, c, t, v), oracle::acceleration(x, gamma, m, c, t, v));
            note(set[ModalityKind::Bone].data(m, c, t, v), b[c]);
            note(set[ModalityKind::RotationAxis].data(m, c, t, v), r[c]);
            note(set[ModalityKind::AngularVelocity].data(m, c, t, v),
                 oracle::angular_velocity(x, topo, gamma, m, c, t, v));
          }
        }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 10.0,
          fmt::format("{} values, max rel err {:.3g} (tol 1e-12), {:.2f} s (limit 10 s)", checked, worst, secs)};
}

Outcome invariances() {
  std::mt19937_64 rng(77);
  const auto topo = default_topology();
  const auto seq = oracle::random_sequence(rng, kMaxBodies, kResampledFrames, topo.joint_count, 75);
  const auto base = derive_all(seq, topo);
  const auto base_theta = derive_joint_angles(base[ModalityKind::Bone], topo);
  double trans = 0.0, rot = 0.0;
  std::normal_distribution<double> shift(0.0, 5.0);
  const Mat I{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  for (int k = 0; k < 50; ++k) {
    const std::array<double, 3> d{shift(rng), shift(rng), shift(rng)};
    const auto moved = derive_all(transformed(seq, I, d), topo);
    for (auto kind : kAllModalities) {
      if (kind == ModalityKind::Joint) continue;
      trans = std::max(trans, oracle::max_abs_diff(moved[kind].data.values(), base[kind].data.values()));
    }
    const auto R = oracle::random_rotation(rng);
    const auto turned = derive_all(transformed(seq, R, {0, 0, 0}), topo);
    for (auto kind : {ModalityKind::Bone, ModalityKind::RotationAxis, ModalityKind::AngularVelocity})
      rot = std::max(rot, rotation_residual(base[kind].data, turned[kind].data, R));
    const auto theta = derive_joint_angles(turned[ModalityKind::Bone], topo);
    rot = std::max(rot, oracle::max_abs_diff(theta.theta.values(), base_theta.theta.values()));
  }
  return {trans <= 1e-9 && rot <= 1e-9,
          fmt::format("translation max diff {:.3g}, rotation max residual {:.3g} over 50 rotations (tol 1e-9)", trans,
                      rot)};
}

Outcome gamma_scaling() {
  std::mt19937_64 rng(91);
  const auto topo = default_topology();
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    const double gamma = 0.8 + 0.1 * s;
    const auto seq = oracle::random_sequence(rng, kMaxBodies, kResampledFrames, topo.joint_count, 50);
    const auto a1 = derive_acceleration(seq, TimeScale{gamma});
    const auto a2 = derive_acceleration(seq, TimeScale{2.0 * gamma});
    const auto bones = derive_bones(seq, topo);
    const auto axes = derive_rotation_axes(bones, topo);
    const auto theta = derive_joint_angles(bones, topo);
    const auto w1 = derive_angular_velocity(axes, theta, TimeScale{gamma});
    const auto w2 = derive_angular_velocity(axes, theta, TimeScale{2.0 * gamma});
    for (std::size_t i = 0; i < a1.data.values().size(); ++i) {
      worst = std::max(worst, oracle::rel_err(a2.data.values()[i], 0.25 * a1.data.values()[i]));
      worst = std::max(worst, oracle::rel_err(w2.data.values()[i], 0.5 * w1.data.values()[i]));
    }
  }
  return {worst <= 1e-12, fmt::format("max rel err {:.3g} (tol 1e-12)", worst)};
}

Outcome loss_oracles() {
  std::mt19937_64 rng(5150);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = trial % 2 ? 3 : 1;
    const std::size_t cz = 3 + trial % 4;
    const double tau = trial % 3 ? 0.07 : 0.5;
    auto batch = oracle::random_batch(rng, n, 4, cz);
    auto banks = aligned_banks(rng, n, 8, 8, cz);
    auto bank_c = oracle::random_bank(rng, 8, 8, n * cz);
    worst = std::max(worst, oracle::rel_err(info_nce_batch(batch, banks, tau), oracle::info_nce_batch(batch, banks, tau)));
    worst = std::max(worst, oracle::rel_err(ikem_loss(batch, bank_c, tau), oracle::ikem(batch, bank_c, tau)));
    worst = std::max(worst, oracle::rel_err(ekem_loss(batch, banks, tau, 1), oracle::ekem(batch, banks, tau, 1)));

    const std::size_t S = 6;
    auto db = random_distill_batch(rng, 3, 4, S, cz);
    MemoryBank bank(8, S * cz);
    for (std::size_t i = 0; i < 6; ++i) bank.enqueue(oracle::random_unit(rng, S * cz), 100 + static_cast<std::int64_t>(i));
    for (std::size_t b = 0; b < 2; ++b) bank.enqueue(oracle::random_unit(rng, S * cz), static_cast<std::int64_t>(b));
    const DistillLossOptions o{tau, trial % 4 == 3, true};
    worst = std::max(worst, oracle::rel_err(distill_loss(db, bank, o), oracle::distill(db, bank, o)));
  }
  return {worst <= 1e-10, fmt::format("info_nce/ikem/ekem/distill on 20 configs, max rel err {:.3g} (tol 1e-10)", worst)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  GradSuiteOptions opts;
  const auto results = run_gradient_suite(opts);
  const double secs = seconds_since(t0);
  bool ok = results.size() == 4 && secs < 60.0;
  std::string detail;
  for (const auto& r : results) {
    ok = ok && r.report.passed && r.report.coords_checked >= 200 && r.report.max_rel_error < 1e-4;
    detail += fmt::format("{} {} coords max rel {:.2e}; ", r.loss, r.report.coords_checked, r.report.max_rel_error);
  }
  return {ok, detail + fmt::format("{:.1f} s (limit 60 s)", secs)};
}

Outcome structural_identities() {
  std::mt19937_64 rng(31337);
  bool ikem_ok = true, ekem_ok = true, distill_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    auto b1 = oracle::random_batch(rng, 1, 4, 5);
    auto bank = oracle::random_bank(rng, 8, 1 + trial % 8, 5);
    double want = 0.0;
    for (std::size_t b = 0; b < 4; ++b) want += info_nce(b1.tilde[0].row(b), b1.key_concat.row(b), bank, 0.07);
    ikem_ok = ikem_ok && ikem_loss(b1, bank, 0.07) == want / 4.0;

    const std::size_t n = 1 + trial % 6;
    auto batch = oracle::random_batch(rng, n, 4, 4);
    auto banks = aligned_banks(rng, n, 8, 8, 4);
    ekem_ok = ekem_ok && ekem_loss(batch, banks, 0.07, 0) == info_nce_batch(batch, banks, 0.07);

    auto db = random_distill_batch(rng, 3, 4, 6, 3);
    MemoryBank one(1, 18);
    one.enqueue(oracle::random_unit(rng, 18), 77);
    distill_ok = distill_ok && distill_loss(db, one, DistillLossOptions{}) == 0.0;
  }
  return {ikem_ok && ekem_ok && distill_ok,
          fmt::format("n=1 IKEM == InfoNCE: {}; topk=0 EKEM == sum InfoNCE: {}; bank-of-one distill == 0: {}", ikem_ok,
                      ekem_ok, distill_ok)};
}

Outcome bank_momentum_frozen() {
  // FIFO: after capacity + extra insertions the bank holds the last `capacity` entries, oldest first.
  std::mt19937_64 rng(8);
  bool fifo = true;
  for (std::size_t cap : {1, 3, 8}) {
    MemoryBank bank(cap, 4);
    std::vector<oracle::Vec> pushed;
    for (std::size_t i = 0; i < cap + 5; ++i) {
      pushed.push_back(oracle::random_unit(rng, 4));
      bank.enqueue(pushed.back(), static_cast<std::int64_t>(i));
    }
    for (std::size_t i = 0; i < cap; ++i) {
      const auto e = bank.entry(i);
      const auto& w = pushed[pushed.size() - cap + i];
      fifo = fifo && std::equal(e.begin(), e.end(), w.begin()) &&
             bank.id(i) == static_cast<std::int64_t>(pushed.size() - cap + i);
    }
  }

  // k momentum steps against a fixed query: m^k k0 + (1 - m^k) q.
  const auto arch = make_arch(25, kMaxBodies, 8, 8, 4, 3);
  double mom = 0.0;
  for (double m : {0.5, 0.9, 0.999}) {
    auto s = EncoderStack::create(arch, 13);
    s.key = EncoderStack::create(arch, 14).query;
    const auto k0 = s.key;
    const std::size_t k = 37;
    for (std::size_t i = 0; i < k; ++i) momentum_update(s, m);
    const double mk = std::pow(m, static_cast<double>(k));
    const auto kv = blocks(s.key), qv = blocks(s.query), k0v = blocks(k0);
    for (std::size_t b = 0; b < kv.size(); ++b)
      for (std::size_t i = 0; i < kv[b]->size(); ++i)
        mom = std::max(mom, std::abs((*kv[b])[i] - (mk * (*k0v[b])[i] + (1.0 - mk) * (*qv[b])[i])));
  }

  // Frozen key encoders through stage 2, frozen teacher through distillation.
  SyntheticSpec spec;
  spec.samples = 12;
  const auto topo = default_topology();
  const auto data = resized(generate_synthetic(spec, topo)).sequences();
  TrainConfig c;
  c.stage1_epochs = 2;
  c.stage2_epochs = 0;
  c.batch_size = 4;
  c.bank_capacity = 8;
  c.hidden = 8;
  c.feature = 8;
  c.embed_dim = 4;
  c.lr = {0.05, 0.1, 1000};
  const auto after1 = pretrain(data, topo, c);
  c.stage2_epochs = 3;
  const auto after2 = pretrain(data, topo, c);
  bool frozen = true;
  for (std::size_t u = 0; u < after2.models.kinds.size(); ++u) {
    const auto kind = after2.models.kinds[u];
    const bool should = std::find(c.freeze_high_perf.begin(), c.freeze_high_perf.end(), kind) != c.freeze_high_perf.end();
    frozen = frozen && bit_identical(after1.models.stacks[u].key, after2.models.stacks[u].key) == should;
  }
  const auto teacher_hash = parameter_hash(after2.models);
  DistillConfig d;
  d.epochs = 2;
  d.batch_size = 4;
  d.hidden = 8;
  d.feature = 8;
  distill_train(after2.models, data, topo, d);
  frozen = frozen && parameter_hash(after2.models) == teacher_hash;

  return {fifo && mom <= 1e-10 && frozen,
          fmt::format("FIFO exact: {}; momentum closed form max err {:.3g} (tol 1e-10); frozen keys/teacher bit-identical: {}",
                      fifo, mom, frozen)};
}

// ---- toy end-to-end ----

struct ToyRun {
  EvalReport teacher, baseline, student;
  std::string pretrain_csv, baseline_csv, distill_csv;
  double first_cos = 0.0, last_cos = 0.0;
  double seconds = 0.0;
};

TrainConfig baseline_config(const TrainConfig& six) {
  TrainConfig b = six;
  b.modalities = {kFundamentalModalities.begin(), kFundamentalModalities.end()};
  b.freeze_high_perf.clear();
  for (auto k : six.freeze_high_perf)
    if (std::find(b.modalities.begin(), b.modalities.end(), k) != b.modalities.end()) b.freeze_high_perf.push_back(k);
  return b;
}

ToyRun run_toy(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  ToyRun r;
  const auto data = prepare_data(cfg);
  const auto seqs = data.train.sequences();
  const auto teacher = pretrain(seqs, data.topo, cfg.pretrain);
  r.teacher = probe_and_evaluate(teacher.models, data.train, data.eval, data.topo, cfg.eval);
  const auto baseline = pretrain(seqs, data.topo, baseline_config(cfg.pretrain));
  r.baseline = probe_and_evaluate(baseline.models, data.train, data.eval, data.topo, cfg.eval);
  const auto student = distill_train(teacher.models, seqs, data.topo, cfg.distill);
  r.student = probe_and_evaluate(student.student, data.train, data.eval, data.topo, cfg.eval);
  std::ostringstream a, b, c;
  write_metrics_csv(a, teacher.metrics);
  write_metrics_csv(b, baseline.metrics);
  write_distill_metrics_csv(c, student.metrics);
  r.pretrain_csv = a.str();
  r.baseline_csv = b.str();
  r.distill_csv = c.str();
  r.first_cos = student.metrics.front().mean_cos_t_s;
  r.last_cos = student.metrics.back().mean_cos_t_s;
  r.seconds = seconds_since(t0);
  return r;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  std::printf("kinemod acceptance suite\n");
  criterion("modality oracle equivalence (100 sequences, gamma in {0.8,1,1.5,2})", modality_oracle);
  criterion("kinematic invariances (translation, 50 rotations)", invariances);
  criterion("gamma scaling law (A x0.25, omega x0.5 under gamma -> 2 gamma)", gamma_scaling);
  criterion("loss oracles (batch 4, bank 8, n in {1,3}, teacher set 6)", loss_oracles);
  criterion("gradient suite (4 losses, >= 200 coords, rel < 1e-4, < 60 s)", gradient_suite);
  criterion("structural identities (exact)", structural_identities);
  criterion("bank FIFO, momentum closed form, frozen parameters", bank_momentum_frozen);

  RunConfig cfg;
  ToyRun toy;
  bool toy_ok = false;
  try {
    cfg = load_run_config(std::filesystem::path(KINEMOD_SOURCE_DIR) / "configs" / "toy.ini");
    cfg.validate();
    toy = run_toy(cfg);
    toy_ok = true;
  } catch (const std::exception& e) {
    std::printf("toy run failed: %s\n", e.what());
  }
  criterion("toy end-to-end (six-modality fused >= 0.90, 3-modality baseline <= six-modality, < 10 min)", [&] {
    if (!toy_ok) return Outcome{false, "toy run did not complete"};
    const bool ok = toy.teacher.fused_top1 >= 0.9 && toy.baseline.fused_top1 <= toy.teacher.fused_top1 &&
                    toy.seconds < 600.0;
    return Outcome{ok, fmt::format("six-modality fused {:.4f}, baseline fused {:.4f}, {:.1f} s", toy.teacher.fused_top1,
                                   toy.baseline.fused_top1, toy.seconds)};
  });
  criterion("distillation efficacy (student >= teacher - 0.05 and > baseline)", [&] {
    if (!toy_ok) return Outcome{false, "toy run did not complete"};
    const bool ok = toy.student.fused_top1 >= toy.teacher.fused_top1 - 0.05 &&
                    toy.student.fused_top1 > toy.baseline.fused_top1 && toy.seconds < 600.0;
    return Outcome{ok, fmt::format("student fused {:.4f}, teacher {:.4f}, baseline {:.4f}; mean cos(t,s) {:.4f} -> {:.4f}",
                                   toy.student.fused_top1, toy.teacher.fused_top1, toy.baseline.fused_top1,
                                   toy.first_cos, toy.last_cos)};
  });
  criterion("determinism (rerun reproduces every metrics CSV byte for byte)", [&] {
    if (!toy_ok) return Outcome{false, "toy run did not complete"};
    const auto again = run_toy(cfg);
    const bool ok = again.pretrain_csv == toy.pretrain_csv && again.baseline_csv == toy.baseline_csv &&
                    again.distill_csv == toy.distill_csv;
    return Outcome{ok, fmt::format("pretrain {} B, baseline {} B, distill {} B compared", toy.pretrain_csv.size(),
                                   toy.baseline_csv.size(), toy.distill_csv.size())};
  });

  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
