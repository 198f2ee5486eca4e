#include "kinemod/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

#include <spdlog/spdlog.h>

#include "kinemod/common.hpp"

namespace kinemod {

std::vector<double> teacher_embed(const ModelSet& teacher, const ModalitySet& sample) {
  if (teacher.kinds.empty() || teacher.kinds.size() != teacher.stacks.size())
    throw DataError("teacher checkpoint has no usable encoders");
  std::vector<double> cat;
  for (std::size_t i = 0; i < teacher.kinds.size(); ++i) {
    const auto& s = teacher.stacks[i];
    const auto f = encode(s, sample[teacher.kinds[i]], /*use_key=*/true);
    const auto z = project(s, f, HeadKind::G, /*use_key=*/true);
    cat.insert(cat.end(), z.begin(), z.end());
  }
  return l2_normalize(cat);
}

namespace {

std::span<const double> slice_of(std::span<const double> x, std::size_t slice, std::size_t width) {
  return x.subspan(slice * width, width);
}

}  // namespace

SimilaritySets similarity_sets(std::span<const double> z_t, std::span<const double> z_u, const MemoryBank& bank,
                               std::size_t slice, std::size_t slices, std::int64_t own_id,
                               const DistillLossOptions& opts) {
  if (slices == 0 || z_t.size() % slices != 0) throw std::invalid_argument("teacher width is not a multiple of slices");
  if (z_t.size() != z_u.size() || z_t.size() != bank.width())
    throw std::invalid_argument("teacher, student and bank widths must agree");
  const std::size_t w = z_t.size() / slices;
  const auto tv = l2_normalize(slice_of(z_t, slice, w));
  const auto uv = l2_normalize(slice_of(z_u, slice, w));
  SimilaritySets s;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (opts.exclude_own_id && own_id >= 0 && bank.id(i) == own_id) continue;
    const auto m = l2_normalize(slice_of(bank.entry(i), slice, w));
    s.bank_index.push_back(i);
    s.s_v.push_back(dot(tv, m));
    s.s_u.push_back(dot(uv, m));
  }
  if (s.s_v.empty()) throw DataError("distillation bank has no negatives for this anchor");
  s.j = static_cast<std::size_t>(std::max_element(s.s_v.begin(), s.s_v.end()) - s.s_v.begin());
  return s;
}

double distill_loss(const DistillBatch& batch, const MemoryBank& bank, const DistillLossOptions& opts,
                    std::vector<EmbeddingMatrix>* d_student) {
  if (!(opts.tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (bank.empty()) throw DataError("distillation needs a non-empty memory bank");
  const std::size_t B = batch.teacher.rows;
  const std::size_t W = batch.teacher.width;
  const std::size_t S = batch.teacher_modalities;
  if (B == 0 || batch.ids.size() != B) throw std::invalid_argument("distillation batch is empty or lacks ids");
  if (S == 0 || W % S != 0) throw std::invalid_argument("teacher width must split into modality slices");
  const std::size_t w = W / S;
  const double tau = opts.tau;
  const double inv_b = 1.0 / static_cast<double>(B);
  if (d_student) {
    d_student->resize(batch.student.size());
    for (std::size_t u = 0; u < batch.student.size(); ++u)
      if ((*d_student)[u].rows != B || (*d_student)[u].width != W) (*d_student)[u] = EmbeddingMatrix(B, W);
  }

  double total = 0.0;
  for (std::size_t u = 0; u < batch.student.size(); ++u) {
    if (batch.student[u].rows != B || batch.student[u].width != W)
      throw std::invalid_argument("student embedding shape does not match the teacher");
    for (std::size_t b = 0; b < B; ++b) {
      const auto zt = batch.teacher.row(b);
      const auto zu = batch.student[u].row(b);
      const double a = dot(zt, zu) / tau;
      for (std::size_t v = 0; v < S; ++v) {
        const auto sets = similarity_sets(zt, zu, bank, v, S, batch.ids[b], opts);
        const std::size_t n = sets.s_v.size();
        std::vector<double> r(n);
        double mx = a;
        for (std::size_t i = 0; i < n; ++i) {
          r[i] = sets.s_u[i] * sets.s_v[i] / tau;
          mx = std::max(mx, r[i]);
        }
        const double ea = std::exp(a - mx);
        std::vector<double> er(n);
        double denom = ea;
        for (std::size_t i = 0; i < n; ++i) {
          er[i] = std::exp(r[i] - mx);
          if (!(opts.exclude_j_from_denominator && i == sets.j)) denom += er[i];
        }
        const double numer = ea + er[sets.j];
        total += (std::log(denom) - std::log(numer)) * inv_b;

        if (!d_student) continue;
        auto dz = (*d_student)[u].row(b);
        const double da = (ea / denom - ea / numer) * inv_b / tau;
        for (std::size_t k = 0; k < W; ++k) dz[k] += da * zt[k];
        // Through s_i^u = <normalize(z^u slice v), normalize(bank slice v)>.
        std::vector<double> dy(w, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          double dr = (opts.exclude_j_from_denominator && i == sets.j) ? 0.0 : er[i] / denom;
          if (i == sets.j) dr -= er[i] / numer;
          const double ds = dr * inv_b * sets.s_v[i] / tau;
          if (ds == 0.0) continue;
          const auto m = l2_normalize(slice_of(bank.entry(sets.bank_index[i]), v, w));
          for (std::size_t k = 0; k < w; ++k) dy[k] += ds * m[k];
        }
        const auto x = slice_of(zu, v, w);
        const double nx = std::sqrt(dot(x, x));
        const double ne = nx + kNormalizeEpsilon;
        const double k2 = nx > 0.0 ? dot(x, dy) / (nx * ne * ne) : 0.0;
        for (std::size_t k = 0; k < w; ++k) dz[v * w + k] += dy[k] / ne - x[k] * k2;
      }
    }
  }
  return total;
}

void DistillConfig::validate() const {
  if (!(loss.tau > 0.0)) throw ConfigError("distillation tau must be positive");
  if (batch_size == 0) throw ConfigError("distillation batch size must be positive");
  if (student_modalities.empty()) throw ConfigError("student needs at least one modality");
  for (auto k : student_modalities)
    if (std::find(kFundamentalModalities.begin(), kFundamentalModalities.end(), k) == kFundamentalModalities.end())
      throw ConfigError("student modalities must be drawn from joint, motion and bone");
  if (hidden == 0 || feature == 0) throw ConfigError("encoder widths must be positive");
}

void write_distill_metrics_csv(std::ostream& out, std::span<const DistillMetricRow> rows) {
  out << "epoch,loss,mean_cos_t_s\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g\n", r.epoch, r.loss, r.mean_cos_t_s);
    out << buf;
  }
}

DistillResult distill_train(const ModelSet& teacher, std::span<const SkeletonSequence> data,
                            const SkeletonTopology& topo, const DistillConfig& config) {
  config.validate();
  if (data.empty()) throw DataError("distillation needs a non-empty dataset");
  if (teacher.kinds.empty() || teacher.kinds.size() != teacher.stacks.size())
    throw DataError("teacher checkpoint has no usable encoders");
  const std::size_t c_z = teacher.stacks[0].arch.embed_dim;
  for (const auto& s : teacher.stacks)
    if (s.arch.embed_dim != c_z) throw DataError("teacher encoders disagree on embedding width");
  const std::size_t slices = teacher.kinds.size();
  const std::size_t bodies = data[0].bodies();
  if (teacher.stacks[0].arch.input_dim != bodies * kCoords * topo.joint_count)
    throw DataError("teacher input width does not match the data");

  const auto& kinds = config.student_modalities;
  const std::size_t U = kinds.size();
  const std::size_t N = data.size();
  const auto plain = derive_batch(data, topo);

  MemoryBank bank(N, slices * c_z);
  {
    std::vector<std::vector<double>> zt(N);
    ParallelErrors errors;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < N; ++i) errors.run([&] { zt[i] = teacher_embed(teacher, plain[i]); });
    errors.rethrow();
    for (std::size_t i = 0; i < N; ++i) bank.enqueue(zt[i], static_cast<std::int64_t>(i));
  }

  const EncoderArch arch = make_arch(topo.joint_count, bodies, config.hidden, config.feature, c_z, slices);
  const auto norms = fit_modality_norms(plain, kinds, arch.input_dim);
  DistillResult result;
  result.student.seed = config.seed;
  for (std::size_t u = 0; u < U; ++u) {
    auto s = EncoderStack::create(arch, mix_seed(config.seed, 0xd157, u));
    s.norm = norms[u];
    s.key = s.query;
    result.student.kinds.push_back(kinds[u]);
    result.student.stacks.push_back(std::move(s));
  }
  auto& stacks = result.student.stacks;
  std::vector<Sgd> optimizers(U, Sgd(config.sgd_momentum, config.weight_decay));
  LrSchedule schedule = config.lr;
  if (schedule.step_epoch == 0) schedule.step_epoch = std::max<std::size_t>(1, config.epochs * 5 / 6);
  std::mt19937_64 order_rng(mix_seed(config.seed, 0x0de5, 0xd));

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = schedule.at(epoch);
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), order_rng);
    double loss_sum = 0.0, cos_sum = 0.0;
    std::size_t batches = 0, pairs = 0;

    for (std::size_t start = 0; start < N; start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, N - start);
      DistillBatch batch;
      batch.teacher_modalities = slices;
      batch.teacher = EmbeddingMatrix(B, slices * c_z);
      batch.student.assign(U, EmbeddingMatrix(B, slices * c_z));
      std::vector<ModalitySet> qv(B);
      for (std::size_t b = 0; b < B; ++b) batch.ids.push_back(static_cast<std::int64_t>(perm[start + b]));
      ParallelErrors errors;
#pragma omp parallel for schedule(dynamic)
      for (std::size_t b = 0; b < B; ++b) errors.run([&] {
        const std::size_t i = perm[start + b];
        qv[b] = derive_all(apply_augmentation(data[i], config.augment, mix_seed(config.seed, epoch, i, 11)), topo,
                           Exec::Serial);
        const auto kv = derive_all(apply_augmentation(data[i], config.augment, mix_seed(config.seed, epoch, i, 12)),
                                   topo, Exec::Serial);
        const auto zt = teacher_embed(teacher, kv);
        std::copy(zt.begin(), zt.end(), batch.teacher.row(b).begin());
      });
      errors.rethrow();

      std::vector<FeatureCache> feats(U * B);
      std::vector<HeadCache> heads(U * B);
#pragma omp parallel for collapse(2) schedule(dynamic)
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t b = 0; b < B; ++b) errors.run([&] {
          const auto& s = stacks[u];
          feats[u * B + b] = encode_cached(arch, s.norm, s.query.backbone, qv[b][kinds[u]].data);
          heads[u * B + b] = project_cached(arch, s.query.g_tilde, feats[u * B + b].feature);
          std::copy(heads[u * B + b].z.begin(), heads[u * B + b].z.end(), batch.student[u].row(b).begin());
        });
      errors.rethrow();

      std::vector<EmbeddingMatrix> d_student;
      const double loss = distill_loss(batch, bank, config.loss, &d_student);
      if (!std::isfinite(loss)) {
        if (config.diagnostic_checkpoint) save_checkpoint(result.student, *config.diagnostic_checkpoint);
        throw NumericError("distillation diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      }
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t b = 0; b < B; ++b) {
          cos_sum += dot(batch.teacher.row(b), batch.student[u].row(b));
          ++pairs;
        }

#pragma omp parallel for schedule(dynamic)
      for (std::size_t u = 0; u < U; ++u) {
        auto& s = stacks[u];
        EncoderParams g = s.query.zeros_like();
        for (std::size_t b = 0; b < B; ++b) {
          std::vector<double> d_feature(arch.feature, 0.0);
          backward_head(arch, s.query.g_tilde, heads[u * B + b], feats[u * B + b].feature, d_student[u].row(b),
                        g.g_tilde, d_feature);
          backward_backbone(arch, s.query.backbone, feats[u * B + b], d_feature, g.backbone);
        }
        optimizers[u].step(s.query, g, lr);
      }
      loss_sum += loss;
      ++batches;
    }
    result.metrics.push_back({epoch + 1, loss_sum / static_cast<double>(batches), cos_sum / static_cast<double>(pairs)});
    spdlog::debug("distill epoch {} loss {:.5f} cos {:.4f}", epoch + 1, result.metrics.back().loss,
                  result.metrics.back().mean_cos_t_s);
  }
  for (auto& s : stacks) s.key = s.query;
  return result;
}

}  // namespace kinemod
