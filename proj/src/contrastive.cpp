#include "kinemod/contrastive.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>

#include <spdlog/spdlog.h>

#include "kinemod/common.hpp"

namespace kinemod {

// ---- memory bank ----

MemoryBank::MemoryBank(std::size_t capacity, std::size_t width)
    : capacity_(capacity), width_(width), storage_(capacity * width, 0.0), ids_(capacity, -1) {
  if (capacity == 0 || width == 0) throw std::invalid_argument("memory bank needs positive capacity and width");
}

void MemoryBank::enqueue(std::span<const double> embedding, std::int64_t id) {
  if (embedding.size() != width_)
    throw std::invalid_argument("memory bank width " + std::to_string(width_) + ", got " +
                                std::to_string(embedding.size()));
  const double n = std::sqrt(dot(embedding, embedding));
  if (std::abs(n - 1.0) > kNormTolerance) throw std::invalid_argument("memory bank entries must be unit norm");
  std::size_t dst;
  if (count_ < capacity_) {
    dst = slot(count_);
    ++count_;
  } else {
    dst = head_;
    head_ = (head_ + 1) % capacity_;
  }
  std::copy(embedding.begin(), embedding.end(), storage_.begin() + static_cast<std::ptrdiff_t>(dst * width_));
  ids_[dst] = id;
}

void MemoryBank::clear() {
  head_ = 0;
  count_ = 0;
}

std::span<const double> MemoryBank::entry(std::size_t i) const {
  if (i >= count_) throw std::out_of_range("memory bank index out of range");
  return {storage_.data() + slot(i) * width_, width_};
}

std::int64_t MemoryBank::id(std::size_t i) const {
  if (i >= count_) throw std::out_of_range("memory bank index out of range");
  return ids_[slot(i)];
}

// ---- losses ----

double multi_positive_nce(std::span<const double> anchor, std::span<const double> positive,
                          const MemoryBank& bank, std::span<const MinedPositive> extra, double tau,
                          std::span<double> d_anchor) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (anchor.size() != positive.size() || anchor.size() != bank.width())
    throw std::invalid_argument("anchor, positive and bank widths must agree");
  const std::size_t N = bank.size();
  if (N == 0) {
    static std::once_flag warned;
    std::call_once(warned, [] { spdlog::warn("contrastive loss evaluated against an empty memory bank"); });
    return 0.0;
  }

  const double l0 = dot(anchor, positive) / tau;
  std::vector<double> logits(N);
  double mx = l0;
  for (std::size_t i = 0; i < N; ++i) {
    logits[i] = dot(anchor, bank.entry(i)) / tau;
    mx = std::max(mx, logits[i]);
  }
  const double e0 = std::exp(l0 - mx);
  std::vector<double> e(N);
  double denom = e0;
  for (std::size_t i = 0; i < N; ++i) {
    e[i] = std::exp(logits[i] - mx);
    denom += e[i];
  }
  double numer = e0;
  for (const auto& p : extra) numer += p.weight * e[p.index];
  const double loss = std::log(denom) - std::log(numer);

  if (!d_anchor.empty()) {
    // dL/dl_i = softmax_denom(i) - share of i in the numerator.
    std::vector<double> coef(N);
    for (std::size_t i = 0; i < N; ++i) coef[i] = e[i] / denom;
    for (const auto& p : extra) coef[p.index] -= p.weight * e[p.index] / numer;
    const double c0 = e0 / denom - e0 / numer;
    for (std::size_t k = 0; k < anchor.size(); ++k) d_anchor[k] += c0 * positive[k] / tau;
    for (std::size_t i = 0; i < N; ++i) {
      if (coef[i] == 0.0) continue;
      const auto m = bank.entry(i);
      const double c = coef[i] / tau;
      for (std::size_t k = 0; k < anchor.size(); ++k) d_anchor[k] += c * m[k];
    }
  }
  return loss;
}

double info_nce(std::span<const double> anchor, std::span<const double> positive, const MemoryBank& bank,
                double tau, std::span<double> d_anchor) {
  return multi_positive_nce(anchor, positive, bank, {}, tau, d_anchor);
}

void concat_keys(BatchState& batch) {
  const std::size_t n = batch.key.size();
  const std::size_t B = batch.batch_size();
  if (n == 0) throw std::invalid_argument("batch has no modalities");
  const std::size_t w = batch.key[0].width;
  batch.key_concat = EmbeddingMatrix(B, n * w);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> cat;
    cat.reserve(n * w);
    for (std::size_t u = 0; u < n; ++u) {
      const auto r = batch.key[u].row(b);
      cat.insert(cat.end(), r.begin(), r.end());
    }
    const auto z = l2_normalize(cat);
    std::copy(z.begin(), z.end(), batch.key_concat.row(b).begin());
  }
}

void BatchGrad::resize_like(const BatchState& batch) {
  const std::size_t n = batch.modalities();
  const std::size_t B = batch.batch_size();
  d_query.resize(n);
  d_tilde.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    if (d_query[u].rows != B || d_query[u].width != batch.query[u].width)
      d_query[u] = EmbeddingMatrix(B, batch.query[u].width);
    const std::size_t tw = u < batch.tilde.size() ? batch.tilde[u].width : 0;
    if (d_tilde[u].rows != B || d_tilde[u].width != tw) d_tilde[u] = EmbeddingMatrix(B, tw);
  }
}

namespace {

void check_batch(const BatchState& batch) {
  const std::size_t n = batch.modalities();
  const std::size_t B = batch.batch_size();
  if (n == 0 || B == 0) throw std::invalid_argument("empty batch");
  if (batch.key.size() != n) throw std::invalid_argument("batch key/query modality count mismatch");
  for (std::size_t u = 0; u < n; ++u)
    if (batch.query[u].rows != B || batch.key[u].rows != B)
      throw std::invalid_argument("batch rows disagree with sample count");
}

void init_per_modality(std::vector<double>* per, std::size_t n) {
  if (per) per->assign(n, 0.0);
}

}  // namespace

double info_nce_batch(const BatchState& batch, std::span<const MemoryBank> banks, double tau, BatchGrad* grad,
                      std::vector<double>* per_modality) {
  check_batch(batch);
  const std::size_t n = batch.modalities();
  const std::size_t B = batch.batch_size();
  if (banks.size() != n) throw std::invalid_argument("need one memory bank per modality");
  if (grad) grad->resize_like(batch);
  init_per_modality(per_modality, n);
  const double inv_b = 1.0 / static_cast<double>(B);
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    double lu = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> d(grad ? batch.query[u].width : 0, 0.0);
      lu += info_nce(batch.query[u].row(b), batch.key[u].row(b), banks[u], tau, d);
      if (grad)
        for (std::size_t k = 0; k < d.size(); ++k) grad->d_query[u].row(b)[k] += d[k] * inv_b;
    }
    lu *= inv_b;
    if (per_modality) (*per_modality)[u] = lu;
    total += lu;
  }
  return total;
}

double ikem_loss(const BatchState& batch, const MemoryBank& bank_c, double tau, BatchGrad* grad,
                 std::vector<double>* per_modality) {
  check_batch(batch);
  const std::size_t n = batch.modalities();
  const std::size_t B = batch.batch_size();
  if (batch.tilde.size() != n) throw std::invalid_argument("batch is missing IKEM anchors");
  if (batch.key_concat.rows != B || batch.key_concat.width != bank_c.width())
    throw std::invalid_argument("concatenated key width does not match the IKEM bank");
  if (grad) grad->resize_like(batch);
  init_per_modality(per_modality, n);
  const double inv_b = 1.0 / static_cast<double>(B);
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    if (batch.tilde[u].width != bank_c.width())
      throw std::invalid_argument("IKEM anchor width must equal n * c_z");
    double lu = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> d(grad ? bank_c.width() : 0, 0.0);
      lu += info_nce(batch.tilde[u].row(b), batch.key_concat.row(b), bank_c, tau, d);
      if (grad)
        for (std::size_t k = 0; k < d.size(); ++k) grad->d_tilde[u].row(b)[k] += d[k] * inv_b;
    }
    lu *= inv_b;
    if (per_modality) (*per_modality)[u] = lu;
    total += lu;
  }
  return total;
}

MinedSet mine_positives(const BatchState& batch, std::span<const MemoryBank> banks, double tau,
                        std::size_t topk) {
  check_batch(batch);
  const std::size_t n = batch.modalities();
  const std::size_t B = batch.batch_size();
  if (banks.size() != n) throw std::invalid_argument("need one memory bank per modality");
  for (std::size_t u = 1; u < n; ++u) {
    if (banks[u].size() != banks[0].size()) throw DataError("modality memory banks differ in length");
    for (std::size_t i = 0; i < banks[u].size(); ++i)
      if (banks[u].id(i) != banks[0].id(i)) throw DataError("modality memory banks are not aligned by sample id");
  }
  MinedSet mined(n, std::vector<std::vector<std::vector<MinedPositive>>>(n, std::vector<std::vector<MinedPositive>>(B)));
  const std::size_t N = banks.empty() ? 0 : banks[0].size();
  const std::size_t k = std::min(topk, N);
  if (k == 0) return mined;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> sims(N);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < N; ++i) {
        sims[i] = dot(batch.query[v].row(b), banks[v].entry(i)) / tau;
        mx = std::max(mx, sims[i]);
      }
      double z = 0.0;
      for (double s : sims) z += std::exp(s - mx);
      std::vector<std::size_t> order(N);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return sims[a] > sims[c]; });
      std::vector<MinedPositive> picks;
      for (std::size_t r = 0; r < k; ++r) picks.push_back({order[r], std::exp(sims[order[r]] - mx) / z});
      for (std::size_t u = 0; u < n; ++u)
        if (u != v) mined[u][v][b] = picks;
    }
  }
  return mined;
}

double ekem_loss(const BatchState& batch, std::span<const MemoryBank> banks, const MinedSet& mined, double tau,
                 BatchGrad* grad, std::vector<double>* per_modality) {
  check_batch(batch);
  const std::size_t n = batch.modalities();
  const std::size_t B = batch.batch_size();
  if (banks.size() != n) throw std::invalid_argument("need one memory bank per modality");
  if (mined.size() != n) throw std::invalid_argument("mined positives do not match the batch");
  if (grad) grad->resize_like(batch);
  init_per_modality(per_modality, n);
  const double inv_b = 1.0 / static_cast<double>(B);
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    double lu = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      // Union of the positives mined by every partner modality; a bank entry picked twice keeps
      // its larger weight.
      std::vector<MinedPositive> extra;
      for (std::size_t v = 0; v < n; ++v) {
        if (v == u) continue;
        for (const auto& p : mined[u][v][b]) {
          auto it = std::find_if(extra.begin(), extra.end(), [&](const MinedPositive& e) { return e.index == p.index; });
          if (it == extra.end())
            extra.push_back(p);
          else
            it->weight = std::max(it->weight, p.weight);
        }
      }
      std::sort(extra.begin(), extra.end(), [](const MinedPositive& a, const MinedPositive& c) { return a.index < c.index; });
      std::vector<double> d(grad ? batch.query[u].width : 0, 0.0);
      lu += multi_positive_nce(batch.query[u].row(b), batch.key[u].row(b), banks[u], extra, tau, d);
      if (grad)
        for (std::size_t k = 0; k < d.size(); ++k) grad->d_query[u].row(b)[k] += d[k] * inv_b;
    }
    lu *= inv_b;
    if (per_modality) (*per_modality)[u] = lu;
    total += lu;
  }
  return total;
}

double ekem_loss(const BatchState& batch, std::span<const MemoryBank> banks, double tau, std::size_t topk,
                 BatchGrad* grad, std::vector<double>* per_modality) {
  return ekem_loss(batch, banks, mine_positives(batch, banks, tau, topk), tau, grad, per_modality);
}

// ---- augmentation ----

SkeletonSequence apply_augmentation(const SkeletonSequence& seq, const AugmentParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t T = seq.frames();

  double shear[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  if (params.shear > 0.0) {
    std::uniform_real_distribution<double> s(-params.shear, params.shear);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (r != c) shear[r][c] = s(rng);
  }
  Tensor4 sheared = seq.data;
  if (params.shear > 0.0) {
    for (std::size_t m = 0; m < seq.bodies(); ++m)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t v = 0; v < seq.joints(); ++v) {
          double p[3];
          for (std::size_t c = 0; c < 3; ++c) p[c] = seq.data(m, c, t, v);
          for (std::size_t r = 0; r < 3; ++r)
            sheared(m, r, t, v) = shear[r][0] * p[0] + shear[r][1] * p[1] + shear[r][2] * p[2];
        }
  }

  double ratio = 1.0;
  if (params.crop_min < 1.0) ratio = std::uniform_real_distribution<double>(params.crop_min, 1.0)(rng);
  const std::size_t len = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ratio * static_cast<double>(T))), 2, T);
  if (len == T) return SkeletonSequence{std::move(sheared), seq.original_frames, seq.label};

  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, T - len)(rng);
  Tensor4 crop(seq.bodies(), kCoords, len, seq.joints());
  for (std::size_t m = 0; m < seq.bodies(); ++m)
    for (std::size_t c = 0; c < kCoords; ++c)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t v = 0; v < seq.joints(); ++v) crop(m, c, t, v) = sheared(m, c, start + t, v);
  const double covered = static_cast<double>(len - 1) / static_cast<double>(T - 1);
  const auto orig = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(covered * static_cast<double>(seq.original_frames))));
  return resize_sequence(SkeletonSequence{std::move(crop), orig, seq.label}, T);
}

// ---- pretraining ----

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (bank_capacity == 0) throw ConfigError("bank capacity must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (modalities.empty()) throw ConfigError("at least one modality is required");
  if (!(key_momentum >= 0.0 && key_momentum <= 1.0)) throw ConfigError("key momentum must lie in [0, 1]");
  if (hidden == 0 || feature == 0 || embed_dim == 0) throw ConfigError("encoder widths must be positive");
  if (augment.shear < 0.0 || augment.crop_min <= 0.0 || augment.crop_min > 1.0)
    throw ConfigError("augmentation parameters out of range");
  for (std::size_t i = 0; i < modalities.size(); ++i)
    for (std::size_t j = i + 1; j < modalities.size(); ++j)
      if (modalities[i] == modalities[j]) throw ConfigError("duplicate modality in configuration");
}

LrSchedule TrainConfig::effective_lr() const {
  LrSchedule s = lr;
  if (s.step_epoch == 0) s.step_epoch = std::max<std::size_t>(1, total_epochs() * 5 / 6);
  return s;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows) {
  out << "epoch,stage,modality,loss,lr,wall_ms\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.10g", r.loss);
    out << r.epoch << ',' << r.stage << ',' << r.modality << ',' << buf << ',';
    std::snprintf(buf, sizeof buf, "%.6g", r.lr);
    out << buf << ',' << r.wall_ms << '\n';
  }
}

std::vector<InputNorm> fit_modality_norms(std::span<const ModalitySet> sets, std::span<const ModalityKind> kinds,
                                          std::size_t input_dim) {
  std::vector<InputNorm> out;
  for (auto k : kinds) {
    std::vector<const Tensor4*> ptrs;
    for (const auto& s : sets) ptrs.push_back(&s[k].data);
    out.push_back(fit_input_norm(ptrs, input_dim));
  }
  return out;
}

namespace {

struct ForwardCache {
  FeatureCache feature;
  HeadCache g;
  HeadCache g_tilde;
};

bool contains(std::span<const ModalityKind> ks, ModalityKind k) {
  return std::find(ks.begin(), ks.end(), k) != ks.end();
}

}  // namespace

PretrainResult pretrain(std::span<const SkeletonSequence> data, const SkeletonTopology& topo,
                        const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw DataError("pretraining needs a non-empty dataset");
  const std::size_t bodies = data[0].bodies();
  const std::size_t frames = data[0].frames();
  for (const auto& s : data)
    if (s.bodies() != bodies || s.frames() != frames || s.joints() != topo.joint_count)
      throw DataError("pretraining data must share body, frame and joint counts with the topology");

  const auto& kinds = config.modalities;
  const std::size_t n = kinds.size();
  const EncoderArch arch = make_arch(topo.joint_count, bodies, config.hidden, config.feature, config.embed_dim, n);

  const auto plain = derive_batch(data, topo);
  const auto norms = fit_modality_norms(plain, kinds, arch.input_dim);

  PretrainResult result;
  result.models.seed = config.seed;
  for (std::size_t u = 0; u < n; ++u) {
    auto stack = EncoderStack::create(arch, mix_seed(config.seed, 0x51ac, u));
    stack.norm = norms[u];
    stack.key = stack.query;
    result.models.kinds.push_back(kinds[u]);
    result.models.stacks.push_back(std::move(stack));
  }
  auto& stacks = result.models.stacks;

  std::vector<Sgd> optimizers(n, Sgd(config.sgd_momentum, config.weight_decay));
  std::vector<MemoryBank> banks(n, MemoryBank(config.bank_capacity, arch.embed_dim));
  MemoryBank bank_c(config.bank_capacity, arch.tilde_dim);
  std::mt19937_64 order_rng(mix_seed(config.seed, 0x0de5));
  const LrSchedule schedule = config.effective_lr();
  const std::size_t N = data.size();

  for (std::size_t epoch = 0; epoch < config.total_epochs(); ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const int stage = epoch < config.stage1_epochs ? 1 : 2;
    const double lr = schedule.at(epoch);
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), order_rng);

    std::vector<double> epoch_loss(n, 0.0);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < N; start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, N - start);
      std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                   perm.begin() + static_cast<std::ptrdiff_t>(start + B));

      std::vector<ModalitySet> qv(B), kv(B);
      ParallelErrors errors;
#pragma omp parallel for schedule(dynamic)
      for (std::size_t b = 0; b < B; ++b) {
        errors.run([&] {
          qv[b] = derive_all(apply_augmentation(data[idx[b]], config.augment, mix_seed(config.seed, epoch, idx[b], 1)),
                             topo, Exec::Serial);
          kv[b] = derive_all(apply_augmentation(data[idx[b]], config.augment, mix_seed(config.seed, epoch, idx[b], 2)),
                             topo, Exec::Serial);
        });
      }
      errors.rethrow();

      std::vector<ForwardCache> fwd(n * B);
      BatchState batch;
      batch.ids.assign(idx.begin(), idx.end());
      batch.query.assign(n, EmbeddingMatrix(B, arch.embed_dim));
      batch.key.assign(n, EmbeddingMatrix(B, arch.embed_dim));
      if (stage == 2) batch.tilde.assign(n, EmbeddingMatrix(B, arch.tilde_dim));
#pragma omp parallel for collapse(2) schedule(dynamic)
      for (std::size_t u = 0; u < n; ++u)
        for (std::size_t b = 0; b < B; ++b) errors.run([&] {
          const auto& s = stacks[u];
          auto& c = fwd[u * B + b];
          c.feature = encode_cached(arch, s.norm, s.query.backbone, qv[b][kinds[u]].data);
          c.g = project_cached(arch, s.query.g, c.feature.feature);
          std::copy(c.g.z.begin(), c.g.z.end(), batch.query[u].row(b).begin());
          if (stage == 2) {
            c.g_tilde = project_cached(arch, s.query.g_tilde, c.feature.feature);
            std::copy(c.g_tilde.z.begin(), c.g_tilde.z.end(), batch.tilde[u].row(b).begin());
          }
          const auto kf = encode_cached(arch, s.norm, s.key.backbone, kv[b][kinds[u]].data);
          const auto kz = project_cached(arch, s.key.g, kf.feature).z;
          std::copy(kz.begin(), kz.end(), batch.key[u].row(b).begin());
        });
      errors.rethrow();
      concat_keys(batch);

      BatchGrad grad;
      std::vector<double> per(n, 0.0);
      double loss = 0.0;
      if (stage == 1) {
        loss = info_nce_batch(batch, banks, config.tau, &grad, &per);
      } else {
        grad.resize_like(batch);
        auto accumulate = [&](double weight, const BatchGrad& g, const std::vector<double>& parts) {
          for (std::size_t u = 0; u < n; ++u) {
            per[u] += weight * parts[u];
            for (std::size_t k = 0; k < g.d_query[u].data.size(); ++k) grad.d_query[u].data[k] += weight * g.d_query[u].data[k];
            for (std::size_t k = 0; k < g.d_tilde[u].data.size(); ++k) grad.d_tilde[u].data[k] += weight * g.d_tilde[u].data[k];
          }
        };
        if (config.use_ekem) {
          BatchGrad g;
          std::vector<double> parts;
          loss += config.ekem_weight * ekem_loss(batch, banks, config.tau, config.ekem_topk, &g, &parts);
          accumulate(config.ekem_weight, g, parts);
        }
        if (config.use_ikem) {
          BatchGrad g;
          std::vector<double> parts;
          loss += config.ikem_weight * ikem_loss(batch, bank_c, config.tau, &g, &parts);
          accumulate(config.ikem_weight, g, parts);
        }
      }
      if (!std::isfinite(loss)) {
        if (config.diagnostic_checkpoint) save_checkpoint(result.models, *config.diagnostic_checkpoint);
        throw NumericError("pretraining diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      }

      // Modalities are independent: each thread owns one encoder and reduces its batch in order.
#pragma omp parallel for schedule(dynamic)
      for (std::size_t u = 0; u < n; ++u) {
        auto& s = stacks[u];
        EncoderParams g = s.query.zeros_like();
        for (std::size_t b = 0; b < B; ++b) {
          const auto& c = fwd[u * B + b];
          std::vector<double> d_feature(arch.feature, 0.0);
          backward_head(arch, s.query.g, c.g, c.feature.feature, grad.d_query[u].row(b), g.g, d_feature);
          if (stage == 2)
            backward_head(arch, s.query.g_tilde, c.g_tilde, c.feature.feature, grad.d_tilde[u].row(b), g.g_tilde,
                          d_feature);
          backward_backbone(arch, s.query.backbone, c.feature, d_feature, g.backbone);
        }
        optimizers[u].step(s.query, g, lr);
        const bool frozen = stage == 2 && contains(config.freeze_high_perf, kinds[u]);
        if (!frozen) momentum_update(s, config.key_momentum);
      }

      for (std::size_t b = 0; b < B; ++b) {
        const auto id = static_cast<std::int64_t>(idx[b]);
        for (std::size_t u = 0; u < n; ++u) banks[u].enqueue(batch.key[u].row(b), id);
        bank_c.enqueue(batch.key_concat.row(b), id);
      }
      for (std::size_t u = 0; u < n; ++u) epoch_loss[u] += per[u];
      ++batches;
    }

    const long long wall =
        config.record_wall_time
            ? std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count()
            : 0;
    double total = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
      const double l = epoch_loss[u] / static_cast<double>(batches);
      total += l;
      result.metrics.push_back({epoch + 1, stage, std::string(modality_name(kinds[u])), l, lr, wall});
    }
    result.metrics.push_back({epoch + 1, stage, "total", total, lr, wall});
    spdlog::debug("pretrain epoch {} stage {} loss {:.5f}", epoch + 1, stage, total);
  }
  return result;
}

}  // namespace kinemod
