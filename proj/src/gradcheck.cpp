#include "kinemod/gradcheck.hpp"

#include <algorithm>
#include <random>

#include "kinemod/common.hpp"
#include "kinemod/contrastive.hpp"
#include "kinemod/distill.hpp"

namespace kinemod {

namespace {

constexpr double kTau = 0.07;

enum class Which { InfoNce, Ikem, Ekem };

std::vector<double> random_unit(std::size_t width, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(width);
  for (auto& x : v) x = n(rng);
  return l2_normalize(v);
}

std::vector<SkeletonSequence> random_sequences(std::size_t count, std::size_t frames, const SkeletonTopology& topo,
                                               std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  const std::size_t originals[] = {frames, frames * 2, frames * 3 / 2, frames * 4 / 5};
  std::vector<SkeletonSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    Tensor4 x(1, kCoords, frames, topo.joint_count);
    for (auto& v : x.values()) v = n(rng);
    out.push_back(make_sequence(std::move(x), std::max<std::size_t>(2, originals[i % 4])));
  }
  return out;
}

struct Forward {
  std::vector<FeatureCache> feature;
  std::vector<HeadCache> g;
  std::vector<HeadCache> g_tilde;
};

// Views over the blocks a loss depends on, paired with the analytic gradient blocks.
std::vector<ParamView> views(std::vector<EncoderStack>& stacks, const std::vector<EncoderParams>& grads,
                             bool use_g, bool use_tilde) {
  std::vector<ParamView> out;
  for (std::size_t u = 0; u < stacks.size(); ++u) {
    std::vector<std::pair<std::string, std::vector<double>*>> values;
    std::vector<const std::vector<double>*> gs;
    EncoderParams::visit(stacks[u].query, [&](const std::string& name, std::vector<double>& v) {
      values.emplace_back(name, &v);
    });
    EncoderParams::visit(grads[u], [&](const std::string&, const std::vector<double>& v) { gs.push_back(&v); });
    for (std::size_t k = 0; k < values.size(); ++k) {
      const auto& name = values[k].first;
      const bool is_g = name.rfind("g/", 0) == 0;
      const bool is_tilde = name.rfind("g_tilde/", 0) == 0;
      if ((is_g && !use_g) || (is_tilde && !use_tilde)) continue;
      out.push_back({std::to_string(u) + "/" + name, *values[k].second, *gs[k]});
    }
  }
  return out;
}

}  // namespace

std::vector<LossGradCheck> run_gradient_suite(const GradSuiteOptions& o) {
  if (o.modalities < 1 || o.modalities > kAllModalities.size())
    throw std::invalid_argument("gradient suite: modalities must lie in [1, 6]");
  const SkeletonTopology topo = toy_topology();
  std::mt19937_64 rng(mix_seed(o.seed, 0x9c));
  const auto seqs = random_sequences(o.batch, o.frames, topo, rng);
  const auto sets = derive_batch(seqs, topo);
  const std::size_t B = o.batch;

  std::vector<ModalityKind> kinds(kAllModalities.begin(), kAllModalities.begin() + static_cast<std::ptrdiff_t>(o.modalities));
  const std::size_t n = kinds.size();
  const EncoderArch arch = make_arch(topo.joint_count, 1, o.hidden, o.feature, o.embed_dim, n);
  const auto norms = fit_modality_norms(sets, kinds, arch.input_dim);
  std::vector<EncoderStack> stacks;
  for (std::size_t u = 0; u < n; ++u) {
    auto s = EncoderStack::create(arch, mix_seed(o.seed, 0x51, u));
    s.norm = norms[u];
    s.key = EncoderStack::create(arch, mix_seed(o.seed, 0x52, u)).query;
    stacks.push_back(std::move(s));
  }

  std::vector<MemoryBank> banks(n, MemoryBank(o.bank, arch.embed_dim));
  MemoryBank bank_c(o.bank, arch.tilde_dim);
  for (std::size_t k = 0; k < o.bank; ++k) {
    for (auto& bank : banks) bank.enqueue(random_unit(arch.embed_dim, rng), static_cast<std::int64_t>(100 + k));
    bank_c.enqueue(random_unit(arch.tilde_dim, rng), static_cast<std::int64_t>(100 + k));
  }

  // Keys do not depend on query parameters.
  BatchState base;
  for (std::size_t b = 0; b < B; ++b) base.ids.push_back(static_cast<std::int64_t>(b));
  base.key.assign(n, EmbeddingMatrix(B, arch.embed_dim));
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t b = 0; b < B; ++b) {
      const auto f = encode(stacks[u], sets[b][kinds[u]], true);
      const auto z = project(stacks[u], f, HeadKind::G, true);
      std::copy(z.begin(), z.end(), base.key[u].row(b).begin());
    }
  concat_keys(base);

  auto forward = [&](BatchState& batch, Forward* cache) {
    batch.query.assign(n, EmbeddingMatrix(B, arch.embed_dim));
    batch.tilde.assign(n, EmbeddingMatrix(B, arch.tilde_dim));
    if (cache) {
      cache->feature.resize(n * B);
      cache->g.resize(n * B);
      cache->g_tilde.resize(n * B);
    }
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t b = 0; b < B; ++b) {
        const auto& s = stacks[u];
        auto fc = encode_cached(arch, s.norm, s.query.backbone, sets[b][kinds[u]].data);
        auto g = project_cached(arch, s.query.g, fc.feature);
        auto gt = project_cached(arch, s.query.g_tilde, fc.feature);
        std::copy(g.z.begin(), g.z.end(), batch.query[u].row(b).begin());
        std::copy(gt.z.begin(), gt.z.end(), batch.tilde[u].row(b).begin());
        if (cache) {
          cache->feature[u * B + b] = std::move(fc);
          cache->g[u * B + b] = std::move(g);
          cache->g_tilde[u * B + b] = std::move(gt);
        }
      }
  };

  MinedSet mined;
  {
    BatchState batch = base;
    forward(batch, nullptr);
    mined = mine_positives(batch, banks, kTau, 2);
  }

  auto loss_of = [&](Which which, BatchState& batch, BatchGrad* grad) {
    switch (which) {
      case Which::InfoNce: return info_nce_batch(batch, banks, kTau, grad);
      case Which::Ikem: return ikem_loss(batch, bank_c, kTau, grad);
      case Which::Ekem: break;
    }
    return ekem_loss(batch, banks, mined, kTau, grad);
  };

  std::vector<LossGradCheck> results;
  const std::pair<Which, const char*> engine_losses[] = {
      {Which::InfoNce, "info_nce"}, {Which::Ikem, "ikem"}, {Which::Ekem, "ekem"}};
  for (auto [which, name] : engine_losses) {
    BatchState batch = base;
    Forward cache;
    forward(batch, &cache);
    BatchGrad grad;
    loss_of(which, batch, &grad);
    grad.resize_like(batch);
    std::vector<EncoderParams> grads;
    for (std::size_t u = 0; u < n; ++u) {
      const auto& s = stacks[u];
      EncoderParams g = s.query.zeros_like();
      for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> d_feature(arch.feature, 0.0);
        const auto& c = cache;
        if (which != Which::Ikem)
          backward_head(arch, s.query.g, c.g[u * B + b], c.feature[u * B + b].feature, grad.d_query[u].row(b), g.g,
                        d_feature);
        else
          backward_head(arch, s.query.g_tilde, c.g_tilde[u * B + b], c.feature[u * B + b].feature,
                        grad.d_tilde[u].row(b), g.g_tilde, d_feature);
        backward_backbone(arch, s.query.backbone, c.feature[u * B + b], d_feature, g.backbone);
      }
      grads.push_back(std::move(g));
    }
    const auto v = views(stacks, grads, which != Which::Ikem, which == Which::Ikem);
    auto f = [&]() {
      BatchState probe = base;
      forward(probe, nullptr);
      return loss_of(which, probe, nullptr);
    };
    results.push_back({name, grad_check(v, f, o.tolerance, o.coords, mix_seed(o.seed, 0x6c, results.size()), o.step)});
  }

  // Distillation: six frozen teacher encoders, fundamental-modality students.
  {
    const std::vector<ModalityKind> teacher_kinds(kAllModalities.begin(), kAllModalities.end());
    const EncoderArch t_arch = make_arch(topo.joint_count, 1, o.hidden, o.feature, o.embed_dim, teacher_kinds.size());
    const auto t_norms = fit_modality_norms(sets, teacher_kinds, t_arch.input_dim);
    ModelSet teacher;
    for (std::size_t v = 0; v < teacher_kinds.size(); ++v) {
      auto s = EncoderStack::create(t_arch, mix_seed(o.seed, 0x7e, v));
      s.norm = t_norms[v];
      teacher.kinds.push_back(teacher_kinds[v]);
      teacher.stacks.push_back(std::move(s));
    }
    const std::size_t slices = teacher_kinds.size();
    const std::size_t width = slices * o.embed_dim;
    const auto extra = random_sequences(o.bank, o.frames, topo, rng);
    const auto extra_sets = derive_batch(extra, topo);
    MemoryBank bank(o.bank + B, width);
    for (std::size_t k = 0; k < o.bank; ++k)
      bank.enqueue(teacher_embed(teacher, extra_sets[k]), static_cast<std::int64_t>(100 + k));
    for (std::size_t b = 0; b < B; ++b) bank.enqueue(teacher_embed(teacher, sets[b]), static_cast<std::int64_t>(b));

    const std::vector<ModalityKind> student_kinds(kFundamentalModalities.begin(), kFundamentalModalities.end());
    const std::size_t U = student_kinds.size();
    const EncoderArch s_arch = make_arch(topo.joint_count, 1, o.hidden, o.feature, o.embed_dim, slices);
    const auto s_norms = fit_modality_norms(sets, student_kinds, s_arch.input_dim);
    std::vector<EncoderStack> students;
    for (std::size_t u = 0; u < U; ++u) {
      auto s = EncoderStack::create(s_arch, mix_seed(o.seed, 0xd1, u));
      s.norm = s_norms[u];
      students.push_back(std::move(s));
    }

    DistillBatch dbase;
    dbase.teacher_modalities = slices;
    dbase.teacher = EmbeddingMatrix(B, width);
    for (std::size_t b = 0; b < B; ++b) {
      dbase.ids.push_back(static_cast<std::int64_t>(b));
      const auto zt = teacher_embed(teacher, sets[b]);
      std::copy(zt.begin(), zt.end(), dbase.teacher.row(b).begin());
    }
    const DistillLossOptions opts{kTau, false, true};
    auto dforward = [&](DistillBatch& batch, std::vector<FeatureCache>* feats, std::vector<HeadCache>* heads) {
      batch.student.assign(U, EmbeddingMatrix(B, width));
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t b = 0; b < B; ++b) {
          const auto& s = students[u];
          auto fc = encode_cached(s_arch, s.norm, s.query.backbone, sets[b][student_kinds[u]].data);
          auto hc = project_cached(s_arch, s.query.g_tilde, fc.feature);
          std::copy(hc.z.begin(), hc.z.end(), batch.student[u].row(b).begin());
          if (feats) {
            (*feats)[u * B + b] = std::move(fc);
            (*heads)[u * B + b] = std::move(hc);
          }
        }
    };
    DistillBatch batch = dbase;
    std::vector<FeatureCache> feats(U * B);
    std::vector<HeadCache> heads(U * B);
    dforward(batch, &feats, &heads);
    std::vector<EmbeddingMatrix> d_student;
    distill_loss(batch, bank, opts, &d_student);
    std::vector<EncoderParams> grads;
    for (std::size_t u = 0; u < U; ++u) {
      const auto& s = students[u];
      EncoderParams g = s.query.zeros_like();
      for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> d_feature(s_arch.feature, 0.0);
        backward_head(s_arch, s.query.g_tilde, heads[u * B + b], feats[u * B + b].feature, d_student[u].row(b),
                      g.g_tilde, d_feature);
        backward_backbone(s_arch, s.query.backbone, feats[u * B + b], d_feature, g.backbone);
      }
      grads.push_back(std::move(g));
    }
    const auto v = views(students, grads, false, true);
    auto f = [&]() {
      DistillBatch probe = dbase;
      dforward(probe, nullptr, nullptr);
      return distill_loss(probe, bank, opts);
    };
    results.push_back({"distill", grad_check(v, f, o.tolerance, o.coords, mix_seed(o.seed, 0x6c, 3), o.step)});
  }
  return results;
}

}  // namespace kinemod
