#include "kinemod/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "kinemod/common.hpp"

namespace kinemod {

std::vector<double> LinearProbe::logits(std::span<const double> feature) const {
  if (feature.size() != dim) throw std::invalid_argument("probe feature width mismatch");
  std::vector<double> x(dim);
  for (std::size_t d = 0; d < dim; ++d) x[d] = (feature[d] - feature_mean[d]) * feature_scale[d];
  std::vector<double> out(classes);
  for (std::size_t c = 0; c < classes; ++c) out[c] = bias[c] + dot({weights.data() + c * dim, dim}, x);
  return out;
}

std::vector<double> LinearProbe::probabilities(std::span<const double> feature) const {
  auto l = logits(feature);
  const double mx = *std::max_element(l.begin(), l.end());
  double z = 0.0;
  for (auto& x : l) z += (x = std::exp(x - mx));
  for (auto& x : l) x /= z;
  return l;
}

EmbeddingMatrix extract_features(const EncoderStack& stack, std::span<const ModalitySet> samples, ModalityKind kind) {
  EmbeddingMatrix out(samples.size(), stack.arch.feature);
  ParallelErrors errors;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    errors.run([&] {
      const auto f = encode(stack, samples[i][kind]);
      std::copy(f.begin(), f.end(), out.row(i).begin());
    });
  }
  errors.rethrow();
  return out;
}

LinearProbe train_probe(const EmbeddingMatrix& features, std::span<const int> labels, std::size_t classes,
                        const ProbeConfig& config) {
  const std::size_t N = features.rows;
  const std::size_t D = features.width;
  if (N == 0 || labels.size() != N) throw DataError("probe needs one label per feature row");
  std::vector<bool> seen(classes, false);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DataError("label out of range");
    seen[static_cast<std::size_t>(y)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) throw DataError("probe training needs at least two classes");

  LinearProbe p;
  p.classes = classes;
  p.dim = D;
  p.feature_mean.assign(D, 0.0);
  p.feature_scale.assign(D, 1.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) p.feature_mean[d] += features.row(i)[d] / static_cast<double>(N);
  for (std::size_t d = 0; d < D; ++d) {
    double var = 0.0;
    for (std::size_t i = 0; i < N; ++i) var += std::pow(features.row(i)[d] - p.feature_mean[d], 2);
    p.feature_scale[d] = 1.0 / std::sqrt(var / static_cast<double>(N) + 1e-12);
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> init(-1.0 / std::sqrt(static_cast<double>(D)), 1.0 / std::sqrt(static_cast<double>(D)));
  p.weights.resize(classes * D);
  for (auto& w : p.weights) w = init(rng);
  p.bias.assign(classes, 0.0);

  const Sgd sgd(config.sgd_momentum, config.weight_decay);
  std::vector<double> vel_w, vel_b;
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = config.lr.at(epoch);
    for (std::size_t start = 0; start < N; start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, N - start);
      std::vector<double> gw(classes * D, 0.0), gb(classes, 0.0);
      for (std::size_t k = 0; k < B; ++k) {
        const std::size_t i = order[start + k];
        const auto prob = p.probabilities(features.row(i));
        for (std::size_t c = 0; c < classes; ++c) {
          const double g = (prob[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) / static_cast<double>(B);
          gb[c] += g;
          for (std::size_t d = 0; d < D; ++d)
            gw[c * D + d] += g * (features.row(i)[d] - p.feature_mean[d]) * p.feature_scale[d];
        }
      }
      sgd.step(p.weights, gw, vel_w, lr);
      sgd.step(p.bias, gb, vel_b, lr);
    }
  }
  return p;
}

LinearProbe train_probe(const EncoderStack& frozen, std::span<const ModalitySet> samples, ModalityKind kind,
                        std::span<const int> labels, std::size_t classes, const ProbeConfig& config) {
  return train_probe(extract_features(frozen, samples, kind), labels, classes, config);
}

EvalReport evaluate_features(std::span<const LinearProbe> probes, std::span<const EmbeddingMatrix> features,
                             std::span<const std::string> names, std::span<const int> labels, bool fusion,
                             std::span<const double> fusion_weights) {
  const std::size_t S = probes.size();
  if (S == 0 || features.size() != S || names.size() != S) throw std::invalid_argument("probes and streams misaligned");
  const std::size_t N = labels.size();
  if (N == 0) throw DataError("evaluation dataset is empty");
  if (!fusion_weights.empty() && fusion_weights.size() != S) throw std::invalid_argument("one fusion weight per stream");
  const std::size_t C = probes[0].classes;

  EvalReport r;
  r.streams.assign(names.begin(), names.end());
  r.total = N;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  std::vector<std::size_t> correct(S, 0);
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> fused(C, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      if (features[s].rows != N) throw std::invalid_argument("feature rows do not match labels");
      const auto prob = probes[s].probabilities(features[s].row(i));
      const auto pred = static_cast<int>(std::max_element(prob.begin(), prob.end()) - prob.begin());
      if (pred == labels[i]) ++correct[s];
      const double w = fusion_weights.empty() ? 1.0 / static_cast<double>(S) : fusion_weights[s];
      const bool take = fusion || s == 0;
      if (take)
        for (std::size_t c = 0; c < C; ++c) fused[c] += (fusion ? w : 1.0) * prob[c];
    }
    const auto pred = static_cast<std::size_t>(std::max_element(fused.begin(), fused.end()) - fused.begin());
    r.confusion[static_cast<std::size_t>(labels[i])][pred] += 1;
  }
  for (std::size_t s = 0; s < S; ++s) r.top1.push_back(static_cast<double>(correct[s]) / static_cast<double>(N));
  std::size_t trace = 0;
  for (std::size_t c = 0; c < C; ++c) trace += r.confusion[c][c];
  r.fused_top1 = static_cast<double>(trace) / static_cast<double>(N);
  return r;
}

EvalReport evaluate(std::span<const LinearProbe> probes, const ModelSet& encoders, std::span<const ModalitySet> samples,
                    std::span<const int> labels, bool fusion, std::span<const double> fusion_weights) {
  if (probes.size() != encoders.kinds.size()) throw std::invalid_argument("one probe per encoder is required");
  if (samples.empty()) throw DataError("evaluation dataset is empty");
  std::vector<EmbeddingMatrix> feats;
  std::vector<std::string> names;
  for (std::size_t s = 0; s < encoders.kinds.size(); ++s) {
    feats.push_back(extract_features(encoders.stacks[s], samples, encoders.kinds[s]));
    names.emplace_back(modality_name(encoders.kinds[s]));
  }
  return evaluate_features(probes, feats, names, labels, fusion, fusion_weights);
}

double knn_precision(const EmbeddingMatrix& features, std::span<const int> labels, std::size_t k) {
  const std::size_t N = features.rows;
  if (labels.size() != N) throw std::invalid_argument("one label per feature row");
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (k >= N) throw DataError("k must be smaller than the dataset size");
  std::vector<std::vector<double>> unit(N);
  for (std::size_t i = 0; i < N; ++i) unit[i] = l2_normalize(features.row(i));
  double sum = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<std::pair<double, std::size_t>> sims;
    for (std::size_t j = 0; j < N; ++j)
      if (j != i) sims.emplace_back(dot(unit[i], unit[j]), j);
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    std::size_t hits = 0;
    for (std::size_t r = 0; r < k; ++r) hits += labels[sims[r].second] == labels[i];
    sum += static_cast<double>(hits) / static_cast<double>(k);
  }
  return sum / static_cast<double>(N);
}

std::vector<double> knn_report(const ModelSet& encoders, std::span<const ModalitySet> samples,
                               std::span<const int> labels, std::size_t k) {
  std::vector<double> out;
  for (std::size_t s = 0; s < encoders.kinds.size(); ++s)
    out.push_back(knn_precision(extract_features(encoders.stacks[s], samples, encoders.kinds[s]), labels, k));
  return out;
}

void write_report_json(std::ostream& out, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["format"] = "kinemod-eval-report";
  j["version"] = 1;
  if (!report.config_hash.empty()) j["config_hash"] = report.config_hash;
  j["samples"] = report.total;
  nlohmann::ordered_json streams = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < report.streams.size(); ++s) {
    nlohmann::ordered_json e;
    e["modality"] = report.streams[s];
    e["top1"] = report.top1[s];
    if (s < report.knn_precision.size()) e["knn_precision"] = report.knn_precision[s];
    streams.push_back(e);
  }
  j["streams"] = streams;
  j["fused_top1"] = report.fused_top1;
  if (report.knn_k) j["knn_k"] = report.knn_k;
  j["confusion"] = report.confusion;
  out << j.dump(2) << '\n';
}

void write_confusion_csv(std::ostream& out, const EvalReport& report) {
  out << "true\\pred";
  for (std::size_t c = 0; c < report.confusion.size(); ++c) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < report.confusion.size(); ++r) {
    out << r;
    for (auto v : report.confusion[r]) out << ',' << v;
    out << '\n';
  }
}

}  // namespace kinemod
