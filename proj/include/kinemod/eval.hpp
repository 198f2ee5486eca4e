#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kinemod/contrastive.hpp"
#include "kinemod/encoder.hpp"
#include "kinemod/modality.hpp"
#include "kinemod/optim.hpp"

namespace kinemod {

// Softmax linear classifier over standardized frozen features.
struct LinearProbe {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // classes x dim
  std::vector<double> bias;     // classes
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;

  std::vector<double> logits(std::span<const double> feature) const;
  std::vector<double> probabilities(std::span<const double> feature) const;
};

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  LrSchedule lr{0.1, 0.1, 80};
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 7;
};

// Query-backbone features of one modality for every sample.
EmbeddingMatrix extract_features(const EncoderStack& stack, std::span<const ModalitySet> samples,
                                 ModalityKind kind);

LinearProbe train_probe(const EmbeddingMatrix& features, std::span<const int> labels, std::size_t classes,
                        const ProbeConfig& config);
LinearProbe train_probe(const EncoderStack& frozen, std::span<const ModalitySet> samples, ModalityKind kind,
                        std::span<const int> labels, std::size_t classes, const ProbeConfig& config);

struct EvalReport {
  std::vector<std::string> streams;
  std::vector<double> top1;        // per stream
  double fused_top1 = 0.0;         // equals top1[0] for a single stream
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted], fused scores
  std::size_t total = 0;
  std::vector<double> knn_precision;  // per stream, filled by knn_report when requested
  std::size_t knn_k = 0;
  std::string config_hash;  // written to the JSON report when set
};

// Per-stream top-1 from each probe; fused prediction averages the softmax probabilities
// (weighted when weights are given) across streams before the argmax.
EvalReport evaluate(std::span<const LinearProbe> probes, const ModelSet& encoders,
                    std::span<const ModalitySet> samples, std::span<const int> labels, bool fusion = true,
                    std::span<const double> fusion_weights = {});

// Same, on precomputed per-stream features.
EvalReport evaluate_features(std::span<const LinearProbe> probes, std::span<const EmbeddingMatrix> features,
                             std::span<const std::string> names, std::span<const int> labels, bool fusion = true,
                             std::span<const double> fusion_weights = {});

// Mean fraction of the k nearest neighbours (cosine, self excluded) sharing the query's label.
double knn_precision(const EmbeddingMatrix& features, std::span<const int> labels, std::size_t k);
std::vector<double> knn_report(const ModelSet& encoders, std::span<const ModalitySet> samples,
                               std::span<const int> labels, std::size_t k);

void write_report_json(std::ostream& out, const EvalReport& report);
void write_confusion_csv(std::ostream& out, const EvalReport& report);

}  // namespace kinemod
