#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "kinemod/contrastive.hpp"
#include "kinemod/encoder.hpp"
#include "kinemod/modality.hpp"

namespace kinemod {

// Frozen multi-modality teacher embedding: per-modality key-encoder embeddings (head g),
// concatenated in the teacher's modality order and L2-normalized.
std::vector<double> teacher_embed(const ModelSet& teacher, const ModalitySet& sample);

struct DistillLossOptions {
  double tau = 0.07;
  bool exclude_j_from_denominator = false;
  bool exclude_own_id = true;  // bank entries sharing the anchor's sample id are not negatives
};

// One batch: teacher anchors z_t and, per student modality u, the student projections z^u
// (both width teacher_modalities * c_z).
struct DistillBatch {
  std::vector<std::int64_t> ids;
  EmbeddingMatrix teacher;                // z_t
  std::vector<EmbeddingMatrix> student;   // z^u per student modality
  std::size_t teacher_modalities = 0;     // number of c_z slices in z_t
};

// Similarity sets for one (sample, teacher modality v, student modality u).
struct SimilaritySets {
  std::vector<double> s_v;
  std::vector<double> s_u;
  std::vector<std::size_t> bank_index;  // bank entries that took part
  std::size_t j = 0;                    // position of argmax s_v within the sets
};

SimilaritySets similarity_sets(std::span<const double> z_t, std::span<const double> z_u, const MemoryBank& bank,
                               std::size_t slice, std::size_t slices, std::int64_t own_id,
                               const DistillLossOptions& opts);

// L_ts = sum_u sum_v L_{v->u}, averaged over the batch. Slices of z^u, z_t and bank entries are
// re-normalized before forming s_i^u and s_i^v. d_student (resized on demand) receives dL/dz^u.
double distill_loss(const DistillBatch& batch, const MemoryBank& bank, const DistillLossOptions& opts,
                    std::vector<EmbeddingMatrix>* d_student = nullptr);

struct DistillConfig {
  DistillLossOptions loss;
  std::size_t epochs = 150;
  std::size_t batch_size = 128;
  LrSchedule lr{0.1, 0.1, 0};  // step_epoch 0: drop at 5/6 of epochs
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<ModalityKind> student_modalities{kFundamentalModalities.begin(), kFundamentalModalities.end()};
  AugmentParams augment;
  std::size_t hidden = 64;
  std::size_t feature = 64;
  std::uint64_t seed = 7;
  std::optional<std::filesystem::path> diagnostic_checkpoint;

  void validate() const;
};

struct DistillMetricRow {
  std::size_t epoch;
  double loss;
  double mean_cos_t_s;
};

void write_distill_metrics_csv(std::ostream& out, std::span<const DistillMetricRow> rows);

struct DistillResult {
  ModelSet student;
  std::vector<DistillMetricRow> metrics;
};

// Fills a consistent bank with the frozen teacher's embeddings of every sample, then trains
// fresh student encoders on L_ts. The teacher is never modified.
DistillResult distill_train(const ModelSet& teacher, std::span<const SkeletonSequence> data,
                            const SkeletonTopology& topo, const DistillConfig& config);

}  // namespace kinemod
