#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kinemod/encoder.hpp"
#include "kinemod/modality.hpp"
#include "kinemod/optim.hpp"
#include "kinemod/skeleton.hpp"

namespace kinemod {

// Row-major [rows][width] block of embeddings.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<double> data;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t r, std::size_t w) : rows(r), width(w), data(r * w, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * width, width}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * width, width}; }
};

// Fixed-capacity FIFO queue of unit-norm embeddings; index 0 is the oldest entry.
class MemoryBank {
 public:
  static constexpr double kNormTolerance = 1e-6;

  MemoryBank(std::size_t capacity, std::size_t width);

  // Throws std::invalid_argument on width mismatch or an embedding that is not unit norm.
  void enqueue(std::span<const double> embedding, std::int64_t id = -1);
  void clear();

  std::size_t size() const noexcept { return count_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t width() const noexcept { return width_; }
  bool empty() const noexcept { return count_ == 0; }

  std::span<const double> entry(std::size_t i) const;
  std::int64_t id(std::size_t i) const;

 private:
  std::size_t slot(std::size_t i) const noexcept { return (head_ + i) % capacity_; }

  std::size_t capacity_;
  std::size_t width_;
  std::vector<double> storage_;
  std::vector<std::int64_t> ids_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
};

// Bank entry promoted to an additional positive with a weight in (0, 1].
struct MinedPositive {
  std::size_t index;
  double weight;
};

// -log[(e^{a.p/t} + sum_k w_k e^{a.m_k/t}) / (e^{a.p/t} + sum_i e^{a.m_i/t})] with max-subtraction.
// Adds dL/d(anchor) into d_anchor when it is non-empty.
double multi_positive_nce(std::span<const double> anchor, std::span<const double> positive,
                          const MemoryBank& bank, std::span<const MinedPositive> extra, double tau,
                          std::span<double> d_anchor = {});

// Single-positive InfoNCE; an empty bank yields 0.
double info_nce(std::span<const double> anchor, std::span<const double> positive, const MemoryBank& bank,
                double tau, std::span<double> d_anchor = {});

// Embeddings of one training batch, one matrix per modality (rows = samples).
struct BatchState {
  std::vector<std::int64_t> ids;
  std::vector<EmbeddingMatrix> query;   // z_u, width c_z
  std::vector<EmbeddingMatrix> tilde;   // z~_u, width n * c_z
  std::vector<EmbeddingMatrix> key;     // z^_u, width c_z
  EmbeddingMatrix key_concat;           // normalize([z^_1, ..., z^_n])

  std::size_t modalities() const noexcept { return query.size(); }
  std::size_t batch_size() const noexcept { return ids.size(); }
};

// Fills key_concat from key.
void concat_keys(BatchState& batch);

// dL/d(anchor) for the query and tilde embeddings; matrices are sized on demand.
struct BatchGrad {
  std::vector<EmbeddingMatrix> d_query;
  std::vector<EmbeddingMatrix> d_tilde;

  void resize_like(const BatchState& batch);
};

// Losses below are averaged over the batch and summed over modalities. When per_modality is
// given, it receives each modality's share (entries sum to the return value).

double info_nce_batch(const BatchState& batch, std::span<const MemoryBank> banks, double tau,
                      BatchGrad* grad = nullptr, std::vector<double>* per_modality = nullptr);

// sum_u L_u, where L_u contrasts the anchor z~_u against z^_c with negatives from bank_c.
double ikem_loss(const BatchState& batch, const MemoryBank& bank_c, double tau, BatchGrad* grad = nullptr,
                 std::vector<double>* per_modality = nullptr);

// mined[u][v][b]: positives for anchor modality u, ranked in modality v.
using MinedSet = std::vector<std::vector<std::vector<std::vector<MinedPositive>>>>;

// For every ordered pair (u, v), u != v: ranks bank_v by similarity to z_v and keeps the topk
// entries, weighted by their softmax(sim / tau) over bank_v. Mining is treated as constant
// (no gradient flows through it).
MinedSet mine_positives(const BatchState& batch, std::span<const MemoryBank> banks, double tau,
                        std::size_t topk);

// Sum over u of modality u's InfoNCE with the positives mined from every partner v != u merged
// into one set (an entry mined by several partners keeps its largest weight). topk 0 gives
// exactly the sum of per-modality InfoNCE.
double ekem_loss(const BatchState& batch, std::span<const MemoryBank> banks, const MinedSet& mined,
                 double tau, BatchGrad* grad = nullptr, std::vector<double>* per_modality = nullptr);
double ekem_loss(const BatchState& batch, std::span<const MemoryBank> banks, double tau, std::size_t topk,
                 BatchGrad* grad = nullptr, std::vector<double>* per_modality = nullptr);

// ---- augmentation ----

struct AugmentParams {
  double shear = 0.5;     // shear coefficients ~ U(-shear, shear)
  double crop_min = 0.5;  // temporal crop ratio ~ U(crop_min, 1)
};

// Spatial shear followed by a temporal crop resized back to the input length. The crop shortens
// original_frames proportionally so the time scale stays physical.
SkeletonSequence apply_augmentation(const SkeletonSequence& seq, const AugmentParams& params,
                                    std::uint64_t seed);

// ---- pretraining ----

struct TrainConfig {
  double tau = 0.07;
  std::size_t bank_capacity = 2048;
  std::size_t batch_size = 128;
  std::size_t stage1_epochs = 150;
  std::size_t stage2_epochs = 150;
  LrSchedule lr{0.1, 0.1, 0};  // step_epoch 0: drop at 5/6 of the total epochs
  double key_momentum = 0.999;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<ModalityKind> modalities{kAllModalities.begin(), kAllModalities.end()};
  std::vector<ModalityKind> freeze_high_perf{ModalityKind::Joint, ModalityKind::Bone,
                                             ModalityKind::RotationAxis};
  bool use_ekem = true;
  bool use_ikem = true;
  std::size_t ekem_topk = 1;
  double ekem_weight = 1.0;
  double ikem_weight = 1.0;
  AugmentParams augment;
  std::size_t hidden = 64;
  std::size_t feature = 64;
  std::size_t embed_dim = 128;
  std::uint64_t seed = 7;
  bool record_wall_time = false;  // wall_ms column is 0 unless enabled
  std::optional<std::filesystem::path> diagnostic_checkpoint;

  // Throws ConfigError.
  void validate() const;
  std::size_t total_epochs() const { return stage1_epochs + stage2_epochs; }
  LrSchedule effective_lr() const;
};

struct MetricRow {
  std::size_t epoch;
  int stage;
  std::string modality;  // modality name or "total"
  double loss;
  double lr;
  long long wall_ms;
};

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows);

struct PretrainResult {
  ModelSet models;
  std::vector<MetricRow> metrics;
};

// Two-stage pretraining over resized sequences: stage 1 trains every modality with its own
// InfoNCE; stage 2 optimizes ekem_weight * EKEM + ikem_weight * IKEM with the key encoders of
// freeze_high_perf modalities frozen.
PretrainResult pretrain(std::span<const SkeletonSequence> data, const SkeletonTopology& topo,
                        const TrainConfig& config);

// Per-modality input standardization fitted on the unaugmented data.
std::vector<InputNorm> fit_modality_norms(std::span<const ModalitySet> sets,
                                          std::span<const ModalityKind> kinds, std::size_t input_dim);

}  // namespace kinemod
