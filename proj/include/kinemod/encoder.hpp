#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kinemod/modality.hpp"
#include "kinemod/tensor.hpp"

namespace kinemod {

enum class Activation { Tanh, Identity };
enum class HeadKind { G, GTilde };

// Reference backbone: per-frame affine (input_dim -> hidden), tanh, temporal mean-pool,
// affine (hidden -> feature). Heads: affine, activation, affine, L2-normalize.
struct EncoderArch {
  std::size_t input_dim = 75;
  std::size_t hidden = 64;
  std::size_t feature = 64;
  std::size_t head_hidden = 64;
  std::size_t embed_dim = 128;  // c_z, output of g
  std::size_t tilde_dim = 384;  // n * c_z, output of g~
  Activation head_activation = Activation::Tanh;

  friend bool operator==(const EncoderArch&, const EncoderArch&) = default;
};

EncoderArch make_arch(std::size_t joints, std::size_t bodies, std::size_t hidden, std::size_t feature,
                      std::size_t embed_dim, std::size_t tilde_groups);

struct Backbone {
  std::vector<double> w1, b1;  // hidden x input_dim, hidden
  std::vector<double> w2, b2;  // feature x hidden, feature

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("w1", self.w1);
    f("b1", self.b1);
    f("w2", self.w2);
    f("b2", self.b2);
  }
};

struct Head {
  std::vector<double> w_a, b_a;  // head_hidden x in, head_hidden
  std::vector<double> w_b, b_b;  // out x head_hidden, out

  std::size_t out_dim() const noexcept { return b_b.size(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("w_a", self.w_a);
    f("b_a", self.b_a);
    f("w_b", self.w_b);
    f("b_b", self.b_b);
  }
};

// Trainable parameters of one encoder path (query or key). Also used as the gradient container.
struct EncoderParams {
  Backbone backbone;
  Head g;
  Head g_tilde;

  // f(name, std::vector<double>&) over every block, names like "backbone/w1".
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    Backbone::visit(self.backbone, [&](std::string_view n, auto& v) { f("backbone/" + std::string(n), v); });
    Head::visit(self.g, [&](std::string_view n, auto& v) { f("g/" + std::string(n), v); });
    Head::visit(self.g_tilde, [&](std::string_view n, auto& v) { f("g_tilde/" + std::string(n), v); });
  }

  EncoderParams zeros_like() const;
  void set_zero();
  std::size_t parameter_count() const;
};

// Fixed per-input-dimension standardization in front of the backbone.
struct InputNorm {
  std::vector<double> mean;
  std::vector<double> scale;
};

// Per-modality query encoder with heads g and g~, plus its momentum key copy.
struct EncoderStack {
  EncoderArch arch;
  InputNorm norm;
  EncoderParams query;
  EncoderParams key;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; key starts as a copy of query.
  static EncoderStack create(const EncoderArch& arch, std::uint64_t seed);
};

// Estimates InputNorm from a set of modality tensors of one kind.
InputNorm fit_input_norm(std::span<const Tensor4* const> samples, std::size_t input_dim);

struct FeatureCache {
  std::size_t frames = 0;
  std::vector<double> x;       // frames x input_dim, normalized
  std::vector<double> h;       // frames x hidden, post-tanh
  std::vector<double> pooled;  // hidden
  std::vector<double> feature; // feature
};

struct HeadCache {
  std::vector<double> a;  // head_hidden, post-activation
  std::vector<double> v;  // pre-normalization output
  double norm = 0.0;
  std::vector<double> z;  // normalized embedding
};

inline constexpr double kNormalizeEpsilon = 1e-12;

FeatureCache encode_cached(const EncoderArch& arch, const InputNorm& norm, const Backbone& bb,
                           const Tensor4& input);
HeadCache project_cached(const EncoderArch& arch, const Head& head, std::span<const double> feature);

// Feature vector (width arch.feature) from the query or key path.
std::vector<double> encode(const EncoderStack& stack, const ModalityTensor& modality, bool use_key = false);
// Unit-norm embedding from head g (embed_dim) or g~ (tilde_dim).
std::vector<double> project(const EncoderStack& stack, std::span<const double> feature, HeadKind head,
                            bool use_key = false);

// Backprop of dL/dz through a head; accumulates into grad and adds dL/dfeature into d_feature.
void backward_head(const EncoderArch& arch, const Head& head, const HeadCache& cache,
                   std::span<const double> feature, std::span<const double> d_z, Head& grad,
                   std::span<double> d_feature);
void backward_backbone(const EncoderArch& arch, const Backbone& bb, const FeatureCache& cache,
                       std::span<const double> d_feature, Backbone& grad);

// key <- m * key + (1 - m) * query, elementwise over every block.
void momentum_update(EncoderStack& stack, double m);

// L2 normalization with the kNormalizeEpsilon guard.
std::vector<double> l2_normalize(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

// ---- gradient checking ----

struct ParamView {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
};

struct GradCheckReport {
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "block[index]"
  bool passed = false;
};

// Compares precomputed analytic gradients against central differences on a random subset of
// coordinates. rel = |a - n| / max(|a|, |n|, floor). Throws NumericError on a non-finite loss.
GradCheckReport grad_check(std::span<const ParamView> params, const std::function<double()>& loss,
                           double tolerance, std::size_t coords = 200, std::uint64_t seed = 0,
                           double step = 1e-5, double floor = 1e-6);

// ---- checkpoints ----

// A set of per-modality stacks as written to and read from checkpoint files.
struct ModelSet {
  std::vector<ModalityKind> kinds;
  std::vector<EncoderStack> stacks;
  std::uint64_t seed = 0;
  std::string config_hash;

  const EncoderStack& at(ModalityKind kind) const;
  EncoderStack& at(ModalityKind kind);
};

// Text header (arch per modality, block names and shapes, seed, config hash) terminated by
// "end\n", then little-endian float64 blocks in header order.
void save_checkpoint(const ModelSet& models, const std::filesystem::path& path);
ModelSet load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(std::ostream& out, const ModelSet& models);
ModelSet read_checkpoint(std::istream& in, const std::string& source = "<stream>");

// FNV-1a over every parameter bit pattern; used to assert frozen parameters.
std::uint64_t parameter_hash(const EncoderStack& stack);
std::uint64_t parameter_hash(const ModelSet& models);

}  // namespace kinemod
