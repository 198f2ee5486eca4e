#include "kinemod/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "kinemod/common.hpp"

namespace kinemod {

namespace {

constexpr const char* kCheckpointMagic = "kinemod-checkpoint";
constexpr int kCheckpointVersion = 1;

void init_uniform(std::vector<double>& v, std::size_t n, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  v.resize(n);
  for (auto& x : v) x = dist(rng);
}

Head make_head(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  Head h;
  init_uniform(h.w_a, hidden * in, in, rng);
  init_uniform(h.b_a, hidden, in, rng);
  init_uniform(h.w_b, out * hidden, hidden, rng);
  init_uniform(h.b_b, out, hidden, rng);
  return h;
}

// y = W x + b with W stored rows x cols.
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::span<double> y) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < y.size(); ++r) {
    const double* row = w.data() + r * cols;
    double acc = b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// grad_w += dy x^T, grad_b += dy, dx += W^T dy (dx may be empty).
void affine_backward(std::span<const double> w, std::span<const double> x, std::span<const double> dy,
                     std::vector<double>& grad_w, std::vector<double>& grad_b, std::span<double> dx) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < dy.size(); ++r) {
    const double g = dy[r];
    grad_b[r] += g;
    if (g == 0.0) continue;
    double* gw = grad_w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gw[c] += g * x[c];
    if (!dx.empty()) {
      const double* row = w.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dx[c] += row[c] * g;
    }
  }
}

template <class F>
void visit_pair(EncoderParams& a, const EncoderParams& b, F&& f) {
  std::vector<const std::vector<double>*> bs;
  EncoderParams::visit(b, [&](const std::string&, const std::vector<double>& v) { bs.push_back(&v); });
  std::size_t i = 0;
  EncoderParams::visit(a, [&](const std::string&, std::vector<double>& v) { f(v, *bs[i++]); });
}

std::uint64_t fnv1a(std::uint64_t h, std::span<const double> xs) {
  for (double x : xs) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

}  // namespace

EncoderArch make_arch(std::size_t joints, std::size_t bodies, std::size_t hidden, std::size_t feature,
                      std::size_t embed_dim, std::size_t tilde_groups) {
  EncoderArch arch;
  arch.input_dim = bodies * kCoords * joints;
  arch.hidden = hidden;
  arch.feature = feature;
  arch.head_hidden = feature;
  arch.embed_dim = embed_dim;
  arch.tilde_dim = embed_dim * tilde_groups;
  return arch;
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  z.set_zero();
  return z;
}

void EncoderParams::set_zero() {
  visit(*this, [](const std::string&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  visit(*this, [&](const std::string&, const std::vector<double>& v) { n += v.size(); });
  return n;
}

EncoderStack EncoderStack::create(const EncoderArch& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EncoderStack s;
  s.arch = arch;
  s.norm.mean.assign(arch.input_dim, 0.0);
  s.norm.scale.assign(arch.input_dim, 1.0);
  auto& q = s.query;
  init_uniform(q.backbone.w1, arch.hidden * arch.input_dim, arch.input_dim, rng);
  init_uniform(q.backbone.b1, arch.hidden, arch.input_dim, rng);
  init_uniform(q.backbone.w2, arch.feature * arch.hidden, arch.hidden, rng);
  init_uniform(q.backbone.b2, arch.feature, arch.hidden, rng);
  q.g = make_head(arch.feature, arch.head_hidden, arch.embed_dim, rng);
  q.g_tilde = make_head(arch.feature, arch.head_hidden, arch.tilde_dim, rng);
  s.key = s.query;
  return s;
}

InputNorm fit_input_norm(std::span<const Tensor4* const> samples, std::size_t input_dim) {
  InputNorm norm{std::vector<double>(input_dim, 0.0), std::vector<double>(input_dim, 1.0)};
  if (samples.empty()) return norm;
  std::vector<double> sum(input_dim, 0.0), sq(input_dim, 0.0);
  std::size_t count = 0;
  for (const Tensor4* s : samples) {
    const std::size_t V = s->joints();
    if (s->bodies() * s->channels() * V != input_dim) throw DataError("input norm: shape mismatch");
    for (std::size_t t = 0; t < s->frames(); ++t) {
      for (std::size_t m = 0; m < s->bodies(); ++m)
        for (std::size_t c = 0; c < s->channels(); ++c)
          for (std::size_t v = 0; v < V; ++v) {
            const std::size_t d = (m * s->channels() + c) * V + v;
            const double x = (*s)(m, c, t, v);
            sum[d] += x;
            sq[d] += x * x;
          }
      ++count;
    }
  }
  std::vector<double> var(input_dim);
  for (std::size_t d = 0; d < input_dim; ++d) {
    norm.mean[d] = sum[d] / static_cast<double>(count);
    var[d] = std::max(0.0, sq[d] / static_cast<double>(count) - norm.mean[d] * norm.mean[d]);
  }
  // Floor relative to the typical variance so constant channels stay bounded.
  const double mean_var = std::accumulate(var.begin(), var.end(), 0.0) / static_cast<double>(input_dim);
  const double floor = 1e-6 * mean_var + 1e-24;
  for (std::size_t d = 0; d < input_dim; ++d) norm.scale[d] = 1.0 / std::sqrt(var[d] + floor);
  return norm;
}

FeatureCache encode_cached(const EncoderArch& arch, const InputNorm& norm, const Backbone& bb,
                           const Tensor4& input) {
  const std::size_t V = input.joints();
  const std::size_t D = input.bodies() * input.channels() * V;
  if (D != arch.input_dim)
    throw DataError("encoder expects input width " + std::to_string(arch.input_dim) + ", got " +
                    std::to_string(D));
  const std::size_t T = input.frames();
  if (T == 0) throw DataError("encoder input has no frames");
  FeatureCache cache;
  cache.frames = T;
  cache.x.resize(T * D);
  for (std::size_t m = 0; m < input.bodies(); ++m)
    for (std::size_t c = 0; c < input.channels(); ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t v = 0; v < V; ++v) {
          const std::size_t d = (m * input.channels() + c) * V + v;
          cache.x[t * D + d] = (input(m, c, t, v) - norm.mean[d]) * norm.scale[d];
        }
  const std::size_t H = arch.hidden;
  cache.h.resize(T * H);
  cache.pooled.assign(H, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    std::span<double> ht(cache.h.data() + t * H, H);
    affine(bb.w1, bb.b1, std::span<const double>(cache.x.data() + t * D, D), ht);
    for (std::size_t i = 0; i < H; ++i) {
      ht[i] = std::tanh(ht[i]);
      cache.pooled[i] += ht[i];
    }
  }
  for (auto& p : cache.pooled) p /= static_cast<double>(T);
  cache.feature.resize(arch.feature);
  affine(bb.w2, bb.b2, cache.pooled, cache.feature);
  return cache;
}

HeadCache project_cached(const EncoderArch& arch, const Head& head, std::span<const double> feature) {
  if (feature.size() != arch.feature)
    throw DataError("head expects feature width " + std::to_string(arch.feature));
  HeadCache c;
  c.a.resize(head.b_a.size());
  affine(head.w_a, head.b_a, feature, c.a);
  if (arch.head_activation == Activation::Tanh)
    for (auto& x : c.a) x = std::tanh(x);
  c.v.resize(head.out_dim());
  affine(head.w_b, head.b_b, c.a, c.v);
  c.norm = std::sqrt(dot(c.v, c.v));
  c.z.resize(c.v.size());
  for (std::size_t i = 0; i < c.v.size(); ++i) c.z[i] = c.v[i] / (c.norm + kNormalizeEpsilon);
  return c;
}

std::vector<double> encode(const EncoderStack& stack, const ModalityTensor& modality, bool use_key) {
  const auto& p = use_key ? stack.key : stack.query;
  return encode_cached(stack.arch, stack.norm, p.backbone, modality.data).feature;
}

std::vector<double> project(const EncoderStack& stack, std::span<const double> feature, HeadKind head,
                            bool use_key) {
  const auto& p = use_key ? stack.key : stack.query;
  return project_cached(stack.arch, head == HeadKind::G ? p.g : p.g_tilde, feature).z;
}

void backward_head(const EncoderArch& arch, const Head& head, const HeadCache& cache,
                   std::span<const double> feature, std::span<const double> d_z, Head& grad,
                   std::span<double> d_feature) {
  const std::size_t out = cache.v.size();
  const double n = cache.norm;
  const double ne = n + kNormalizeEpsilon;
  // z = v / (|v| + eps)
  std::vector<double> dv(out);
  const double vdz = dot(cache.v, d_z);
  const double k = n > 0.0 ? vdz / (n * ne * ne) : 0.0;
  for (std::size_t i = 0; i < out; ++i) dv[i] = d_z[i] / ne - cache.v[i] * k;

  std::vector<double> da(cache.a.size(), 0.0);
  affine_backward(head.w_b, cache.a, dv, grad.w_b, grad.b_b, da);
  if (arch.head_activation == Activation::Tanh)
    for (std::size_t i = 0; i < da.size(); ++i) da[i] *= 1.0 - cache.a[i] * cache.a[i];
  affine_backward(head.w_a, feature, da, grad.w_a, grad.b_a, d_feature);
}

void backward_backbone(const EncoderArch& arch, const Backbone& bb, const FeatureCache& cache,
                       std::span<const double> d_feature, Backbone& grad) {
  const std::size_t H = arch.hidden;
  const std::size_t D = arch.input_dim;
  const std::size_t T = cache.frames;
  std::vector<double> dp(H, 0.0);
  affine_backward(bb.w2, cache.pooled, d_feature, grad.w2, grad.b2, dp);
  std::vector<double> dpre(H);
  for (std::size_t t = 0; t < T; ++t) {
    const double* ht = cache.h.data() + t * H;
    for (std::size_t i = 0; i < H; ++i) dpre[i] = dp[i] / static_cast<double>(T) * (1.0 - ht[i] * ht[i]);
    affine_backward(bb.w1, std::span<const double>(cache.x.data() + t * D, D), dpre, grad.w1, grad.b1, {});
  }
}

void momentum_update(EncoderStack& stack, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("momentum must lie in [0, 1]");
  visit_pair(stack.key, stack.query, [m](std::vector<double>& k, const std::vector<double>& q) {
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = m * k[i] + (1.0 - m) * q[i];
  });
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = std::sqrt(dot(v, v)) + kNormalizeEpsilon;
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

GradCheckReport grad_check(std::span<const ParamView> params, const std::function<double()>& loss,
                           double tolerance, std::size_t coords, std::uint64_t seed, double step,
                           double floor) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t b = 0; b < params.size(); ++b)
    for (std::size_t i = 0; i < params[b].value.size(); ++i) all.emplace_back(b, i);
  std::mt19937_64 rng(seed);
  if (all.size() > coords) {
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(coords);
    std::sort(all.begin(), all.end());
  }

  GradCheckReport report;
  for (auto [b, i] : all) {
    double& x = params[b].value[i];
    const double saved = x;
    x = saved + step;
    const double up = loss();
    x = saved - step;
    const double down = loss();
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("non-finite loss while checking " + params[b].name);
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = params[b].grad[i];
    const double abs_err = std::abs(analytic - numeric);
    const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (report.coords_checked == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = params[b].name + "[" + std::to_string(i) + "]";
    }
    ++report.coords_checked;
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

// ---- checkpoints ----

const EncoderStack& ModelSet::at(ModalityKind kind) const {
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (kinds[i] == kind) return stacks[i];
  throw DataError("model set has no " + std::string(modality_name(kind)) + " encoder");
}

EncoderStack& ModelSet::at(ModalityKind kind) {
  return const_cast<EncoderStack&>(static_cast<const ModelSet&>(*this).at(kind));
}

namespace {

struct BlockRef {
  std::string name;
  std::vector<double>* data;
};

std::vector<BlockRef> stack_blocks(EncoderStack& s, const std::string& prefix) {
  std::vector<BlockRef> out;
  out.push_back({prefix + "/norm/mean", &s.norm.mean});
  out.push_back({prefix + "/norm/scale", &s.norm.scale});
  EncoderParams::visit(s.query, [&](const std::string& n, std::vector<double>& v) {
    out.push_back({prefix + "/query/" + n, &v});
  });
  EncoderParams::visit(s.key, [&](const std::string& n, std::vector<double>& v) {
    out.push_back({prefix + "/key/" + n, &v});
  });
  return out;
}

std::string_view activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

// Allocates every block to the shapes implied by the arch.
EncoderStack shaped_stack(const EncoderArch& arch) { return EncoderStack::create(arch, 0); }

}  // namespace

void write_checkpoint(std::ostream& out, const ModelSet& models) {
  if (models.kinds.size() != models.stacks.size()) throw DataError("model set kinds/stacks mismatch");
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "seed " << models.seed << '\n';
  out << "config_hash " << (models.config_hash.empty() ? "-" : models.config_hash) << '\n';
  out << "modalities " << models.kinds.size() << '\n';
  std::vector<BlockRef> blocks;
  for (std::size_t i = 0; i < models.kinds.size(); ++i) {
    const auto& a = models.stacks[i].arch;
    const auto name = std::string(modality_name(models.kinds[i]));
    out << "arch " << name << ' ' << a.input_dim << ' ' << a.hidden << ' ' << a.feature << ' '
        << a.head_hidden << ' ' << a.embed_dim << ' ' << a.tilde_dim << ' '
        << activation_name(a.head_activation) << '\n';
    auto b = stack_blocks(const_cast<EncoderStack&>(models.stacks[i]), name);
    blocks.insert(blocks.end(), b.begin(), b.end());
  }
  out << "blocks " << blocks.size() << '\n';
  for (const auto& b : blocks) out << "block " << b.name << ' ' << b.data->size() << '\n';
  out << "end\n";
  for (const auto& b : blocks)
    for (double x : *b.data) {
      const auto bits = std::bit_cast<std::uint64_t>(x);
      char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      out.write(bytes, 8);
    }
}

ModelSet read_checkpoint(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> std::istringstream {
    if (!std::getline(in, line)) throw ParseError(source, lineno + 1, "unexpected end of checkpoint header");
    ++lineno;
    return std::istringstream(line);
  };
  auto expect = [&](std::istringstream& ls, const std::string& word) {
    std::string w;
    if (!(ls >> w) || w != word) throw ParseError(source, lineno, "expected '" + word + "'");
  };

  ModelSet models;
  {
    auto ls = next();
    int version = 0;
    expect(ls, kCheckpointMagic);
    if (!(ls >> version) || version != kCheckpointVersion)
      throw ParseError(source, lineno, "unsupported checkpoint version");
  }
  {
    auto ls = next();
    expect(ls, "seed");
    if (!(ls >> models.seed)) throw ParseError(source, lineno, "bad seed");
  }
  {
    auto ls = next();
    expect(ls, "config_hash");
    if (!(ls >> models.config_hash)) throw ParseError(source, lineno, "bad config hash");
    if (models.config_hash == "-") models.config_hash.clear();
  }
  std::size_t n = 0;
  {
    auto ls = next();
    expect(ls, "modalities");
    if (!(ls >> n) || n == 0 || n > kModalityCount) throw ParseError(source, lineno, "bad modality count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto ls = next();
    expect(ls, "arch");
    std::string name, act;
    EncoderArch a;
    if (!(ls >> name >> a.input_dim >> a.hidden >> a.feature >> a.head_hidden >> a.embed_dim >>
          a.tilde_dim >> act))
      throw ParseError(source, lineno, "bad arch line");
    auto kind = parse_modality(name);
    if (!kind) throw ParseError(source, lineno, "unknown modality '" + name + "'");
    if (act != "tanh" && act != "identity") throw ParseError(source, lineno, "unknown activation");
    a.head_activation = act == "tanh" ? Activation::Tanh : Activation::Identity;
    models.kinds.push_back(*kind);
    models.stacks.push_back(shaped_stack(a));
  }
  std::vector<BlockRef> blocks;
  for (std::size_t i = 0; i < n; ++i) {
    auto b = stack_blocks(models.stacks[i], std::string(modality_name(models.kinds[i])));
    blocks.insert(blocks.end(), b.begin(), b.end());
  }
  {
    auto ls = next();
    std::size_t count = 0;
    expect(ls, "blocks");
    if (!(ls >> count) || count != blocks.size()) throw ParseError(source, lineno, "block count mismatch");
  }
  for (const auto& b : blocks) {
    auto ls = next();
    std::string name;
    std::size_t size = 0;
    expect(ls, "block");
    if (!(ls >> name >> size) || name != b.name || size != b.data->size())
      throw ParseError(source, lineno, "block '" + b.name + "' missing or misshapen");
  }
  {
    auto ls = next();
    expect(ls, "end");
  }
  for (const auto& b : blocks)
    for (double& x : *b.data) {
      unsigned char bytes[8];
      if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw DataError(source + ": truncated checkpoint data");
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
      x = std::bit_cast<double>(bits);
    }
  return models;
}

void save_checkpoint(const ModelSet& models, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(out, models);
}

ModelSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in, path.string());
}

std::uint64_t parameter_hash(const EncoderStack& stack) {
  std::uint64_t h = kFnvOffset;
  h = fnv1a(h, stack.norm.mean);
  h = fnv1a(h, stack.norm.scale);
  EncoderParams::visit(stack.query, [&](const std::string&, const std::vector<double>& v) { h = fnv1a(h, v); });
  EncoderParams::visit(stack.key, [&](const std::string&, const std::vector<double>& v) { h = fnv1a(h, v); });
  return h;
}

std::uint64_t parameter_hash(const ModelSet& models) {
  std::uint64_t h = kFnvOffset;
  for (const auto& s : models.stacks) h = fnv1a(h, std::vector<double>{std::bit_cast<double>(parameter_hash(s))});
  return h;
}

}  // namespace kinemod
