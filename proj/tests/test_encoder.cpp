#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "kinemod/encoder.hpp"
#include "kinemod/optim.hpp"
#include "oracles.hpp"

using namespace kinemod;

namespace {

EncoderArch small_arch(std::size_t groups = 3) { return make_arch(5, 1, 7, 6, 4, groups); }

ModalityTensor random_modality(std::mt19937_64& rng, std::size_t frames = 9, std::size_t joints = 5) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor4 t(1, 3, frames, joints);
  for (double& v : t.values()) v = n(rng);
  return {ModalityKind::Joint, std::move(t)};
}

double max_param_diff(const EncoderParams& a, const EncoderParams& b) {
  std::vector<const std::vector<double>*> va, vb;
  EncoderParams::visit(a, [&](const std::string&, const std::vector<double>& v) { va.push_back(&v); });
  EncoderParams::visit(b, [&](const std::string&, const std::vector<double>& v) { vb.push_back(&v); });
  double worst = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) worst = std::max(worst, oracle::max_abs_diff(*va[i], *vb[i]));
  return worst;
}

}  // namespace

TEST_CASE("encode: zero input with zero biases gives a zero feature") {
  auto s = EncoderStack::create(small_arch(), 1);
  std::fill(s.query.backbone.b1.begin(), s.query.backbone.b1.end(), 0.0);
  std::fill(s.query.backbone.b2.begin(), s.query.backbone.b2.end(), 0.0);
  const auto f = encode(s, ModalityTensor{ModalityKind::Joint, Tensor4(1, 3, 4, 5)});
  for (double v : f) CHECK(v == 0.0);
}

TEST_CASE("encode and project are pure") {
  std::mt19937_64 rng(1);
  const auto s = EncoderStack::create(small_arch(), 2);
  const auto before = parameter_hash(s);
  const auto x = random_modality(rng);
  const auto f1 = encode(s, x), f2 = encode(s, x);
  CHECK(f1 == f2);
  CHECK(project(s, f1, HeadKind::G) == project(s, f2, HeadKind::G));
  CHECK(parameter_hash(s) == before);
  CHECK_THROWS_AS(encode(s, random_modality(rng, 9, 4)), DataError);
}

TEST_CASE("query and key blocks share shapes; key starts as a copy") {
  const auto s = EncoderStack::create(small_arch(), 3);
  CHECK(max_param_diff(s.query, s.key) == 0.0);
  CHECK(s.query.g.out_dim() == 4);
  CHECK(s.query.g_tilde.out_dim() == 12);
}

TEST_CASE("encode Jacobian matches central differences") {
  std::mt19937_64 rng(4);
  auto s = EncoderStack::create(small_arch(), 5);
  const auto x = random_modality(rng);
  for (std::size_t k = 0; k < s.arch.feature; ++k) {
    const auto cache = encode_cached(s.arch, s.norm, s.query.backbone, x.data);
    std::vector<double> e(s.arch.feature, 0.0);
    e[k] = 1.0;
    Backbone grad = s.query.backbone;
    Backbone::visit(grad, [](std::string_view, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
    backward_backbone(s.arch, s.query.backbone, cache, e, grad);
    std::vector<ParamView> views;
    Backbone::visit(s.query.backbone, [&](std::string_view n, std::vector<double>& v) {
      views.push_back({std::string(n), v, {}});
    });
    std::size_t i = 0;
    Backbone::visit(grad, [&](std::string_view, std::vector<double>& g) { views[i++].grad = g; });
    const auto report = grad_check(views, [&] { return encode(s, x)[k]; }, 1e-4, 60, k);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("project: unit norm, widths, and scale invariance of a linear head") {
  std::mt19937_64 rng(6);
  auto arch = small_arch(3);
  auto s = EncoderStack::create(arch, 7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> f(arch.feature);
    for (double& v : f) v = std::normal_distribution<double>(0.0, 2.0)(rng);
    const auto z = project(s, f, HeadKind::G);
    const auto zt = project(s, f, HeadKind::GTilde);
    CHECK(z.size() == 4);
    CHECK(zt.size() == 3 * 4);
    CHECK(std::abs(oracle::dotv(z, z) - 1.0) < 1e-6);
    CHECK(std::abs(oracle::dotv(zt, zt) - 1.0) < 1e-6);
  }
  arch.head_activation = Activation::Identity;
  auto lin = EncoderStack::create(arch, 8);
  std::fill(lin.query.g.b_a.begin(), lin.query.g.b_a.end(), 0.0);
  std::fill(lin.query.g.b_b.begin(), lin.query.g.b_b.end(), 0.0);
  std::vector<double> f(arch.feature);
  for (double& v : f) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  std::vector<double> f2 = f;
  for (double& v : f2) v *= 2.0;
  CHECK(oracle::max_abs_diff(project(lin, f, HeadKind::G), project(lin, f2, HeadKind::G)) < 1e-12);

  // A zero pre-normalization vector stays finite.
  auto zero = EncoderStack::create(arch, 9);
  std::fill(zero.query.g.w_b.begin(), zero.query.g.w_b.end(), 0.0);
  std::fill(zero.query.g.b_b.begin(), zero.query.g.b_b.end(), 0.0);
  for (double v : project(zero, f, HeadKind::G)) CHECK(v == 0.0);
}

TEST_CASE("momentum update examples") {
  auto s = EncoderStack::create(small_arch(), 10);
  auto other = EncoderStack::create(small_arch(), 11);
  s.key = other.query;
  const auto key0 = s.key;
  momentum_update(s, 1.0);
  CHECK(max_param_diff(s.key, key0) == 0.0);
  momentum_update(s, 0.0);
  CHECK(max_param_diff(s.key, s.query) == 0.0);
  s.key.set_zero();
  EncoderParams::visit(s.query, [](const std::string&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 1.0); });
  momentum_update(s, 0.999);
  EncoderParams::visit(s.key, [](const std::string&, const std::vector<double>& v) {
    for (double x : v) CHECK(x == doctest::Approx(0.001).epsilon(1e-12));
  });
  CHECK_THROWS_AS(momentum_update(s, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(momentum_update(s, -0.1), std::invalid_argument);
}

TEST_CASE("k momentum steps with a frozen query follow the closed form") {
  std::mt19937_64 rng(12);
  for (double m : {0.0, 0.5, 0.9, 0.99, 0.999, 1.0}) {
    auto s = EncoderStack::create(small_arch(), 13);
    s.key = EncoderStack::create(small_arch(), 14).query;
    const auto k0 = s.key;
    const std::size_t k = 1 + rng() % 40;
    for (std::size_t i = 0; i < k; ++i) momentum_update(s, m);
    const double mk = std::pow(m, static_cast<double>(k));
    std::vector<const std::vector<double>*> kv, qv, k0v;
    EncoderParams::visit(s.key, [&](const std::string&, const std::vector<double>& v) { kv.push_back(&v); });
    EncoderParams::visit(s.query, [&](const std::string&, const std::vector<double>& v) { qv.push_back(&v); });
    EncoderParams::visit(k0, [&](const std::string&, const std::vector<double>& v) { k0v.push_back(&v); });
    for (std::size_t b = 0; b < kv.size(); ++b)
      for (std::size_t i = 0; i < kv[b]->size(); ++i)
        CHECK(std::abs((*kv[b])[i] - (mk * (*k0v[b])[i] + (1.0 - mk) * (*qv[b])[i])) <= 1e-10);
  }
}

TEST_CASE("grad_check: quadratic and constant losses") {
  std::mt19937_64 rng(15);
  std::vector<double> theta(300), grad(300), zeros(300, 0.0);
  for (double& v : theta) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  grad = theta;
  std::vector<ParamView> views{{"theta", theta, grad}};
  const auto q = grad_check(views, [&] { return 0.5 * oracle::dotv(theta, theta); }, 1e-4, 250, 1);
  CHECK(q.passed);
  CHECK(q.coords_checked == 250);
  // Central differences are exact on a quadratic up to roundoff of order eps * L / h.
  CHECK(q.max_rel_error < 1e-5);

  std::vector<ParamView> cviews{{"theta", theta, zeros}};
  const auto c = grad_check(cviews, [] { return 3.0; }, 1e-4, 200, 2);
  CHECK(c.passed);
  CHECK(c.max_abs_error == 0.0);

  // A wrong gradient is reported.
  std::vector<double> wrong(300, 1.0);
  std::vector<ParamView> wviews{{"theta", theta, wrong}};
  CHECK_FALSE(grad_check(wviews, [&] { return 0.5 * oracle::dotv(theta, theta); }, 1e-4, 50, 3).passed);
  CHECK_THROWS_AS(grad_check(views, [] { return std::nan(""); }, 1e-4, 5, 4), NumericError);
}

TEST_CASE("head backward matches central differences") {
  std::mt19937_64 rng(16);
  auto s = EncoderStack::create(small_arch(), 17);
  std::vector<double> f(s.arch.feature), w(s.arch.tilde_dim);
  for (double& v : f) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  for (double& v : w) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  auto loss = [&] { return oracle::dotv(project(s, f, HeadKind::GTilde), w); };
  const auto cache = project_cached(s.arch, s.query.g_tilde, f);
  Head grad = s.query.g_tilde;
  Head::visit(grad, [](std::string_view, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
  std::vector<double> df(f.size(), 0.0);
  backward_head(s.arch, s.query.g_tilde, cache, f, w, grad, df);
  std::vector<ParamView> views;
  Head::visit(s.query.g_tilde, [&](std::string_view n, std::vector<double>& v) { views.push_back({std::string(n), v, {}}); });
  std::size_t i = 0;
  Head::visit(grad, [&](std::string_view, std::vector<double>& g) { views[i++].grad = g; });
  views.push_back({"feature", f, df});
  const auto r = grad_check(views, loss, 1e-4, 200, 5);
  CHECK(r.passed);
}

TEST_CASE("sgd step and schedule") {
  Sgd opt(0.9, 0.0);
  std::vector<double> p{1.0}, g{0.5}, vel{0.0};
  opt.step(p, g, vel, 0.1);
  CHECK(p[0] == doctest::Approx(0.95));
  opt.step(p, g, vel, 0.1);
  CHECK(vel[0] == doctest::Approx(0.95));
  CHECK(p[0] == doctest::Approx(0.855));
  Sgd wd(0.0, 0.5);
  std::vector<double> q{2.0}, z{0.0}, v2{0.0};
  wd.step(q, z, v2, 0.1);
  CHECK(q[0] == doctest::Approx(1.9));
  LrSchedule s{0.1, 0.1, 80};
  CHECK(s.at(79) == 0.1);
  CHECK(s.at(80) == doctest::Approx(0.01));
  CHECK(LrSchedule{0.1, 0.1, 0}.at(1000) == 0.1);
}

TEST_CASE("checkpoint round trip and hash") {
  ModelSet models;
  models.kinds = {ModalityKind::Joint, ModalityKind::Bone};
  models.stacks = {EncoderStack::create(small_arch(), 20), EncoderStack::create(small_arch(), 21)};
  models.stacks[1].norm.mean[2] = 0.125;
  models.seed = 42;
  models.config_hash = "00ff00ff00ff00ff";
  std::stringstream ss;
  write_checkpoint(ss, models);
  const auto back = read_checkpoint(ss);
  CHECK(back.kinds == models.kinds);
  CHECK(back.seed == 42);
  CHECK(back.config_hash == models.config_hash);
  CHECK(back.stacks[0].arch == models.stacks[0].arch);
  CHECK(parameter_hash(back) == parameter_hash(models));
  CHECK(parameter_hash(back.stacks[1]) != parameter_hash(back.stacks[0]));

  const auto path = std::filesystem::temp_directory_path() / "kinemod_ckpt_test.ckpt";
  save_checkpoint(models, path);
  CHECK(parameter_hash(load_checkpoint(path)) == parameter_hash(models));
  std::filesystem::remove(path);

  std::string text = ss.str();
  std::stringstream truncated(text.substr(0, text.size() - 9));
  CHECK_THROWS_AS(read_checkpoint(truncated), DataError);
  CHECK_THROWS_AS(models.at(ModalityKind::Motion), DataError);
}

TEST_CASE("input norm standardizes each dimension") {
  std::mt19937_64 rng(30);
  std::vector<Tensor4> ts;
  for (int i = 0; i < 10; ++i) {
    Tensor4 t(1, 3, 6, 2);
    for (double& v : t.values()) v = 3.0 + 2.0 * std::normal_distribution<double>(0.0, 1.0)(rng);
    ts.push_back(t);
  }
  std::vector<const Tensor4*> ptrs;
  for (const auto& t : ts) ptrs.push_back(&t);
  const auto norm = fit_input_norm(ptrs, 6);
  for (std::size_t d = 0; d < 6; ++d) {
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto& t : ts)
      for (std::size_t f = 0; f < 6; ++f) {
        const double x = (t(0, d / 2, f, d % 2) - norm.mean[d]) * norm.scale[d];
        s += x;
        s2 += x * x;
        ++n;
      }
    CHECK(std::abs(s / n) < 1e-12);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(1e-5));
  }
}
