#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "kinemod/common.hpp"
#include "kinemod/skeleton.hpp"
#include "oracles.hpp"

using namespace kinemod;

namespace {

SkeletonSequence scalar_track(const std::vector<double>& xs, std::size_t original_frames) {
  Tensor4 t(1, 3, xs.size(), 1);
  for (std::size_t f = 0; f < xs.size(); ++f) t(0, 0, f, 0) = xs[f];
  return make_sequence(std::move(t), original_frames);
}

}  // namespace

TEST_CASE("resize: two-frame ramp becomes k/49") {
  const auto out = resize_sequence(scalar_track({0.0, 1.0}, 2), 50);
  REQUIRE(out.frames() == 50);
  for (std::size_t k = 0; k < 50; ++k) CHECK(out.data(0, 0, k, 0) == doctest::Approx(k / 49.0).epsilon(1e-15));
  CHECK(out.original_frames == 2);
}

TEST_CASE("resize: [0,1,0] to 5 frames") {
  const auto out = resize_sequence(scalar_track({0.0, 1.0, 0.0}, 3), 5);
  const double want[] = {0.0, 0.5, 1.0, 0.5, 0.0};
  for (std::size_t k = 0; k < 5; ++k) CHECK(out.data(0, 0, k, 0) == want[k]);
}

TEST_CASE("resize: constant sequence stays constant") {
  Tensor4 t(1, 3, 17, 4, 0.25);
  const auto out = resize_sequence(make_sequence(std::move(t), 17), 50);
  for (double v : out.data.values()) CHECK(v == 0.25);
}

TEST_CASE("resize: rejects short or non-finite input") {
  CHECK_THROWS_AS(resize_sequence(SkeletonSequence{Tensor4(1, 3, 1, 2), 5, {}}, 50), DataError);
  CHECK_THROWS_AS(resize_sequence(scalar_track({0.0, 1.0}, 2), 1), DataError);
  SkeletonSequence bad{Tensor4(1, 3, 3, 1), 3, {}};
  bad.data(0, 1, 1, 0) = std::nan("");
  CHECK_THROWS_AS(resize_sequence(bad, 50), DataError);
  CHECK_THROWS_AS(make_sequence(Tensor4(1, 3, 3, 1), 1), DataError);
}

TEST_CASE("resize properties on random sequences") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> frames(2, 120), joints(1, 6), target(2, 80), bodies(1, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = frames(rng), V = joints(rng), out_T = target(rng), M = bodies(rng);
    const auto seq = oracle::random_sequence(rng, M, T, V, T + 3);
    const auto out = resize_sequence(seq, out_T);
    REQUIRE(out.frames() == out_T);
    CHECK(out.original_frames == T + 3);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t v = 0; v < V; ++v) {
          // Endpoints exact.
          CHECK(out.data(m, c, 0, v) == seq.data(m, c, 0, v));
          CHECK(out.data(m, c, out_T - 1, v) == seq.data(m, c, T - 1, v));
          for (std::size_t t = 0; t < out_T; ++t) {
            const double pos = static_cast<double>(t) * static_cast<double>(T - 1) / static_cast<double>(out_T - 1);
            const std::size_t lo = std::min(static_cast<std::size_t>(pos), T - 1);
            const std::size_t hi = std::min(lo + 1, T - 1);
            const double a = seq.data(m, c, lo, v), b = seq.data(m, c, hi, v);
            const double x = out.data(m, c, t, v);
            // Bracketed by neighbouring input frames and close to the interpolant.
            CHECK(x >= std::min(a, b));
            CHECK(x <= std::max(a, b));
            std::vector<double> col(T);
            for (std::size_t f = 0; f < T; ++f) col[f] = seq.data(m, c, f, v);
            CHECK(std::abs(x - oracle::interp(col, pos)) <= 1e-12 * (1.0 + std::abs(x)));
          }
        }
  }
}

TEST_CASE("resize to the same length is the identity") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto seq = oracle::random_sequence(rng, 1, 3 + trial, 5, 40);
    const auto out = resize_sequence(seq, seq.frames());
    CHECK(oracle::max_abs_diff(out.data.values(), seq.data.values()) == 0.0);
  }
}

TEST_CASE("time scale") {
  auto seq_with = [](std::size_t orig) { return SkeletonSequence{Tensor4(1, 3, 50, 1), orig, {}}; };
  CHECK(time_scale(seq_with(100)).gamma == 2.0);
  CHECK(time_scale(seq_with(50)).gamma == 1.0);
  CHECK(time_scale(seq_with(75)).gamma == 1.5);
  CHECK(time_scale(seq_with(40)).gamma == 0.8);
  CHECK_THROWS_AS(time_scale(seq_with(0)), DataError);
  for (std::size_t orig = 2; orig < 400; ++orig) CHECK(time_scale(seq_with(orig)).gamma == static_cast<double>(orig) / 50.0);
}

TEST_CASE("default and toy topologies") {
  const auto topo = default_topology();
  CHECK(topo.joint_count == 25);
  CHECK(topo.bones.size() == 24);
  CHECK(topo.hinges.size() == 25);
  CHECK(topo.root == 20);
  for (const auto& h : topo.hinges) CHECK(h.bone_i != h.bone_j);

  const auto toy = toy_topology();
  CHECK(toy.joint_count == 5);
  CHECK(toy.bones.size() == 4);
  for (const auto& h : toy.hinges) CHECK(h.bone_i != h.bone_j);
}

TEST_CASE("hinge rule") {
  const auto toy = toy_topology();
  // Root 0 uses its first two child bones; 1 uses (bone into 1, bone into 3); leaf 3 uses (bone into 1, bone into 3).
  CHECK(toy.hinges[0] == HingeDef{1, 2});
  CHECK(toy.hinges[1] == HingeDef{1, 3});
  CHECK(toy.hinges[3] == HingeDef{1, 3});
  CHECK(toy.hinges[4] == HingeDef{2, 4});
}

TEST_CASE("topology validation rejects malformed trees") {
  SkeletonTopology t{3, 0, {{1, 0}, {1, 2}}, {}};
  CHECK_THROWS_AS(t.validate(), DataError);
  SkeletonTopology cyc{3, 0, {{1, 2}, {2, 1}}, {{1, 2}, {1, 2}, {1, 2}}};
  CHECK_THROWS_AS(cyc.validate(), DataError);
  auto ok = toy_topology();
  ok.hinges[2] = {3, 3};
  CHECK_THROWS_AS(ok.validate(), DataError);
}

TEST_CASE("topology text round trip") {
  for (const auto& topo : {default_topology(), toy_topology()}) {
    const auto back = parse_topology(format_topology(topo));
    CHECK(back.joint_count == topo.joint_count);
    CHECK(back.root == topo.root);
    CHECK(back.bones == topo.bones);
    CHECK(back.hinges == topo.hinges);
  }
  const auto path = std::filesystem::temp_directory_path() / "kinemod_topo_test.topology";
  save_topology(default_topology(), path);
  CHECK(load_topology(path).hinges == default_topology().hinges);
  std::filesystem::remove(path);
}

TEST_CASE("topology parser errors carry line numbers") {
  try {
    parse_topology("kinemod-topology 1\nBONES\n1 0\n2 zero\n", "t.topology");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
  CHECK_THROWS_AS(parse_topology("BONES\n1 0\n"), ParseError);
  // Without a HINGES section the hinge rule fills them in.
  const auto t = parse_topology("kinemod-topology 1\n# toy\nBONES\n1 0\n2 0\n3 1\n4 2\n");
  CHECK(t.hinges == toy_topology().hinges);
}

TEST_CASE("shipped topology file matches the built-in layout") {
  const auto topo = load_topology(std::filesystem::path(KINEMOD_SOURCE_DIR) / "data" / "ntu25.topology");
  const auto ref = default_topology();
  CHECK(topo.bones == ref.bones);
  CHECK(topo.hinges == ref.hinges);
  CHECK(topo.root == ref.root);
}
