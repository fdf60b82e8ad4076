#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "msbcr/sampler.hpp"
#include "oracles.hpp"

using namespace msbcr;

namespace {

MatD coords_of(std::initializer_list<std::pair<double, double>> pts) {
  MatD m(pts.size(), 2);
  std::size_t i = 0;
  for (const auto& [x, y] : pts) {
    m(i, 0) = x;
    m(i, 1) = y;
    ++i;
  }
  return m;
}

MatD random_coords(std::size_t n, double extent, std::uint64_t seed) {
  MatD m(n, 2);
  Rng rng(seed);
  for (double& v : m.data) v = rng.uniform() * extent;
  return m;
}

}  // namespace

TEST_CASE("patch probabilities on pinned configurations") {
  SECTION("single patch") {
    auto p = patch_probabilities(coords_of({{123.0, -456.0}}), 512.0);
    REQUIRE(p.probs.size() == 1);
    CHECK(p.probs[0] == 1.0);
  }
  SECTION("two patches anywhere split evenly") {
    auto p = patch_probabilities(coords_of({{0, 0}, {9000, 40}}), 512.0);
    CHECK(p.probs[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(p.probs[1] == Catch::Approx(0.5).margin(1e-15));
  }
  SECTION("clustered pair dominates an isolated point") {
    // pairwise density 1 + exp(-1/2) for the clustered pair, 1 for the far point
    auto p = patch_probabilities(coords_of({{0, 0}, {512, 0}, {1e5, 0}}), 512.0);
    const double near = 1.0 + std::exp(-0.5);
    const double total = 2.0 * near + 1.0;
    CHECK(p.probs[0] == Catch::Approx(near / total).epsilon(1e-12));
    CHECK(p.probs[1] == Catch::Approx(near / total).epsilon(1e-12));
    CHECK(p.probs[2] == Catch::Approx(1.0 / total).epsilon(1e-12));
    CHECK(p.probs[0] == Catch::Approx(0.3813).margin(5e-5));
    CHECK(p.probs[2] == Catch::Approx(0.2374).margin(5e-5));
  }
  SECTION("input validation") {
    CHECK_THROWS_AS(patch_probabilities(coords_of({{0, 0}}), 0.0), DataError);
    CHECK_THROWS_AS(patch_probabilities(coords_of({{0, 0}}), -1.0), DataError);
    MatD bad = coords_of({{0, 0}});
    bad(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(patch_probabilities(bad, 512.0), DataError);
  }
  SECTION("f32 container coordinates take the same path") {
    MatF narrow(2, 2);
    narrow(0, 0) = 0.0f;
    narrow(0, 1) = 0.0f;
    narrow(1, 0) = 512.0f;
    narrow(1, 1) = 0.0f;
    auto p = patch_probabilities(narrow, 512.0);
    CHECK(p.probs[0] == 0.5);
  }
}

TEST_CASE("patch probabilities match the brute-force evaluation") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto coords = random_coords(400, 30000.0, seed);
    auto p = patch_probabilities(coords, 512.0);
    auto ref = oracle::kde_probs_bruteforce(coords, 512.0);
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(p.probs[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("density profile invariants") {
  auto coords = random_coords(2000, 40000.0, 17);
  auto p = patch_probabilities(coords, 512.0);

  SECTION("normalization and positivity") {
    CHECK(std::abs(pairwise_sum(p.probs) - 1.0) < 1e-12);
    for (double d : p.densities) CHECK(d > 0.0);
    for (double q : p.probs) CHECK(q > 0.0);
  }
  SECTION("translation invariance") {
    MatD shifted = coords;
    for (std::size_t i = 0; i < shifted.rows; ++i) {
      shifted(i, 0) += 77777.0;
      shifted(i, 1) -= 12345.0;
    }
    auto q = patch_probabilities(shifted, 512.0);
    for (std::size_t i = 0; i < p.probs.size(); ++i) CHECK(std::abs(p.probs[i] - q.probs[i]) < 1e-12);
  }
  SECTION("joint scale invariance") {
    const double c = 3.25;
    MatD scaled = coords;
    for (double& v : scaled.data) v *= c;
    auto q = patch_probabilities(scaled, 512.0 * c);
    for (std::size_t i = 0; i < p.probs.size(); ++i) CHECK(std::abs(p.probs[i] - q.probs[i]) < 1e-12);
  }
  SECTION("permutation equivariance") {
    std::vector<std::size_t> perm(coords.rows);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(4);
    rng.shuffle(perm);
    MatD permuted(coords.rows, 2);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      permuted(i, 0) = coords(perm[i], 0);
      permuted(i, 1) = coords(perm[i], 1);
    }
    auto q = patch_probabilities(permuted, 512.0);
    // summation order differs under permutation, so equality holds to 1e-12
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK(std::abs(q.probs[i] - p.probs[perm[i]]) < 1e-12);
  }
}

TEST_CASE("cluster dominance") {
  // tight cluster (pairwise distance <= h/4) plus one point at >= 20h
  const double h = 512.0;
  auto coords = coords_of({{0, 0}, {h / 4, 0}, {0, h / 4}, {h / 8, h / 8}, {25 * h, 0}});
  auto p = patch_probabilities(coords, h);
  for (std::size_t i = 0; i + 1 < coords.rows; ++i) CHECK(p.probs[i] > p.probs[4]);
}

TEST_CASE("truncated mode agrees with exact") {
  SECTION("random box") {
    auto coords = random_coords(1500, 60000.0, 23);
    auto exact = patch_probabilities(coords, 512.0, KdeMode::exact);
    auto trunc = patch_probabilities(coords, 512.0, KdeMode::truncated);
    for (std::size_t i = 0; i < exact.probs.size(); ++i)
      CHECK(std::abs(exact.probs[i] - trunc.probs[i]) < 1e-9);
  }
  SECTION("normalization holds at N = 5e4 on the truncated path") {
    auto coords = random_coords(50000, 51200.0, 29);
    auto p = patch_probabilities(coords, 512.0, KdeMode::truncated);
    CHECK(std::abs(pairwise_sum(p.probs) - 1.0) < 1e-12);
  }
}

TEST_CASE("weighted sampling without replacement") {
  SECTION("count contract") {
    std::vector<double> probs(100, 0.01);
    auto sel = sample_patches_indices(probs, 0.10, 5);
    CHECK(sel.size() == 10);
    std::set<std::uint32_t> uniq(sel.begin(), sel.end());
    CHECK(uniq.size() == 10);
    CHECK(std::is_sorted(sel.begin(), sel.end()));
  }
  SECTION("floor guard at tiny ratios") {
    std::vector<double> probs(3, 1.0 / 3.0);
    auto sel = sample_patches_indices(probs, 0.0005, 5);
    CHECK(sel.size() == 1);
  }
  SECTION("ratio 1 returns everything") {
    std::vector<double> probs(7, 1.0 / 7.0);
    auto sel = sample_patches_indices(probs, 1.0, 5);
    CHECK(sel.size() == 7);
  }
  SECTION("determinism") {
    auto coords = random_coords(50, 10000.0, 3);
    auto p = patch_probabilities(coords, 512.0);
    CHECK(sample_patches(p, 0.3, 42) == sample_patches(p, 0.3, 42));
  }
  SECTION("ratio validation") {
    std::vector<double> probs(3, 1.0 / 3.0);
    CHECK_THROWS_AS(sample_patches_indices(probs, 0.0, 1), DataError);
    CHECK_THROWS_AS(sample_patches_indices(probs, 1.5, 1), DataError);
  }
}

TEST_CASE("coincident patches draw uniformly") {
  // all patches at one spot -> uniform probabilities; selection frequency of
  // each index approaches 1/N (Monte-Carlo, 3 sigma)
  const std::size_t n = 10;
  MatF coords(n, 2, 256.0f);
  auto profile = patch_probabilities(coords, 512.0);
  for (double q : profile.probs) CHECK(q == Catch::Approx(0.1).margin(1e-12));

  const std::size_t reps = 100000;
  std::vector<std::size_t> hits(n, 0);
  for (std::size_t rep = 0; rep < reps; ++rep) {
    auto sel = sample_patches(profile, 0.1, derive_seed(7, rep));  // one index per draw
    ++hits[sel[0]];
  }
  const double expected = static_cast<double>(reps) / n;
  const double sigma = std::sqrt(static_cast<double>(reps) * (1.0 / n) * (1.0 - 1.0 / n));
  for (std::size_t i = 0; i < n; ++i)
    CHECK(std::abs(static_cast<double>(hits[i]) - expected) < 3.0 * sigma);
}

TEST_CASE("uniform slide selection") {
  CHECK(uniform_slide_indices(5, 5) == std::vector<std::uint32_t>{0, 1, 2, 3, 4});
  CHECK(uniform_slide_indices(5, 2) == std::vector<std::uint32_t>{0, 4});
  CHECK(uniform_slide_indices(10, 4) == std::vector<std::uint32_t>{0, 3, 6, 9});
  CHECK(uniform_slide_indices(7, 1) == std::vector<std::uint32_t>{3});
  CHECK(uniform_slide_indices(8, 1) == std::vector<std::uint32_t>{3});
  CHECK_THROWS_AS(uniform_slide_indices(3, 4), DataError);
  CHECK_THROWS_AS(uniform_slide_indices(3, 0), DataError);

  // distinct, sorted, endpoints included for every feasible (n, k >= 2)
  for (std::size_t n = 2; n <= 40; ++n) {
    for (std::size_t k = 2; k <= n; ++k) {
      auto idx = uniform_slide_indices(n, k);
      REQUIRE(idx.size() == k);
      CHECK(idx.front() == 0);
      CHECK(idx.back() == n - 1);
      for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
    }
  }
}

TEST_CASE("random slide selection") {
  CHECK(random_slide_indices(6, 6, 1) == std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5});
  CHECK(random_slide_indices(30, 19, 9) == random_slide_indices(30, 19, 9));

  auto idx = random_slide_indices(30, 19, 4);
  REQUIRE(idx.size() == 19);
  std::set<std::uint32_t> uniq(idx.begin(), idx.end());
  CHECK(uniq.size() == 19);
  for (auto i : idx) CHECK(i < 30);
  CHECK_THROWS_AS(random_slide_indices(5, 6, 1), DataError);
}

TEST_CASE("sampling plan round trip") {
  SamplingPlan plan;
  plan.ratio = 0.1;
  plan.selections["slide_a"] = {0, 5, 9};
  plan.selections["slide_b"] = {2};

  auto dir = std::filesystem::temp_directory_path() / ("msbcr_plan_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  write_sampling_plan(plan, dir / "plan.tsv");

  auto loaded = read_sampling_plan(dir / "plan.tsv");
  CHECK(loaded.selections == plan.selections);

  std::string text = read_file(dir / "plan.tsv");
  CHECK(text == "slide_a\t0,5,9\nslide_b\t2\n");
  std::filesystem::remove_all(dir);
}
