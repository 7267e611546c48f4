#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <random>
#include <vector>

#include "hdrobust/estimators.hpp"
#include "hdrobust/rng.hpp"
#include "support/test_support.hpp"

using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace hdr = hdrobust;

TEST_CASE("select_kth order statistics", "[estimators]") {
  const std::vector<double> a{3.0, 1.0, 2.0};
  CHECK(hdr::select_kth(a, 2) == 2.0);
  const std::vector<double> b{5.0, 5.0, 5.0};
  CHECK(hdr::select_kth(b, 3) == 5.0);
  CHECK_THROWS_AS(hdr::select_kth(std::vector<double>{}, 1), hdr::config_error);
  CHECK_THROWS_AS(hdr::select_kth(a, 0), hdr::config_error);
  CHECK_THROWS_AS(hdr::select_kth(a, 4), hdr::config_error);
}

TEST_CASE("select_kth matches a full sort", "[estimators]") {
  std::mt19937_64 eng(42);
  std::uniform_int_distribution<int> len(1, 80);
  std::uniform_real_distribution<double> val(-100.0, 100.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(eng);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = val(eng);
    std::uniform_int_distribution<int> rank(1, n);
    const int k = rank(eng);
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(hdr::select_kth(x, k) == sorted[static_cast<std::size_t>(k - 1)]);
  }
}

TEST_CASE("select_kth time scales roughly linearly", "[estimators]") {
  const auto time_select = [](int n, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = val(eng);
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      volatile double sink = hdr::select_kth(x, n / 2);
      (void)sink;
      const auto t1 = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };
  bool ok = false;
  for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
    const double small = time_select(100000, 7 + attempt);
    const double big = time_select(400000, 13 + attempt);
    ok = big / small < 6.0;
  }
  CHECK(ok);
}

TEST_CASE("trimmed mean hand-checked cases", "[estimators]") {
  SECTION("constant samples") {
    const std::vector<double> c(12, 3.5);
    for (double alpha : {0.0, 0.1, 0.25, 0.4}) CHECK(hdr::trimmed_mean(c, alpha) == 3.5);
  }
  SECTION("quantiles from the first half, average over the second") {
    const std::vector<double> x{0.0, 10.0, 0.0, 10.0, 1.0, 2.0, 3.0, 1000.0};
    CHECK(hdr::trimmed_mean(x, 0.25) == Approx(4.0).margin(1e-15));
  }
  SECTION("alpha = 0 clips at the first-half range") {
    const std::vector<double> x{5.0, 1.0, 3.0, 9.0, 0.0, 2.0, 10.0, 4.0};
    // clip(0,2,10,4) to [1,9] -> (1+2+9+4)/4
    CHECK(hdr::trimmed_mean(x, 0.0) == Approx(4.0).margin(1e-15));
  }
  SECTION("odd length drops the last sample") {
    const std::vector<double> x{1.0, 2.0, 7.0};
    // -> [1, 2]: quantiles from {1}, average over {2} clipped to [1, 1]
    CHECK(hdr::trimmed_mean(x, 0.0) == Approx(testsupport::tm_reference(x, 0.0)));
    CHECK(hdr::trimmed_mean(x, 0.0) == Approx(1.0));
  }
  SECTION("invalid inputs") {
    CHECK_THROWS_AS(hdr::trimmed_mean(std::vector<double>{1.0}, 0.1), hdr::config_error);
    CHECK_THROWS_AS(hdr::trimmed_mean(std::vector<double>{1.0, 2.0}, 0.5), hdr::config_error);
    CHECK_THROWS_AS(hdr::trimmed_mean(std::vector<double>{1.0, 2.0}, -0.1), hdr::config_error);
  }
}

TEST_CASE("trimmed mean equals the sort-based reference", "[estimators]") {
  SECTION("exhaustive small integer grids") {
    for (int n = 2; n <= 8; ++n) {
      std::vector<double> x(static_cast<std::size_t>(n));
      const long combos = static_cast<long>(std::pow(3.0, n));
      for (long code = 0; code < combos; ++code) {
        long c = code;
        for (int i = 0; i < n; ++i) {
          x[static_cast<std::size_t>(i)] = static_cast<double>(c % 3);
          c /= 3;
        }
        for (double alpha : {0.0, 0.1, 0.25, 0.4})
          REQUIRE(hdr::trimmed_mean(x, alpha) == testsupport::tm_reference(x, alpha));
      }
    }
  }
  SECTION("randomized beyond") {
    std::mt19937_64 eng(1234);
    std::uniform_int_distribution<int> len(2, 64);
    std::uniform_real_distribution<double> val(-50.0, 50.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = len(eng);
      std::vector<double> x(static_cast<std::size_t>(n));
      for (auto& v : x) v = val(eng);
      for (double alpha : {0.0, 0.1, 0.25, 0.4})
        REQUIRE(hdr::trimmed_mean(x, alpha) == testsupport::tm_reference(x, alpha));
    }
  }
}

TEST_CASE("trimmed mean output lies within the clip quantiles", "[estimators]") {
  std::mt19937_64 eng(99);
  std::uniform_int_distribution<int> len(2, 40);
  std::uniform_real_distribution<double> val(-1000.0, 1000.0);
  std::uniform_real_distribution<double> al(0.0, 0.49);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = len(eng);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = val(eng);
    const double alpha = al(eng);
    const std::size_t half = (x.size() - x.size() % 2) / 2;
    std::vector<double> first(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(half));
    std::sort(first.begin(), first.end());
    const double tm = hdr::trimmed_mean(x, alpha);
    REQUIRE(tm >= first.front() - 1e-12);
    REQUIRE(tm <= first.back() + 1e-12);
  }
}

TEST_CASE("trimmed mean is invariant under within-half permutations", "[estimators]") {
  std::mt19937_64 eng(7);
  std::uniform_real_distribution<double> val(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(20);
    for (auto& v : x) v = val(eng);
    const double base = hdr::trimmed_mean(x, 0.2);
    std::vector<double> y = x;
    std::shuffle(y.begin(), y.begin() + 10, eng);
    std::shuffle(y.begin() + 10, y.end(), eng);
    // quantiles are exactly invariant; the clipped sum may reassociate
    REQUIRE(hdr::trimmed_mean(y, 0.2) == Approx(base).epsilon(1e-13));
  }
}

TEST_CASE("trimming level from the corruption budget", "[estimators]") {
  CHECK(hdr::alpha_from_budget({0.05, 0.04, 1200}) == Approx(0.44605170185988093).epsilon(1e-12));
  // delta = 4 e^{-n/12} forces alpha = 8*0 + 1 -> infeasible
  const int n = 120;
  CHECK_THROWS_AS(hdr::alpha_from_budget({0.0, 4.0 * std::exp(-n / 12.0), n}), hdr::config_error);
  // large n, lax delta: alpha tends to zero from above
  const double tiny = hdr::alpha_from_budget({0.0, 0.9999, 1000000000});
  CHECK(tiny > 0.0);
  CHECK(tiny < 1e-6);
  CHECK_THROWS_AS(hdr::alpha_from_budget({0.2, 0.1, 100}), hdr::config_error);
  CHECK_THROWS_AS(hdr::alpha_from_budget({0.0, 1.5, 100}), hdr::config_error);
}

TEST_CASE("coordinatewise trimmed mean", "[estimators]") {
  SECTION("identical rows are a fixed point") {
    VectorXd g(3);
    g << 1.0, -2.0, 0.5;
    MatrixXd samples = g.transpose().replicate(8, 1);
    CHECK((hdr::coordinatewise_trimmed_mean(samples, 0.25) - g).norm() == 0.0);
  }
  SECTION("a huge outlier row stays within the clean range") {
    std::mt19937_64 eng(5);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    MatrixXd samples(8, 4);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 4; ++j) samples(i, j) = val(eng);
    samples.row(3).setConstant(1e6);
    const VectorXd est = hdr::coordinatewise_trimmed_mean(samples, 0.25);
    for (int j = 0; j < 4; ++j) {
      double lo = 1e300, hi = -1e300;
      for (int i = 0; i < 8; ++i) {
        if (i == 3) continue;
        lo = std::min(lo, samples(i, j));
        hi = std::max(hi, samples(i, j));
      }
      REQUIRE(est[j] >= lo);
      REQUIRE(est[j] <= hi);
    }
  }
  SECTION("a single column reduces to the scalar trimmed mean") {
    std::mt19937_64 eng(6);
    std::uniform_real_distribution<double> val(-3.0, 3.0);
    MatrixXd samples(16, 1);
    std::vector<double> flat(16);
    for (int i = 0; i < 16; ++i) {
      samples(i, 0) = val(eng);
      flat[static_cast<std::size_t>(i)] = samples(i, 0);
    }
    CHECK(hdr::coordinatewise_trimmed_mean(samples, 0.1)(0) == hdr::trimmed_mean(flat, 0.1));
  }
}

TEST_CASE("coordinatewise median-of-means", "[estimators]") {
  SECTION("one block is the empirical mean") {
    std::mt19937_64 eng(11);
    std::uniform_real_distribution<double> val(-2.0, 2.0);
    MatrixXd samples(9, 3);
    for (int i = 0; i < 9; ++i)
      for (int j = 0; j < 3; ++j) samples(i, j) = val(eng);
    const VectorXd mean = samples.colwise().mean();
    CHECK((hdr::coordinatewise_mom(samples, 1, 3) - mean).norm() < 1e-14);
  }
  SECTION("constant samples") {
    MatrixXd samples = MatrixXd::Constant(10, 2, 4.25);
    CHECK((hdr::coordinatewise_mom(samples, 3, 9) - VectorXd::Constant(2, 4.25)).norm() == 0.0);
  }
  SECTION("matches a direct reference on n=9, K=3") {
    MatrixXd samples(9, 1);
    for (int i = 0; i < 9; ++i) samples(i, 0) = static_cast<double>(i + 1);
    const std::uint64_t seed = 2024;
    const auto idx = hdr::shuffled_indices(9, seed);
    std::vector<double> block_means;
    for (int b = 0; b < 3; ++b) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j) s += samples(idx[static_cast<std::size_t>(3 * b + j)], 0);
      block_means.push_back(s / 3.0);
    }
    std::sort(block_means.begin(), block_means.end());
    CHECK(hdr::coordinatewise_mom(samples, 3, seed)(0) == block_means[1]);
  }
  SECTION("invalid block counts") {
    MatrixXd samples = MatrixXd::Zero(4, 1);
    CHECK_THROWS_AS(hdr::coordinatewise_mom(samples, 0, 1), hdr::config_error);
    CHECK_THROWS_AS(hdr::coordinatewise_mom(samples, 5, 1), hdr::config_error);
  }
}

TEST_CASE("groupwise geometric median-of-means", "[estimators]") {
  const std::vector<std::vector<int>> groups{{0, 1}, {2, 3}};
  SECTION("identical samples") {
    VectorXd g(4);
    g << 1.0, 2.0, 3.0, 4.0;
    MatrixXd samples = g.transpose().replicate(10, 1);
    CHECK((hdr::group_geometric_mom(samples, groups, 5, 17) - g).norm() == 0.0);
  }
  SECTION("one block is the groupwise empirical mean") {
    std::mt19937_64 eng(21);
    std::uniform_real_distribution<double> val(-2.0, 2.0);
    MatrixXd samples(6, 4);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 4; ++j) samples(i, j) = val(eng);
    const VectorXd mean = samples.colwise().mean();
    CHECK((hdr::group_geometric_mom(samples, groups, 1, 17) - mean).norm() < 1e-14);
  }
  SECTION("a single corrupted block is rejected exactly") {
    VectorXd g(4);
    g << -1.0, 0.5, 2.0, 0.0;
    MatrixXd samples = g.transpose().replicate(10, 1);
    const std::uint64_t seed = 33;
    const auto idx = hdr::shuffled_indices(10, seed);
    for (int j = 0; j < 2; ++j)  // poison every sample of block 2
      samples.row(idx[static_cast<std::size_t>(4 + j)]).setConstant(1e9);
    CHECK((hdr::group_geometric_mom(samples, groups, 5, seed) - g).norm() == 0.0);
  }
  SECTION("partition validation") {
    MatrixXd samples = MatrixXd::Zero(4, 4);
    CHECK_THROWS_AS(hdr::group_geometric_mom(samples, {{0, 1}, {1, 2, 3}}, 2, 1),
                    hdr::config_error);
    CHECK_THROWS_AS(hdr::group_geometric_mom(samples, {{0, 1}}, 2, 1), hdr::config_error);
  }
}

TEST_CASE("cm_mom scale parameter", "[estimators]") {
  CHECK(hdr::cm_mom_scale(1, 2.0 * std::log(16.0), 1, 1) == Approx(1.0).epsilon(1e-14));
  CHECK(hdr::cm_mom_scale(100, 1.0, 2, 2) == Approx(26.327688).epsilon(1e-6));
  const double base = hdr::cm_mom_scale(50, 3.0, 4, 3);
  CHECK(hdr::cm_mom_scale(100, 3.0, 4, 3) == Approx(std::sqrt(2.0) * base).epsilon(1e-14));
  CHECK_THROWS_AS(hdr::cm_mom_scale(0, 1.0, 1, 1), hdr::config_error);
  CHECK_THROWS_AS(hdr::cm_mom_scale(1, 0.0, 1, 1), hdr::config_error);
}

TEST_CASE("truncated dilation block mean", "[estimators]") {
  SECTION("zero samples give a zero matrix") {
    std::vector<MatrixXd> block(4, MatrixXd::Zero(3, 2));
    CHECK(hdr::minsker_block_mean(block, 2.0).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("single 1x1 sample") {
    std::vector<MatrixXd> block{MatrixXd::Constant(1, 1, 1.0)};
    CHECK(hdr::minsker_block_mean(block, 1.0)(0, 0) == Approx(std::log(2.5)).epsilon(1e-12));
  }
  SECTION("large scale recovers the plain mean") {
    std::mt19937_64 eng(3);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    std::vector<MatrixXd> block;
    MatrixXd mean = MatrixXd::Zero(2, 2);
    for (int i = 0; i < 20; ++i) {
      MatrixXd a(2, 2);
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) a(r, c) = val(eng);
      block.push_back(a);
      mean += a;
    }
    mean /= 20.0;
    const MatrixXd est = hdr::minsker_block_mean(block, 1e4);
    REQUIRE((est - mean).norm() <= 1e-3 * (1.0 + mean.norm()));
  }
  SECTION("input validation") {
    std::vector<MatrixXd> empty;
    CHECK_THROWS_AS(hdr::minsker_block_mean(empty, 1.0), hdr::config_error);
    std::vector<MatrixXd> block{MatrixXd::Zero(2, 2)};
    CHECK_THROWS_AS(hdr::minsker_block_mean(block, 0.0), hdr::config_error);
    std::vector<MatrixXd> bad{MatrixXd::Constant(2, 2, std::nan(""))};
    CHECK_THROWS_AS(hdr::minsker_block_mean(bad, 1.0), hdr::numerical_error);
  }
}

TEST_CASE("cm_mom matrix mean", "[estimators]") {
  SECTION("zero samples") {
    std::vector<MatrixXd> samples(12, MatrixXd::Zero(2, 2));
    CHECK(hdr::cm_mom(samples, 4, 3.0, 5).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("one block degenerates to the truncated mean of everything") {
    std::mt19937_64 eng(8);
    std::normal_distribution<double> val(0.0, 1.0);
    std::vector<MatrixXd> samples;
    for (int i = 0; i < 9; ++i) {
      MatrixXd a(2, 3);
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c) a(r, c) = val(eng);
      samples.push_back(a);
    }
    const MatrixXd direct = hdr::minsker_block_mean(samples, 5.0);
    // K = 1 shuffles but uses every sample in the single block
    CHECK((hdr::cm_mom(samples, 1, 5.0, 77) - direct).norm() < 1e-12);
  }
  SECTION("a corrupted block is discarded") {
    MatrixXd clean(2, 2);
    clean << 1.0, -0.5, 0.25, 2.0;
    std::vector<MatrixXd> samples(15, clean);
    const std::uint64_t seed = 91;
    const auto idx = hdr::shuffled_indices(15, seed);
    for (int j = 0; j < 3; ++j)
      samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(6 + j)])] =
          MatrixXd::Constant(2, 2, 1e8);
    std::vector<MatrixXd> clean_block(3, clean);
    const MatrixXd expected = hdr::minsker_block_mean(clean_block, 4.0);
    CHECK((hdr::cm_mom(samples, 5, 4.0, seed) - expected).norm() == 0.0);
  }
  SECTION("recommended block count") {
    CHECK(hdr::recommended_cm_mom_blocks(0.05) == 54);  // ceil(18 log 20)
    CHECK_THROWS_AS(hdr::recommended_cm_mom_blocks(0.0), hdr::config_error);
  }
}

TEST_CASE("cm_mom with identity influence reduces to scalar geometric MOM", "[estimators]") {
  std::mt19937_64 eng(13);
  std::normal_distribution<double> val(0.0, 2.0);
  std::vector<MatrixXd> samples;
  for (int i = 0; i < 20; ++i) samples.push_back(MatrixXd::Constant(1, 1, val(eng)));
  const std::uint64_t seed = 5150;
  const int blocks = 5;
  const MatrixXd got =
      hdr::detail::cm_mom_impl(std::span<const MatrixXd>(samples), blocks, 3.0, seed,
                               [](double x) { return x; });

  // direct scalar route: block means, |.| distances, ceil(K/2)-th smallest
  const auto idx = hdr::shuffled_indices(20, seed);
  std::vector<double> means;
  for (int b = 0; b < blocks; ++b) {
    double s = 0.0;
    for (int j = 0; j < 4; ++j) s += samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(4 * b + j)])](0, 0);
    means.push_back(s / 4.0);
  }
  int best = 0;
  double best_score = 1e300;
  for (int i = 0; i < blocks; ++i) {
    std::vector<double> dist;
    for (int j = 0; j < blocks; ++j) dist.push_back(std::abs(means[static_cast<std::size_t>(i)] - means[static_cast<std::size_t>(j)]));
    std::sort(dist.begin(), dist.end());
    const double score = dist[(blocks + 1) / 2 - 1];
    if (score < best_score) {
      best_score = score;
      best = i;
    }
  }
  CHECK(got(0, 0) == Approx(means[static_cast<std::size_t>(best)]).epsilon(1e-14));
}

TEST_CASE("operator norm power iteration agrees with a full SVD", "[estimators]") {
  std::mt19937_64 eng(19);
  std::normal_distribution<double> val(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixXd m(5, 3);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = val(eng);
    const double svd = Eigen::JacobiSVD<MatrixXd>(m).singularValues()(0);
    REQUIRE(hdr::operator_norm(m, trial) == Approx(svd).epsilon(1e-8));
  }
  CHECK(hdr::operator_norm(MatrixXd::Zero(3, 3)) == 0.0);
}

TEST_CASE("trimmed mean beats the empirical mean on corrupted heavy tails", "[estimators]") {
  const int n = 2000;
  const double shape = 2.05;
  const double pareto_mean = shape / (shape - 1.0);
  const double alpha = hdr::alpha_from_budget({0.05, 0.05, n});
  int tm_wins = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 eng(1000 + static_cast<std::uint64_t>(trial));
    std::uniform_real_distribution<double> u01(1e-12, 1.0);
    std::vector<double> x(n);
    for (auto& v : x) v = std::pow(u01(eng), -1.0 / shape) - pareto_mean;
    const auto order = hdr::shuffled_indices(n, 555 + static_cast<std::uint64_t>(trial));
    for (int j = 0; j < n / 20; ++j) x[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = 1e3;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    const double tm = hdr::trimmed_mean(x, alpha);
    if (std::abs(tm) < std::abs(mean)) ++tm_wins;
  }
  CHECK(tm_wins >= 95);
}

TEST_CASE("gradient estimator factory", "[estimators]") {
  const auto geom = hdr::Geometry::vanilla(4);
  std::mt19937_64 eng(3);
  std::normal_distribution<double> val(0.0, 1.0);
  MatrixXd samples(12, 4);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 4; ++j) samples(i, j) = val(eng);

  hdr::EstimatorSpec mean_spec;
  mean_spec.kind = hdr::EstimatorSpec::Kind::mean;
  const VectorXd m = hdr::make_gradient_estimator(mean_spec, geom, 1)(samples);
  CHECK((m.transpose() - samples.colwise().mean()).norm() < 1e-14);

  hdr::EstimatorSpec tm_spec;
  tm_spec.kind = hdr::EstimatorSpec::Kind::trimmed_mean;
  tm_spec.alpha = 0.1;
  const VectorXd t = hdr::make_gradient_estimator(tm_spec, geom, 1)(samples);
  CHECK((t - hdr::coordinatewise_trimmed_mean(samples, 0.1)).norm() == 0.0);

  hdr::EstimatorSpec bad;
  bad.kind = hdr::EstimatorSpec::Kind::coord_mom;
  bad.blocks = 0;
  CHECK_THROWS_AS(hdr::validate(bad, 12), hdr::config_error);
}
