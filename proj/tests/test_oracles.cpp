#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "lifenorm/niw.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

TEST_CASE("the spectral norm oracle recovers known values", "[oracles]") {
  Eigen::MatrixXd d(2, 2);
  d << 5.0, 0.0, 0.0, 1.0;
  CHECK(oracle::jacobi_specnorm(d) == Catch::Approx(5.0).epsilon(1e-10));
  CHECK(oracle::jacobi_specnorm(Eigen::MatrixXd::Zero(3, 3)) == 0.0);
  Eigen::MatrixXd mixed(2, 2);
  mixed << 5.0, 0.0, 0.0, -5.0;
  CHECK(oracle::jacobi_specnorm(mixed) ==
        Catch::Approx(5.0).epsilon(1e-10));
  Eigen::MatrixXd negative(2, 2);
  negative << -7.0, 0.0, 0.0, 2.0;
  CHECK(oracle::jacobi_specnorm(negative) ==
        Catch::Approx(7.0).epsilon(1e-10));
}

TEST_CASE("the spectral norm oracle agrees with a dense eigensolver", "[oracles]") {
  auto g = testutil::rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd a = testutil::gaussian(g, 8, 8);
    a = (0.5 * (a + a.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    const double want = es.eigenvalues().cwiseAbs().maxCoeff();
    CHECK(oracle::jacobi_specnorm(a) ==
          Catch::Approx(want).margin(1e-8));
  }
}

TEST_CASE("the batch posterior agrees with the streaming update",
          "[oracles]") {
  auto g = testutil::rng(17);
  const Eigen::Index d = 4;
  const auto state = lifenorm::init_prior(d, 3, 1e-4);
  oracle::NiwParams prior{state.m, state.kappa, state.psi, state.nu};
  const Eigen::MatrixXd samples = testutil::gaussian(g, d, 25);

  const auto got =
      lifenorm::niw_update(state, lifenorm::summarize_batch(samples));
  const auto want = oracle::batch_niw_posterior(prior, samples);
  CHECK(got.kappa == want.kappa);
  CHECK(got.nu == want.nu);
  CHECK(testutil::rel_err(got.m, want.m) < 1e-12);
  CHECK(testutil::rel_err(got.psi, want.psi) < 1e-12);
}

TEST_CASE("the naive covariance matches hand arithmetic", "[oracles]") {
  Eigen::MatrixXd samples(2, 2);
  samples << 1.0, -1.0, 2.0, -2.0;
  const Eigen::MatrixXd cov = oracle::naive_covariance(samples);
  CHECK(cov(0, 0) == Catch::Approx(2.0).epsilon(1e-15));
  CHECK(cov(0, 1) == Catch::Approx(4.0).epsilon(1e-15));
  CHECK(cov(1, 0) == Catch::Approx(4.0).epsilon(1e-15));
  CHECK(cov(1, 1) == Catch::Approx(8.0).epsilon(1e-15));
  CHECK_THROWS_AS(oracle::naive_covariance(samples.leftCols(1)),
                  std::invalid_argument);
}

TEST_CASE("dense projection factors match hand arithmetic", "[oracles]") {
  Eigen::MatrixXd h(2, 1);
  h << 1.0, 0.0;
  Eigen::VectorXd w(1);
  w << 1.0;
  const Eigen::MatrixXd phi = oracle::dense_projection_factors(h, w, 1.0);
  CHECK(phi(0, 0) == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(phi(0, 1) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("the ridge gradient vanishes where it should", "[oracles]") {
  const Eigen::MatrixXd zero =
      oracle::ridge_objective_gradient(Eigen::MatrixXd::Zero(2, 3),
                                       Eigen::MatrixXd::Ones(3, 4),
                                       Eigen::MatrixXd::Zero(2, 4), 7.0);
  CHECK((zero.array() == 0.0).all());

  auto g = testutil::rng(19);
  const Eigen::MatrixXd h = testutil::gaussian(g, 4, 10);
  const Eigen::MatrixXd v = testutil::gaussian(g, 3, 10);
  const Eigen::MatrixXd gram = h * h.transpose();
  const Eigen::MatrixXd best =
      v * h.transpose() * gram.fullPivLu().inverse();
  const Eigen::MatrixXd grad =
      oracle::ridge_objective_gradient(best, h, v, 0.0);
  CHECK(grad.norm() < 1e-8 * std::max(1.0, (v * h.transpose()).norm()));
}

TEST_CASE("the monte carlo helper reports mean and error scale",
          "[oracles]") {
  const auto zero = oracle::monte_carlo_mean(
      [] { return Eigen::VectorXd(Eigen::VectorXd::Zero(3)); }, 100);
  CHECK(zero.mean.norm() == 0.0);
  CHECK(zero.std_error == 0.0);

  auto g = testutil::rng(23);
  std::normal_distribution<double> nd(3.0, 1.0);
  const auto mc = oracle::monte_carlo_mean(
      [&] {
        Eigen::VectorXd x(1);
        x[0] = nd(g);
        return x;
      },
      10000);
  CHECK(std::abs(mc.mean[0] - 3.0) < 3.0 * mc.std_error);
  CHECK(mc.std_error == Catch::Approx(0.01).epsilon(0.3));
}
