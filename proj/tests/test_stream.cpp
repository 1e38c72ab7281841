#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "lifenorm/stream.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using lifenorm::EditBatch;
using lifenorm::HoldoutItem;
using lifenorm::LinearTeacherParams;
using lifenorm::LinearTeacherSource;
using lifenorm::ScheduledDriftParams;
using lifenorm::ScheduledDriftSource;

TEST_CASE("a stationary schedule never moves the distribution", "[stream]") {
  ScheduledDriftParams p;
  p.mu0_norm = 1.7;
  ScheduledDriftSource src(4, 6, p, testutil::rng(11));
  const auto first = src.next_batch(3);
  REQUIRE(first.truth.mu.has_value());
  REQUIRE(first.truth.sigma.has_value());
  CHECK(first.truth.mu->norm() == Catch::Approx(1.7).epsilon(1e-12));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*first.truth.sigma);
  CHECK(es.eigenvalues().minCoeff() >= p.sigma_min - 1e-12);
  CHECK(es.eigenvalues().maxCoeff() <= p.sigma_max + 1e-12);
  for (int t = 0; t < 10; ++t) {
    const auto draw = src.next_batch(3);
    CHECK((draw.truth.mu->array() == first.truth.mu->array()).all());
    CHECK((draw.truth.sigma->array() == first.truth.sigma->array()).all());
  }
}

TEST_CASE("mean drift follows the schedule exactly", "[stream]") {
  ScheduledDriftParams p;
  p.c_mu = 0.3;
  p.eps_mu = 0.5;
  p.step_offset = 3;
  auto init_rng = testutil::rng(21);
  const auto init = lifenorm::draw_scheduled_init(5, p, init_rng);
  ScheduledDriftSource src(7, p, init, testutil::rng(22));
  Eigen::VectorXd prev = init.mu0;
  for (int t = 1; t <= 50; ++t) {
    const auto draw = src.next_batch(2);
    const double want =
        p.c_mu * std::pow(static_cast<double>(p.step_offset + t),
                          -(1.0 + p.eps_mu));
    const double got = (*draw.truth.mu - prev).norm();
    CHECK(got == Catch::Approx(want).epsilon(1e-12));
    prev = *draw.truth.mu;
  }
}

TEST_CASE("covariance drift respects the budget and spectrum bounds",
          "[stream]") {
  ScheduledDriftParams p;
  p.c_sigma = 0.2;
  p.eps_sigma = 0.7;
  p.step_offset = 3;
  p.sigma_min = 0.05;
  p.sigma_max = 3.0;
  auto init_rng = testutil::rng(23);
  const auto init = lifenorm::draw_scheduled_init(4, p, init_rng);
  ScheduledDriftSource src(5, p, init, testutil::rng(24));
  Eigen::MatrixXd prev = init.sigma0;
  for (int t = 1; t <= 50; ++t) {
    const auto draw = src.next_batch(2);
    const double budget =
        p.c_sigma * std::pow(static_cast<double>(p.step_offset + t),
                             -(1.0 + p.eps_sigma));
    const double moved =
        oracle::jacobi_specnorm(*draw.truth.sigma - prev);
    CHECK(moved <= budget * (1.0 + 1e-12));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*draw.truth.sigma);
    CHECK(es.eigenvalues().minCoeff() >= p.sigma_min - 1e-10);
    CHECK(es.eigenvalues().maxCoeff() <= p.sigma_max + 1e-10);
    prev = *draw.truth.sigma;
  }
}

TEST_CASE("equal seeds replay the identical stream", "[stream]") {
  ScheduledDriftParams p;
  p.c_mu = 0.4;
  p.c_sigma = 0.1;
  ScheduledDriftSource a(3, 5, p, testutil::rng(31));
  ScheduledDriftSource b(3, 5, p, testutil::rng(31));
  ScheduledDriftSource c(3, 5, p, testutil::rng(32));
  bool any_diff = false;
  for (int t = 0; t < 5; ++t) {
    const auto da = a.next_batch(4);
    const auto db = b.next_batch(4);
    const auto dc = c.next_batch(4);
    CHECK((da.batch.v_raw.array() == db.batch.v_raw.array()).all());
    CHECK((da.batch.h.array() == db.batch.h.array()).all());
    CHECK((da.truth.mu->array() == db.truth.mu->array()).all());
    any_diff = any_diff || da.batch.v_raw != dc.batch.v_raw;
  }
  CHECK(any_diff);
}

TEST_CASE("two sources can share a start but sample independently",
          "[stream]") {
  ScheduledDriftParams p;  // stationary, so the truth stays shared
  auto init_rng_a = testutil::rng(41);
  auto init_rng_b = testutil::rng(41);
  const auto init_a = lifenorm::draw_scheduled_init(3, p, init_rng_a);
  const auto init_b = lifenorm::draw_scheduled_init(3, p, init_rng_b);
  ScheduledDriftSource a(4, p, init_a, testutil::rng(42));
  ScheduledDriftSource b(4, p, init_b, testutil::rng(43));
  const auto da = a.next_batch(6);
  const auto db = b.next_batch(6);
  CHECK((da.truth.mu->array() == db.truth.mu->array()).all());
  CHECK((da.truth.sigma->array() == db.truth.sigma->array()).all());
  CHECK(da.batch.v_raw != db.batch.v_raw);
}

TEST_CASE("batches have the advertised shapes and centered hidden noise",
          "[stream]") {
  ScheduledDriftParams p;
  ScheduledDriftSource src(5, 3, p, testutil::rng(51));
  const auto draw = src.next_batch(2000);
  CHECK(draw.batch.v_raw.rows() == 5);
  CHECK(draw.batch.v_raw.cols() == 2000);
  CHECK(draw.batch.h.rows() == 3);
  CHECK(draw.batch.h.cols() == 2000);
  CHECK_FALSE(draw.batch.targets.has_value());
  CHECK(draw.batch.h.rowwise().mean().cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("scheduled construction validates its parameters", "[stream]") {
  ScheduledDriftParams p;
  auto g = testutil::rng(55);
  CHECK_THROWS_AS(ScheduledDriftSource(0, 3, p, testutil::rng(1)),
                  lifenorm::ConfigError);
  CHECK_THROWS_AS(ScheduledDriftSource(3, 0, p, testutil::rng(1)),
                  lifenorm::ConfigError);
  ScheduledDriftParams bad_min = p;
  bad_min.sigma_min = 0.0;
  CHECK_THROWS_AS(ScheduledDriftSource(3, 3, bad_min, testutil::rng(1)),
                  lifenorm::ConfigError);
  ScheduledDriftParams crossed = p;
  crossed.sigma_max = 0.5 * crossed.sigma_min;
  CHECK_THROWS_AS(ScheduledDriftSource(3, 3, crossed, testutil::rng(1)),
                  lifenorm::ConfigError);
  ScheduledDriftParams neg = p;
  neg.c_mu = -0.1;
  CHECK_THROWS_AS(ScheduledDriftSource(3, 3, neg, testutil::rng(1)),
                  lifenorm::ConfigError);
  ScheduledDriftParams offset = p;
  offset.step_offset = -1;
  CHECK_THROWS_AS(ScheduledDriftSource(3, 3, offset, testutil::rng(1)),
                  lifenorm::ConfigError);
  const auto init = lifenorm::draw_scheduled_init(3, p, g);
  auto wrong = init;
  wrong.sigma0 = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(ScheduledDriftSource(3, p, wrong, testutil::rng(1)),
                  lifenorm::DimensionError);
  ScheduledDriftSource ok(3, 3, p, testutil::rng(1));
  CHECK_THROWS_AS(ok.next_batch(0), lifenorm::DimensionError);
}

TEST_CASE("teacher batches satisfy the gradient identity", "[stream]") {
  LinearTeacherParams p;
  LinearTeacherSource src(4, 7, p, testutil::rng(61));
  const auto draw = src.next_batch(20);
  REQUIRE(draw.batch.targets.has_value());
  const Eigen::MatrixXd recon =
      src.w_edit() * draw.batch.h - *draw.batch.targets;
  CHECK((recon - draw.batch.v_raw).cwiseAbs().maxCoeff() < 1e-14);
  const Eigen::VectorXd want_mu = src.w_edit() * src.mu_h() - src.b_star();
  CHECK((*draw.truth.mu - want_mu).cwiseAbs().maxCoeff() < 1e-14);
  const Eigen::MatrixXd want_sigma =
      src.w_edit() * src.w_edit().transpose() +
      p.noise_std * p.noise_std * Eigen::MatrixXd::Identity(4, 4);
  CHECK((*draw.truth.sigma - want_sigma).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a zero teacher emits exactly zero gradients", "[stream]") {
  LinearTeacherSource src(Eigen::MatrixXd::Zero(3, 5),
                          Eigen::VectorXd::Ones(5),
                          Eigen::VectorXd::Zero(3), 0.0, testutil::rng(63));
  const auto draw = src.next_batch(8);
  CHECK((draw.batch.v_raw.array() == 0.0).all());
  CHECK((draw.batch.targets->array() == 0.0).all());
  CHECK((draw.truth.mu->array() == 0.0).all());
}

TEST_CASE("the empirical gradient mean matches the reported truth",
          "[stream]") {
  LinearTeacherParams p;
  LinearTeacherSource src(4, 6, p, testutil::rng(65));
  const Eigen::VectorXd want = src.true_mean();
  const auto mc = oracle::monte_carlo_mean(
      [&] { return Eigen::VectorXd(src.next_batch(1).batch.v_raw.col(0)); },
      5000);
  CHECK((mc.mean - want).norm() < 3.0 * mc.std_error);
}

TEST_CASE("updates move the teacher's true mean predictably", "[stream]") {
  auto g = testutil::rng(67);
  LinearTeacherParams p;
  LinearTeacherSource src(4, 6, p, testutil::rng(68));

  const Eigen::MatrixXd w_before = src.w_edit();
  src.apply_update(Eigen::MatrixXd::Zero(4, 6));
  CHECK((src.w_edit().array() == w_before.array()).all());

  const Eigen::VectorXd mean_before = src.true_mean();
  const Eigen::VectorXd u = testutil::gaussian_vec(g, 4);
  const Eigen::MatrixXd rank_one =
      u * src.mu_h().transpose() / src.mu_h().squaredNorm();
  src.apply_update(rank_one);
  CHECK((src.true_mean() - mean_before - u).cwiseAbs().maxCoeff() < 1e-12);

  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd before = src.true_mean();
    const Eigen::MatrixXd delta = testutil::gaussian(g, 4, 6, 0.3);
    src.apply_update(delta);
    CHECK((src.true_mean() - before).norm() <=
          delta.norm() * src.mu_h().norm() + 1e-12);
  }

  CHECK_THROWS_AS(src.apply_update(Eigen::MatrixXd::Zero(4, 5)),
                  lifenorm::DimensionError);
  CHECK(src.editable());
  REQUIRE(src.parameter() != nullptr);
  CHECK(src.parameter() == &src.w_edit());
}

TEST_CASE("per-column residual change is bounded by the edit size",
          "[stream]") {
  auto g = testutil::rng(69);
  LinearTeacherSource src(3, 5, LinearTeacherParams{}, testutil::rng(70));
  const auto draw = src.next_batch(12);
  const Eigen::MatrixXd w = src.w_edit();
  const Eigen::MatrixXd delta = testutil::gaussian(g, 3, 5, 0.2);
  for (Eigen::Index i = 0; i < 12; ++i) {
    const double shift = (delta * draw.batch.h.col(i)).norm();
    CHECK(shift <= delta.norm() * draw.batch.h.col(i).norm() + 1e-12);
    const double before =
        (w * draw.batch.h.col(i) - draw.batch.targets->col(i)).norm();
    const double after =
        ((w + delta) * draw.batch.h.col(i) - draw.batch.targets->col(i))
            .norm();
    CHECK(std::abs(after - before) <= shift + 1e-12);
  }
}

TEST_CASE("efficacy and retention report edit quality", "[stream]") {
  auto g = testutil::rng(71);
  const Eigen::MatrixXd w = testutil::gaussian(g, 3, 4);
  EditBatch batch;
  batch.h = testutil::gaussian(g, 4, 6);
  batch.targets = testutil::gaussian(g, 3, 6);
  batch.v_raw = w * batch.h - *batch.targets;

  std::vector<HoldoutItem> holdout;
  for (int i = 0; i < 5; ++i)
    holdout.push_back({testutil::gaussian_vec(g, 4), testutil::gaussian_vec(g, 3)});

  SECTION("a no-op edit fixes nothing and loses nothing") {
    const auto out = lifenorm::efficacy_retention(w, w, batch, holdout);
    REQUIRE(out.efficacy.has_value());
    REQUIRE(out.retention.has_value());
    CHECK(*out.efficacy == 0.0);
    CHECK(*out.retention == 1.0);
  }

  SECTION("an interpolating edit fixes its own sample") {
    EditBatch single;
    single.h = batch.h.leftCols(1);
    single.targets = batch.targets->leftCols(1);
    single.v_raw = w * single.h - *single.targets;
    const Eigen::MatrixXd w_fixed =
        w + (*single.targets - w * single.h) * single.h.transpose() /
                single.h.squaredNorm();
    const auto out = lifenorm::efficacy_retention(w, w_fixed, single, {});
    REQUIRE(out.efficacy.has_value());
    CHECK(*out.efficacy == 1.0);
    CHECK_FALSE(out.retention.has_value());
  }

  SECTION("absent targets leave efficacy unset") {
    EditBatch untargeted;
    untargeted.h = batch.h;
    untargeted.v_raw = batch.v_raw;
    const auto out = lifenorm::efficacy_retention(w, w, untargeted, holdout);
    CHECK_FALSE(out.efficacy.has_value());
    CHECK(out.retention.has_value());
  }

  SECTION("mismatched holdout shapes are rejected") {
    std::vector<HoldoutItem> bad = holdout;
    bad[2].h = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(lifenorm::efficacy_retention(w, w, batch, bad),
                    lifenorm::DimensionError);
  }
}
