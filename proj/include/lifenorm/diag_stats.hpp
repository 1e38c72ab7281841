#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "errors.hpp"

namespace lifenorm {

// Per-dimension running mean and sum of squared deviations, merged one batch
// at a time. Columns of a batch are samples. ssd relates to the running
// standard deviation through ssd = (count - 1) * sigma^2.
class DiagStats {
 public:
  DiagStats() = default;

  explicit DiagStats(Eigen::Index dim)
      : mean_(Eigen::VectorXd::Zero(dim)), ssd_(Eigen::VectorXd::Zero(dim)) {}

  static DiagStats from_parts(Eigen::VectorXd mean, Eigen::VectorXd ssd,
                              std::int64_t count) {
    if (mean.size() != ssd.size())
      throw DimensionError("DiagStats: mean and ssd sizes differ");
    if (count < 0) throw DimensionError("DiagStats: negative count");
    if ((ssd.array() < 0.0).any())
      throw NumericalError("DiagStats: ssd must be nonnegative");
    DiagStats s;
    s.mean_ = std::move(mean);
    s.ssd_ = std::move(ssd);
    s.count_ = count;
    return s;
  }

  void update(const Eigen::Ref<const Eigen::MatrixXd>& batch) {
    if (batch.rows() != mean_.size())
      throw DimensionError("DiagStats::update: batch dimension mismatch");
    if (batch.cols() == 0) throw DimensionError("DiagStats::update: empty batch");
    const double n = static_cast<double>(batch.cols());
    const double n_prev = static_cast<double>(count_);
    const double n_total = n_prev + n;
    const Eigen::VectorXd batch_mean = batch.rowwise().mean();
    // Within-batch sum of squared deviations, n * Var(batch).
    const Eigen::VectorXd within =
        (batch.colwise() - batch_mean).array().square().rowwise().sum();
    const Eigen::VectorXd delta = batch_mean - mean_;
    mean_ += (n / n_total) * delta;
    ssd_ += within + (n_prev * n / n_total) * delta.array().square().matrix();
    count_ += batch.cols();
  }

  // Sample standard deviation per dimension, floored elementwise. With fewer
  // than two samples the variance is undefined and the floor is returned.
  Eigen::VectorXd stddev(double floor) const {
    if (count_ < 2)
      return Eigen::VectorXd::Constant(mean_.size(), floor);
    const double denom = static_cast<double>(count_ - 1);
    return (ssd_ / denom).array().max(0.0).sqrt().max(floor);
  }

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& ssd() const { return ssd_; }
  std::int64_t count() const { return count_; }
  Eigen::Index dim() const { return mean_.size(); }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd ssd_;
  std::int64_t count_ = 0;
};

}  // namespace lifenorm
