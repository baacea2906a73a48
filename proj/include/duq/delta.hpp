#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "duq/spectral.hpp"

namespace duq::delta {

enum class EstimatorKind { hessian, opg, sandwich };

const char* to_string(EstimatorKind kind);

/// Per-input epistemic uncertainty: class variances with their worst-case
/// approximation error, the same in standard deviations, and the scalar
/// score used for ranking.
struct UncertaintyReport {
  std::int64_t input_id = -1;
  EstimatorKind kind = EstimatorKind::hessian;
  int k = 0;
  Eigen::VectorXd variance;        // per class
  Eigen::VectorXd variance_error;  // worst-case bound per class
  Eigen::VectorXd sd;
  Eigen::VectorXd sd_error;
  double score = 0.0;
  double score_error = 0.0;
  bool clamped = false;  // a sqrt argument fell below zero and was clamped
};

struct ScoreResult {
  double score;
  double error;
  bool clamped;
};

/// score = sqrt(sum of class variances); the error propagates the
/// per-class bounds through the same square root.
ScoreResult uncertainty_score(const Eigen::VectorXd& variance,
                              const Eigen::VectorXd& variance_error);

/// Covariance-level uncertainty for the hessian or opg estimator:
///   var = (1/N) [ rowdiag(B L^-1 B^T) + (rowdiag(F F^T) - rowdiag(B B^T)) / lambda_tilde ]
/// with B = F Q. The bracketed complement term makes the approximation
/// full rank; its weight by eps_lambda gives the worst-case error.
UncertaintyReport predict_uncertainty(const spectral::SpectralBundle& bundle,
                                      const RowMatrixXd& f,
                                      std::int64_t input_id = -1);

/// Only the computed-eigenpair term of the variance (rank-K covariance);
/// never exceeds the full-rank value.
Eigen::VectorXd lowrank_uncertainty(const spectral::SpectralBundle& bundle,
                                    const RowMatrixXd& f);

/// K x K cross products between the two bundle bases, computed once and
/// shared across inputs.
struct SandwichCross {
  Eigen::MatrixXd m;  // Q_H^T Q_G

  /// Largest singular value; at most 1 for orthonormal bases.
  double spectral_norm() const;
};

SandwichCross make_sandwich_cross(const spectral::SpectralBundle& hessian,
                                  const spectral::SpectralBundle& opg);

/// Sandwich estimator H~^-1 G~ H~^-1 evaluated in factored form: only
/// F Q_H, F Q_G, rowdiag(F F^T) and the K x K cross matrix enter; nothing
/// of size P x P is formed.
UncertaintyReport predict_uncertainty_sandwich(
    const spectral::SpectralBundle& hessian,
    const spectral::SpectralBundle& opg, const SandwichCross& cross,
    const RowMatrixXd& f, std::int64_t input_id = -1);

enum class RankOrder { asc, desc };

/// Stable sort of report ids by score; ties break toward the lower id.
/// top = 0 returns the full ordering.
std::vector<std::int64_t> rank_by_score(
    std::span<const UncertaintyReport> reports, RankOrder order,
    std::size_t top = 0);

struct RegressionStats {
  double alpha = 0.0;  // intercept
  double beta = 0.0;   // slope
  double r2 = 0.0;     // squared correlation
  std::int64_t n_points = 0;
  double mean_x = 0.0;
};

/// Ordinary least squares of b's per-class sd values on a's, pooled over
/// all reports. Requires matching id sequences.
RegressionStats compare_estimators(std::span<const UncertaintyReport> a,
                                   std::span<const UncertaintyReport> b);

struct FpTpStats {
  std::optional<double> tp_mean_score;
  std::optional<double> fp_mean_score;
  std::int64_t tp_count = 0;
  std::int64_t fp_count = 0;
};

/// Mean scores over correctly (tp) and incorrectly (fp) classified
/// examples. An empty group reports an absent mean, never zero.
FpTpStats fp_tp_split_stats(std::span<const UncertaintyReport> reports,
                            std::span<const int> predicted_class,
                            std::span<const int> true_class);

}  // namespace duq::delta
