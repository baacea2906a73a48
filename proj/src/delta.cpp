#include "duq/delta.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace duq::delta {

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::hessian: return "hessian";
    case EstimatorKind::opg: return "opg";
    case EstimatorKind::sandwich: return "sandwich";
  }
  return "?";
}

namespace {

double sqrt_clamped(double x, bool& clamped) {
  if (x < 0.0) {
    clamped = true;
    return 0.0;
  }
  return std::sqrt(x);
}

void check_sensitivity(const spectral::SpectralBundle& bundle,
                       const RowMatrixXd& f) {
  if (f.cols() != bundle.dim())
    throw std::invalid_argument("predict: sensitivity width != bundle dim");
  if (bundle.n_examples < 1)
    throw std::invalid_argument("predict: bundle has no sample count");
}

void finish_report(UncertaintyReport& rep) {
  const Eigen::Index t = rep.variance.size();
  rep.sd.resize(t);
  rep.sd_error.resize(t);
  for (Eigen::Index m = 0; m < t; ++m) {
    rep.sd[m] = sqrt_clamped(rep.variance[m], rep.clamped);
    const double hi = sqrt_clamped(rep.variance[m] + rep.variance_error[m],
                                   rep.clamped);
    const double lo = sqrt_clamped(rep.variance[m] - rep.variance_error[m],
                                   rep.clamped);
    rep.sd_error[m] = 0.5 * (hi - lo);
  }
  const ScoreResult s = uncertainty_score(rep.variance, rep.variance_error);
  rep.score = s.score;
  rep.score_error = s.error;
  rep.clamped = rep.clamped || s.clamped;
}

}  // namespace

ScoreResult uncertainty_score(const Eigen::VectorXd& variance,
                              const Eigen::VectorXd& variance_error) {
  ScoreResult r{0.0, 0.0, false};
  const double total = variance.sum();
  r.score = sqrt_clamped(total, r.clamped);
  const double hi = sqrt_clamped(total + variance_error.sum(), r.clamped);
  const double lo = sqrt_clamped(total - variance_error.sum(), r.clamped);
  r.error = 0.5 * (hi - lo);
  return r;
}

UncertaintyReport predict_uncertainty(const spectral::SpectralBundle& bundle,
                                      const RowMatrixXd& f,
                                      std::int64_t input_id) {
  check_sensitivity(bundle, f);
  const double invn = 1.0 / static_cast<double>(bundle.n_examples);

  const Eigen::MatrixXd b = f * bundle.q;  // T x K
  const Eigen::VectorXd row_norms = f.rowwise().squaredNorm();
  const Eigen::VectorXd captured = b.rowwise().squaredNorm();
  const Eigen::VectorXd left = (b.array().square().rowwise() /
                                bundle.eigenvalues.transpose().array())
                                   .rowwise()
                                   .sum()
                                   .matrix();

  UncertaintyReport rep;
  rep.input_id = input_id;
  rep.kind = bundle.kind == spectral::BundleKind::hessian
                 ? EstimatorKind::hessian
                 : EstimatorKind::opg;
  rep.k = bundle.k;

  const Eigen::Index t = f.rows();
  rep.variance.resize(t);
  rep.variance_error.resize(t);
  for (Eigen::Index m = 0; m < t; ++m) {
    const double complement = std::max(row_norms[m] - captured[m], 0.0);
    rep.variance[m] = invn * (left[m] + complement / bundle.lambda_tilde);
    rep.variance_error[m] = bundle.eps_lambda * invn * complement;
  }
  finish_report(rep);
  return rep;
}

Eigen::VectorXd lowrank_uncertainty(const spectral::SpectralBundle& bundle,
                                    const RowMatrixXd& f) {
  check_sensitivity(bundle, f);
  const double invn = 1.0 / static_cast<double>(bundle.n_examples);
  const Eigen::MatrixXd b = f * bundle.q;
  return invn * (b.array().square().rowwise() /
                 bundle.eigenvalues.transpose().array())
                    .rowwise()
                    .sum()
                    .matrix();
}

double SandwichCross::spectral_norm() const {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()[0];
}

SandwichCross make_sandwich_cross(const spectral::SpectralBundle& hessian,
                                  const spectral::SpectralBundle& opg) {
  if (hessian.dim() != opg.dim())
    throw std::invalid_argument("sandwich: bundle dimension mismatch");
  return SandwichCross{hessian.q.transpose() * opg.q};
}

UncertaintyReport predict_uncertainty_sandwich(
    const spectral::SpectralBundle& hb, const spectral::SpectralBundle& gb,
    const SandwichCross& cross, const RowMatrixXd& f, std::int64_t input_id) {
  check_sensitivity(hb, f);
  check_sensitivity(gb, f);
  if (hb.n_examples != gb.n_examples || hb.lambda != gb.lambda)
    throw std::invalid_argument("sandwich: bundles disagree on N or lambda");
  if (cross.m.rows() != hb.k || cross.m.cols() != gb.k)
    throw std::invalid_argument("sandwich: cross matrix shape mismatch");

  const double invn = 1.0 / static_cast<double>(hb.n_examples);
  const double lambda = hb.lambda;
  const double lkh = hb.lambda_k;
  const double lkg = gb.lambda_k;
  const double ht = hb.lambda_tilde;  // harmonic gap value for H
  const double gt = gb.lambda_tilde;  // harmonic gap value for G

  const Eigen::MatrixXd bh = f * hb.q;  // T x K_H
  const Eigen::MatrixXd bg = f * gb.q;  // T x K_G
  const Eigen::VectorXd row_norms = f.rowwise().squaredNorm();

  const Eigen::MatrixXd bh_inv =
      (bh.array().rowwise() / hb.eigenvalues.transpose().array()).matrix();
  const Eigen::MatrixXd u = bh_inv * cross.m;   // F H_L^-1 Q_G
  const Eigen::MatrixXd z = bg - bh * cross.m;  // F (I - P_H) Q_G
  const auto gvals = gb.eigenvalues.transpose().array();

  // diagonal contributions of the eight product terms, per class
  const Eigen::VectorXd t_core =
      (u.array().square().rowwise() * gvals).rowwise().sum().matrix();
  const Eigen::VectorXd t_left =
      bh_inv.rowwise().squaredNorm() - u.rowwise().squaredNorm();
  const Eigen::VectorXd t_mixed =
      2.0 * (z.array() * u.array()).rowwise().sum().matrix();
  const Eigen::VectorXd t_mixed_g =
      2.0 *
      ((z.array() * u.array()).rowwise() * gvals).rowwise().sum().matrix();
  const Eigen::VectorXd t_outer =
      (z.array().square().rowwise() * gvals).rowwise().sum().matrix();
  Eigen::VectorXd t_comp =
      row_norms - bh.rowwise().squaredNorm() - z.rowwise().squaredNorm();
  t_comp = t_comp.cwiseMax(0.0);

  UncertaintyReport rep;
  rep.input_id = input_id;
  rep.kind = EstimatorKind::sandwich;
  rep.k = hb.k;

  const Eigen::Index t = f.rows();
  rep.variance.resize(t);
  rep.variance_error.resize(t);
  for (Eigen::Index m = 0; m < t; ++m) {
    rep.variance[m] =
        invn * (t_core[m] + gt * t_left[m] + t_mixed_g[m] / ht -
                gt / ht * t_mixed[m] + t_outer[m] / (ht * ht) +
                gt / (ht * ht) * t_comp[m]);
    rep.variance_error[m] =
        0.5 * invn *
        ((lkg - lambda) * t_left[m] +
         (1.0 / lambda - 1.0 / lkh) * t_mixed_g[m] -
         (lkg / lambda - lambda / lkh) * t_mixed[m] +
         (1.0 / (lambda * lambda) - 1.0 / (lkh * lkh)) * t_outer[m] +
         (lkg / (lambda * lambda) - lambda / (lkh * lkh)) * t_comp[m]);
  }
  finish_report(rep);
  return rep;
}

std::vector<std::int64_t> rank_by_score(
    std::span<const UncertaintyReport> reports, RankOrder order,
    std::size_t top) {
  std::vector<const UncertaintyReport*> ptrs;
  ptrs.reserve(reports.size());
  for (const auto& r : reports) ptrs.push_back(&r);
  std::stable_sort(ptrs.begin(), ptrs.end(),
                   [order](const auto* a, const auto* b) {
                     if (a->score != b->score)
                       return order == RankOrder::desc ? a->score > b->score
                                                       : a->score < b->score;
                     return a->input_id < b->input_id;
                   });
  if (top > 0 && top < ptrs.size()) ptrs.resize(top);
  std::vector<std::int64_t> ids;
  ids.reserve(ptrs.size());
  for (const auto* r : ptrs) ids.push_back(r->input_id);
  return ids;
}

RegressionStats compare_estimators(std::span<const UncertaintyReport> a,
                                   std::span<const UncertaintyReport> b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("compare: report batches differ in size");

  double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].input_id != b[i].input_id)
      throw std::invalid_argument("compare: report id sequences differ");
    if (a[i].sd.size() != b[i].sd.size())
      throw std::invalid_argument("compare: class count mismatch");
    for (Eigen::Index m = 0; m < a[i].sd.size(); ++m) {
      const double x = a[i].sd[m], y = b[i].sd[m];
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
      ++n;
    }
  }

  const double dn = static_cast<double>(n);
  const double var_x = sxx - sx * sx / dn;
  const double var_y = syy - sy * sy / dn;
  const double cov = sxy - sx * sy / dn;
  if (var_x <= 0.0)
    throw std::invalid_argument("compare: zero variance in the reference batch");

  RegressionStats stats;
  stats.n_points = n;
  stats.mean_x = sx / dn;
  stats.beta = cov / var_x;
  stats.alpha = (sy - stats.beta * sx) / dn;
  stats.r2 = var_y > 0.0 ? (cov * cov) / (var_x * var_y) : 1.0;
  return stats;
}

FpTpStats fp_tp_split_stats(std::span<const UncertaintyReport> reports,
                            std::span<const int> predicted_class,
                            std::span<const int> true_class) {
  if (reports.size() != predicted_class.size() ||
      reports.size() != true_class.size())
    throw std::invalid_argument("fp/tp stats: length mismatch");

  double tp_sum = 0.0, fp_sum = 0.0;
  FpTpStats stats;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (predicted_class[i] == true_class[i]) {
      tp_sum += reports[i].score;
      ++stats.tp_count;
    } else {
      fp_sum += reports[i].score;
      ++stats.fp_count;
    }
  }
  if (stats.tp_count > 0) stats.tp_mean_score = tp_sum / stats.tp_count;
  if (stats.fp_count > 0) stats.fp_mean_score = fp_sum / stats.fp_count;
  return stats;
}

}  // namespace duq::delta
