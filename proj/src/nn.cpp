#include "duq/nn.hpp"

#include <cmath>
#include <memory>

#include "duq/rng.hpp"

namespace duq {

void Dataset::validate() const {
  if (inputs.rows() != targets.rows())
    throw std::invalid_argument("dataset: inputs/targets row count mismatch");
  if (inputs.rows() < 1) throw std::invalid_argument("dataset: empty");
  for (Eigen::Index n = 0; n < targets.rows(); ++n) {
    double sum = 0.0;
    for (Eigen::Index m = 0; m < targets.cols(); ++m) {
      const double t = targets(n, m);
      if (t != 0.0 && t != 1.0)
        throw std::invalid_argument("dataset: target entries must be 0 or 1");
      sum += t;
    }
    if (sum != 1.0)
      throw std::invalid_argument("dataset: target rows must sum to 1");
  }
}

namespace nn {

void NetworkConfig::validate() const {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("network: need at least input and output layer");
  for (int t : layer_sizes)
    if (t < 1) throw std::invalid_argument("network: layer sizes must be >= 1");
  if (l2_rate < 0.0)
    throw std::invalid_argument("network: l2_rate must be nonnegative");
}

std::int64_t param_count(const NetworkConfig& config) {
  config.validate();
  std::int64_t p = 0;
  for (std::size_t l = 1; l < config.layer_sizes.size(); ++l) {
    const std::int64_t rows = config.layer_sizes[l];
    const std::int64_t cols = config.layer_sizes[l - 1];
    p += rows * cols + rows;
  }
  return p;
}

ParamLayout::ParamLayout(const NetworkConfig& config) {
  config.validate();
  const int L = config.depth();
  w_off_.resize(L - 1);
  b_off_.resize(L - 1);
  rows_.resize(L - 1);
  cols_.resize(L - 1);
  std::int64_t off = 0;
  for (int l = 0; l < L - 1; ++l) {
    rows_[l] = config.layer_sizes[l + 1];
    cols_[l] = config.layer_sizes[l];
    w_off_[l] = off;
    off += static_cast<std::int64_t>(rows_[l]) * cols_[l];
    b_off_[l] = off;
    off += rows_[l];
  }
  total_ = off;
}

Eigen::VectorXd init_params(const NetworkConfig& config, std::uint64_t seed) {
  ParamLayout layout(config);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(layout.total());
  Rng rng(seed);
  for (int l = 0; l < layout.layers(); ++l) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(layout.cols(l)));
    auto W = layout.weight(w, l);
    for (int i = 0; i < W.rows(); ++i)
      for (int j = 0; j < W.cols(); ++j) W(i, j) = sd * rng.normal();
    // biases stay zero
  }
  return w;
}

namespace {

void softmax_rows(Eigen::MatrixXd& Z) {
  for (Eigen::Index n = 0; n < Z.rows(); ++n) {
    const double m = Z.row(n).maxCoeff();
    Z.row(n) = (Z.row(n).array() - m).exp().matrix();
    Z.row(n) /= Z.row(n).sum();
  }
}

// Mean cross-entropy of logits Z against one-hot rows Y, via log-sum-exp.
double mean_cross_entropy(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& Y) {
  double total = 0.0;
  for (Eigen::Index n = 0; n < Z.rows(); ++n) {
    const double m = Z.row(n).maxCoeff();
    const double lse = m + std::log((Z.row(n).array() - m).exp().sum());
    total += lse - Z.row(n).dot(Y.row(n));
  }
  return total / static_cast<double>(Z.rows());
}

void check_input_dim(const NetworkConfig& config, Eigen::Index got) {
  if (got != config.input_dim())
    throw std::invalid_argument("input dimension does not match network");
}

void check_param_dim(const ParamLayout& layout, Eigen::Index got) {
  if (got != layout.total())
    throw std::invalid_argument("parameter vector length does not match network");
}

}  // namespace

namespace detail {

// Batched forward state: activations X[l] (X[0] = inputs), hidden
// preactivations and output logits in Z, probabilities, and the backward
// seeds D[l] = d(mean data cost)/dZ[l]. RX/RD are the tangent sweeps.
struct BatchCache {
  std::vector<Eigen::MatrixXd> X;
  std::vector<Eigen::MatrixXd> Z;
  Eigen::MatrixXd probs;
  std::vector<Eigen::MatrixXd> D;
  std::vector<Eigen::MatrixXd> RX, RD;
};

}  // namespace detail

namespace {

using detail::BatchCache;

void run_forward(const ParamLayout& layout, const Eigen::VectorXd& w,
                 const Eigen::MatrixXd& X0, BatchCache& c) {
  const int nl = layout.layers();
  c.X.resize(nl);
  c.Z.resize(nl);
  c.X[0] = X0;
  for (int l = 0; l < nl; ++l) {
    Eigen::MatrixXd Zl = c.X[l] * layout.weight(w, l).transpose();
    Zl.rowwise() += layout.bias(w, l).transpose();
    c.Z[l] = Zl;
    if (l + 1 < nl) {
      c.X[l + 1] = Zl.cwiseMax(0.0);
    } else {
      softmax_rows(Zl);
      c.probs = std::move(Zl);
    }
  }
}

void run_backward_seeds(const ParamLayout& layout, const Eigen::VectorXd& w,
                        const Eigen::MatrixXd& Y, BatchCache& c) {
  const int nl = layout.layers();
  const double invn = 1.0 / static_cast<double>(Y.rows());
  c.D.resize(nl);
  c.D[nl - 1] = (c.probs - Y) * invn;
  for (int l = nl - 1; l >= 1; --l)
    c.D[l - 1] = ((c.D[l] * layout.weight(w, l)).array() *
                  (c.Z[l - 1].array() > 0.0).cast<double>())
                     .matrix();
}

void accumulate_param_grad(const ParamLayout& layout, const BatchCache& c,
                           Eigen::VectorXd& g_out) {
  for (int l = 0; l < layout.layers(); ++l) {
    layout.weight(g_out, l) = c.D[l].transpose() * c.X[l];
    layout.bias(g_out, l) = c.D[l].colwise().sum().transpose();
  }
}

// Tangent sweep through forward and backward at direction v. Everything
// independent of v comes from the cache; the result is the data part of
// H*v. The l2 term is added by the caller.
void run_hvp(const ParamLayout& layout, const Eigen::VectorXd& w,
             const Eigen::VectorXd& v, Eigen::Index n_examples, BatchCache& c,
             Eigen::VectorXd& out) {
  const int nl = layout.layers();
  const double invn = 1.0 / static_cast<double>(n_examples);

  c.RX.resize(nl);
  c.RD.resize(nl);

  // tangent forward; the input has no tangent, so the l = 0 term is skipped
  Eigen::MatrixXd Rout;  // tangent of the probabilities
  for (int l = 0; l < nl; ++l) {
    Eigen::MatrixXd RZ = c.X[l] * layout.weight(v, l).transpose();
    if (l > 0) RZ.noalias() += c.RX[l] * layout.weight(w, l).transpose();
    RZ.rowwise() += layout.bias(v, l).transpose();
    if (l + 1 < nl) {
      c.RX[l + 1] =
          (RZ.array() * (c.Z[l].array() > 0.0).cast<double>()).matrix();
    } else {
      // softmax Jacobian: Rp = p .* Rz - p .* rowsum(p .* Rz)
      Eigen::MatrixXd PRZ = (c.probs.array() * RZ.array()).matrix();
      const Eigen::VectorXd s = PRZ.rowwise().sum();
      Rout = PRZ - (c.probs.array().colwise() * s.array()).matrix();
    }
  }

  // tangent backward
  c.RD[nl - 1] = Rout * invn;
  for (int l = nl - 1; l >= 1; --l) {
    Eigen::MatrixXd pre = c.RD[l] * layout.weight(w, l);
    pre.noalias() += c.D[l] * layout.weight(v, l);
    c.RD[l - 1] =
        (pre.array() * (c.Z[l - 1].array() > 0.0).cast<double>()).matrix();
  }

  out.setZero(layout.total());
  for (int l = 0; l < nl; ++l) {
    auto HW = layout.weight(out, l);
    HW = c.RD[l].transpose() * c.X[l];
    if (l > 0) HW.noalias() += c.D[l].transpose() * c.RX[l];
    layout.bias(out, l) = c.RD[l].colwise().sum().transpose();
  }
}

}  // namespace

Eigen::MatrixXd forward_batch(const NetworkConfig& config,
                              const Eigen::VectorXd& w,
                              const Eigen::MatrixXd& X) {
  ParamLayout layout(config);
  check_param_dim(layout, w.size());
  check_input_dim(config, X.cols());
  BatchCache c;
  run_forward(layout, w, X, c);
  return std::move(c.probs);
}

Eigen::VectorXd forward(const NetworkConfig& config, const Eigen::VectorXd& w,
                        const Eigen::VectorXd& x) {
  Eigen::MatrixXd X = x.transpose();
  return forward_batch(config, w, X).row(0).transpose();
}

double cost(const NetworkConfig& config, const Eigen::VectorXd& w,
            const Dataset& data) {
  ParamLayout layout(config);
  check_param_dim(layout, w.size());
  check_input_dim(config, data.inputs.cols());
  BatchCache c;
  run_forward(layout, w, data.inputs, c);
  return mean_cross_entropy(c.Z.back(), data.targets) +
         0.5 * config.l2_rate * w.squaredNorm();
}

double data_cost_and_grad(const NetworkConfig& config, const ParamLayout& layout,
                          const Eigen::VectorXd& w, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Y, Eigen::VectorXd& g_out) {
  (void)config;
  BatchCache c;
  run_forward(layout, w, X, c);
  run_backward_seeds(layout, w, Y, c);
  g_out.setZero(layout.total());
  accumulate_param_grad(layout, c, g_out);
  return mean_cross_entropy(c.Z.back(), Y);
}

Eigen::VectorXd grad(const NetworkConfig& config, const Eigen::VectorXd& w,
                     const Dataset& data) {
  ParamLayout layout(config);
  check_param_dim(layout, w.size());
  check_input_dim(config, data.inputs.cols());
  Eigen::VectorXd g;
  data_cost_and_grad(config, layout, w, data.inputs, data.targets, g);
  g += config.l2_rate * w;
  return g;
}

RowMatrixXd per_example_grads(const NetworkConfig& config,
                              const Eigen::VectorXd& w, const Dataset& data,
                              Eigen::Index begin, Eigen::Index end) {
  ParamLayout layout(config);
  check_param_dim(layout, w.size());
  check_input_dim(config, data.inputs.cols());
  if (begin < 0 || end > data.size() || begin >= end)
    throw std::invalid_argument("per_example_grads: empty or out-of-range batch");

  const int nl = layout.layers();
  BatchCache c;
  run_forward(layout, w, data.inputs.middleRows(begin, end - begin), c);

  RowMatrixXd G(end - begin, layout.total());
  std::vector<Eigen::VectorXd> d(nl);
  for (Eigen::Index r = 0; r < end - begin; ++r) {
    d[nl - 1] =
        c.probs.row(r).transpose() - data.targets.row(begin + r).transpose();
    for (int l = nl - 1; l >= 1; --l)
      d[l - 1] = ((layout.weight(w, l).transpose() * d[l]).array() *
                  (c.Z[l - 1].row(r).transpose().array() > 0.0).cast<double>())
                     .matrix();
    double* row = G.data() + r * layout.total();
    for (int l = 0; l < nl; ++l) {
      Eigen::Map<RowMatrixXd> gW(row + layout.weight_offset(l), layout.rows(l),
                                 layout.cols(l));
      gW = d[l] * c.X[l].row(r);
      Eigen::Map<Eigen::VectorXd> gb(row + layout.bias_offset(l),
                                     layout.rows(l));
      gb = d[l];
    }
  }
  return G;
}

Eigen::VectorXd hvp(const NetworkConfig& config, const Eigen::VectorXd& w,
                    const Dataset& data, const Eigen::VectorXd& v) {
  ParamLayout layout(config);
  check_param_dim(layout, w.size());
  check_param_dim(layout, v.size());
  check_input_dim(config, data.inputs.cols());
  BatchCache c;
  run_forward(layout, w, data.inputs, c);
  run_backward_seeds(layout, w, data.targets, c);
  Eigen::VectorXd out;
  run_hvp(layout, w, v, data.size(), c, out);
  out += config.l2_rate * v;
  return out;
}

RowMatrixXd sensitivity(const NetworkConfig& config, const Eigen::VectorXd& w,
                        const Eigen::VectorXd& x0) {
  ParamLayout layout(config);
  check_param_dim(layout, w.size());
  check_input_dim(config, x0.size());

  const int nl = layout.layers();
  BatchCache c;
  run_forward(layout, w, x0.transpose(), c);
  const Eigen::VectorXd p = c.probs.row(0).transpose();
  const int tl = config.output_dim();

  RowMatrixXd F(tl, layout.total());
  std::vector<Eigen::VectorXd> d(nl);
  for (int i = 0; i < tl; ++i) {
    // row i of the softmax Jacobian wrt logits: p_i * (e_i - p)
    d[nl - 1] = -p[i] * p;
    d[nl - 1][i] += p[i];
    for (int l = nl - 1; l >= 1; --l)
      d[l - 1] = ((layout.weight(w, l).transpose() * d[l]).array() *
                  (c.Z[l - 1].row(0).transpose().array() > 0.0).cast<double>())
                     .matrix();
    double* row = F.data() + static_cast<std::int64_t>(i) * layout.total();
    for (int l = 0; l < nl; ++l) {
      Eigen::Map<RowMatrixXd> gW(row + layout.weight_offset(l), layout.rows(l),
                                 layout.cols(l));
      gW = d[l] * c.X[l].row(0);
      Eigen::Map<Eigen::VectorXd> gb(row + layout.bias_offset(l),
                                     layout.rows(l));
      gb = d[l];
    }
  }
  return F;
}

HvpOperator::HvpOperator(const NetworkConfig& config, Eigen::VectorXd w,
                         Dataset data)
    : config_(config),
      layout_(config),
      w_(std::move(w)),
      data_(std::move(data)),
      cache_(std::make_unique<detail::BatchCache>()) {
  check_param_dim(layout_, w_.size());
  check_input_dim(config_, data_.inputs.cols());
  run_forward(layout_, w_, data_.inputs, *cache_);
  run_backward_seeds(layout_, w_, data_.targets, *cache_);
}

HvpOperator::~HvpOperator() = default;
HvpOperator::HvpOperator(HvpOperator&&) noexcept = default;

Eigen::Index HvpOperator::dim() const { return layout_.total(); }

// Not reentrant: the tangent workspace lives in the cache.
void HvpOperator::apply(const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
  check_param_dim(layout_, v.size());
  run_hvp(layout_, w_, v, data_.size(), *cache_, out);
  out += config_.l2_rate * v;
}

Eigen::VectorXd HvpOperator::apply(const Eigen::VectorXd& v) const {
  Eigen::VectorXd out;
  apply(v, out);
  return out;
}

}  // namespace nn
}  // namespace duq
