#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace duq {

using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Labeled examples: one row per example, targets one-hot.
struct Dataset {
  Eigen::MatrixXd inputs;   // N x T1
  Eigen::MatrixXd targets;  // N x TL

  Eigen::Index size() const { return inputs.rows(); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
  int num_classes() const { return static_cast<int>(targets.cols()); }

  /// Throws std::invalid_argument on shape mismatch or non-one-hot rows.
  void validate() const;
};

namespace nn {

enum class HiddenActivation { relu };
enum class OutputActivation { softmax };

/// Dense feed-forward stack: layer_sizes = [T1, ..., TL], ReLU hidden
/// layers, softmax output, L2 penalty (l2_rate/2)*|w|^2 on all parameters.
struct NetworkConfig {
  std::vector<int> layer_sizes;
  double l2_rate = 0.01;
  HiddenActivation hidden = HiddenActivation::relu;
  OutputActivation output = OutputActivation::softmax;

  int depth() const { return static_cast<int>(layer_sizes.size()); }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }

  void validate() const;
};

/// Total parameter count: sum over layers of T_{l-1}*T_l + T_l.
std::int64_t param_count(const NetworkConfig& config);

/// Flat parameter vector layout. Per layer l = 1..L-1 (0-based over
/// layer_sizes): the weight matrix W_l (T_l x T_{l-1}) flattened row by
/// row, then the bias b_l (T_l). Layers are stored in network order.
class ParamLayout {
 public:
  explicit ParamLayout(const NetworkConfig& config);

  std::int64_t total() const { return total_; }
  int layers() const { return static_cast<int>(rows_.size()); }
  std::int64_t weight_offset(int l) const { return w_off_[l]; }
  std::int64_t bias_offset(int l) const { return b_off_[l]; }
  int rows(int l) const { return rows_[l]; }   // T_l
  int cols(int l) const { return cols_[l]; }   // T_{l-1}

  Eigen::Map<const RowMatrixXd> weight(const Eigen::VectorXd& w, int l) const {
    return {w.data() + w_off_[l], rows_[l], cols_[l]};
  }
  Eigen::Map<RowMatrixXd> weight(Eigen::VectorXd& w, int l) const {
    return {w.data() + w_off_[l], rows_[l], cols_[l]};
  }
  Eigen::Map<const Eigen::VectorXd> bias(const Eigen::VectorXd& w, int l) const {
    return {w.data() + b_off_[l], rows_[l]};
  }
  Eigen::Map<Eigen::VectorXd> bias(Eigen::VectorXd& w, int l) const {
    return {w.data() + b_off_[l], rows_[l]};
  }

 private:
  std::vector<std::int64_t> w_off_, b_off_;
  std::vector<int> rows_, cols_;
  std::int64_t total_ = 0;
};

/// Zero-mean normal weights with stddev 1/sqrt(fan_in), zero biases.
Eigen::VectorXd init_params(const NetworkConfig& config, std::uint64_t seed);

/// Class probabilities for one input.
Eigen::VectorXd forward(const NetworkConfig& config, const Eigen::VectorXd& w,
                        const Eigen::VectorXd& x);

/// Mean cross-entropy over the dataset plus (l2_rate/2)*|w|^2.
/// Computed from logits via log-sum-exp; never takes log of a probability.
double cost(const NetworkConfig& config, const Eigen::VectorXd& w,
            const Dataset& data);

/// Analytic gradient of cost(), including the l2 term.
Eigen::VectorXd grad(const NetworkConfig& config, const Eigen::VectorXd& w,
                     const Dataset& data);

/// Rows g_n = dC_n/dw for n in [begin, end): the per-example data term
/// only, no l2 contribution. Mean of all rows plus l2_rate*w equals grad().
RowMatrixXd per_example_grads(const NetworkConfig& config,
                              const Eigen::VectorXd& w, const Dataset& data,
                              Eigen::Index begin, Eigen::Index end);

/// Exact product H*v where H = (1/N) sum_n d2C_n/dw2 + l2_rate*I, via a
/// tangent pass carried through the reverse sweep (two-pass cost, no
/// materialized Hessian).
Eigen::VectorXd hvp(const NetworkConfig& config, const Eigen::VectorXd& w,
                    const Dataset& data, const Eigen::VectorXd& v);

/// Jacobian of the class probabilities with respect to all parameters at
/// input x0: TL x P, one reverse pass per class. Rows sum to zero.
RowMatrixXd sensitivity(const NetworkConfig& config, const Eigen::VectorXd& w,
                        const Eigen::VectorXd& x0);

namespace detail {
struct BatchCache;
}

/// Repeated Hessian-vector products at a fixed parameter vector. The
/// forward activations and the cost backward pass are computed once in the
/// constructor; apply() runs only the two tangent sweeps.
class HvpOperator {
 public:
  HvpOperator(const NetworkConfig& config, Eigen::VectorXd w, Dataset data);
  ~HvpOperator();
  HvpOperator(HvpOperator&&) noexcept;

  Eigen::Index dim() const;
  void apply(const Eigen::VectorXd& v, Eigen::VectorXd& out) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;

 private:
  NetworkConfig config_;
  ParamLayout layout_;
  Eigen::VectorXd w_;
  Dataset data_;
  std::unique_ptr<detail::BatchCache> cache_;
};

/// Data cost (mean over the given rows) and its gradient, no l2 term.
/// Shared by the trainer and the batch front end.
double data_cost_and_grad(const NetworkConfig& config, const ParamLayout& layout,
                          const Eigen::VectorXd& w, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Y, Eigen::VectorXd& g_out);

/// Batched class probabilities, one row per example.
Eigen::MatrixXd forward_batch(const NetworkConfig& config,
                              const Eigen::VectorXd& w,
                              const Eigen::MatrixXd& X);

}  // namespace nn
}  // namespace duq
