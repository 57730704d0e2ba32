#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace dygl {

/// A named learnable (or buffer) tensor with a gradient of identical shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape(), value.dtype())), trainable(train) {}

  void zero_grad() { grad = Tensor::zeros(value.shape(), value.dtype()); }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-use record of executed ops. Values are appended in execution order,
/// so reverse iteration is a valid topological order for the adjoint pass.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out, const Tensor& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);
  /// Records an op output. `back` runs only if some input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward back);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward back);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Adds `g` into the gradient slot of node `id` (no-op if it needs none).
  void accumulate(std::size_t id, const Tensor& g);

  /// Propagates d(loss)/d(node) back to every reachable Parameter's grad.
  void backward(Var loss);
  /// Like backward but seeded with an arbitrary upstream gradient for `out`.
  void backward(Var out, const Tensor& seed);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward back;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Differentiable ops.
Var conv2d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec);
Var matmul(Var a, Var b);
Var transpose_last2(Var x);
Var softmax(Var x, int axis);
Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training,
                double momentum, double eps);
Var bilinear_sample(Var x, Var grid);
Var resize_bilinear(Var x, std::int64_t out_h, std::int64_t out_w);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var concat(const std::vector<Var>& parts, int axis);
std::vector<Var> split(Var x, int axis, const std::vector<std::int64_t>& sizes);
Var reshape(Var x, Shape shape);
Var depth_to_space(Var x, int s);
Var sum(Var x);
Var mean(Var x);

// ---------------------------------------------------------------- grad check

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Parameters with more entries than this get a random subset checked.
  std::size_t max_entries_per_param = 32;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  /// max |a-n| / max(|a|,|n|,1e-8) over every checked entry.
  double max_rel_err = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  /// Same maximum restricted to entries the central difference can resolve,
  /// i.e. max(|a|,|n|) >= resolution / tol.
  double max_rel_err_resolved = 0.0;
  /// Entries below that size; for them |a-n| must stay within the
  /// resolution, and the worst ratio |a-n| / resolution is kept.
  std::size_t resolution_limited = 0;
  double max_unresolved_ratio = 0.0;

  bool passed(double tol) const { return max_rel_err < tol && checked > 0; }
  bool passed_resolved(double tol) const {
    return max_rel_err_resolved < tol && max_unresolved_ratio <= 1.0 && checked > 0;
  }
};

/// Rounding resolution of a central difference: a few ulps of f spread over 2 eps.
double fd_resolution(double f_plus, double f_minus, double eps);

/// Compares analytic gradients with central differences
/// (f(t+eps) - f(t-eps)) / (2 eps), using |a-n| / max(|a|, |n|, 1e-8).
/// Entries whose +/- evaluations take different piecewise-linear branches are
/// skipped. `f` must be deterministic and build its graph in f64.
GradCheckReport grad_check(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                           const GradCheckOptions& opts = {});

}  // namespace dygl
