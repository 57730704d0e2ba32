#pragma once

#include <cmath>
// Forward and adjoint kernels over plain tensors. None of these mutate their
// inputs except batchnorm2d's running statistics in training mode.

#include <cstdint>
#include <optional>
#include <vector>

#include "tensor.hpp"

namespace dygl {

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, const ConvSpec& spec,
                            bool need_input, bool need_weight, bool need_bias);

/// Batched matrix product over the last two axes. Leading extents must match
/// or one operand may be rank 2 (shared across the batch).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);
Tensor softmax_backward(const Tensor& y, const Tensor& grad_y, int axis);

struct BatchNormResult {
  Tensor output;
  Tensor normalized;  // pre-affine
  Tensor inv_std;     // [C]
};
BatchNormResult batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                            Tensor& running_var, bool training, double momentum, double eps);
struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm2d_backward(const BatchNormResult& fwd, const Tensor& gamma, const Tensor& grad_out,
                                    bool training);

/// Bilinear sampling with border clamping. grid is [N,H',W',2] holding
/// (x, y) in normalized coordinates where -1/+1 are the outer pixel edges.
Tensor bilinear_sample(const Tensor& x, const Tensor& grid);
struct SampleGrads {
  Tensor input;
  Tensor grid;
};
SampleGrads bilinear_sample_backward(const Tensor& x, const Tensor& grid, const Tensor& grad_out, bool need_input,
                                     bool need_grid);

/// Half-pixel bilinear resize with the same clamp convention as bilinear_sample.
Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
Tensor resize_bilinear_backward(const Tensor& grad_out, std::int64_t in_h, std::int64_t in_w);

enum class UnaryOp { tanh, sigmoid, relu };
enum class BinaryOp { add, sub, mul };

Tensor unary(const Tensor& x, UnaryOp op);
Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

/// Reduces a gradient of a's full shape back to the shape of a broadcast operand.
Tensor reduce_to_shape(const Tensor& grad, const Shape& target);

Tensor concat(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<std::int64_t>& sizes);

/// [N, C*s*s, H, W] -> [N, C, H*s, W*s]; channel c*s*s + sy*s + sx fills (sy, sx).
Tensor depth_to_space(const Tensor& x, int s);
Tensor space_to_depth(const Tensor& x, int s);

/// Neumaier-compensated accumulator for long reductions.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double sum_all(const Tensor& x);

// Records piecewise-linear branch decisions (relu sign, clamp state, bilinear
// cell) while enabled so that finite-difference checks can detect when a
// perturbation straddles a kink.
struct KinkProbe {
  bool enabled = false;
  std::uint64_t hash = 1469598103934665603ull;

  void mix(std::uint64_t v) {
    hash ^= v + 0x9e3779b97f4a7c15ull + (hash << 6) + (hash >> 2);
  }
};
KinkProbe& kink_probe();

}  // namespace dygl
