#include "autodiff.hpp"

#include <limits>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

namespace dygl {

const Tensor& Var::value() const {
  if (!tape_) fail(ErrorCode::state, "value() on an unbound Var");
  if (tape_->consumed()) fail(ErrorCode::state, "value() on a consumed tape");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  if (consumed_) fail(ErrorCode::state, "recording on a consumed tape");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward back) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(back));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward back) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.tape() != this) fail(ErrorCode::state, "op mixes Vars from different tapes");
    n.requires_grad = n.requires_grad || nodes_.at(v.id()).requires_grad;
  }
  if (n.requires_grad) n.back = std::move(back);
  return push(std::move(n));
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape())
    fail(ErrorCode::dimension, "gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                                   shape_str(n.value.shape()));
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* dst = n.grad.data<T>();
    const T* src = g.data<T>();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
  });
}

void Tape::backward(Var loss) {
  if (consumed_) fail(ErrorCode::state, "backward on a consumed tape");
  const Tensor& v = nodes_.at(loss.id()).value;
  if (v.numel() != 1) fail(ErrorCode::contract, "backward needs a scalar loss, got shape " + shape_str(v.shape()));
  backward(loss, Tensor::full(v.shape(), 1.0, v.dtype()));
}

void Tape::backward(Var out, const Tensor& seed) {
  if (consumed_) fail(ErrorCode::state, "backward on a consumed tape");
  if (&out.tape() != this) fail(ErrorCode::state, "backward on a Var from another tape");
  consumed_ = true;
  accumulate(out.id(), seed);
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.back) n.back(*this, n.grad, n.value);
    if (n.param) {
      Parameter& p = *n.param;
      dispatch(p.grad.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* dst = p.grad.data<T>();
        const T* src = n.grad.data<T>();
        for (std::size_t k = 0; k < p.grad.numel(); ++k) dst[k] += src[k];
      });
    }
    n.grad = Tensor();
    n.back = nullptr;
  }
  nodes_.clear();
  nodes_.shrink_to_fit();
}

// ---------------------------------------------------------------- ops

namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) fail(ErrorCode::state, "unbound Var");
  return v.tape();
}

}  // namespace

Var conv2d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec) {
  Tape& t = tape_of(x);
  Tensor out = dygl::conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, spec);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const std::size_t xi = x.id(), wi = weight.id();
  const std::optional<std::size_t> bi = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
  return t.record(std::move(out), inputs, [xi, wi, bi, spec](Tape& tp, const Tensor& g, const Tensor&) {
    const bool nb = bi && tp.requires_grad(*bi);
    Conv2dGrads gr = conv2d_backward(tp.value(xi), tp.value(wi), g, spec, tp.requires_grad(xi),
                                     tp.requires_grad(wi), nb);
    if (tp.requires_grad(xi)) tp.accumulate(xi, gr.input);
    if (tp.requires_grad(wi)) tp.accumulate(wi, gr.weight);
    if (nb) tp.accumulate(*bi, gr.bias);
  });
}

namespace {

// Sums a batched gradient down to a rank-2 operand that was shared across the batch.
Tensor sum_batch_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  const std::size_t per = shape_numel(target);
  Tensor out(target, g.dtype());
  for (std::size_t i = 0; i < g.numel(); ++i) out.set(i % per, out.item(i % per) + g.item(i));
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  Tensor out = dygl::matmul(a.value(), b.value());
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), {a, b}, [ai, bi](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& av = tp.value(ai);
    const Tensor& bv = tp.value(bi);
    if (tp.requires_grad(ai)) tp.accumulate(ai, sum_batch_to(dygl::matmul(g, dygl::transpose_last2(bv)), av.shape()));
    if (tp.requires_grad(bi)) tp.accumulate(bi, sum_batch_to(dygl::matmul(dygl::transpose_last2(av), g), bv.shape()));
  });
}

Var transpose_last2(Var x) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  return t.record(dygl::transpose_last2(x.value()), {x}, [xi](Tape& tp, const Tensor& g, const Tensor&) {
    tp.accumulate(xi, dygl::transpose_last2(g));
  });
}

Var softmax(Var x, int axis) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  return t.record(dygl::softmax(x.value(), axis), {x}, [xi, axis](Tape& tp, const Tensor& g, const Tensor& y) {
    tp.accumulate(xi, softmax_backward(y, g, axis));
  });
}

Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training,
                double momentum, double eps) {
  Tape& t = tape_of(x);
  auto res = std::make_shared<BatchNormResult>(
      dygl::batchnorm2d(x.value(), gamma.value(), beta.value(), running_mean, running_var, training, momentum, eps));
  Tensor out = std::move(res->output);
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return t.record(std::move(out), {x, gamma, beta}, [res, xi, gi, bi, training](Tape& tp, const Tensor& g, const Tensor&) {
    BatchNormGrads gr = batchnorm2d_backward(*res, tp.value(gi), g, training);
    tp.accumulate(xi, gr.input);
    tp.accumulate(gi, gr.gamma);
    tp.accumulate(bi, gr.beta);
  });
}

Var bilinear_sample(Var x, Var grid) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id(), gi = grid.id();
  return t.record(dygl::bilinear_sample(x.value(), grid.value()), {x, grid},
                  [xi, gi](Tape& tp, const Tensor& g, const Tensor&) {
                    SampleGrads gr = bilinear_sample_backward(tp.value(xi), tp.value(gi), g, tp.requires_grad(xi),
                                                              tp.requires_grad(gi));
                    if (tp.requires_grad(xi)) tp.accumulate(xi, gr.input);
                    if (tp.requires_grad(gi)) tp.accumulate(gi, gr.grid);
                  });
}

Var resize_bilinear(Var x, std::int64_t out_h, std::int64_t out_w) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  const std::int64_t ih = x.value().dim(2), iw = x.value().dim(3);
  return t.record(dygl::resize_bilinear(x.value(), out_h, out_w), {x},
                  [xi, ih, iw](Tape& tp, const Tensor& g, const Tensor&) {
                    tp.accumulate(xi, resize_bilinear_backward(g, ih, iw));
                  });
}

namespace {

template <class F>
Tensor map2(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    for (std::size_t i = 0; i < a.numel(); ++i) po[i] = f(pa[i], pb[i]);
  });
  return out;
}

}  // namespace

Var tanh(Var x) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  return t.record(unary(x.value(), UnaryOp::tanh), {x}, [xi](Tape& tp, const Tensor& g, const Tensor& y) {
    tp.accumulate(xi, map2(g, y, [](auto gv, auto yv) { return gv * (decltype(yv)(1) - yv * yv); }));
  });
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  return t.record(unary(x.value(), UnaryOp::sigmoid), {x}, [xi](Tape& tp, const Tensor& g, const Tensor& y) {
    tp.accumulate(xi, map2(g, y, [](auto gv, auto yv) { return gv * yv * (decltype(yv)(1) - yv); }));
  });
}

Var relu(Var x) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  return t.record(unary(x.value(), UnaryOp::relu), {x}, [xi](Tape& tp, const Tensor& g, const Tensor&) {
    tp.accumulate(xi, map2(g, tp.value(xi), [](auto gv, auto xv) { return xv > 0 ? gv : decltype(gv)(0); }));
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(binary(a.value(), b.value(), BinaryOp::add), {a, b}, [ai, bi](Tape& tp, const Tensor& g, const Tensor&) {
    if (tp.requires_grad(ai)) tp.accumulate(ai, reduce_to_shape(g, tp.value(ai).shape()));
    if (tp.requires_grad(bi)) tp.accumulate(bi, reduce_to_shape(g, tp.value(bi).shape()));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(binary(a.value(), b.value(), BinaryOp::sub), {a, b}, [ai, bi](Tape& tp, const Tensor& g, const Tensor&) {
    if (tp.requires_grad(ai)) tp.accumulate(ai, reduce_to_shape(g, tp.value(ai).shape()));
    if (tp.requires_grad(bi)) tp.accumulate(bi, reduce_to_shape(dygl::scale(g, -1.0), tp.value(bi).shape()));
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(binary(a.value(), b.value(), BinaryOp::mul), {a, b}, [ai, bi](Tape& tp, const Tensor& g, const Tensor&) {
    if (tp.requires_grad(ai))
      tp.accumulate(ai, reduce_to_shape(binary(g, tp.value(bi), BinaryOp::mul), tp.value(ai).shape()));
    if (tp.requires_grad(bi))
      tp.accumulate(bi, reduce_to_shape(binary(g, tp.value(ai), BinaryOp::mul), tp.value(bi).shape()));
  });
}

Var scale(Var x, double s) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  return t.record(dygl::scale(x.value(), s), {x}, [xi, s](Tape& tp, const Tensor& g, const Tensor&) {
    tp.accumulate(xi, dygl::scale(g, s));
  });
}

Var add_scalar(Var x, double s) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  return t.record(dygl::add_scalar(x.value(), s), {x}, [xi](Tape& tp, const Tensor& g, const Tensor&) {
    tp.accumulate(xi, g);
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) fail(ErrorCode::dimension, "concat of zero tensors");
  Tape& t = tape_of(parts.front());
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  std::vector<std::int64_t> sizes;
  const int ax = axis < 0 ? axis + parts.front().value().rank() : axis;
  for (const Var& p : parts) {
    values.push_back(p.value());
    ids.push_back(p.id());
  }
  Tensor out = dygl::concat(values, axis);
  for (const Tensor& v : values) sizes.push_back(v.dim(ax));
  return t.record(std::move(out), parts, [ids, sizes, ax](Tape& tp, const Tensor& g, const Tensor&) {
    std::vector<Tensor> gs = dygl::split(g, ax, sizes);
    for (std::size_t i = 0; i < ids.size(); ++i) tp.accumulate(ids[i], gs[i]);
  });
}

std::vector<Var> split(Var x, int axis, const std::vector<std::int64_t>& sizes) {
  Tape& t = tape_of(x);
  std::vector<Tensor> parts = dygl::split(x.value(), axis, sizes);
  const int ax = axis < 0 ? axis + x.value().rank() : axis;
  const std::size_t xi = x.id();
  std::vector<Var> out;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.push_back(t.record(std::move(parts[k]), {x}, [xi, ax, sizes, k](Tape& tp, const Tensor& g, const Tensor&) {
      std::vector<Tensor> pieces;
      for (std::size_t j = 0; j < sizes.size(); ++j) {
        if (j == k) {
          pieces.push_back(g);
        } else {
          Shape s = g.shape();
          s[static_cast<std::size_t>(ax)] = sizes[j];
          pieces.emplace_back(s, g.dtype());
        }
      }
      tp.accumulate(xi, dygl::concat(pieces, ax));
    }));
  }
  return out;
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  const Shape orig = x.value().shape();
  return t.record(x.value().reshape(std::move(shape)), {x}, [xi, orig](Tape& tp, const Tensor& g, const Tensor&) {
    tp.accumulate(xi, g.reshape(orig));
  });
}

Var depth_to_space(Var x, int s) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  return t.record(dygl::depth_to_space(x.value(), s), {x}, [xi, s](Tape& tp, const Tensor& g, const Tensor&) {
    tp.accumulate(xi, space_to_depth(g, s));
  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  const std::size_t xi = x.id();
  Tensor out({1}, x.value().dtype());
  out.set(0, sum_all(x.value()));
  return t.record(std::move(out), {x}, [xi](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& xv = tp.value(xi);
    tp.accumulate(xi, Tensor::full(xv.shape(), g.item(0), xv.dtype()));
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().numel());
  return scale(sum(x), 1.0 / n);
}

// ---------------------------------------------------------------- grad check

double fd_resolution(double f_plus, double f_minus, double eps) {
  const double m = std::max(std::abs(f_plus), std::abs(f_minus));
  const double ulp = std::nextafter(m, std::numeric_limits<double>::infinity()) - m;
  return 4.0 * ulp / (2.0 * eps);
}

GradCheckReport grad_check(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                           const GradCheckOptions& opts) {
  if (!(opts.eps > 0)) fail(ErrorCode::configuration, "grad_check: eps must be > 0");
  for (Parameter* p : params) {
    if (p->value.dtype() != DType::f64)
      fail(ErrorCode::contract, "grad_check: parameter " + p->name + " is not f64");
    p->zero_grad();
  }
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);

  KinkProbe& probe = kink_probe();
  const KinkProbe saved = probe;
  auto evaluate = [&](std::uint64_t& hash) {
    probe.enabled = true;
    probe.hash = KinkProbe{}.hash;
    Tape tape;
    const double v = f(tape).value().item();
    hash = probe.hash;
    probe = saved;
    return v;
  };

  std::mt19937_64 rng(opts.seed);
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    if (!p.trainable) continue;
    std::vector<std::size_t> entries(p.value.numel());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (entries.size() > opts.max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries_per_param);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t idx : entries) {
      const double orig = p.value.item(idx);
      std::uint64_t h_plus = 0, h_minus = 0;
      p.value.set(idx, orig + opts.eps);
      const double f_plus = evaluate(h_plus);
      p.value.set(idx, orig - opts.eps);
      const double f_minus = evaluate(h_minus);
      p.value.set(idx, orig);
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        fail(ErrorCode::numeric, "grad_check: non-finite value while perturbing " + p.name);
      if (h_plus != h_minus) {
        ++report.skipped_kinks;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      const double a = analytic[pi].item(idx);
      if (!std::isfinite(a)) fail(ErrorCode::numeric, "grad_check: non-finite analytic gradient in " + p.name);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++report.checked;
      const double res = fd_resolution(f_plus, f_minus, opts.eps);
      if (std::max(std::abs(a), std::abs(numeric)) * opts.tol < res) {
        ++report.resolution_limited;
        report.max_unresolved_ratio = std::max(report.max_unresolved_ratio, std::abs(a - numeric) / res);
      } else {
        report.max_rel_err_resolved = std::max(report.max_rel_err_resolved, rel);
      }
      if (rel > report.max_rel_err || report.worst_param.empty()) {
        report.max_rel_err = rel;
        report.worst_param = p.name + "[" + std::to_string(idx) + "]";
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace dygl
