#include "params.hpp"

namespace dygl {

Parameter& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name)) fail(ErrorCode::configuration, "duplicate parameter name " + name);
  if (value.dtype() != dtype_) value = value.astype(dtype_);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(value), trainable));
  return *params_.back();
}

Parameter& ParamStore::zeros(const std::string& name, Shape shape, bool trainable) {
  return add(name, Tensor::zeros(std::move(shape), dtype_), trainable);
}

Parameter& ParamStore::full(const std::string& name, Shape shape, double value, bool trainable) {
  return add(name, Tensor::full(std::move(shape), value, dtype_), trainable);
}

Parameter& ParamStore::uniform(const std::string& name, Shape shape, double bound) {
  Tensor t(std::move(shape), dtype_);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng_));
  return add(name, std::move(t));
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

std::vector<Parameter*> ParamStore::trainable() const {
  std::vector<Parameter*> out;
  for (const auto& p : params_)
    if (p->trainable) out.push_back(p.get());
  return out;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p->trainable) n += p->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

}  // namespace dygl
