#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"

namespace dygl {

/// Owns every Parameter of a model. Addresses are stable for the store's lifetime.
class ParamStore {
 public:
  ParamStore(DType dtype, std::uint64_t seed) : dtype_(dtype), rng_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(const std::string& name, Tensor value, bool trainable = true);
  Parameter& zeros(const std::string& name, Shape shape, bool trainable = true);
  Parameter& full(const std::string& name, Shape shape, double value, bool trainable = true);
  /// U(-bound, bound) drawn from the store's generator in registration order.
  Parameter& uniform(const std::string& name, Shape shape, double bound);

  Parameter* find(const std::string& name);
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::vector<Parameter*> trainable() const;
  std::size_t trainable_count() const;
  void zero_grad();

  DType dtype() const { return dtype_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  DType dtype_;
  std::mt19937_64 rng_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Per-forward state shared by every layer.
struct Context {
  Tape& tape;
  bool training = false;
};

}  // namespace dygl
