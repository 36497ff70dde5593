#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fpx/tensor.hpp"

namespace fpx {

enum class ParamKind { Matrix, ConvKernel, Bias };

/// Declared layout of one parameter tensor.
struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind = ParamKind::Matrix;
  std::size_t fan_in = 1;
};

/// Ordered, uniquely named collection of tensors (weights and biases).
class Parameters {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  Parameters() = default;

  void add(std::string name, Tensor value);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const Tensor& at(std::string_view name) const;
  const Tensor& operator[](std::size_t i) const { return entries_.at(i).value; }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  /// Replaces a value; the shape must not change.
  void set(std::size_t i, Tensor value);
  void set(std::string_view name, Tensor value);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;

  std::size_t total_size() const;
  std::vector<double> flatten() const;
  /// Same names and shapes as this, values taken from `flat`.
  Parameters with_values(std::span<const double> flat) const;
  Parameters zeros_like() const;

 private:
  std::vector<Entry> entries_;
};

double global_norm(const Parameters& p);

/// Fresh parameters matching `specs`, all zero.
Parameters zero_parameters(std::span<const ParamSpec> specs);

}  // namespace fpx
