#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpx {

using Shape = std::vector<std::size_t>;

/// Raised when tensor shapes are incompatible with a kernel.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a kernel produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Storage is shared and immutable, so copies are cheap and a Tensor can be
/// handed between graphs and threads freely. A rank-0 tensor (empty shape)
/// holds a single scalar.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }

  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  const double* raw() const { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t i, std::size_t j) const;

  /// Value of a single-element tensor.
  double item() const;

  std::vector<double> to_vector() const { return *data_; }
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

bool operator==(const Tensor& a, const Tensor& b);

/// Throws NonFiniteError naming `where` unless every entry is finite.
const Tensor& check_finite(const Tensor& t, const char* where);

/// Largest |a_i - b_i| / max(1, |b_i|); shapes must match.
double max_rel_diff(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace fpx
