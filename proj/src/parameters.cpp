#include "fpx/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fpx {

void Parameters::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
}

std::size_t Parameters::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

bool Parameters::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

const Tensor& Parameters::at(std::string_view name) const { return entries_[index_of(name)].value; }

void Parameters::set(std::size_t i, Tensor value) {
  Entry& e = entries_.at(i);
  if (e.value.shape() != value.shape()) {
    throw DimensionError("parameter '" + e.name + "' has shape " + shape_str(e.value.shape()) +
                         ", got " + shape_str(value.shape()));
  }
  e.value = std::move(value);
}

void Parameters::set(std::string_view name, Tensor value) { set(index_of(name), std::move(value)); }

std::vector<Tensor> Parameters::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

std::size_t Parameters::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::vector<double> Parameters::flatten() const {
  std::vector<double> out;
  out.reserve(total_size());
  for (const auto& e : entries_) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
  return out;
}

Parameters Parameters::with_values(std::span<const double> flat) const {
  if (flat.size() != total_size()) {
    throw DimensionError("flat parameter vector has " + std::to_string(flat.size()) +
                         " entries, expected " + std::to_string(total_size()));
  }
  Parameters out;
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    const std::size_t n = e.value.size();
    out.add(e.name, Tensor(e.value.shape(), std::vector<double>(flat.begin() + static_cast<long>(offset),
                                                                flat.begin() + static_cast<long>(offset + n))));
    offset += n;
  }
  return out;
}

Parameters Parameters::zeros_like() const {
  Parameters out;
  for (const auto& e : entries_) out.add(e.name, Tensor::zeros(e.value.shape()));
  return out;
}

double global_norm(const Parameters& p) {
  double s = 0.0;
  for (const auto& e : p.entries())
    for (double v : e.value.data()) s += v * v;
  return std::sqrt(s);
}

Parameters zero_parameters(std::span<const ParamSpec> specs) {
  Parameters out;
  for (const auto& s : specs) out.add(s.name, Tensor::zeros(s.shape));
  return out;
}

}  // namespace fpx
