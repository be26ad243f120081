#include "lewm/array.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "lewm/errors.hpp"

namespace lewm {

namespace {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ContractViolation("array shape has a zero extent: " + shape_string(shape));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(shape_product(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (shape_product(shape_) != values_.size()) {
    throw ContractViolation("shape " + shape_string(shape_) + " does not hold " +
                            std::to_string(values_.size()) + " values");
  }
}

Array Array::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Array({rows, cols}, std::move(values));
}

std::size_t Array::rows() const {
  if (rank() != 2) throw ContractViolation("rows() on non-matrix " + shape_string(shape_));
  return shape_[0];
}

std::size_t Array::cols() const {
  if (rank() != 2) throw ContractViolation("cols() on non-matrix " + shape_string(shape_));
  return shape_[1];
}

void Array::assign(const Array& other) {
  if (other.shape_ != shape_) {
    throw ContractViolation("assign: shape " + shape_string(other.shape_) + " into " +
                            shape_string(shape_));
  }
  values_ = other.values_;
}

void Array::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void Array::add_scaled(const Array& other, double scale) {
  if (other.shape_ != shape_) {
    throw ContractViolation("add_scaled: shape " + shape_string(other.shape_) + " vs " +
                            shape_string(shape_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

bool Array::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void ParamStore::add(const std::string& name, Array value, bool trainable) {
  if (contains(name)) throw ContractViolation("duplicate parameter name '" + name + "'");
  entries_.emplace(name, Entry{std::move(value), trainable});
}

const Array& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return it->second.value;
}

std::span<double> ParamStore::values(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return it->second.value.values();
}

Array* ParamStore::find(const std::string& name) {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second.value;
}

void ParamStore::assign(const std::string& name, const Array& value) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  it->second.value.assign(value);
}

bool ParamStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return it->second.trainable;
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  it->second.trainable = trainable;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, entry] : entries_) {
    out.entries_.emplace(name, Entry{Array::zeros_like(entry.value), entry.trainable});
  }
  return out;
}

void ParamStore::fill(double v) {
  for (auto& [name, entry] : entries_) entry.value.fill(v);
}

void ParamStore::add_scaled(const ParamStore& other, double scale) {
  for (const auto& [name, entry] : other.entries_) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractViolation("add_scaled: unknown parameter '" + name + "'");
    it->second.value.add_scaled(entry.value, scale);
  }
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& [name, entry] : entries_) {
    if (!trainable_only || entry.trainable) n += entry.value.size();
  }
  return n;
}

}  // namespace lewm
