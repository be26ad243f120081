#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lewm {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. The shape is fixed at construction.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> values);

  static Array vector(std::vector<double> values);
  static Array vector(std::initializer_list<double> values);
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Array zeros_like(const Array& other) { return Array(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  /// Row count of a rank-2 array.
  std::size_t rows() const;
  /// Column count of a rank-2 array.
  std::size_t cols() const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& raw() const noexcept { return values_; }

  /// Overwrites values from an array of identical shape.
  void assign(const Array& other);
  void fill(double v);
  /// this += scale * other (identical shapes).
  void add_scaled(const Array& other, double scale = 1.0);
  bool all_finite() const;

  bool operator==(const Array& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Named parameter arrays, each flagged trainable or frozen. Iteration order
/// is lexicographic by name.
class ParamStore {
 public:
  struct Entry {
    Array value;
    bool trainable = true;
    bool operator==(const Entry&) const = default;
  };

  void add(const std::string& name, Array value, bool trainable = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Array& get(const std::string& name) const;
  std::span<double> values(const std::string& name);
  /// In-place access for accumulation. Callers must not change the shape.
  Array* find(const std::string& name);
  void assign(const std::string& name, const Array& value);
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);

  /// Same names and shapes, all values zero, same flags.
  ParamStore zeros_like() const;
  void fill(double v);
  void add_scaled(const ParamStore& other, double scale);

  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count(bool trainable_only = false) const;
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

  bool operator==(const ParamStore&) const = default;

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace lewm
