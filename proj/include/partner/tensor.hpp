#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace partner
{

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape & shape)
{
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_to_string(const Shape & shape);

/// Dense row-major array of doubles.
struct Tensor
{
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_numel(shape), fill)
  {
  }
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values))
  {
    if (data.size() != shape_numel(shape)) {
      throw std::invalid_argument("tensor data does not match shape " + shape_to_string(shape));
    }
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  bool empty() const { return data.empty(); }

  /// Size of the trailing axis; the rest are treated as rows.
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return shape.empty() ? 1 : size() / shape.back(); }

  double & operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double & at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double & at(std::size_t i, std::size_t j, std::size_t k)
  {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const
  {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  Tensor reshaped(Shape s) const
  {
    if (shape_numel(s) != size()) {
      throw std::invalid_argument(
        "cannot reshape " + shape_to_string(shape) + " to " + shape_to_string(s));
    }
    return Tensor(std::move(s), data);
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor zeros_like(const Tensor & t) { return Tensor(t.shape, 0.0); }

  bool all_finite() const;

  friend bool operator==(const Tensor & a, const Tensor & b)
  {
    return a.shape == b.shape && a.data == b.data;
  }
};

/// Throws std::invalid_argument naming `what` when shapes differ.
void require_shape(const Tensor & t, const Shape & expected, const char * what);

}  // namespace partner
