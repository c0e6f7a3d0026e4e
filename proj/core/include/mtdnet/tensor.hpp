#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mtdnet {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense n-dimensional array, row-major with the innermost dimension fastest.
/// `grad` is empty until a backward pass touches the tensor; once allocated it
/// always has exactly data.size() elements.
template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;

  TensorT() = default;
  explicit TensorT(Shape s);
  TensorT(Shape s, std::vector<T> values);

  static TensorT scalar(T v) { return TensorT({1}, {v}); }
  static TensorT vec(std::vector<T> values);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void zero_grad();

  // [C,H,W] element access used by image code and tests.
  T& at3(int c, int h, int w);
  T at3(int c, int h, int w) const;

  bool all_finite() const;
};

using Tensor = TensorT<float>;

extern template struct TensorT<float>;
extern template struct TensorT<double>;

}  // namespace mtdnet
