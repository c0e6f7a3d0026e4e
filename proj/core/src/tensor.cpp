#include "mtdnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtdnet {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dim " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
TensorT<T>::TensorT(Shape s) : shape(std::move(s)), data(numel(shape), T(0)) {}

template <typename T>
TensorT<T>::TensorT(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
}

template <typename T>
TensorT<T> TensorT<T>::vec(std::vector<T> values) {
  Shape s{static_cast<int>(values.size())};
  return TensorT(std::move(s), std::move(values));
}

template <typename T>
void TensorT<T>::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), T(0));
}

template <typename T>
void TensorT<T>::zero_grad() {
  std::fill(grad.begin(), grad.end(), T(0));
}

template <typename T>
T& TensorT<T>::at3(int c, int h, int w) {
  return data[(static_cast<std::int64_t>(c) * shape[1] + h) * shape[2] + w];
}

template <typename T>
T TensorT<T>::at3(int c, int h, int w) const {
  return data[(static_cast<std::int64_t>(c) * shape[1] + h) * shape[2] + w];
}

template <typename T>
bool TensorT<T>::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
}

template struct TensorT<float>;
template struct TensorT<double>;

}  // namespace mtdnet
