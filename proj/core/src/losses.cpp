#include "mtdnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mtdnet {

void LossConfig::validate() const {
  if (alpha < 0) throw std::invalid_argument("loss.alpha must be >= 0");
  if (margin < 0) throw std::invalid_argument("loss.margin must be >= 0");
  if (lambda_rnk < 0 || lambda_cls < 0 || lambda_cts < 0)
    throw std::invalid_argument("loss lambda weights must be >= 0");
}

namespace losses {

namespace {
void check_same_dim(size_t a, size_t b, const char* what) {
  if (a != b)
    throw std::invalid_argument(std::string(what) + ": dimension mismatch " + std::to_string(a) +
                                " vs " + std::to_string(b));
}

void check_binary(int y, const char* what) {
  if (y != 0 && y != 1)
    throw std::invalid_argument(std::string(what) + ": label must be 0 or 1, got " + std::to_string(y));
}

template <typename T>
T sq_dist(std::span<const T> a, std::span<const T> b) {
  T acc = T(0);
  for (size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}
}  // namespace

template <typename T>
T triplet_loss(std::span<const T> f_a, std::span<const T> f_p, std::span<const T> f_n, T alpha) {
  check_same_dim(f_a.size(), f_p.size(), "triplet_loss");
  check_same_dim(f_a.size(), f_n.size(), "triplet_loss");
  if (alpha < T(0)) throw std::invalid_argument("triplet_loss: alpha must be >= 0");
  const T v = sq_dist(f_a, f_p) - sq_dist(f_a, f_n) + alpha;
  return v > T(0) ? v : T(0);
}

template <typename T>
T classification_loss(std::span<const T> probs2, int y) {
  if (probs2.size() != 2) throw std::invalid_argument("classification_loss: need 2 probabilities");
  check_binary(y, "classification_loss");
  const T p = std::clamp(probs2[y], kProbEps<T>, T(1) - kProbEps<T>);
  return -std::log(p);
}

int xnor_label(int label_a, int label_b) {
  check_binary(label_a, "xnor_label");
  check_binary(label_b, "xnor_label");
  return label_a == label_b ? 1 : 0;
}

template <typename T>
T contrastive_loss(std::span<const T> a, std::span<const T> b, int y, T m) {
  check_same_dim(a.size(), b.size(), "contrastive_loss");
  check_binary(y, "contrastive_loss");
  if (m < T(0)) throw std::invalid_argument("contrastive_loss: margin must be >= 0");
  const T d = std::sqrt(sq_dist(a, b));
  if (y == 1) return T(0.5) * d * d;
  const T gap = m - d;
  return gap > T(0) ? T(0.5) * gap * gap : T(0);
}

template <typename T>
T contrastive_loss_grad(std::span<const T> a, std::span<const T> b, int y, T m,
                        std::span<T> grad_a, std::span<T> grad_b) {
  check_same_dim(a.size(), b.size(), "contrastive_loss_grad");
  check_same_dim(grad_a.size(), a.size(), "contrastive_loss_grad");
  check_same_dim(grad_b.size(), b.size(), "contrastive_loss_grad");
  check_binary(y, "contrastive_loss_grad");
  const T d = std::sqrt(sq_dist(a, b));
  std::fill(grad_a.begin(), grad_a.end(), T(0));
  std::fill(grad_b.begin(), grad_b.end(), T(0));
  if (y == 1) {
    // d(0.5*d^2)/da = a - b
    for (size_t i = 0; i < a.size(); ++i) {
      grad_a[i] = a[i] - b[i];
      grad_b[i] = b[i] - a[i];
    }
    return T(0.5) * d * d;
  }
  const T gap = m - d;
  if (gap <= T(0) || d <= T(0)) return gap > T(0) ? T(0.5) * gap * gap : T(0);
  // d(0.5*(m-d)^2)/da = -(m-d)/d * (a - b)
  const T scale = -gap / d;
  for (size_t i = 0; i < a.size(); ++i) {
    grad_a[i] = scale * (a[i] - b[i]);
    grad_b[i] = -grad_a[i];
  }
  return T(0.5) * gap * gap;
}

template <typename T>
T combine(T l_trp, T l_cls, std::optional<T> l_cts, const LossConfig& cfg) {
  T v = T(cfg.lambda_rnk) * l_trp + T(cfg.lambda_cls) * l_cls;
  if (l_cts) v += T(cfg.lambda_cts) * *l_cts;
  return v;
}

template float triplet_loss<float>(std::span<const float>, std::span<const float>, std::span<const float>, float);
template double triplet_loss<double>(std::span<const double>, std::span<const double>, std::span<const double>, double);
template float classification_loss<float>(std::span<const float>, int);
template double classification_loss<double>(std::span<const double>, int);
template float contrastive_loss<float>(std::span<const float>, std::span<const float>, int, float);
template double contrastive_loss<double>(std::span<const double>, std::span<const double>, int, double);
template float contrastive_loss_grad<float>(std::span<const float>, std::span<const float>, int, float, std::span<float>, std::span<float>);
template double contrastive_loss_grad<double>(std::span<const double>, std::span<const double>, int, double, std::span<double>, std::span<double>);
template float combine<float>(float, float, std::optional<float>, const LossConfig&);
template double combine<double>(double, double, std::optional<double>, const LossConfig&);

}  // namespace losses
}  // namespace mtdnet
