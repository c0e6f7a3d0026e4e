#pragma once

#include <optional>
#include <span>

namespace mtdnet {

/// Margins, combination weights and reduction rule for the training losses.
struct LossConfig {
  double alpha = 1.0;   // triplet margin
  double margin = 1.0;  // contrastive margin m
  enum class Reduction { kSum, kMean };
  Reduction reduction = Reduction::kMean;
  double lambda_rnk = 1.0;
  double lambda_cls = 1.0;
  double lambda_cts = 1.0;
  bool normalize_embeddings = false;

  void validate() const;  // throws std::invalid_argument on negative margins/weights
};

namespace losses {

// Probabilities are clamped to [kProbEps, 1-kProbEps] before the log.
template <typename T>
inline constexpr T kProbEps = T(1e-12);

/// Triplet ranking loss for one triplet:
/// max(0, |f_a - f_p|^2 - |f_a - f_n|^2 + alpha).
template <typename T>
T triplet_loss(std::span<const T> f_a, std::span<const T> f_p, std::span<const T> f_n, T alpha);

/// Binary cross-entropy -log p(y|x) on a 2-way probability vector.
template <typename T>
T classification_loss(std::span<const T> probs2, int y);

/// 1 iff the labels agree. Inputs must be 0 or 1.
int xnor_label(int label_a, int label_b);

/// Contrastive loss: y*0.5*d^2 + (1-y)*0.5*max(0, m-d)^2 with d = |a-b|_2.
template <typename T>
T contrastive_loss(std::span<const T> a, std::span<const T> b, int y, T m);

/// Writes dL/da and dL/db (overwriting) and returns the loss value.
/// The kink at d = 0 uses subgradient 0.
template <typename T>
T contrastive_loss_grad(std::span<const T> a, std::span<const T> b, int y, T m,
                        std::span<T> grad_a, std::span<T> grad_b);

/// Weighted combination lambda_rnk*L_trp + lambda_cls*L_cls (+ lambda_cts*L_cts).
template <typename T>
T combine(T l_trp, T l_cls, std::optional<T> l_cts, const LossConfig& cfg);

}  // namespace losses
}  // namespace mtdnet
