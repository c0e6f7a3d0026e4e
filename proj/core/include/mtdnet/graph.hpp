#pragma once

#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtdnet/tensor.hpp"

namespace mtdnet {

enum class Op {
  kInput,
  kParam,
  kConv2d,
  kMaxPool2d,
  kFullyConnected,
  kRelu,
  kConcatChannels,
  kSqEuclidean,
  kSoftmax2,
  kFlatten,
  kL2Normalize,
  kTripletLoss,
  kLogLoss2,
  kContrastiveLoss,
  kWeightedSum,
};

const char* op_name(Op op);

using NodeId = int;
inline constexpr NodeId kNoNode = -1;

template <typename T>
struct NodeT {
  Op op = Op::kInput;
  std::vector<NodeId> inputs;
  TensorT<T> value;

  // Op attributes. Which fields apply depends on `op`.
  int stride = 1;
  int pad = 0;
  int window = 0;          // pool window
  int label = 0;           // kLogLoss2 / kContrastiveLoss target y
  T margin = T(0);         // kTripletLoss alpha, kContrastiveLoss m
  std::vector<T> coeffs;   // kWeightedSum weights
  std::vector<int> argmax; // kMaxPool2d gradient routing, filled by forward
  std::string name;        // kParam registry name, kInput diagnostic label
};

/// Gradient injected at `node` before the reverse sweep. `grad` must have
/// exactly as many elements as the node's value.
template <typename T>
struct BackwardSeed {
  NodeId node = kNoNode;
  std::vector<T> grad;
};

/// Static computation graph: nodes are appended in topological order and
/// executed in that order. One graph instance is single-threaded; independent
/// instances can run concurrently.
///
/// Parameter gradients accumulate across backward() calls until
/// zero_param_grads(), which is how per-sample gradients are summed over a
/// batch. Non-parameter gradients are cleared at the start of every backward.
template <typename T>
class GraphT {
 public:
  // Construction. Every builder validates shapes and throws
  // std::invalid_argument with a descriptive message on mismatch.
  NodeId input(Shape shape, std::string name = "");
  NodeId param(std::string name, TensorT<T> init);
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  NodeId maxpool2d(NodeId x, int window, int stride);
  NodeId fully_connected(NodeId x, NodeId w, NodeId b);
  NodeId relu(NodeId x);
  NodeId concat_channels(NodeId a, NodeId b);
  NodeId sq_euclidean(NodeId a, NodeId b);
  NodeId softmax2(NodeId logits);
  NodeId flatten(NodeId x);
  NodeId l2_normalize(NodeId x);
  NodeId triplet_loss(NodeId fa, NodeId fp, NodeId fn, T alpha);
  NodeId log_loss2(NodeId probs, int y);
  NodeId contrastive_loss(NodeId a, NodeId b, int y, T m);
  NodeId weighted_sum(std::vector<NodeId> terms, std::vector<T> coeffs);

  void set_contrastive_label(NodeId node, int y);

  // Data movement.
  void set_input(NodeId node, std::span<const T> values);
  const TensorT<T>& value(NodeId node) const;
  TensorT<T>& mutable_value(NodeId node);

  // Parameter registry (insertion order is the canonical order).
  const std::vector<std::string>& param_names() const { return param_names_; }
  bool has_param(const std::string& name) const;
  TensorT<T>& param_tensor(const std::string& name);
  const TensorT<T>& param_tensor(const std::string& name) const;
  NodeId param_node(const std::string& name) const;

  // Execution.
  void forward();
  void zero_param_grads();
  void backward(NodeId loss);
  void backward(std::span<const BackwardSeed<T>> seeds);

  /// First node (lowest id) whose value contains a NaN/Inf, or kNoNode.
  NodeId first_nonfinite_node() const;
  std::string describe_node(NodeId node) const;

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const NodeT<T>& node(NodeId id) const;

 private:
  NodeId add(NodeT<T> node);
  void check_id(NodeId id, const char* what) const;
  void forward_node(NodeT<T>& n);
  void backward_node(NodeT<T>& n);

  std::vector<NodeT<T>> nodes_;
  std::vector<std::string> param_names_;
  std::unordered_map<std::string, NodeId> param_index_;
};

/// Spec surface: clears parameter gradients, runs one backward pass from
/// `loss`, and returns a copy of every parameter gradient by name.
template <typename T>
std::map<std::string, TensorT<T>> backward_gradients(GraphT<T>& graph, NodeId loss);

using Graph = GraphT<float>;

extern template class GraphT<float>;
extern template class GraphT<double>;
extern template std::map<std::string, TensorT<float>> backward_gradients(GraphT<float>&, NodeId);
extern template std::map<std::string, TensorT<double>> backward_gradients(GraphT<double>&, NodeId);

}  // namespace mtdnet
