#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <utility>

#include "mtdnet/graph.hpp"
#include "mtdnet/losses.hpp"

namespace mtdnet {

/// One convolutional stage: conv + ReLU, optionally followed by max-pool
/// (pool_k == 0 disables the pool).
struct ConvStage {
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int pool_k = 0;
  int pool_stride = 1;
};

/// Which heads a built graph instantiates. Train graphs take the (A1,A2,B2)
/// triplet; the test graph takes a bare image pair and keeps only the
/// classification path; EmbedOnly maps one image to its embedding vector.
enum class ForwardMode { kTrainTriplet, kTestPair, kEmbedOnly };

/// Table-1 ablation variants. kRnkOnly deepens the trunk to five conv stages
/// so both single-task nets have the same conv depth.
enum class Variant { kFull, kClsOnly, kRnkOnly };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct NetConfig {
  std::array<int, 3> input_shape{3, 32, 32};
  std::array<ConvStage, 2> trunk{};
  int embed_dim = 0;
  // Pair-classification stack; its first stage consumes the channel-wise
  // concatenation of two trunk outputs (2x trunk channels).
  std::array<ConvStage, 3> cls_convs{};
  std::array<int, 3> fc_dims{0, 0, 2};
  LossConfig loss;
  std::string preset = "custom";

  void validate() const;

  // Shape algebra (no graph needed).
  std::array<int, 3> trunk_out_shape() const;
  std::array<int, 3> joint_shape() const;
  std::array<int, 3> cls_out_shape() const;   // after the three cls stages, from joint maps
  std::array<int, 3> rnk_out_shape() const;   // after the deepened single-image trunk
};

/// Full-scale preset: 3x224x224 input, 256x13x13 trunk output, 512x13x13
/// joint maps, 512-d embedding, 4096/4096/2 classifier FCs.
NetConfig paper_preset();
/// CPU-sized preset: 3x32x32 input, 32x6x6 trunk output, 64x6x6 joint maps,
/// 64-d embedding, 128/64/2 classifier FCs (~3e5 parameters).
NetConfig desk_preset();
NetConfig preset_by_name(const std::string& name);

/// A built graph plus handles to its interesting nodes (kNoNode when the mode
/// or variant does not instantiate them).
template <typename T>
struct NetworkT {
  NetConfig cfg;
  Variant variant = Variant::kFull;
  ForwardMode mode = ForwardMode::kTrainTriplet;
  GraphT<T> graph;

  // TrainTriplet inputs: anchor A1 (camera 1), positive A2 and negative B2
  // (both camera 2). TestPair reuses in_anchor/in_positive for (I1, I2);
  // EmbedOnly uses in_anchor.
  NodeId in_anchor = kNoNode, in_positive = kNoNode, in_negative = kNoNode;
  NodeId trunk_anchor = kNoNode, trunk_positive = kNoNode, trunk_negative = kNoNode;
  NodeId joint_pos = kNoNode, joint_neg = kNoNode;  // concatenated feature-map pairs
  NodeId emb_anchor = kNoNode, emb_positive = kNoNode, emb_negative = kNoNode;
  NodeId loss_triplet = kNoNode, loss_cls_pos = kNoNode, loss_cls_neg = kNoNode;
  NodeId loss_combined = kNoNode;
  NodeId fc2_pos = kNoNode, fc2_neg = kNoNode;  // classifier FC2 responses per joint pair
  NodeId prob = kNoNode;                        // TestPair softmax output
  NodeId prob_pos = kNoNode, prob_neg = kNoNode;  // TrainTriplet softmax outputs
};

using Network = NetworkT<float>;

/// Builds the multi-task graph for `mode` with He fan-in initialized weights
/// and zero biases, drawn from `init_seed` in a fixed parameter order.
template <typename T>
NetworkT<T> build_network(const NetConfig& cfg, ForwardMode mode, std::uint64_t init_seed);

/// Variant-aware builder; build_network is ablation_build with kFull.
template <typename T>
NetworkT<T> ablation_build(const NetConfig& cfg, Variant variant, ForwardMode mode,
                           std::uint64_t init_seed);

/// The canonical (name, shape) list of every parameter a (cfg, variant) pair
/// defines, in creation order, computed without building a graph. Checkpoints
/// must carry exactly this set.
std::vector<std::pair<std::string, Shape>> parameter_spec(const NetConfig& cfg, Variant variant);

/// p(same | img1, img2) from a TestPair graph.
template <typename T>
T forward_similarity(NetworkT<T>& net, std::type_identity_t<std::span<const T>> img1,
                     std::type_identity_t<std::span<const T>> img2);

/// Embedding vector of one image from an EmbedOnly graph.
template <typename T>
TensorT<T> forward_embedding(NetworkT<T>& net, std::type_identity_t<std::span<const T>> img);

/// Response of the classifier's second FC layer for a pair (the vector the
/// cross-domain contrastive loss couples). Order matters: img1 occupies the
/// first half of the joint maps.
template <typename T>
TensorT<T> joint_feature_fc2(NetworkT<T>& net, std::type_identity_t<std::span<const T>> img1,
                             std::type_identity_t<std::span<const T>> img2);

extern template struct NetworkT<float>;
extern template struct NetworkT<double>;
extern template NetworkT<float> build_network(const NetConfig&, ForwardMode, std::uint64_t);
extern template NetworkT<double> build_network(const NetConfig&, ForwardMode, std::uint64_t);
extern template NetworkT<float> ablation_build(const NetConfig&, Variant, ForwardMode, std::uint64_t);
extern template NetworkT<double> ablation_build(const NetConfig&, Variant, ForwardMode, std::uint64_t);
extern template float forward_similarity(NetworkT<float>&, std::span<const float>, std::span<const float>);
extern template double forward_similarity(NetworkT<double>&, std::span<const double>, std::span<const double>);
extern template TensorT<float> forward_embedding(NetworkT<float>&, std::span<const float>);
extern template TensorT<double> forward_embedding(NetworkT<double>&, std::span<const double>);
extern template TensorT<float> joint_feature_fc2(NetworkT<float>&, std::span<const float>, std::span<const float>);
extern template TensorT<double> joint_feature_fc2(NetworkT<double>&, std::span<const double>, std::span<const double>);

}  // namespace mtdnet
