#include "mtdnet/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mtdnet {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kClsOnly: return "cls_only";
    case Variant::kRnkOnly: return "rnk_only";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "cls_only") return Variant::kClsOnly;
  if (name == "rnk_only") return Variant::kRnkOnly;
  throw std::invalid_argument("unknown variant '" + name + "' (full, cls_only, rnk_only)");
}

namespace {

int stage_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

std::array<int, 3> apply_stage(std::array<int, 3> s, const ConvStage& st, const char* what) {
  s[0] = st.out_channels;
  s[1] = stage_out(s[1], st.kernel, st.stride, st.pad);
  s[2] = stage_out(s[2], st.kernel, st.stride, st.pad);
  if (s[1] < 1 || s[2] < 1)
    throw std::invalid_argument(std::string(what) + ": conv collapses spatial dims to " +
                                std::to_string(s[1]) + "x" + std::to_string(s[2]));
  if (st.pool_k > 0) {
    if (st.pool_k > s[1] || st.pool_k > s[2])
      throw std::invalid_argument(std::string(what) + ": pool window exceeds feature map");
    s[1] = stage_out(s[1], st.pool_k, st.pool_stride, 0);
    s[2] = stage_out(s[2], st.pool_k, st.pool_stride, 0);
  }
  return s;
}

void check_stage(const ConvStage& st, const char* what) {
  if (st.out_channels < 1) throw std::invalid_argument(std::string(what) + ": out_channels must be >= 1");
  if (st.kernel < 1) throw std::invalid_argument(std::string(what) + ": kernel must be >= 1");
  if (st.stride < 1) throw std::invalid_argument(std::string(what) + ": stride must be >= 1");
  if (st.pad < 0) throw std::invalid_argument(std::string(what) + ": pad must be >= 0");
  if (st.pool_k < 0) throw std::invalid_argument(std::string(what) + ": pool_k must be >= 0");
  if (st.pool_k > 0 && st.pool_stride < 1)
    throw std::invalid_argument(std::string(what) + ": pool_stride must be >= 1");
}

}  // namespace

void NetConfig::validate() const {
  if (input_shape[0] != 3) throw std::invalid_argument("net: input must have 3 channels");
  if (input_shape[1] < 8 || input_shape[2] < 8)
    throw std::invalid_argument("net: input spatial dims must be >= 8");
  check_stage(trunk[0], "net.trunk.conv1");
  check_stage(trunk[1], "net.trunk.conv2");
  for (int i = 0; i < 3; ++i) check_stage(cls_convs[i], "net.cls");
  if (embed_dim < 1) throw std::invalid_argument("net: embed_dim must be >= 1");
  if (fc_dims[0] < 1 || fc_dims[1] < 1) throw std::invalid_argument("net: fc dims must be >= 1");
  if (fc_dims[2] != 2) throw std::invalid_argument("net: final FC dim must be 2 (binary softmax)");
  loss.validate();
  trunk_out_shape();  // throws if any stage collapses
  cls_out_shape();
  rnk_out_shape();
}

std::array<int, 3> NetConfig::trunk_out_shape() const {
  std::array<int, 3> s = input_shape;
  s = apply_stage(s, trunk[0], "net.trunk.conv1");
  s = apply_stage(s, trunk[1], "net.trunk.conv2");
  return s;
}

std::array<int, 3> NetConfig::joint_shape() const {
  std::array<int, 3> s = trunk_out_shape();
  s[0] *= 2;
  return s;
}

std::array<int, 3> NetConfig::cls_out_shape() const {
  std::array<int, 3> s = joint_shape();
  for (int i = 0; i < 3; ++i) s = apply_stage(s, cls_convs[i], "net.cls");
  return s;
}

std::array<int, 3> NetConfig::rnk_out_shape() const {
  std::array<int, 3> s = trunk_out_shape();
  for (int i = 0; i < 3; ++i) s = apply_stage(s, cls_convs[i], "net.rnk");
  return s;
}

NetConfig paper_preset() {
  NetConfig cfg;
  cfg.preset = "paper";
  cfg.input_shape = {3, 224, 224};
  cfg.trunk[0] = {96, 11, 4, 2, 3, 2};
  cfg.trunk[1] = {256, 5, 1, 2, 3, 2};
  cfg.embed_dim = 512;
  cfg.cls_convs[0] = {384, 3, 1, 1, 0, 1};
  cfg.cls_convs[1] = {384, 3, 1, 1, 0, 1};
  cfg.cls_convs[2] = {256, 3, 1, 1, 3, 2};
  cfg.fc_dims = {4096, 4096, 2};
  return cfg;
}

NetConfig desk_preset() {
  NetConfig cfg;
  cfg.preset = "desk";
  cfg.input_shape = {3, 32, 32};
  cfg.trunk[0] = {16, 5, 1, 0, 2, 2};
  cfg.trunk[1] = {32, 3, 1, 0, 2, 2};
  cfg.embed_dim = 64;
  cfg.cls_convs[0] = {48, 3, 1, 1, 0, 1};
  cfg.cls_convs[1] = {48, 3, 1, 1, 0, 1};
  cfg.cls_convs[2] = {32, 3, 1, 1, 0, 1};
  cfg.fc_dims = {128, 64, 2};
  return cfg;
}

NetConfig preset_by_name(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (paper, desk)");
}

namespace {

/// Creates parameters in a fixed order with He fan-in init (weights) and
/// zeros (biases), and wires the network branches. All branches that name the
/// same layer share one parameter node.
template <typename T>
class Builder {
 public:
  Builder(NetworkT<T>& net, std::uint64_t seed) : net_(net), g_(net.graph), rng_(seed) {}

  void make_params() {
    const NetConfig& c = net_.cfg;
    int ch = c.input_shape[0];
    conv_params("trunk.conv1", c.trunk[0], ch);
    ch = c.trunk[0].out_channels;
    conv_params("trunk.conv2", c.trunk[1], ch);

    // Heads the mode never runs get no parameters: the TestPair graph holds
    // only trunk + classifier, EmbedOnly only trunk (+rnk tail) + embedding.
    const bool has_triplet_head =
        net_.variant != Variant::kClsOnly && net_.mode != ForwardMode::kTestPair;
    const bool has_cls_stack =
        net_.variant != Variant::kRnkOnly && net_.mode != ForwardMode::kEmbedOnly;

    if (net_.variant == Variant::kRnkOnly) {
      ch = c.trunk[1].out_channels;
      for (int i = 0; i < 3; ++i) {
        conv_params("rnk.conv" + std::to_string(i + 3), c.cls_convs[i], ch);
        ch = c.cls_convs[i].out_channels;
      }
    }
    if (has_triplet_head) {
      const auto s = net_.variant == Variant::kRnkOnly ? c.rnk_out_shape() : c.trunk_out_shape();
      fc_params("embed.fc", c.embed_dim, s[0] * s[1] * s[2]);
    }
    if (has_cls_stack) {
      ch = 2 * c.trunk[1].out_channels;
      for (int i = 0; i < 3; ++i) {
        conv_params("cls.conv" + std::to_string(i + 3), c.cls_convs[i], ch);
        ch = c.cls_convs[i].out_channels;
      }
      const auto s = c.cls_out_shape();
      fc_params("cls.fc6", c.fc_dims[0], s[0] * s[1] * s[2]);
      fc_params("cls.fc7", c.fc_dims[1], c.fc_dims[0]);
      fc_params("cls.fc8", c.fc_dims[2], c.fc_dims[1]);
    }
  }

  NodeId trunk(NodeId img) {
    NodeId x = conv_block(img, "trunk.conv1", net_.cfg.trunk[0]);
    return conv_block(x, "trunk.conv2", net_.cfg.trunk[1]);
  }

  NodeId rnk_tail(NodeId trunk_out) {
    NodeId x = trunk_out;
    for (int i = 0; i < 3; ++i)
      x = conv_block(x, "rnk.conv" + std::to_string(i + 3), net_.cfg.cls_convs[i]);
    return x;
  }

  NodeId embedding(NodeId features) {
    NodeId flat = g_.flatten(features);
    NodeId e = g_.fully_connected(flat, weight_.at("embed.fc"), bias_.at("embed.fc"));
    if (net_.cfg.loss.normalize_embeddings) e = g_.l2_normalize(e);
    return e;
  }

  /// Joint maps -> conv3..5 -> fc6 -> fc7 -> fc8 logits -> softmax.
  /// Returns {softmax node, fc2 (fc7 activation) node}.
  std::pair<NodeId, NodeId> cls_stack(NodeId joint) {
    NodeId x = joint;
    for (int i = 0; i < 3; ++i)
      x = conv_block(x, "cls.conv" + std::to_string(i + 3), net_.cfg.cls_convs[i]);
    x = g_.flatten(x);
    x = g_.relu(g_.fully_connected(x, weight_.at("cls.fc6"), bias_.at("cls.fc6")));
    NodeId fc2 = g_.relu(g_.fully_connected(x, weight_.at("cls.fc7"), bias_.at("cls.fc7")));
    NodeId logits = g_.fully_connected(fc2, weight_.at("cls.fc8"), bias_.at("cls.fc8"));
    return {g_.softmax2(logits), fc2};
  }

 private:
  void conv_params(const std::string& name, const ConvStage& st, int in_ch) {
    const int fan_in = in_ch * st.kernel * st.kernel;
    weight_[name] = he_param(name + ".weight", {st.out_channels, in_ch, st.kernel, st.kernel}, fan_in);
    bias_[name] = g_.param(name + ".bias", TensorT<T>({st.out_channels}));
  }

  void fc_params(const std::string& name, int d_out, int d_in) {
    weight_[name] = he_param(name + ".weight", {d_out, d_in}, d_in);
    bias_[name] = g_.param(name + ".bias", TensorT<T>({d_out}));
  }

  NodeId he_param(const std::string& name, Shape shape, int fan_in) {
    TensorT<T> t(std::move(shape));
    // Drawn in double so float and double builds share init values bit-for-bit
    // (up to the float cast).
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (T& v : t.data) v = static_cast<T>(dist(rng_));
    return g_.param(name, std::move(t));
  }

  NodeId conv_block(NodeId x, const std::string& name, const ConvStage& st) {
    NodeId y = g_.relu(g_.conv2d(x, weight_.at(name), bias_.at(name), st.stride, st.pad));
    if (st.pool_k > 0) y = g_.maxpool2d(y, st.pool_k, st.pool_stride);
    return y;
  }

  NetworkT<T>& net_;
  GraphT<T>& g_;
  std::mt19937_64 rng_;
  std::map<std::string, NodeId> weight_, bias_;
};

}  // namespace

template <typename T>
NetworkT<T> ablation_build(const NetConfig& cfg, Variant variant, ForwardMode mode,
                           std::uint64_t init_seed) {
  cfg.validate();
  if (variant == Variant::kClsOnly && mode == ForwardMode::kEmbedOnly)
    throw std::invalid_argument("cls_only variant has no embedding head");
  if (variant == Variant::kRnkOnly && mode == ForwardMode::kTestPair)
    throw std::invalid_argument("rnk_only variant has no pair classifier");

  NetworkT<T> net;
  net.cfg = cfg;
  net.variant = variant;
  net.mode = mode;
  Builder<T> b(net, init_seed);
  b.make_params();

  const Shape img_shape{cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]};
  GraphT<T>& g = net.graph;
  const double l_rnk = cfg.loss.lambda_rnk;
  const double l_cls = cfg.loss.lambda_cls;

  switch (mode) {
    case ForwardMode::kEmbedOnly: {
      net.in_anchor = g.input(img_shape, "I");
      net.trunk_anchor = b.trunk(net.in_anchor);
      NodeId feat = net.trunk_anchor;
      if (variant == Variant::kRnkOnly) feat = b.rnk_tail(feat);
      net.emb_anchor = b.embedding(feat);
      break;
    }
    case ForwardMode::kTestPair: {
      net.in_anchor = g.input(img_shape, "I1");
      net.in_positive = g.input(img_shape, "I2");
      net.trunk_anchor = b.trunk(net.in_anchor);
      net.trunk_positive = b.trunk(net.in_positive);
      net.joint_pos = g.concat_channels(net.trunk_anchor, net.trunk_positive);
      auto [prob, fc2] = b.cls_stack(net.joint_pos);
      net.prob = prob;
      net.fc2_pos = fc2;
      break;
    }
    case ForwardMode::kTrainTriplet: {
      net.in_anchor = g.input(img_shape, "A1");
      net.in_positive = g.input(img_shape, "A2");
      net.in_negative = g.input(img_shape, "B2");
      const NodeId ta = net.trunk_anchor = b.trunk(net.in_anchor);
      const NodeId tp = net.trunk_positive = b.trunk(net.in_positive);
      const NodeId tn = net.trunk_negative = b.trunk(net.in_negative);

      std::vector<NodeId> terms;
      std::vector<T> coeffs;
      if (variant != Variant::kClsOnly) {
        NodeId fa = ta, fp = tp, fn = tn;
        if (variant == Variant::kRnkOnly) {
          fa = b.rnk_tail(ta);
          fp = b.rnk_tail(tp);
          fn = b.rnk_tail(tn);
        }
        net.emb_anchor = b.embedding(fa);
        net.emb_positive = b.embedding(fp);
        net.emb_negative = b.embedding(fn);
        net.loss_triplet =
            g.triplet_loss(net.emb_anchor, net.emb_positive, net.emb_negative, T(cfg.loss.alpha));
        terms.push_back(net.loss_triplet);
        coeffs.push_back(T(l_rnk));
      }
      if (variant != Variant::kRnkOnly) {
        // The positive joint pair is (A1,A2); the negative pair is (A1,B2).
        net.joint_pos = g.concat_channels(ta, tp);
        net.joint_neg = g.concat_channels(ta, tn);
        auto [prob_pos, fc2_pos] = b.cls_stack(net.joint_pos);
        auto [prob_neg, fc2_neg] = b.cls_stack(net.joint_neg);
        net.prob_pos = prob_pos;
        net.prob_neg = prob_neg;
        net.fc2_pos = fc2_pos;
        net.fc2_neg = fc2_neg;
        net.loss_cls_pos = g.log_loss2(prob_pos, 1);
        net.loss_cls_neg = g.log_loss2(prob_neg, 0);
        terms.push_back(net.loss_cls_pos);
        coeffs.push_back(T(l_cls));
        terms.push_back(net.loss_cls_neg);
        coeffs.push_back(T(l_cls));
      }
      net.loss_combined = g.weighted_sum(std::move(terms), std::move(coeffs));
      break;
    }
  }
  return net;
}

template <typename T>
NetworkT<T> build_network(const NetConfig& cfg, ForwardMode mode, std::uint64_t init_seed) {
  return ablation_build<T>(cfg, Variant::kFull, mode, init_seed);
}

std::vector<std::pair<std::string, Shape>> parameter_spec(const NetConfig& cfg, Variant variant) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> spec;
  auto conv = [&spec](const std::string& name, const ConvStage& st, int in_ch) {
    spec.emplace_back(name + ".weight", Shape{st.out_channels, in_ch, st.kernel, st.kernel});
    spec.emplace_back(name + ".bias", Shape{st.out_channels});
  };
  auto fc = [&spec](const std::string& name, int d_out, int d_in) {
    spec.emplace_back(name + ".weight", Shape{d_out, d_in});
    spec.emplace_back(name + ".bias", Shape{d_out});
  };

  conv("trunk.conv1", cfg.trunk[0], cfg.input_shape[0]);
  conv("trunk.conv2", cfg.trunk[1], cfg.trunk[0].out_channels);
  if (variant == Variant::kRnkOnly) {
    int ch = cfg.trunk[1].out_channels;
    for (int i = 0; i < 3; ++i) {
      conv("rnk.conv" + std::to_string(i + 3), cfg.cls_convs[i], ch);
      ch = cfg.cls_convs[i].out_channels;
    }
  }
  if (variant != Variant::kClsOnly) {
    const auto s = variant == Variant::kRnkOnly ? cfg.rnk_out_shape() : cfg.trunk_out_shape();
    fc("embed.fc", cfg.embed_dim, s[0] * s[1] * s[2]);
  }
  if (variant != Variant::kRnkOnly) {
    int ch = 2 * cfg.trunk[1].out_channels;
    for (int i = 0; i < 3; ++i) {
      conv("cls.conv" + std::to_string(i + 3), cfg.cls_convs[i], ch);
      ch = cfg.cls_convs[i].out_channels;
    }
    const auto s = cfg.cls_out_shape();
    fc("cls.fc6", cfg.fc_dims[0], s[0] * s[1] * s[2]);
    fc("cls.fc7", cfg.fc_dims[1], cfg.fc_dims[0]);
    fc("cls.fc8", cfg.fc_dims[2], cfg.fc_dims[1]);
  }
  return spec;
}

template <typename T>
T forward_similarity(NetworkT<T>& net, std::type_identity_t<std::span<const T>> img1,
                     std::type_identity_t<std::span<const T>> img2) {
  if (net.mode != ForwardMode::kTestPair)
    throw std::invalid_argument("forward_similarity requires a TestPair graph");
  net.graph.set_input(net.in_anchor, img1);
  net.graph.set_input(net.in_positive, img2);
  net.graph.forward();
  return net.graph.value(net.prob).data[1];
}

template <typename T>
TensorT<T> forward_embedding(NetworkT<T>& net, std::type_identity_t<std::span<const T>> img) {
  if (net.mode != ForwardMode::kEmbedOnly)
    throw std::invalid_argument("forward_embedding requires an EmbedOnly graph");
  net.graph.set_input(net.in_anchor, img);
  net.graph.forward();
  return net.graph.value(net.emb_anchor);
}

template <typename T>
TensorT<T> joint_feature_fc2(NetworkT<T>& net, std::type_identity_t<std::span<const T>> img1,
                             std::type_identity_t<std::span<const T>> img2) {
  if (net.mode != ForwardMode::kTestPair)
    throw std::invalid_argument("joint_feature_fc2 requires a TestPair graph");
  net.graph.set_input(net.in_anchor, img1);
  net.graph.set_input(net.in_positive, img2);
  net.graph.forward();
  return net.graph.value(net.fc2_pos);
}

template struct NetworkT<float>;
template struct NetworkT<double>;
template NetworkT<float> build_network(const NetConfig&, ForwardMode, std::uint64_t);
template NetworkT<double> build_network(const NetConfig&, ForwardMode, std::uint64_t);
template NetworkT<float> ablation_build(const NetConfig&, Variant, ForwardMode, std::uint64_t);
template NetworkT<double> ablation_build(const NetConfig&, Variant, ForwardMode, std::uint64_t);
template float forward_similarity(NetworkT<float>&, std::span<const float>, std::span<const float>);
template double forward_similarity(NetworkT<double>&, std::span<const double>, std::span<const double>);
template TensorT<float> forward_embedding(NetworkT<float>&, std::span<const float>);
template TensorT<double> forward_embedding(NetworkT<double>&, std::span<const double>);
template TensorT<float> joint_feature_fc2(NetworkT<float>&, std::span<const float>, std::span<const float>);
template TensorT<double> joint_feature_fc2(NetworkT<double>&, std::span<const double>, std::span<const double>);

}  // namespace mtdnet
