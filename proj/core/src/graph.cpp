#include "mtdnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mtdnet/common.hpp"
#include "mtdnet/losses.hpp"

namespace mtdnet {

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConv2d: return "conv2d";
    case Op::kMaxPool2d: return "maxpool2d";
    case Op::kFullyConnected: return "fully_connected";
    case Op::kRelu: return "relu";
    case Op::kConcatChannels: return "concat_channels";
    case Op::kSqEuclidean: return "sq_euclidean";
    case Op::kSoftmax2: return "softmax2";
    case Op::kFlatten: return "flatten";
    case Op::kL2Normalize: return "l2_normalize";
    case Op::kTripletLoss: return "triplet_loss";
    case Op::kLogLoss2: return "log_loss2";
    case Op::kContrastiveLoss: return "contrastive_loss";
    case Op::kWeightedSum: return "weighted_sum";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

template <typename T>
bool all_zero(const std::vector<T>& v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return x == T(0); });
}

}  // namespace

template <typename T>
NodeId GraphT<T>::add(NodeT<T> node) {
  for (NodeId in : node.inputs) {
    if (in < 0 || in >= static_cast<NodeId>(nodes_.size()))
      fail(std::string(op_name(node.op)) + ": input node id " + std::to_string(in) + " out of range");
  }
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

template <typename T>
void GraphT<T>::check_id(NodeId id, const char* what) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
    fail(std::string(what) + ": node id " + std::to_string(id) + " out of range");
}

template <typename T>
const NodeT<T>& GraphT<T>::node(NodeId id) const {
  check_id(id, "node");
  return nodes_[id];
}

template <typename T>
NodeId GraphT<T>::input(Shape shape, std::string name) {
  NodeT<T> n;
  n.op = Op::kInput;
  n.value = TensorT<T>(std::move(shape));
  n.name = std::move(name);
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::param(std::string name, TensorT<T> init) {
  if (name.empty()) fail("param: name must be non-empty");
  if (param_index_.count(name)) fail("param: duplicate parameter name '" + name + "'");
  NodeT<T> n;
  n.op = Op::kParam;
  n.value = std::move(init);
  n.name = name;
  NodeId id = add(std::move(n));
  param_index_.emplace(name, id);
  param_names_.push_back(std::move(name));
  return id;
}

template <typename T>
NodeId GraphT<T>::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  check_id(x, "conv2d");
  check_id(w, "conv2d");
  check_id(b, "conv2d");
  const Shape& xs = nodes_[x].value.shape;
  const Shape& ws = nodes_[w].value.shape;
  const Shape& bs = nodes_[b].value.shape;
  if (xs.size() != 3) fail("conv2d: input must be [C,H,W], got " + shape_str(xs));
  if (ws.size() != 4) fail("conv2d: weights must be [C_out,C_in,kH,kW], got " + shape_str(ws));
  if (bs.size() != 1 || bs[0] != ws[0])
    fail("conv2d: bias " + shape_str(bs) + " does not match C_out of weights " + shape_str(ws));
  if (ws[1] != xs[0])
    fail("conv2d: weight C_in=" + std::to_string(ws[1]) + " does not match input channels of " +
         shape_str(xs));
  if (stride < 1) fail("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) fail("conv2d: pad must be >= 0, got " + std::to_string(pad));
  if (ws[2] > xs[1] + 2 * pad || ws[3] > xs[2] + 2 * pad)
    fail("conv2d: kernel " + shape_str(ws) + " larger than padded input " + shape_str(xs) +
         " with pad " + std::to_string(pad));
  NodeT<T> n;
  n.op = Op::kConv2d;
  n.inputs = {x, w, b};
  n.stride = stride;
  n.pad = pad;
  n.value = TensorT<T>({ws[0], conv_out_dim(xs[1], ws[2], stride, pad), conv_out_dim(xs[2], ws[3], stride, pad)});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::maxpool2d(NodeId x, int window, int stride) {
  check_id(x, "maxpool2d");
  const Shape& xs = nodes_[x].value.shape;
  if (xs.size() != 3) fail("maxpool2d: input must be [C,H,W], got " + shape_str(xs));
  if (window < 1 || stride < 1)
    fail("maxpool2d: window and stride must be >= 1, got k=" + std::to_string(window) +
         " stride=" + std::to_string(stride));
  if (window > xs[1] || window > xs[2])
    fail("maxpool2d: window " + std::to_string(window) + " exceeds input " + shape_str(xs));
  NodeT<T> n;
  n.op = Op::kMaxPool2d;
  n.inputs = {x};
  n.window = window;
  n.stride = stride;
  n.value = TensorT<T>({xs[0], conv_out_dim(xs[1], window, stride, 0), conv_out_dim(xs[2], window, stride, 0)});
  n.argmax.assign(n.value.data.size(), 0);
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::fully_connected(NodeId x, NodeId w, NodeId b) {
  check_id(x, "fully_connected");
  check_id(w, "fully_connected");
  check_id(b, "fully_connected");
  const Shape& xs = nodes_[x].value.shape;
  const Shape& ws = nodes_[w].value.shape;
  const Shape& bs = nodes_[b].value.shape;
  if (xs.size() != 1) fail("fully_connected: input must be [D_in], got " + shape_str(xs));
  if (ws.size() != 2) fail("fully_connected: weights must be [D_out,D_in], got " + shape_str(ws));
  if (ws[1] != xs[0])
    fail("fully_connected: weights " + shape_str(ws) + " do not match input " + shape_str(xs));
  if (bs.size() != 1 || bs[0] != ws[0])
    fail("fully_connected: bias " + shape_str(bs) + " does not match weights " + shape_str(ws));
  NodeT<T> n;
  n.op = Op::kFullyConnected;
  n.inputs = {x, w, b};
  n.value = TensorT<T>({ws[0]});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::relu(NodeId x) {
  check_id(x, "relu");
  NodeT<T> n;
  n.op = Op::kRelu;
  n.inputs = {x};
  n.value = TensorT<T>(nodes_[x].value.shape);
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::concat_channels(NodeId a, NodeId b) {
  check_id(a, "concat_channels");
  check_id(b, "concat_channels");
  const Shape& as = nodes_[a].value.shape;
  const Shape& bs = nodes_[b].value.shape;
  if (as.size() != 3 || bs.size() != 3)
    fail("concat_channels: inputs must be [C,H,W], got " + shape_str(as) + " and " + shape_str(bs));
  if (as[1] != bs[1] || as[2] != bs[2])
    fail("concat_channels: spatial dims differ, " + shape_str(as) + " vs " + shape_str(bs));
  NodeT<T> n;
  n.op = Op::kConcatChannels;
  n.inputs = {a, b};
  n.value = TensorT<T>({as[0] + bs[0], as[1], as[2]});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::sq_euclidean(NodeId a, NodeId b) {
  check_id(a, "sq_euclidean");
  check_id(b, "sq_euclidean");
  if (nodes_[a].value.shape != nodes_[b].value.shape)
    fail("sq_euclidean: shape mismatch " + shape_str(nodes_[a].value.shape) + " vs " +
         shape_str(nodes_[b].value.shape));
  NodeT<T> n;
  n.op = Op::kSqEuclidean;
  n.inputs = {a, b};
  n.value = TensorT<T>({1});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::softmax2(NodeId logits) {
  check_id(logits, "softmax2");
  const Shape& s = nodes_[logits].value.shape;
  if (numel(s) != 2) fail("softmax2: logits must have 2 elements, got " + shape_str(s));
  NodeT<T> n;
  n.op = Op::kSoftmax2;
  n.inputs = {logits};
  n.value = TensorT<T>({2});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::flatten(NodeId x) {
  check_id(x, "flatten");
  NodeT<T> n;
  n.op = Op::kFlatten;
  n.inputs = {x};
  n.value = TensorT<T>({static_cast<int>(numel(nodes_[x].value.shape))});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::l2_normalize(NodeId x) {
  check_id(x, "l2_normalize");
  const Shape& s = nodes_[x].value.shape;
  if (s.size() != 1) fail("l2_normalize: input must be a vector, got " + shape_str(s));
  NodeT<T> n;
  n.op = Op::kL2Normalize;
  n.inputs = {x};
  n.value = TensorT<T>(s);
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::triplet_loss(NodeId fa, NodeId fp, NodeId fn, T alpha) {
  check_id(fa, "triplet_loss");
  check_id(fp, "triplet_loss");
  check_id(fn, "triplet_loss");
  const Shape& s = nodes_[fa].value.shape;
  if (nodes_[fp].value.shape != s || nodes_[fn].value.shape != s)
    fail("triplet_loss: embedding shapes differ: " + shape_str(s) + ", " +
         shape_str(nodes_[fp].value.shape) + ", " + shape_str(nodes_[fn].value.shape));
  if (alpha < T(0)) fail("triplet_loss: margin alpha must be >= 0");
  NodeT<T> n;
  n.op = Op::kTripletLoss;
  n.inputs = {fa, fp, fn};
  n.margin = alpha;
  n.value = TensorT<T>({1});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::log_loss2(NodeId probs, int y) {
  check_id(probs, "log_loss2");
  if (numel(nodes_[probs].value.shape) != 2)
    fail("log_loss2: probs must have 2 elements, got " + shape_str(nodes_[probs].value.shape));
  if (y != 0 && y != 1) fail("log_loss2: label must be 0 or 1, got " + std::to_string(y));
  NodeT<T> n;
  n.op = Op::kLogLoss2;
  n.inputs = {probs};
  n.label = y;
  n.value = TensorT<T>({1});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::contrastive_loss(NodeId a, NodeId b, int y, T m) {
  check_id(a, "contrastive_loss");
  check_id(b, "contrastive_loss");
  if (nodes_[a].value.shape != nodes_[b].value.shape)
    fail("contrastive_loss: shape mismatch " + shape_str(nodes_[a].value.shape) + " vs " +
         shape_str(nodes_[b].value.shape));
  if (y != 0 && y != 1) fail("contrastive_loss: label must be 0 or 1, got " + std::to_string(y));
  if (m < T(0)) fail("contrastive_loss: margin must be >= 0");
  NodeT<T> n;
  n.op = Op::kContrastiveLoss;
  n.inputs = {a, b};
  n.label = y;
  n.margin = m;
  n.value = TensorT<T>({1});
  return add(std::move(n));
}

template <typename T>
NodeId GraphT<T>::weighted_sum(std::vector<NodeId> terms, std::vector<T> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size())
    fail("weighted_sum: need equally many terms and coefficients");
  for (NodeId t : terms) {
    check_id(t, "weighted_sum");
    if (nodes_[t].value.size() != 1)
      fail("weighted_sum: term " + std::to_string(t) + " is not scalar");
  }
  NodeT<T> n;
  n.op = Op::kWeightedSum;
  n.inputs = std::move(terms);
  n.coeffs = std::move(coeffs);
  n.value = TensorT<T>({1});
  return add(std::move(n));
}

template <typename T>
void GraphT<T>::set_contrastive_label(NodeId node, int y) {
  check_id(node, "set_contrastive_label");
  if (nodes_[node].op != Op::kContrastiveLoss) fail("set_contrastive_label: not a contrastive node");
  if (y != 0 && y != 1) fail("set_contrastive_label: label must be 0 or 1");
  nodes_[node].label = y;
}

template <typename T>
void GraphT<T>::set_input(NodeId node, std::span<const T> values) {
  check_id(node, "set_input");
  NodeT<T>& n = nodes_[node];
  if (n.op != Op::kInput) fail("set_input: node " + std::to_string(node) + " is not an input");
  if (static_cast<std::int64_t>(values.size()) != n.value.size())
    fail("set_input: got " + std::to_string(values.size()) + " values for shape " +
         shape_str(n.value.shape));
  std::copy(values.begin(), values.end(), n.value.data.begin());
}

template <typename T>
const TensorT<T>& GraphT<T>::value(NodeId node) const {
  check_id(node, "value");
  return nodes_[node].value;
}

template <typename T>
TensorT<T>& GraphT<T>::mutable_value(NodeId node) {
  check_id(node, "mutable_value");
  return nodes_[node].value;
}

template <typename T>
bool GraphT<T>::has_param(const std::string& name) const {
  return param_index_.count(name) != 0;
}

template <typename T>
NodeId GraphT<T>::param_node(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) fail("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
TensorT<T>& GraphT<T>::param_tensor(const std::string& name) {
  return nodes_[param_node(name)].value;
}

template <typename T>
const TensorT<T>& GraphT<T>::param_tensor(const std::string& name) const {
  return nodes_[param_node(name)].value;
}

// ---------------------------------------------------------------------------
// Forward kernels
// ---------------------------------------------------------------------------

template <typename T>
void GraphT<T>::forward_node(NodeT<T>& n) {
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kConv2d: {
      const TensorT<T>& x = nodes_[n.inputs[0]].value;
      const TensorT<T>& w = nodes_[n.inputs[1]].value;
      const TensorT<T>& b = nodes_[n.inputs[2]].value;
      const int ci_n = x.shape[0], h = x.shape[1], wd = x.shape[2];
      const int co_n = n.value.shape[0], oh_n = n.value.shape[1], ow_n = n.value.shape[2];
      const int kh_n = w.shape[2], kw_n = w.shape[3];
      const int stride = n.stride, pad = n.pad;
      const T* xd = x.data.data();
      const T* wd_ = w.data.data();
      const T* bd = b.data.data();
      T* out = n.value.data.data();
      parallel_for(co_n, [&](std::int64_t co) {
        const T* wco = wd_ + co * ci_n * kh_n * kw_n;
        for (int oh = 0; oh < oh_n; ++oh) {
          for (int ow = 0; ow < ow_n; ++ow) {
            T acc = bd[co];
            for (int ci = 0; ci < ci_n; ++ci) {
              const T* xc = xd + static_cast<std::int64_t>(ci) * h * wd;
              const T* wc = wco + ci * kh_n * kw_n;
              for (int kh = 0; kh < kh_n; ++kh) {
                const int ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= h) continue;
                const T* xrow = xc + static_cast<std::int64_t>(ih) * wd;
                const T* wrow = wc + kh * kw_n;
                for (int kw = 0; kw < kw_n; ++kw) {
                  const int iw = ow * stride - pad + kw;
                  if (iw < 0 || iw >= wd) continue;
                  acc += xrow[iw] * wrow[kw];
                }
              }
            }
            out[(co * oh_n + oh) * ow_n + ow] = acc;
          }
        }
      });
      break;
    }
    case Op::kMaxPool2d: {
      const TensorT<T>& x = nodes_[n.inputs[0]].value;
      const int c_n = x.shape[0], h = x.shape[1], wd = x.shape[2];
      const int oh_n = n.value.shape[1], ow_n = n.value.shape[2];
      for (int c = 0; c < c_n; ++c) {
        const T* xc = x.data.data() + static_cast<std::int64_t>(c) * h * wd;
        for (int oh = 0; oh < oh_n; ++oh) {
          for (int ow = 0; ow < ow_n; ++ow) {
            int best = (oh * n.stride) * wd + ow * n.stride;
            T best_v = xc[best];
            for (int kh = 0; kh < n.window; ++kh) {
              for (int kw = 0; kw < n.window; ++kw) {
                const int idx = (oh * n.stride + kh) * wd + (ow * n.stride + kw);
                if (xc[idx] > best_v) {  // strict: first-encountered index wins ties
                  best_v = xc[idx];
                  best = idx;
                }
              }
            }
            const std::int64_t o = (static_cast<std::int64_t>(c) * oh_n + oh) * ow_n + ow;
            n.value.data[o] = best_v;
            n.argmax[o] = best;
          }
        }
      }
      break;
    }
    case Op::kFullyConnected: {
      const TensorT<T>& x = nodes_[n.inputs[0]].value;
      const TensorT<T>& w = nodes_[n.inputs[1]].value;
      const TensorT<T>& b = nodes_[n.inputs[2]].value;
      const int d_out = w.shape[0], d_in = w.shape[1];
      for (int i = 0; i < d_out; ++i) {
        T acc = b.data[i];
        const T* wrow = w.data.data() + static_cast<std::int64_t>(i) * d_in;
        for (int j = 0; j < d_in; ++j) acc += wrow[j] * x.data[j];
        n.value.data[i] = acc;
      }
      break;
    }
    case Op::kRelu: {
      const TensorT<T>& x = nodes_[n.inputs[0]].value;
      for (size_t i = 0; i < x.data.size(); ++i) n.value.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
      break;
    }
    case Op::kConcatChannels: {
      const TensorT<T>& a = nodes_[n.inputs[0]].value;
      const TensorT<T>& b = nodes_[n.inputs[1]].value;
      std::copy(a.data.begin(), a.data.end(), n.value.data.begin());
      std::copy(b.data.begin(), b.data.end(), n.value.data.begin() + a.data.size());
      break;
    }
    case Op::kSqEuclidean: {
      const TensorT<T>& a = nodes_[n.inputs[0]].value;
      const TensorT<T>& b = nodes_[n.inputs[1]].value;
      T acc = T(0);
      for (size_t i = 0; i < a.data.size(); ++i) {
        const T d = a.data[i] - b.data[i];
        acc += d * d;
      }
      n.value.data[0] = acc;
      break;
    }
    case Op::kSoftmax2: {
      const TensorT<T>& z = nodes_[n.inputs[0]].value;
      const T m = std::max(z.data[0], z.data[1]);
      const T e0 = std::exp(z.data[0] - m);
      const T e1 = std::exp(z.data[1] - m);
      const T sum = e0 + e1;
      n.value.data[0] = e0 / sum;
      n.value.data[1] = e1 / sum;
      break;
    }
    case Op::kFlatten: {
      const TensorT<T>& x = nodes_[n.inputs[0]].value;
      std::copy(x.data.begin(), x.data.end(), n.value.data.begin());
      break;
    }
    case Op::kL2Normalize: {
      const TensorT<T>& x = nodes_[n.inputs[0]].value;
      T sq = T(0);
      for (T v : x.data) sq += v * v;
      const T norm = std::sqrt(sq);
      if (norm < T(1e-12)) {
        std::copy(x.data.begin(), x.data.end(), n.value.data.begin());
      } else {
        for (size_t i = 0; i < x.data.size(); ++i) n.value.data[i] = x.data[i] / norm;
      }
      break;
    }
    case Op::kTripletLoss: {
      const TensorT<T>& fa = nodes_[n.inputs[0]].value;
      const TensorT<T>& fp = nodes_[n.inputs[1]].value;
      const TensorT<T>& fn = nodes_[n.inputs[2]].value;
      n.value.data[0] = losses::triplet_loss<T>(fa.data, fp.data, fn.data, n.margin);
      break;
    }
    case Op::kLogLoss2: {
      const TensorT<T>& p = nodes_[n.inputs[0]].value;
      n.value.data[0] = losses::classification_loss<T>(p.data, n.label);
      break;
    }
    case Op::kContrastiveLoss: {
      const TensorT<T>& a = nodes_[n.inputs[0]].value;
      const TensorT<T>& b = nodes_[n.inputs[1]].value;
      n.value.data[0] = losses::contrastive_loss<T>(a.data, b.data, n.label, n.margin);
      break;
    }
    case Op::kWeightedSum: {
      T acc = T(0);
      for (size_t i = 0; i < n.inputs.size(); ++i) acc += n.coeffs[i] * nodes_[n.inputs[i]].value.data[0];
      n.value.data[0] = acc;
      break;
    }
  }
}

template <typename T>
void GraphT<T>::forward() {
  for (NodeT<T>& n : nodes_) forward_node(n);
}

// ---------------------------------------------------------------------------
// Backward kernels. Each kernel ACCUMULATES into its inputs' grad buffers.
// ---------------------------------------------------------------------------

template <typename T>
void GraphT<T>::backward_node(NodeT<T>& n) {
  const std::vector<T>& g = n.value.grad;
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kConv2d: {
      TensorT<T>& x = nodes_[n.inputs[0]].value;
      TensorT<T>& w = nodes_[n.inputs[1]].value;
      TensorT<T>& b = nodes_[n.inputs[2]].value;
      const int ci_n = x.shape[0], h = x.shape[1], wd = x.shape[2];
      const int co_n = n.value.shape[0], oh_n = n.value.shape[1], ow_n = n.value.shape[2];
      const int kh_n = w.shape[2], kw_n = w.shape[3];
      for (int co = 0; co < co_n; ++co) {
        for (int oh = 0; oh < oh_n; ++oh) {
          for (int ow = 0; ow < ow_n; ++ow) {
            const T go = g[(static_cast<std::int64_t>(co) * oh_n + oh) * ow_n + ow];
            if (go == T(0)) continue;
            b.grad[co] += go;
            for (int ci = 0; ci < ci_n; ++ci) {
              const std::int64_t xoff = static_cast<std::int64_t>(ci) * h * wd;
              const std::int64_t woff = (static_cast<std::int64_t>(co) * ci_n + ci) * kh_n * kw_n;
              for (int kh = 0; kh < kh_n; ++kh) {
                const int ih = oh * n.stride - n.pad + kh;
                if (ih < 0 || ih >= h) continue;
                for (int kw = 0; kw < kw_n; ++kw) {
                  const int iw = ow * n.stride - n.pad + kw;
                  if (iw < 0 || iw >= wd) continue;
                  const std::int64_t xi = xoff + static_cast<std::int64_t>(ih) * wd + iw;
                  const std::int64_t wi = woff + kh * kw_n + kw;
                  w.grad[wi] += go * x.data[xi];
                  x.grad[xi] += go * w.data[wi];
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kMaxPool2d: {
      TensorT<T>& x = nodes_[n.inputs[0]].value;
      const int c_n = x.shape[0], h = x.shape[1], wd = x.shape[2];
      const std::int64_t plane = static_cast<std::int64_t>(h) * wd;
      const std::int64_t out_plane = static_cast<std::int64_t>(n.value.shape[1]) * n.value.shape[2];
      for (int c = 0; c < c_n; ++c) {
        for (std::int64_t o = 0; o < out_plane; ++o) {
          const std::int64_t oi = c * out_plane + o;
          x.grad[c * plane + n.argmax[oi]] += g[oi];
        }
      }
      break;
    }
    case Op::kFullyConnected: {
      TensorT<T>& x = nodes_[n.inputs[0]].value;
      TensorT<T>& w = nodes_[n.inputs[1]].value;
      TensorT<T>& b = nodes_[n.inputs[2]].value;
      const int d_out = w.shape[0], d_in = w.shape[1];
      for (int i = 0; i < d_out; ++i) {
        const T gi = g[i];
        if (gi == T(0)) continue;
        b.grad[i] += gi;
        const std::int64_t off = static_cast<std::int64_t>(i) * d_in;
        for (int j = 0; j < d_in; ++j) {
          w.grad[off + j] += gi * x.data[j];
          x.grad[j] += gi * w.data[off + j];
        }
      }
      break;
    }
    case Op::kRelu: {
      TensorT<T>& x = nodes_[n.inputs[0]].value;
      for (size_t i = 0; i < g.size(); ++i)
        if (x.data[i] > T(0)) x.grad[i] += g[i];
      break;
    }
    case Op::kConcatChannels: {
      TensorT<T>& a = nodes_[n.inputs[0]].value;
      TensorT<T>& b = nodes_[n.inputs[1]].value;
      for (size_t i = 0; i < a.data.size(); ++i) a.grad[i] += g[i];
      for (size_t i = 0; i < b.data.size(); ++i) b.grad[i] += g[a.data.size() + i];
      break;
    }
    case Op::kSqEuclidean: {
      TensorT<T>& a = nodes_[n.inputs[0]].value;
      TensorT<T>& b = nodes_[n.inputs[1]].value;
      const T g0 = g[0];
      for (size_t i = 0; i < a.data.size(); ++i) {
        const T d = T(2) * (a.data[i] - b.data[i]) * g0;
        a.grad[i] += d;
        b.grad[i] -= d;
      }
      break;
    }
    case Op::kSoftmax2: {
      TensorT<T>& z = nodes_[n.inputs[0]].value;
      const T s0 = n.value.data[0], s1 = n.value.data[1];
      const T dot = g[0] * s0 + g[1] * s1;
      z.grad[0] += s0 * (g[0] - dot);
      z.grad[1] += s1 * (g[1] - dot);
      break;
    }
    case Op::kFlatten: {
      TensorT<T>& x = nodes_[n.inputs[0]].value;
      for (size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i];
      break;
    }
    case Op::kL2Normalize: {
      TensorT<T>& x = nodes_[n.inputs[0]].value;
      T sq = T(0);
      for (T v : x.data) sq += v * v;
      const T norm = std::sqrt(sq);
      if (norm < T(1e-12)) {
        for (size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i];
      } else {
        T ydotg = T(0);
        for (size_t i = 0; i < g.size(); ++i) ydotg += n.value.data[i] * g[i];
        for (size_t i = 0; i < g.size(); ++i) x.grad[i] += (g[i] - n.value.data[i] * ydotg) / norm;
      }
      break;
    }
    case Op::kTripletLoss: {
      TensorT<T>& fa = nodes_[n.inputs[0]].value;
      TensorT<T>& fp = nodes_[n.inputs[1]].value;
      TensorT<T>& fn = nodes_[n.inputs[2]].value;
      if (n.value.data[0] > T(0)) {  // hinge active; subgradient 0 at the kink
        const T g0 = g[0];
        for (size_t i = 0; i < fa.data.size(); ++i) {
          fa.grad[i] += g0 * T(2) * (fn.data[i] - fp.data[i]);
          fp.grad[i] += g0 * T(-2) * (fa.data[i] - fp.data[i]);
          fn.grad[i] += g0 * T(2) * (fa.data[i] - fn.data[i]);
        }
      }
      break;
    }
    case Op::kLogLoss2: {
      TensorT<T>& p = nodes_[n.inputs[0]].value;
      const T py = p.data[n.label];
      const T eps = losses::kProbEps<T>;
      if (py > eps && py < T(1) - eps) p.grad[n.label] -= g[0] / py;
      break;
    }
    case Op::kContrastiveLoss: {
      TensorT<T>& a = nodes_[n.inputs[0]].value;
      TensorT<T>& b = nodes_[n.inputs[1]].value;
      std::vector<T> ga(a.data.size()), gb(b.data.size());
      losses::contrastive_loss_grad<T>(a.data, b.data, n.label, n.margin, ga, gb);
      for (size_t i = 0; i < ga.size(); ++i) {
        a.grad[i] += g[0] * ga[i];
        b.grad[i] += g[0] * gb[i];
      }
      break;
    }
    case Op::kWeightedSum: {
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        if (n.coeffs[i] == T(0)) continue;  // bitwise no-op for zero-weighted terms
        nodes_[n.inputs[i]].value.grad[0] += g[0] * n.coeffs[i];
      }
      break;
    }
  }
}

template <typename T>
void GraphT<T>::zero_param_grads() {
  for (NodeT<T>& n : nodes_)
    if (n.op == Op::kParam) {
      n.value.ensure_grad();
      n.value.zero_grad();
    }
}

template <typename T>
void GraphT<T>::backward(NodeId loss) {
  check_id(loss, "backward");
  if (nodes_[loss].value.size() != 1)
    fail("backward: loss node " + std::to_string(loss) + " is not scalar (shape " +
         shape_str(nodes_[loss].value.shape) + ")");
  BackwardSeed<T> seed{loss, {T(1)}};
  backward(std::span<const BackwardSeed<T>>(&seed, 1));
}

template <typename T>
void GraphT<T>::backward(std::span<const BackwardSeed<T>> seeds) {
  for (NodeT<T>& n : nodes_) {
    n.value.ensure_grad();
    if (n.op != Op::kParam) n.value.zero_grad();
  }
  for (const BackwardSeed<T>& s : seeds) {
    check_id(s.node, "backward seed");
    NodeT<T>& n = nodes_[s.node];
    if (static_cast<std::int64_t>(s.grad.size()) != n.value.size())
      fail("backward seed: grad size " + std::to_string(s.grad.size()) + " vs node value size " +
           std::to_string(n.value.size()));
    for (size_t i = 0; i < s.grad.size(); ++i) n.value.grad[i] += s.grad[i];
  }
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->op == Op::kInput || it->op == Op::kParam) continue;
    if (all_zero(it->value.grad)) continue;
    backward_node(*it);
  }
}

template <typename T>
NodeId GraphT<T>::first_nonfinite_node() const {
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (!nodes_[i].value.all_finite()) return static_cast<NodeId>(i);
  return kNoNode;
}

template <typename T>
std::string GraphT<T>::describe_node(NodeId id) const {
  check_id(id, "describe_node");
  const NodeT<T>& n = nodes_[id];
  std::string s = "node " + std::to_string(id) + " (" + op_name(n.op);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ") shape " + shape_str(n.value.shape);
}

template <typename T>
std::map<std::string, TensorT<T>> backward_gradients(GraphT<T>& graph, NodeId loss) {
  graph.zero_param_grads();
  graph.backward(loss);
  std::map<std::string, TensorT<T>> out;
  for (const std::string& name : graph.param_names()) {
    const TensorT<T>& p = graph.param_tensor(name);
    TensorT<T> g(p.shape);
    g.data = p.grad;
    out.emplace(name, std::move(g));
  }
  return out;
}

template class GraphT<float>;
template class GraphT<double>;
template std::map<std::string, TensorT<float>> backward_gradients(GraphT<float>&, NodeId);
template std::map<std::string, TensorT<double>> backward_gradients(GraphT<double>&, NodeId);

}  // namespace mtdnet
