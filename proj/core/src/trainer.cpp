#include "mtdnet/trainer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include "mtdnet/common.hpp"
#include "mtdnet/losses.hpp"

namespace mtdnet {

namespace {

// Seed-stream salts, so sampling, batching and label draws never share a
// stream. The target side of train_cross uses the same salts as
// train_single; the source side uses the k*Src* values.
constexpr std::uint64_t kSaltTriplets = 11;
constexpr std::uint64_t kSaltBatches = 23;
constexpr std::uint64_t kSaltSrcTriplets = 31;
constexpr std::uint64_t kSaltSrcBatches = 47;
constexpr std::uint64_t kSaltLabels = 59;

struct SgdState {
  std::map<std::string, std::vector<float>> velocity;

  void step(Network& net, double lr, double momentum, double grad_scale) {
    for (const std::string& name : net.graph.param_names()) {
      TensorT<float>& p = net.graph.param_tensor(name);
      std::vector<float>& v = velocity[name];
      if (v.empty()) v.assign(p.data.size(), 0.0f);
      if (grad_scale != 1.0)
        for (float& g : p.grad) g = static_cast<float>(g * grad_scale);
      sgd_step(p.data, p.grad, lr, momentum, v);
    }
  }
};

std::vector<Triplet> prepare_triplets(const Dataset& ds, const TrainConfig& cfg, int epoch) {
  const auto pairs = enumerate_positive_pairs(ds);
  if (pairs.empty()) throw std::invalid_argument("training: dataset yields no positive pairs");
  const std::uint64_t salt = cfg.resample_negatives_each_epoch ? kSaltTriplets + epoch : kSaltTriplets;
  return make_triplets(pairs, ds, cfg.triplets_per_pair, derive_seed(cfg.seed, salt));
}

std::vector<Triplet> prepare_source_triplets(const Dataset& ds, const TrainConfig& cfg, int epoch) {
  const auto pairs = enumerate_positive_pairs(ds);
  if (pairs.empty()) throw std::invalid_argument("training: source dataset yields no positive pairs");
  const std::uint64_t salt =
      cfg.resample_negatives_each_epoch ? kSaltSrcTriplets + epoch : kSaltSrcTriplets;
  return make_triplets(pairs, ds, cfg.triplets_per_pair, derive_seed(cfg.seed, salt));
}

void feed_triplet(Network& net, const Dataset& ds, const Triplet& t) {
  net.graph.set_input(net.in_anchor, ds.images[t.anchor].image.data);
  net.graph.set_input(net.in_positive, ds.images[t.positive].image.data);
  net.graph.set_input(net.in_negative, ds.images[t.negative].image.data);
}

void check_finite_loss(Network& net) {
  const float v = net.graph.value(net.loss_combined).data[0];
  if (std::isfinite(v)) return;
  const NodeId bad = net.graph.first_nonfinite_node();
  throw std::runtime_error("training aborted: non-finite loss; first non-finite value at " +
                           (bad == kNoNode ? std::string("<loss only>") : net.graph.describe_node(bad)));
}

struct LossTally {
  double trp = 0, cls = 0, cts = 0, combined = 0;
  std::int64_t triplets = 0, cls_pairs = 0, coupled = 0;

  void add_reid(const Network& net) {
    if (net.loss_triplet != kNoNode) trp += net.graph.value(net.loss_triplet).data[0];
    if (net.loss_cls_pos != kNoNode) {
      cls += net.graph.value(net.loss_cls_pos).data[0] + net.graph.value(net.loss_cls_neg).data[0];
      cls_pairs += 2;
    }
    combined += net.graph.value(net.loss_combined).data[0];
    ++triplets;
  }

  EpochStats stats(int epoch, double lambda_cts) const {
    EpochStats s;
    s.epoch = epoch;
    s.l_trp = triplets ? trp / triplets : 0;
    s.l_cls = cls_pairs ? cls / cls_pairs : 0;
    s.l_cts = coupled ? cts / coupled : 0;
    s.combined = triplets ? (combined + lambda_cts * cts) / triplets : 0;
    return s;
  }
};

double batch_scale(const LossConfig& loss, size_t batch_size) {
  return loss.reduction == LossConfig::Reduction::kMean ? 1.0 / static_cast<double>(batch_size) : 1.0;
}

void require_train_graph(const Network& net, const char* what) {
  if (net.mode != ForwardMode::kTrainTriplet)
    throw std::invalid_argument(std::string(what) + ": needs a TrainTriplet-mode network");
}

}  // namespace

void sgd_step(std::span<float> params, std::span<const float> grads, double lr, double momentum,
              std::span<float> velocity) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw std::invalid_argument("sgd_step: params/grads/velocity sizes differ");
  for (size_t i = 0; i < params.size(); ++i) {
    velocity[i] = static_cast<float>(momentum * velocity[i] - lr * grads[i]);
    params[i] += velocity[i];
  }
}

void write_history_csv(const History& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,l_trp,l_cls,l_cts,combined\n";
  for (const EpochStats& e : history)
    out << e.epoch << "," << format_double(e.l_trp) << "," << format_double(e.l_cls) << ","
        << format_double(e.l_cts) << "," << format_double(e.combined) << "\n";
}

History train_single(Network& net, const Dataset& dataset, const TrainConfig& cfg,
                     const EvalCallback& on_eval) {
  cfg.validate();
  require_train_graph(net, "train_single");
  const Dataset augmented = cfg.mirror ? mirror_augment(dataset) : Dataset{};
  const Dataset& active = cfg.mirror ? augmented : dataset;

  SgdState sgd;
  History history;
  std::vector<Triplet> triplets = prepare_triplets(active, cfg, 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.resample_negatives_each_epoch && epoch > 0)
      triplets = prepare_triplets(active, cfg, epoch);
    LossTally tally;
    for (const TripletBatch& batch :
         batch_iter(triplets, cfg.batch_size, derive_seed(cfg.seed, kSaltBatches), epoch)) {
      net.graph.zero_param_grads();
      for (const Triplet& t : batch) {
        feed_triplet(net, active, t);
        net.graph.forward();
        check_finite_loss(net);
        net.graph.backward(net.loss_combined);
        tally.add_reid(net);
      }
      sgd.step(net, cfg.learning_rate, cfg.momentum, batch_scale(net.cfg.loss, batch.size()));
    }
    history.push_back(tally.stats(epoch, 0.0));
    if (on_eval && cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) on_eval(epoch, net);
  }
  return history;
}

CrossDomainState make_cross_state(const Checkpoint& source_ckpt) {
  CrossDomainState state;
  state.source = build_network<float>(source_ckpt.net, ForwardMode::kTrainTriplet, source_ckpt.seed);
  state.target = build_network<float>(source_ckpt.net, ForwardMode::kTrainTriplet, source_ckpt.seed);
  apply_checkpoint(state.source, source_ckpt);
  apply_checkpoint(state.target, source_ckpt);
  return state;
}

History train_cross(CrossDomainState& state, const Dataset& source_data, const Dataset& target_data,
                    const TrainConfig& cfg) {
  cfg.validate();
  require_train_graph(state.target, "train_cross");
  require_train_graph(state.source, "train_cross");
  if (parameter_spec(state.source.cfg, state.source.variant) !=
      parameter_spec(state.target.cfg, state.target.variant))
    throw std::invalid_argument("train_cross: source and target nets must share one NetConfig");

  const Dataset tgt_augmented = cfg.mirror ? mirror_augment(target_data) : Dataset{};
  const Dataset& tgt_active = cfg.mirror ? tgt_augmented : target_data;
  const Dataset src_augmented = cfg.mirror ? mirror_augment(source_data) : Dataset{};
  const Dataset& src_active = cfg.mirror ? src_augmented : source_data;

  const double lambda_cts = state.target.cfg.loss.lambda_cts;
  const float margin = static_cast<float>(state.target.cfg.loss.margin);
  const int fc2_dim = state.target.cfg.fc_dims[1];
  std::vector<float> grad_src(fc2_dim), grad_tgt(fc2_dim);

  SgdState sgd_tgt, sgd_src;
  History history;
  std::vector<Triplet> tgt_triplets = prepare_triplets(tgt_active, cfg, 0);
  std::vector<Triplet> src_triplets = prepare_source_triplets(src_active, cfg, 0);
  std::mt19937_64 label_rng(derive_seed(cfg.seed, kSaltLabels));
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.resample_negatives_each_epoch && epoch > 0) {
      tgt_triplets = prepare_triplets(tgt_active, cfg, epoch);
      src_triplets = prepare_source_triplets(src_active, cfg, epoch);
    }
    // One flat source order per epoch, consumed cyclically per coupled step.
    std::vector<Triplet> src_order;
    for (const TripletBatch& b :
         batch_iter(src_triplets, cfg.batch_size, derive_seed(cfg.seed, kSaltSrcBatches), epoch))
      src_order.insert(src_order.end(), b.begin(), b.end());

    LossTally tally;
    for (const TripletBatch& batch :
         batch_iter(tgt_triplets, cfg.batch_size, derive_seed(cfg.seed, kSaltBatches), epoch)) {
      state.target.graph.zero_param_grads();
      state.source.graph.zero_param_grads();
      for (const Triplet& t : batch) {
        feed_triplet(state.target, tgt_active, t);
        state.target.graph.forward();
        check_finite_loss(state.target);

        feed_triplet(state.source, src_active, src_order[step % src_order.size()]);
        ++step;
        state.source.graph.forward();
        check_finite_loss(state.source);

        if (lambda_cts > 0) {
          // Each side contributes its positive or negative joint pair at
          // random; the XNOR of the two pair labels drives the contrastive
          // pull/push between the FC2 responses.
          const int label_a = static_cast<int>(label_rng() & 1u);
          const int label_b = static_cast<int>(label_rng() & 1u);
          const int label_p = losses::xnor_label(label_a, label_b);
          const NodeId src_fc2 = label_a ? state.source.fc2_pos : state.source.fc2_neg;
          const NodeId tgt_fc2 = label_b ? state.target.fc2_pos : state.target.fc2_neg;
          const auto& fa = state.source.graph.value(src_fc2).data;
          const auto& fb = state.target.graph.value(tgt_fc2).data;
          const float cts =
              losses::contrastive_loss_grad<float>(fa, fb, label_p, margin, grad_src, grad_tgt);
          tally.cts += cts;
          ++tally.coupled;

          BackwardSeed<float> seeds_tgt[2];
          seeds_tgt[0] = {state.target.loss_combined, {1.0f}};
          seeds_tgt[1].node = tgt_fc2;
          seeds_tgt[1].grad.assign(grad_tgt.begin(), grad_tgt.end());
          for (float& g : seeds_tgt[1].grad) g = static_cast<float>(g * lambda_cts);
          state.target.graph.backward(std::span<const BackwardSeed<float>>(seeds_tgt, 2));

          BackwardSeed<float> seeds_src[2];
          seeds_src[0] = {state.source.loss_combined, {1.0f}};
          seeds_src[1].node = src_fc2;
          seeds_src[1].grad.assign(grad_src.begin(), grad_src.end());
          for (float& g : seeds_src[1].grad) g = static_cast<float>(g * lambda_cts);
          state.source.graph.backward(std::span<const BackwardSeed<float>>(seeds_src, 2));
        } else {
          state.target.graph.backward(state.target.loss_combined);
          state.source.graph.backward(state.source.loss_combined);
        }
        tally.add_reid(state.target);
      }
      const double scale = batch_scale(state.target.cfg.loss, batch.size());
      sgd_tgt.step(state.target, cfg.learning_rate, cfg.momentum, scale);
      if (!cfg.freeze_source) sgd_src.step(state.source, cfg.learning_rate, cfg.momentum, scale);
    }
    history.push_back(tally.stats(epoch, lambda_cts));
  }
  return history;
}

Dataset merge_disjoint_ids(const Dataset& source_data, const Dataset& target_data) {
  int max_target_id = -1;
  for (const LabeledImage& im : target_data.images) max_target_id = std::max(max_target_id, im.person_id);
  Dataset combined = target_data;
  combined.images.reserve(target_data.images.size() + source_data.images.size());
  for (LabeledImage im : source_data.images) {
    im.person_id += max_target_id + 1;  // keep identity spaces disjoint
    combined.images.push_back(std::move(im));
  }
  return combined;
}

History train_aug(Network& net, const Dataset& source_data, const Dataset& target_data,
                  const TrainConfig& cfg) {
  return train_single(net, merge_disjoint_ids(source_data, target_data), cfg);
}

}  // namespace mtdnet
