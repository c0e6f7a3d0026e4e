#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "mtdnet/checkpoint.hpp"
#include "mtdnet/network.hpp"
#include "mtdnet/sampling.hpp"
#include "mtdnet/trainer_config.hpp"

namespace mtdnet {

struct EpochStats {
  int epoch = 0;
  double l_trp = 0;  // mean per triplet (unweighted)
  double l_cls = 0;  // mean per classified pair (unweighted)
  double l_cts = 0;  // mean per coupled step; 0 outside cross mode
  double combined = 0;
};
using History = std::vector<EpochStats>;

/// `epoch,l_trp,l_cls,l_cts,combined` rows.
void write_history_csv(const History& history, const std::filesystem::path& path);

/// One SGD-with-momentum update: v <- momentum*v - lr*g; p <- p + v.
void sgd_step(std::span<float> params, std::span<const float> grads, double lr, double momentum,
              std::span<float> velocity);

using EvalCallback = std::function<void(int epoch, Network& net)>;

/// Joint multi-task training on one dataset. Per triplet the combined loss is
/// lambda_rnk*L_trp + lambda_cls*(CE(pos pair, y=1) + CE(neg pair, y=0));
/// gradients are summed over the batch (mean reduction divides by batch
/// size). Deterministic in (cfg, data, seed): two identical calls produce
/// bit-identical parameters. Throws on a non-finite loss, naming the first
/// offending graph node.
History train_single(Network& net, const Dataset& dataset, const TrainConfig& cfg,
                     const EvalCallback& on_eval = nullptr);

/// Coupled source/target nets for cross-domain transfer. Both start from the
/// same source-trained checkpoint.
struct CrossDomainState {
  Network source;
  Network target;
};
CrossDomainState make_cross_state(const Checkpoint& source_ckpt);

/// Cross-domain training: each net trains its own ReID losses on its own
/// dataset; additionally each coupled step draws one pair per side (positive
/// or negative at random), XNORs the two pair labels, and applies the
/// contrastive loss to the two nets' classifier-FC2 responses. Both nets
/// update unless cfg.freeze_source. With lambda_cts == 0 the target-side
/// trajectory is bitwise identical to train_single on the target dataset.
History train_cross(CrossDomainState& state, const Dataset& source_data, const Dataset& target_data,
                    const TrainConfig& cfg);

/// Target images followed by source images with source person ids offset past
/// the target's, so no cross-dataset positive pairs can form.
Dataset merge_disjoint_ids(const Dataset& source_data, const Dataset& target_data);

/// Baseline that concatenates source into target (source person ids offset
/// past the target's) and runs train_single on the union.
History train_aug(Network& net, const Dataset& source_data, const Dataset& target_data,
                  const TrainConfig& cfg);

}  // namespace mtdnet
