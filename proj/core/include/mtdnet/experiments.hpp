#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtdnet/evaluation.hpp"
#include "mtdnet/network.hpp"
#include "mtdnet/trainer_config.hpp"

namespace mtdnet {

/// Multi-seed single-task vs multi-task comparison on synthetic data
/// (the Table-1 ablation rows, directional).
struct AblationOptions {
  NetConfig net = desk_preset();
  int seeds = 5;
  int train_identities = 64;
  int test_identities = 16;
  int images_per_camera = 1;
  double domain_shift = 0.3;
  int epochs = 20;
  int triplets_per_pair = 3;
  int batch_size = 8;
  std::uint64_t base_seed = 100;
  bool verbose = false;  // progress lines on stderr
};

struct VariantSummary {
  Variant variant = Variant::kFull;
  double rank1_mean = 0, rank5_mean = 0, rank10_mean = 0;
  std::vector<double> rank1_per_seed;
};

struct AblationResult {
  std::vector<VariantSummary> rows;  // full, cls_only, rnk_only
  double chance_rate = 0;            // 1 / gallery size

  const VariantSummary& row(Variant v) const;
  std::string table() const;
};

AblationResult run_ablation(const AblationOptions& opt);

/// Cross-domain transfer vs plain fine-tuning (Table-1 MTDnet-cross vs
/// MTDnet direction), plus the lambda_cts=0 trajectory-equivalence check.
struct CrossExperimentOptions {
  NetConfig net = desk_preset();
  int seeds = 5;
  int source_identities = 64;
  int target_train_identities = 8;
  int target_test_identities = 8;
  int images_per_camera = 1;
  double source_shift = 0.0;
  double target_shift = 0.5;
  int source_epochs = 20;
  int target_epochs = 15;
  int triplets_per_pair = 3;
  int batch_size = 8;
  std::uint64_t base_seed = 300;
  bool check_lambda0_equivalence = true;
  bool verbose = false;
};

struct CrossExperimentResult {
  double cross_rank1_mean = 0, finetune_rank1_mean = 0;
  std::vector<double> cross_rank1_per_seed, finetune_rank1_per_seed;
  bool lambda0_bitwise_equal = false;
  bool lambda0_checked = false;

  std::string table() const;
};

CrossExperimentResult run_cross_experiment(const CrossExperimentOptions& opt);

}  // namespace mtdnet
