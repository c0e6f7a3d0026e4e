#pragma once

#include <cstdint>
#include <string>

namespace mtdnet {

enum class TrainMode { kSingle, kCross, kAug };
const char* train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-3;  // constant; no decay schedule
  double momentum = 0.9;
  int epochs = 1;
  int batch_size = 16;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::kSingle;
  int eval_every = 0;           // invoke the eval callback every N epochs; 0 = never
  int triplets_per_pair = 10;   // negatives drawn per positive pair
  bool mirror = false;          // horizontal-mirror augmentation before sampling
  bool resample_negatives_each_epoch = false;
  bool freeze_source = false;   // cross mode: do not update the source net

  void validate() const;
};

}  // namespace mtdnet
