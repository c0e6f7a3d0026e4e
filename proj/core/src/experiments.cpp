#include "mtdnet/experiments.hpp"

#include <cstring>
#include <iostream>
#include <stdexcept>

#include "mtdnet/common.hpp"
#include "mtdnet/synth_data.hpp"
#include "mtdnet/trainer.hpp"

namespace mtdnet {

namespace {

double mean(const std::vector<double>& v) {
  double acc = 0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / v.size();
}

/// Rank-n accuracies of a trained checkpoint on a test split, scored the way
/// each variant is tested: pair classifier for full/cls_only, embedding
/// distance for rnk_only.
CmcCurve eval_checkpoint(const Checkpoint& ckpt, const Dataset& test, const Dataset& distractors,
                         std::uint64_t seed) {
  const bool use_cls = ckpt.variant != Variant::kRnkOnly;
  Network net = ablation_build<float>(ckpt.net, ckpt.variant,
                                      use_cls ? ForwardMode::kTestPair : ForwardMode::kEmbedOnly, 0);
  apply_checkpoint(net, ckpt);
  const ScoreMatrix m = build_single_shot_eval(test, distractors, net,
                                               use_cls ? Scorer::kClsProb : Scorer::kNegEuclid, seed);
  return cmc(m);
}

bool params_bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.params.size() != b.params.size()) return false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].first != b.params[i].first) return false;
    const auto& da = a.params[i].second.data;
    const auto& db = b.params[i].second.data;
    if (da.size() != db.size()) return false;
    if (std::memcmp(da.data(), db.data(), da.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

const VariantSummary& AblationResult::row(Variant v) const {
  for (const VariantSummary& r : rows)
    if (r.variant == v) return r;
  throw std::logic_error("ablation result missing variant row");
}

std::string AblationResult::table() const {
  std::string s = "variant    rank-1   rank-5   rank-10\n";
  for (const VariantSummary& r : rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-9s  %.4f   %.4f   %.4f\n", variant_name(r.variant),
                  r.rank1_mean, r.rank5_mean, r.rank10_mean);
    s += line;
  }
  s += "chance rate 1/gallery = " + format_double(chance_rate) + "\n";
  return s;
}

AblationResult run_ablation(const AblationOptions& opt) {
  AblationResult result;
  result.chance_rate = 1.0 / opt.test_identities;
  const Variant variants[] = {Variant::kFull, Variant::kClsOnly, Variant::kRnkOnly};
  for (Variant v : variants) {
    VariantSummary row;
    row.variant = v;
    result.rows.push_back(row);
  }

  for (int s = 0; s < opt.seeds; ++s) {
    const std::uint64_t data_seed = derive_seed(opt.base_seed, s);
    const SynthSpec spec =
        make_synth_spec(opt.train_identities + opt.test_identities, opt.images_per_camera,
                        opt.net.input_shape[1], opt.net.input_shape[2], opt.domain_shift, data_seed);
    const DatasetSplit sp = split(generate(spec), {opt.test_identities, 0, 0, derive_seed(data_seed, 7)});

    for (size_t vi = 0; vi < 3; ++vi) {
      Network net = ablation_build<float>(opt.net, variants[vi], ForwardMode::kTrainTriplet,
                                          derive_seed(data_seed, 11 + vi));
      TrainConfig tc;
      tc.epochs = opt.epochs;
      tc.batch_size = opt.batch_size;
      tc.triplets_per_pair = opt.triplets_per_pair;
      tc.seed = derive_seed(data_seed, 13);
      train_single(net, sp.train, tc);
      const Checkpoint ckpt = snapshot(net, tc.seed, tc.epochs);
      const CmcCurve curve = eval_checkpoint(ckpt, sp.test, {}, derive_seed(data_seed, 17));
      VariantSummary& row = result.rows[vi];
      row.rank1_per_seed.push_back(curve.at(1));
      row.rank1_mean += curve.at(1);
      row.rank5_mean += curve.at(5);
      row.rank10_mean += curve.at(10);
      if (opt.verbose)
        std::cerr << "[ablate] seed " << s << " " << variant_name(variants[vi]) << ": rank-1 "
                  << format_double(curve.at(1)) << "\n";
    }
  }
  for (VariantSummary& row : result.rows) {
    row.rank1_mean /= opt.seeds;
    row.rank5_mean /= opt.seeds;
    row.rank10_mean /= opt.seeds;
  }
  return result;
}

std::string CrossExperimentResult::table() const {
  std::string s = "method      rank-1\n";
  char line[96];
  std::snprintf(line, sizeof(line), "%-10s  %.4f\n", "cross", cross_rank1_mean);
  s += line;
  std::snprintf(line, sizeof(line), "%-10s  %.4f\n", "fine-tune", finetune_rank1_mean);
  s += line;
  if (lambda0_checked)
    s += std::string("lambda_cts=0 trajectory bitwise equal to fine-tune: ") +
         (lambda0_bitwise_equal ? "yes" : "NO") + "\n";
  return s;
}

CrossExperimentResult run_cross_experiment(const CrossExperimentOptions& opt) {
  CrossExperimentResult result;

  // One source model, trained once; every transfer run starts from it.
  const std::uint64_t source_seed = derive_seed(opt.base_seed, 1000);
  const Dataset source_ds = generate(
      make_synth_spec(opt.source_identities, opt.images_per_camera, opt.net.input_shape[1],
                      opt.net.input_shape[2], opt.source_shift, source_seed));
  Network source_net =
      build_network<float>(opt.net, ForwardMode::kTrainTriplet, derive_seed(opt.base_seed, 1001));
  TrainConfig source_tc;
  source_tc.epochs = opt.source_epochs;
  source_tc.batch_size = opt.batch_size;
  source_tc.triplets_per_pair = opt.triplets_per_pair;
  source_tc.seed = derive_seed(opt.base_seed, 1002);
  train_single(source_net, source_ds, source_tc);
  const Checkpoint source_ckpt = snapshot(source_net, source_tc.seed, source_tc.epochs);
  if (opt.verbose) std::cerr << "[cross] source model trained\n";

  for (int s = 0; s < opt.seeds; ++s) {
    const std::uint64_t tgt_seed = derive_seed(opt.base_seed, 2000 + s);
    const SynthSpec tgt_spec = make_synth_spec(
        opt.target_train_identities + opt.target_test_identities, opt.images_per_camera,
        opt.net.input_shape[1], opt.net.input_shape[2], opt.target_shift, tgt_seed);
    const DatasetSplit sp =
        split(generate(tgt_spec), {opt.target_test_identities, 0, 0, derive_seed(tgt_seed, 7)});

    TrainConfig tc;
    tc.epochs = opt.target_epochs;
    tc.batch_size = opt.batch_size;
    tc.triplets_per_pair = opt.triplets_per_pair;
    tc.seed = derive_seed(tgt_seed, 13);

    // Plain fine-tune of the source model on the target data.
    Network ft_net = build_network<float>(opt.net, ForwardMode::kTrainTriplet, 0);
    apply_checkpoint(ft_net, source_ckpt);
    train_single(ft_net, sp.train, tc);
    const CmcCurve ft = eval_checkpoint(snapshot(ft_net, tc.seed, tc.epochs), sp.test, {},
                                        derive_seed(tgt_seed, 17));

    // Coupled cross-domain run from the same starting point.
    tc.mode = TrainMode::kCross;
    CrossDomainState state = make_cross_state(source_ckpt);
    train_cross(state, source_ds, sp.train, tc);
    const CmcCurve cross = eval_checkpoint(snapshot(state.target, tc.seed, tc.epochs), sp.test, {},
                                           derive_seed(tgt_seed, 17));

    result.finetune_rank1_per_seed.push_back(ft.at(1));
    result.cross_rank1_per_seed.push_back(cross.at(1));
    if (opt.verbose)
      std::cerr << "[cross] seed " << s << ": fine-tune rank-1 " << format_double(ft.at(1))
                << ", cross rank-1 " << format_double(cross.at(1)) << "\n";
  }
  result.cross_rank1_mean = mean(result.cross_rank1_per_seed);
  result.finetune_rank1_mean = mean(result.finetune_rank1_per_seed);

  if (opt.check_lambda0_equivalence) {
    const std::uint64_t tgt_seed = derive_seed(opt.base_seed, 2000);
    const SynthSpec tgt_spec = make_synth_spec(
        opt.target_train_identities + opt.target_test_identities, opt.images_per_camera,
        opt.net.input_shape[1], opt.net.input_shape[2], opt.target_shift, tgt_seed);
    const DatasetSplit sp =
        split(generate(tgt_spec), {opt.target_test_identities, 0, 0, derive_seed(tgt_seed, 7)});
    TrainConfig tc;
    tc.epochs = std::min(opt.target_epochs, 5);
    tc.batch_size = opt.batch_size;
    tc.triplets_per_pair = opt.triplets_per_pair;
    tc.seed = derive_seed(tgt_seed, 13);

    Network ft_net = build_network<float>(opt.net, ForwardMode::kTrainTriplet, 0);
    apply_checkpoint(ft_net, source_ckpt);
    train_single(ft_net, sp.train, tc);

    Checkpoint decoupled = source_ckpt;
    decoupled.net.loss.lambda_cts = 0.0;
    CrossDomainState state = make_cross_state(decoupled);
    tc.mode = TrainMode::kCross;
    train_cross(state, source_ds, sp.train, tc);

    result.lambda0_checked = true;
    result.lambda0_bitwise_equal =
        params_bitwise_equal(snapshot(ft_net, 0, 0), snapshot(state.target, 0, 0));
  }
  return result;
}

}  // namespace mtdnet
