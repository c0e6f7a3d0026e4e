#include "mtdnet/cli.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "mtdnet/common.hpp"
#include "mtdnet/config.hpp"
#include "mtdnet/evaluation.hpp"
#include "mtdnet/experiments.hpp"
#include "mtdnet/gradcheck.hpp"
#include "mtdnet/synth_data.hpp"
#include "mtdnet/trainer.hpp"

namespace mtdnet {

namespace {

namespace fs = std::filesystem;

int run_guarded(const char* stage, const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    std::cerr << "mtdnet " << stage << ": error: " << e.what() << "\n";
    return 1;
  }
}

void reject_unread(const KeyValueConfig& kv, const std::string& what) {
  const auto unread = kv.unread_keys();
  if (unread.empty()) return;
  std::string msg = what + ": unknown key(s):";
  for (const std::string& k : unread) msg += " '" + k + "'";
  throw std::runtime_error(msg);
}

struct GenDataArgs {
  std::string out;
  int ids = 8;
  int images_per_camera = 1;
  int height = 32, width = 32;
  double shift = 0.0;
  std::uint64_t seed = 1;
};

int cmd_gen_data(const GenDataArgs& a) {
  const SynthSpec spec = make_synth_spec(a.ids, a.images_per_camera, a.height, a.width, a.shift, a.seed);
  const Dataset ds = generate(spec);
  save_dataset(ds, a.out);
  std::cout << "wrote " << ds.size() << " images (" << a.ids << " identities, 2 cameras) to " << a.out
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out, history, aug_source;
};

int cmd_train(const TrainArgs& a) {
  const KeyValueConfig kv = KeyValueConfig::parse_file(a.config);
  const NetConfig net_cfg = read_net_config(kv);
  const TrainConfig tc = read_train_config(kv);
  const Variant variant = variant_from_name(kv.get_string("net.variant", "full"));
  reject_unread(kv, a.config);

  const Dataset dataset = load_folder(a.data, net_cfg.input_shape[1], net_cfg.input_shape[2]);
  Network net = ablation_build<float>(net_cfg, variant, ForwardMode::kTrainTriplet,
                                      derive_seed(tc.seed, 0xA11CE));
  History history;
  switch (tc.mode) {
    case TrainMode::kSingle:
      history = train_single(net, dataset, tc);
      break;
    case TrainMode::kAug: {
      if (a.aug_source.empty())
        throw std::runtime_error("train.mode = aug requires --aug-source <dataset dir>");
      const Dataset source = load_folder(a.aug_source, net_cfg.input_shape[1], net_cfg.input_shape[2]);
      history = train_aug(net, source, dataset, tc);
      break;
    }
    case TrainMode::kCross:
      throw std::runtime_error("train.mode = cross is handled by the train-cross subcommand");
  }
  save_checkpoint(snapshot(net, tc.seed, static_cast<std::uint32_t>(tc.epochs)), a.out);
  if (!a.history.empty()) write_history_csv(history, a.history);
  std::cout << "trained " << tc.epochs << " epochs; final combined loss "
            << format_double(history.back().combined) << "; checkpoint " << a.out << "\n";
  return 0;
}

struct TrainCrossArgs {
  std::string config, source_ckpt, source_data, target_data, out, history;
};

int cmd_train_cross(const TrainCrossArgs& a) {
  const KeyValueConfig kv = KeyValueConfig::parse_file(a.config);
  TrainConfig tc = read_train_config(kv);
  tc.mode = TrainMode::kCross;

  Checkpoint ckpt = load_checkpoint(a.source_ckpt);
  // The architecture comes from the source checkpoint; the config may still
  // retune loss weights/margins for the transfer phase.
  KeyValueConfig merged = KeyValueConfig::parse_string(
      [&] {
        KeyValueConfig base;
        write_net_config(base, ckpt.net);
        return base.serialize();
      }() ,
      "checkpoint header");
  for (const char* key : {"loss.alpha", "loss.margin", "loss.reduction", "loss.lambda_rnk",
                          "loss.lambda_cls", "loss.lambda_cts", "loss.normalize_embeddings"})
    if (kv.has(key)) merged.set(key, kv.get_string(key));
  ckpt.net = read_net_config(merged);
  reject_unread(kv, a.config);

  const Dataset source = load_folder(a.source_data, ckpt.net.input_shape[1], ckpt.net.input_shape[2]);
  const Dataset target = load_folder(a.target_data, ckpt.net.input_shape[1], ckpt.net.input_shape[2]);
  CrossDomainState state = make_cross_state(ckpt);
  const History history = train_cross(state, source, target, tc);
  save_checkpoint(snapshot(state.target, tc.seed, static_cast<std::uint32_t>(tc.epochs)), a.out);
  if (!a.history.empty()) write_history_csv(history, a.history);
  std::cout << "cross-domain trained " << tc.epochs << " epochs; final combined loss "
            << format_double(history.back().combined) << "; target checkpoint " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, distractors, scorer = "cls_prob", out = "cmc.csv";
  std::uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Scorer scorer = scorer_from_name(a.scorer);
  Network net = ablation_build<float>(
      ckpt.net, ckpt.variant,
      scorer == Scorer::kClsProb ? ForwardMode::kTestPair : ForwardMode::kEmbedOnly, 0);
  apply_checkpoint(net, ckpt);
  const Dataset test = load_folder(a.data, ckpt.net.input_shape[1], ckpt.net.input_shape[2]);
  Dataset distractors;
  if (!a.distractors.empty())
    distractors = load_folder(a.distractors, ckpt.net.input_shape[1], ckpt.net.input_shape[2]);
  const ScoreMatrix m = build_single_shot_eval(test, distractors, net, scorer, a.seed);
  const CmcCurve curve = cmc(m);
  write_cmc_csv(curve, a.out);
  std::cout << cmc_summary(curve) << "\n" << "cmc csv written to " << a.out << "\n";
  return 0;
}

struct GradcheckArgs {
  std::string preset = "desk";
  double tol = 1e-4, h = 1e-5;
  int max_entries = 24;
  std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const NetConfig cfg = preset_by_name(a.preset);
  NetworkT<double> net =
      build_network<double>(cfg, ForwardMode::kTrainTriplet, derive_seed(a.seed, 21));

  std::mt19937_64 rng(derive_seed(a.seed, 22));
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  for (NodeId in : {net.in_anchor, net.in_positive, net.in_negative}) {
    TensorT<double>& t = net.graph.mutable_value(in);
    for (double& v : t.data) v = pixel(rng);
  }
  const NodeId cls_total =
      net.graph.weighted_sum({net.loss_cls_pos, net.loss_cls_neg}, {1.0, 1.0});

  GradCheckOptions opt;
  opt.tol = a.tol;
  opt.h = a.h;
  opt.max_entries_per_param = a.max_entries;
  opt.seed = derive_seed(a.seed, 23);

  const std::pair<const char*, NodeId> sweeps[] = {
      {"combined (both losses active)", net.loss_combined},
      {"triplet loss in isolation", net.loss_triplet},
      {"classification loss in isolation", cls_total},
  };
  bool all_pass = true;
  for (const auto& [label, node] : sweeps) {
    const GradCheckReport report = finite_diff_check(net.graph, node, opt);
    std::cout << "== " << label << " ==\n" << report.summary();
    all_pass = all_pass && report.pass();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "elapsed " << format_double(secs) << " s\n";
  if (!all_pass) std::cerr << "mtdnet gradcheck: error: gradient check failed\n";
  return all_pass ? 0 : 1;
}

int cmd_case_study() {
  const CaseStudyReport report = fig1_case_study();
  std::cout << report.to_string();
  if (!report.pass()) std::cerr << "mtdnet case-study: error: expected relations do not hold\n";
  return report.pass() ? 0 : 1;
}

struct AblateArgs {
  int seeds = 5, train_ids = 64, test_ids = 16, epochs = 20, k = 3, batch = 8;
  double shift = 0.3;
  std::uint64_t seed = 100;
  bool normalize = false;
  std::string out;
};

int cmd_ablate(const AblateArgs& a) {
  AblationOptions opt;
  opt.seeds = a.seeds;
  opt.train_identities = a.train_ids;
  opt.test_identities = a.test_ids;
  opt.domain_shift = a.shift;
  opt.epochs = a.epochs;
  opt.triplets_per_pair = a.k;
  opt.batch_size = a.batch;
  opt.base_seed = a.seed;
  opt.net.loss.normalize_embeddings = a.normalize;
  opt.verbose = true;
  const AblationResult result = run_ablation(opt);
  std::cout << result.table();
  if (!a.out.empty()) {
    std::ofstream csv(a.out);
    if (!csv) throw std::runtime_error("cannot write " + a.out);
    csv << "variant,rank1,rank5,rank10\n";
    for (const VariantSummary& r : result.rows)
      csv << variant_name(r.variant) << "," << format_double(r.rank1_mean) << ","
          << format_double(r.rank5_mean) << "," << format_double(r.rank10_mean) << "\n";
  }
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"multi-task triplet/classification ReID engine"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic two-camera dataset");
  gen_cmd->add_option("--out", gen.out, "output dataset directory")->required();
  gen_cmd->add_option("--ids", gen.ids, "number of identities");
  gen_cmd->add_option("--images-per-camera", gen.images_per_camera, "images per identity per camera");
  gen_cmd->add_option("--height", gen.height, "image height");
  gen_cmd->add_option("--width", gen.width, "image width");
  gen_cmd->add_option("--shift", gen.shift, "domain shift in [0,1]");
  gen_cmd->add_option("--seed", gen.seed, "generator seed");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train on one dataset (modes: single, aug)");
  train_cmd->add_option("--config", train.config, "config file")->required();
  train_cmd->add_option("--data", train.data, "dataset directory")->required();
  train_cmd->add_option("--out", train.out, "output checkpoint path")->required();
  train_cmd->add_option("--history", train.history, "loss history CSV path");
  train_cmd->add_option("--aug-source", train.aug_source, "source dataset for train.mode=aug");

  TrainCrossArgs cross;
  CLI::App* cross_cmd = app.add_subcommand("train-cross", "coupled source/target cross-domain training");
  cross_cmd->add_option("--config", cross.config, "config file (train.* and loss.* overrides)")->required();
  cross_cmd->add_option("--source-ckpt", cross.source_ckpt, "source-trained checkpoint")->required();
  cross_cmd->add_option("--source-data", cross.source_data, "source dataset directory")->required();
  cross_cmd->add_option("--target-data", cross.target_data, "target dataset directory")->required();
  cross_cmd->add_option("--out", cross.out, "output target checkpoint")->required();
  cross_cmd->add_option("--history", cross.history, "loss history CSV path");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "single-shot CMC evaluation of a checkpoint");
  eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval.data, "test dataset directory")->required();
  eval_cmd->add_option("--distractors", eval.distractors, "distractor dataset directory");
  eval_cmd->add_option("--scorer", eval.scorer, "cls_prob or neg_euclid");
  eval_cmd->add_option("--out", eval.out, "CMC csv path");
  eval_cmd->add_option("--seed", eval.seed, "gallery selection seed");

  GradcheckArgs gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification (64-bit)");
  gc_cmd->add_option("--preset", gc.preset, "desk or paper");
  gc_cmd->add_option("--tol", gc.tol, "relative error threshold");
  gc_cmd->add_option("--step", gc.h, "central difference step h");
  gc_cmd->add_option("--max-entries", gc.max_entries, "entries checked per parameter (0 = all)");
  gc_cmd->add_option("--seed", gc.seed, "input/init seed");

  CLI::App* case_cmd = app.add_subcommand("case-study", "ranking-vs-classification score layout study");

  AblateArgs ablate;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "full vs cls-only vs rnk-only on synthetic data");
  ablate_cmd->add_option("--seeds", ablate.seeds, "number of seeds");
  ablate_cmd->add_option("--train-ids", ablate.train_ids, "training identities");
  ablate_cmd->add_option("--test-ids", ablate.test_ids, "test identities");
  ablate_cmd->add_option("--shift", ablate.shift, "camera domain shift");
  ablate_cmd->add_option("--epochs", ablate.epochs, "epochs per run");
  ablate_cmd->add_option("--k", ablate.k, "triplets per positive pair");
  ablate_cmd->add_option("--batch", ablate.batch, "batch size");
  ablate_cmd->add_option("--seed", ablate.seed, "base seed");
  ablate_cmd->add_flag("--normalize", ablate.normalize, "L2-normalize embeddings for the triplet branch");
  ablate_cmd->add_option("--out", ablate.out, "summary CSV path");

  CLI11_PARSE(app, argc, argv);

  if (gen_cmd->parsed()) return run_guarded("gen-data", [&] { return cmd_gen_data(gen); });
  if (train_cmd->parsed()) return run_guarded("train", [&] { return cmd_train(train); });
  if (cross_cmd->parsed()) return run_guarded("train-cross", [&] { return cmd_train_cross(cross); });
  if (eval_cmd->parsed()) return run_guarded("eval", [&] { return cmd_eval(eval); });
  if (gc_cmd->parsed()) return run_guarded("gradcheck", [&] { return cmd_gradcheck(gc); });
  if (case_cmd->parsed()) return run_guarded("case-study", [&] { return cmd_case_study(); });
  if (ablate_cmd->parsed()) return run_guarded("ablate", [&] { return cmd_ablate(ablate); });
  return 0;
}

}  // namespace mtdnet
