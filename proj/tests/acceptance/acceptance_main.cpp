// Acceptance checklist for the ReID engine: one [PASS]/[FAIL] line per
// criterion, nonzero exit if any fail. With no arguments every criterion
// runs; passing numbers (e.g. "1 4 5") runs a subset.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtdnet/checkpoint.hpp"
#include "mtdnet/cli.hpp"
#include "mtdnet/common.hpp"
#include "mtdnet/config.hpp"
#include "mtdnet/evaluation.hpp"
#include "mtdnet/experiments.hpp"
#include "mtdnet/gradcheck.hpp"
#include "mtdnet/losses.hpp"
#include "mtdnet/synth_data.hpp"
#include "mtdnet/trainer.hpp"

using namespace mtdnet;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int n, const std::string& label, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << n << ": " << label;
  if (!detail.empty()) std::cout << " — " << detail;
  std::cout << std::endl;
  if (!ok) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"mtdnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mtdnet_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool approx(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

// --- criterion 1: reverse-mode vs central finite differences, desk scale ---
void criterion_gradcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run_cli({"gradcheck", "--preset", "desk", "--tol", "1e-4"});
  const double secs = seconds_since(t0);
  report(1, "gradcheck --preset desk < 1e-4 in under 2 min", rc == 0 && secs < 120.0,
         "exit " + std::to_string(rc) + ", " + format_double(secs) + " s");
}

// --- criterion 2: loss formula suite, exact to 1e-9 ---
void criterion_loss_formulas() {
  using namespace mtdnet::losses;
  bool ok = true;
  std::string why;
  auto expect = [&](bool cond, const char* what) {
    if (!cond && ok) {
      ok = false;
      why = what;
    }
  };

  const std::vector<double> z1{0.0}, p1{1.0}, n2{2.0};
  expect(triplet_loss<double>(z1, z1, n2, 1.0) == 0.0, "triplet satisfied-margin case");
  expect(approx(triplet_loss<double>(std::vector<double>{0}, std::vector<double>{1},
                                     std::vector<double>{1.2}, 0.5),
                0.06, 1e-9),
         "triplet hand value 0.06");
  const std::vector<double> fa{0.3, -0.8, 2.0}, fpn{1.0, 0.5, -0.25};
  expect(approx(triplet_loss<double>(fa, fpn, fpn, 0.75), 0.75, 1e-9), "f_p=f_n gives alpha");

  expect(xnor_label(1, 1) == 1 && xnor_label(0, 0) == 1 && xnor_label(1, 0) == 0 &&
             xnor_label(0, 1) == 0,
         "XNOR truth table");

  const std::vector<double> same{0.7, 0.1}, same_b{0.7, 0.1};
  expect(contrastive_loss<double>(same, same_b, 1, 1.0) == 0.0, "contrastive identical y=1");
  expect(contrastive_loss<double>(std::vector<double>{0, 0}, std::vector<double>{3, 4}, 0, 1.0) == 0.0,
         "contrastive hinge inactive");
  expect(approx(contrastive_loss<double>(std::vector<double>{0, 0}, std::vector<double>{0.4, 0}, 0, 1.0),
                0.18, 1e-9),
         "contrastive hand value 0.18");

  expect(approx(classification_loss<double>(std::vector<double>{0.5, 0.5}, 1), std::log(2.0), 1e-9),
         "cross-entropy ln 2 at uniform");
  expect(approx(classification_loss<double>(std::vector<double>{0.5, 0.5}, 0), std::log(2.0), 1e-9),
         "cross-entropy ln 2 at uniform, y=0");

  report(2, "loss formula suite exact to 1e-9", ok, ok ? "" : why);
}

// --- criterion 3: paper-preset shape fidelity ---
void criterion_shapes() {
  const NetConfig cfg = paper_preset();
  Network net = build_network<float>(cfg, ForwardMode::kTrainTriplet, 1);
  const bool trunk_ok = net.graph.value(net.trunk_anchor).shape == Shape{256, 13, 13};
  const bool joint_ok = net.graph.value(net.joint_pos).shape == Shape{512, 13, 13} &&
                        net.graph.value(net.joint_neg).shape == Shape{512, 13, 13};
  const bool embed_ok = net.graph.value(net.emb_anchor).shape == Shape{512};
  const bool softmax_ok = net.graph.value(net.prob_pos).shape == Shape{2};
  report(3, "paper preset: trunk 256x13x13, joint 512x13x13, embed 512, softmax 2",
         trunk_ok && joint_ok && embed_ok && softmax_ok,
         "trunk " + shape_str(net.graph.value(net.trunk_anchor).shape) + ", joint " +
             shape_str(net.graph.value(net.joint_pos).shape) + ", embed " +
             shape_str(net.graph.value(net.emb_anchor).shape));
}

// --- criterion 4: cmc against a brute-force rank oracle ---
void criterion_cmc_oracle() {
  std::mt19937_64 rng(20240);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int q = 1 + static_cast<int>(rng() % 30);
    const int g = 1 + static_cast<int>(rng() % 40);
    ScoreMatrix m;
    m.n_queries = q;
    m.n_gallery = g;
    m.scores.resize(static_cast<size_t>(q) * g);
    m.match.resize(q);
    std::uniform_real_distribution<double> dist(0, 1);
    for (double& s : m.scores) s = std::round(dist(rng) * 6) / 6;  // heavy ties
    for (int i = 0; i < q; ++i) m.match[i] = static_cast<int>(rng() % g);

    const CmcCurve got = cmc(m);
    // Sort-based oracle, ties resolved against the match.
    for (int qq = 0; qq < q; ++qq) {
      int rank = 1;
      for (int gg = 0; gg < g; ++gg)
        if (gg != m.match[qq] && m.at(qq, gg) >= m.at(qq, m.match[qq])) ++rank;
      // got.accuracies must step up exactly at `rank`
      const double before = rank >= 2 ? got.accuracies[rank - 2] : 0.0;
      if (got.accuracies[rank - 1] < before) ++mismatches;
    }
    std::vector<double> sorted_check(g, 0.0);
    for (int qq = 0; qq < q; ++qq) {
      std::vector<std::pair<double, int>> order;  // (score, is_match)
      for (int gg = 0; gg < g; ++gg) order.push_back({m.at(qq, gg), gg == m.match[qq] ? 1 : 0});
      std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;  // match sinks below tied non-matches
      });
      for (int r = 0; r < g; ++r)
        if (order[r].second == 1) {
          for (int rr = r; rr < g; ++rr) sorted_check[rr] += 1.0;
          break;
        }
    }
    for (int r = 0; r < g; ++r)
      if (std::fabs(sorted_check[r] / q - got.accuracies[r]) > 1e-12) ++mismatches;
  }
  report(4, "cmc equals brute-force sort oracle on 200 tied matrices", mismatches == 0,
         std::to_string(mismatches) + " mismatches");
}

// --- criterion 5: executable fig-1 case study ---
void criterion_case_study() {
  const auto t0 = std::chrono::steady_clock::now();
  const CaseStudyReport r = fig1_case_study();
  const double secs = seconds_since(t0);
  const bool ok = r.rank1_case1 == 1.0 && r.rank1_case2 < 1.0 && r.cls_loss_case2 < r.cls_loss_case1 &&
                  secs < 1.0;
  report(5, "case study: rank-1 1.0 vs <1.0, classification prefers case 2", ok,
         "rank-1 " + format_double(r.rank1_case1) + "/" + format_double(r.rank1_case2) + ", loss " +
             format_double(r.cls_loss_case1) + "/" + format_double(r.cls_loss_case2) + ", " +
             format_double(secs) + " s");
}

// --- criterion 6: multi-task beats both single-task nets ---
void criterion_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  AblationOptions opt;
  opt.net.loss.normalize_embeddings = true;
  opt.seeds = 5;
  opt.epochs = 25;
  opt.batch_size = 4;
  opt.triplets_per_pair = 3;
  opt.verbose = true;
  const AblationResult result = run_ablation(opt);
  const double secs = seconds_since(t0);

  const double full = result.row(Variant::kFull).rank1_mean;
  const double cls = result.row(Variant::kClsOnly).rank1_mean;
  const double rnk = result.row(Variant::kRnkOnly).rank1_mean;
  const double floor3x = 3.0 * result.chance_rate;
  const bool ok = full >= cls && full >= rnk && full >= floor3x && cls >= floor3x &&
                  rnk >= floor3x && secs < 1800.0;
  report(6, "ablation direction: full >= cls-only, rnk-only; all >= 3x chance", ok,
         "rank-1 full " + format_double(full) + ", cls " + format_double(cls) + ", rnk " +
             format_double(rnk) + ", 3x chance " + format_double(floor3x) + ", " +
             format_double(secs) + " s");
}

// --- criterion 7: cross-domain transfer vs plain fine-tune ---
void criterion_cross_domain() {
  const auto t0 = std::chrono::steady_clock::now();
  CrossExperimentOptions opt;
  opt.net.loss.normalize_embeddings = true;
  opt.verbose = true;
  const CrossExperimentResult result = run_cross_experiment(opt);
  const double secs = seconds_since(t0);
  const bool direction_ok = result.cross_rank1_mean >= result.finetune_rank1_mean - 0.02;
  const bool ok = direction_ok && result.lambda0_checked && result.lambda0_bitwise_equal &&
                  secs < 1800.0;
  report(7, "cross-domain: rank-1 >= fine-tune - 0.02; lambda_cts=0 bitwise equal", ok,
         "cross " + format_double(result.cross_rank1_mean) + ", fine-tune " +
             format_double(result.finetune_rank1_mean) + ", lambda0 bitwise " +
             (result.lambda0_bitwise_equal ? "yes" : "no") + ", " + format_double(secs) + " s");
}

// --- criterion 8: determinism and persistence through the CLI ---
void criterion_determinism() {
  const fs::path dir = fresh_dir("determinism");
  const fs::path data = dir / "data";
  const fs::path test_data = dir / "test";
  bool ok = true;
  std::string why;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      why = what;
    }
  };

  expect(run_cli({"gen-data", "--out", data.string(), "--ids", "8", "--seed", "31"}) == 0,
         "gen-data failed");
  expect(run_cli({"gen-data", "--out", test_data.string(), "--ids", "6", "--seed", "32"}) == 0,
         "gen-data (test) failed");

  KeyValueConfig kv;
  write_net_config(kv, desk_preset());
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.triplets_per_pair = 2;
  tc.seed = 77;
  write_train_config(kv, tc);
  std::ofstream(dir / "desk.cfg") << kv.serialize();

  const fs::path ck1 = dir / "run1.ckpt", ck2 = dir / "run2.ckpt";
  expect(run_cli({"train", "--config", (dir / "desk.cfg").string(), "--data", data.string(),
                  "--out", ck1.string()}) == 0,
         "train run 1 failed");
  expect(run_cli({"train", "--config", (dir / "desk.cfg").string(), "--data", data.string(),
                  "--out", ck2.string()}) == 0,
         "train run 2 failed");
  expect(slurp(ck1) == slurp(ck2), "seeded train runs differ bitwise");

  // Round trip: load + re-save must be byte-identical.
  const Checkpoint loaded = load_checkpoint(ck1);
  const fs::path resaved = dir / "resaved.ckpt";
  save_checkpoint(loaded, resaved);
  expect(slurp(ck1) == slurp(resaved), "checkpoint round trip not bit-exact");

  const fs::path cmc1 = dir / "cmc1.csv", cmc2 = dir / "cmc2.csv";
  expect(run_cli({"eval", "--ckpt", ck1.string(), "--data", test_data.string(), "--out",
                  cmc1.string(), "--seed", "9"}) == 0,
         "eval 1 failed");
  expect(run_cli({"eval", "--ckpt", resaved.string(), "--data", test_data.string(), "--out",
                  cmc2.string(), "--seed", "9"}) == 0,
         "eval on reloaded checkpoint failed");
  expect(slurp(cmc1) == slurp(cmc2), "CMC CSV differs after checkpoint reload");

  report(8, "determinism & persistence: bit-identical checkpoints and CMC CSVs", ok, why);
}

// --- criterion 9: gradient confluence on the desk graph ---
void criterion_confluence() {
  NetworkT<double> net = build_network<double>(desk_preset(), ForwardMode::kTrainTriplet, 91);
  std::mt19937_64 rng(92);
  std::uniform_real_distribution<double> pixel(0, 1);
  for (NodeId in : {net.in_anchor, net.in_positive, net.in_negative}) {
    auto& t = net.graph.mutable_value(in);
    for (double& v : t.data) v = pixel(rng);
  }
  const NodeId cls_total = net.graph.weighted_sum({net.loss_cls_pos, net.loss_cls_neg}, {1.0, 1.0});
  net.graph.forward();

  const auto combined = backward_gradients(net.graph, net.loss_combined);
  const auto trp = backward_gradients(net.graph, net.loss_triplet);
  const auto cls = backward_gradients(net.graph, cls_total);

  double worst_rel = 0.0;
  for (const std::string& name : net.graph.param_names()) {
    if (name.rfind("trunk.", 0) != 0) continue;
    const auto& c = combined.at(name).data;
    const auto& t = trp.at(name).data;
    const auto& l = cls.at(name).data;
    for (size_t i = 0; i < c.size(); ++i) {
      const double sum = t[i] + l[i];
      const double denom = std::max({std::fabs(c[i]), std::fabs(sum), 1e-9});
      worst_rel = std::max(worst_rel, std::fabs(c[i] - sum) / denom);
    }
  }
  bool cls_zero_from_triplet = true;
  for (const auto& [name, grad] : trp) {
    if (name.rfind("cls.", 0) != 0) continue;
    for (double v : grad.data) cls_zero_from_triplet = cls_zero_from_triplet && v == 0.0;
  }
  const bool ok = worst_rel < 1e-6 && cls_zero_from_triplet;
  report(9, "gradient confluence: trunk = sum of per-loss gradients; cls path dark under triplet",
         ok,
         "max rel diff " + format_double(worst_rel) + ", cls grads from triplet all zero: " +
             (cls_zero_from_triplet ? "yes" : "no"));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return selected.empty() || selected.count(n); };

  if (wanted(1)) criterion_gradcheck();
  if (wanted(2)) criterion_loss_formulas();
  if (wanted(3)) criterion_shapes();
  if (wanted(4)) criterion_cmc_oracle();
  if (wanted(5)) criterion_case_study();
  if (wanted(6)) criterion_ablation();
  if (wanted(7)) criterion_cross_domain();
  if (wanted(8)) criterion_determinism();
  if (wanted(9)) criterion_confluence();

  std::cout << (g_failures == 0 ? "acceptance: all criteria passed"
                                : "acceptance: " + std::to_string(g_failures) + " criteria FAILED")
            << std::endl;
  return g_failures == 0 ? 0 : 1;
}
