#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mtdnet/synth_data.hpp"
#include "mtdnet/trainer.hpp"
#include "support/oracles.hpp"

using namespace mtdnet;

namespace {

NetConfig trainer_micro_config() {
  NetConfig cfg;
  cfg.input_shape = {3, 16, 16};
  cfg.trunk[0] = {4, 3, 1, 0, 2, 2};
  cfg.trunk[1] = {8, 3, 1, 0, 0, 1};
  cfg.embed_dim = 8;
  cfg.cls_convs[0] = {8, 3, 1, 1, 0, 1};
  cfg.cls_convs[1] = {8, 3, 1, 1, 0, 1};
  cfg.cls_convs[2] = {4, 3, 1, 1, 0, 1};
  cfg.fc_dims = {16, 8, 2};
  return cfg;
}

Dataset micro_data(int ids, double shift, std::uint64_t seed) {
  return generate(make_synth_spec(ids, 1, 16, 16, shift, seed));
}

TrainConfig quick_config(int epochs, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 4;
  tc.triplets_per_pair = 2;
  tc.seed = seed;
  return tc;
}

bool same_params(const Network& a, const Network& b) {
  for (const std::string& name : a.graph.param_names()) {
    const auto& pa = a.graph.param_tensor(name).data;
    const auto& pb = b.graph.param_tensor(name).data;
    if (pa.size() != pb.size()) return false;
    if (std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("sgd_step: hand recurrence and degenerate cases") {
  SUBCASE("two momentum steps on a scalar") {
    std::vector<float> p{1.0f}, v{0.0f};
    const std::vector<float> g{0.5f};
    sgd_step(p, g, 0.1, 0.9, v);
    CHECK(p[0] == doctest::Approx(0.95));   // v = -0.05
    sgd_step(p, g, 0.1, 0.9, v);
    CHECK(v[0] == doctest::Approx(-0.095)); // 0.9*(-0.05) - 0.05
    CHECK(p[0] == doctest::Approx(0.855));
  }
  SUBCASE("zero momentum reduces to plain gradient descent") {
    std::vector<float> p{2.0f}, v{0.0f};
    sgd_step(p, std::vector<float>{1.0f}, 0.25, 0.0, v);
    CHECK(p[0] == doctest::Approx(1.75));
  }
  SUBCASE("zero gradient leaves parameters at a fixed point") {
    std::vector<float> p{3.0f}, v{0.0f};
    for (int i = 0; i < 10; ++i) sgd_step(p, std::vector<float>{0.0f}, 0.1, 0.9, v);
    CHECK(p[0] == 3.0f);
    CHECK(v[0] == 0.0f);
  }
  SUBCASE("shape mismatch rejected") {
    std::vector<float> p{1, 2}, v{0};
    CHECK_THROWS_AS(sgd_step(p, std::vector<float>{0.1f, 0.2f}, 0.1, 0.9, v),
                    std::invalid_argument);
  }
}

TEST_CASE("zero loss weights train to a bitwise no-op") {
  NetConfig cfg = trainer_micro_config();
  cfg.loss.lambda_rnk = 0;
  cfg.loss.lambda_cls = 0;
  Network net = build_network<float>(cfg, ForwardMode::kTrainTriplet, 7);
  Network untouched = build_network<float>(cfg, ForwardMode::kTrainTriplet, 7);
  train_single(net, micro_data(4, 0.2, 3), quick_config(3, 9));
  CHECK(same_params(net, untouched));
}

TEST_CASE("training reduces the combined loss on an easy synthetic task") {
  Network net = build_network<float>(trainer_micro_config(), ForwardMode::kTrainTriplet, 17);
  const History h = train_single(net, micro_data(12, 0.2, 5), quick_config(8, 21));
  REQUIRE(h.size() == 8);
  CHECK(h.back().combined < h.front().combined);
  for (const EpochStats& e : h) {
    CHECK(std::isfinite(e.combined));
    CHECK(e.l_cts == 0.0);
  }
}

TEST_CASE("training is a pure function of (config, data, seed)") {
  const Dataset data = micro_data(6, 0.3, 11);
  Network a = build_network<float>(trainer_micro_config(), ForwardMode::kTrainTriplet, 23);
  Network b = build_network<float>(trainer_micro_config(), ForwardMode::kTrainTriplet, 23);
  train_single(a, data, quick_config(4, 31));
  train_single(b, data, quick_config(4, 31));
  CHECK(same_params(a, b));

  Network c = build_network<float>(trainer_micro_config(), ForwardMode::kTrainTriplet, 23);
  train_single(c, data, quick_config(4, 32));  // different seed, different batches/negatives
  CHECK_FALSE(same_params(a, c));
}

TEST_CASE("non-finite loss aborts with a node diagnostic") {
  Network net = build_network<float>(trainer_micro_config(), ForwardMode::kTrainTriplet, 29);
  // Poison a tensor on the classifier path; the abort must name it.
  net.graph.param_tensor("cls.fc8.bias").data[0] = std::nanf("");
  CHECK_THROWS_WITH_AS(train_single(net, micro_data(4, 0.2, 3), quick_config(1, 9)),
                       doctest::Contains("non-finite"), std::runtime_error);
  try {
    train_single(net, micro_data(4, 0.2, 3), quick_config(1, 9));
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("cls.fc8.bias") != std::string::npos);
  }
}

TEST_CASE("eval callback fires on the configured cadence") {
  Network net = build_network<float>(trainer_micro_config(), ForwardMode::kTrainTriplet, 31);
  TrainConfig tc = quick_config(6, 13);
  tc.eval_every = 2;
  std::vector<int> epochs_seen;
  train_single(net, micro_data(4, 0.2, 7), tc,
               [&](int epoch, Network&) { epochs_seen.push_back(epoch); });
  CHECK(epochs_seen == std::vector<int>{1, 3, 5});
}

TEST_CASE("history CSV schema") {
  History h;
  h.push_back({0, 0.5, 0.25, 0.0, 0.75});
  h.push_back({1, 0.25, 0.125, 0.0, 0.375});
  const auto path = std::filesystem::temp_directory_path() / "mtdnet_hist.csv";
  write_history_csv(h, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,l_trp,l_cls,l_cts,combined");
  std::getline(in, line);
  CHECK(line == "0,0.5,0.25,0,0.75");
}

TEST_CASE("cross-domain: lambda_cts=0 is bitwise trajectory-equal to fine-tuning") {
  const NetConfig cfg = trainer_micro_config();
  const Dataset source = micro_data(8, 0.0, 41);
  const Dataset target = micro_data(5, 0.5, 43);

  Network pre = build_network<float>(cfg, ForwardMode::kTrainTriplet, 47);
  train_single(pre, source, quick_config(2, 51));
  const Checkpoint source_ckpt = snapshot(pre, 51, 2);

  Network finetune = build_network<float>(cfg, ForwardMode::kTrainTriplet, 0);
  apply_checkpoint(finetune, source_ckpt);
  const TrainConfig tc = quick_config(3, 61);
  train_single(finetune, target, tc);

  Checkpoint decoupled = source_ckpt;
  decoupled.net.loss.lambda_cts = 0.0;
  CrossDomainState state = make_cross_state(decoupled);
  TrainConfig cross_tc = tc;
  cross_tc.mode = TrainMode::kCross;
  train_cross(state, source, target, cross_tc);

  CHECK(same_params(finetune, state.target));
}

TEST_CASE("cross-domain: contrastive coupling changes the trajectory and trains both nets") {
  const NetConfig cfg = trainer_micro_config();
  const Dataset source = micro_data(8, 0.0, 41);
  const Dataset target = micro_data(5, 0.5, 43);
  Network pre = build_network<float>(cfg, ForwardMode::kTrainTriplet, 47);
  train_single(pre, source, quick_config(2, 51));
  const Checkpoint source_ckpt = snapshot(pre, 51, 2);

  CrossDomainState coupled = make_cross_state(source_ckpt);  // lambda_cts = 1 default
  TrainConfig tc = quick_config(3, 61);
  tc.mode = TrainMode::kCross;
  const History h = train_cross(coupled, source, target, tc);
  CHECK(h.back().l_cts >= 0.0);

  Network finetune = build_network<float>(cfg, ForwardMode::kTrainTriplet, 0);
  apply_checkpoint(finetune, source_ckpt);
  train_single(finetune, target, tc);
  CHECK_FALSE(same_params(finetune, coupled.target));  // the coupling did something

  SUBCASE("freeze_source pins the source net") {
    CrossDomainState frozen = make_cross_state(source_ckpt);
    CrossDomainState thawed = make_cross_state(source_ckpt);
    TrainConfig freeze_tc = tc;
    freeze_tc.freeze_source = true;
    train_cross(frozen, source, target, freeze_tc);
    train_cross(thawed, source, target, tc);
    Network source_ref = build_network<float>(cfg, ForwardMode::kTrainTriplet, 0);
    apply_checkpoint(source_ref, source_ckpt);
    CHECK(same_params(frozen.source, source_ref));
    CHECK_FALSE(same_params(thawed.source, source_ref));
  }

  SUBCASE("config mismatch between the nets is rejected") {
    CrossDomainState bad = make_cross_state(source_ckpt);
    NetConfig other = cfg;
    other.embed_dim = 4;
    bad.source = build_network<float>(other, ForwardMode::kTrainTriplet, 1);
    CHECK_THROWS_AS(train_cross(bad, source, target, tc), std::invalid_argument);
  }
}

TEST_CASE("contrastive pull: one coupled gradient step moves FC2 responses as labeled") {
  const NetConfig cfg = trainer_micro_config();
  Network a = build_network<float>(cfg, ForwardMode::kTestPair, 71);
  Network b = build_network<float>(cfg, ForwardMode::kTestPair, 72);

  std::mt19937_64 rng(5);
  Tensor i1({3, 16, 16}), i2({3, 16, 16}), i3({3, 16, 16}), i4({3, 16, 16});
  for (Tensor* t : {&i1, &i2, &i3, &i4}) oracle::fill_uniform(*t, rng, 0.0f, 1.0f);

  auto fc2_pair = [&] {
    const auto fa = joint_feature_fc2(a, i1.data, i2.data);
    const auto fb = joint_feature_fc2(b, i3.data, i4.data);
    return std::pair(fa.data, fb.data);
  };
  auto dist = [](const std::vector<float>& x, const std::vector<float>& y) {
    double acc = 0;
    for (size_t i = 0; i < x.size(); ++i) acc += (static_cast<double>(x[i]) - y[i]) * (x[i] - y[i]);
    return std::sqrt(acc);
  };

  auto coupled_step = [&](int label, float margin) {
    const auto [fa, fb] = fc2_pair();
    std::vector<float> ga(fa.size()), gb(fb.size());
    losses::contrastive_loss_grad<float>(fa, fb, label, margin, ga, gb);
    for (Network* net : {&a, &b}) {
      net->graph.zero_param_grads();
      BackwardSeed<float> seed;
      seed.node = net->fc2_pos;
      seed.grad = net == &a ? ga : gb;
      net->graph.backward(std::span<const BackwardSeed<float>>(&seed, 1));
      for (const std::string& name : net->graph.param_names()) {
        auto& p = net->graph.param_tensor(name);
        std::vector<float> v(p.data.size(), 0.0f);
        sgd_step(p.data, p.grad, 0.01, 0.0, v);
      }
    }
  };

  const auto [fa0, fb0] = fc2_pair();
  const double d0 = dist(fa0, fb0);
  REQUIRE(d0 > 0.0);

  coupled_step(1, 1.0f);  // same class: pull together
  const auto [fa1, fb1] = fc2_pair();
  CHECK(dist(fa1, fb1) < d0);

  const float wide_margin = static_cast<float>(2 * d0 + 1);
  coupled_step(0, wide_margin);  // different class inside the margin: push apart
  const auto [fa2, fb2] = fc2_pair();
  CHECK(dist(fa2, fb2) > dist(fa1, fb1));
}

TEST_CASE("train_aug: disjoint id merge and smoke run") {
  const Dataset source = micro_data(4, 0.0, 81);
  const Dataset target = micro_data(3, 0.4, 83);
  const Dataset merged = merge_disjoint_ids(source, target);
  CHECK(merged.size() == source.size() + target.size());
  CHECK(enumerate_positive_pairs(merged).size() ==
        enumerate_positive_pairs(source).size() + enumerate_positive_pairs(target).size());

  Network net = build_network<float>(trainer_micro_config(), ForwardMode::kTrainTriplet, 89);
  const History h = train_aug(net, source, target, quick_config(2, 91));
  CHECK(h.size() == 2);
  CHECK(std::isfinite(h.back().combined));
}
