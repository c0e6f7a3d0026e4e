#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtdnet/network.hpp"
#include "mtdnet/sampling.hpp"

namespace mtdnet {

/// Cumulative match characteristic: accuracies[r-1] is the fraction of
/// queries whose true match ranks within the top r.
struct CmcCurve {
  std::vector<double> accuracies;
  int n_queries = 0;
  int gallery_size = 0;

  double at(int rank) const;  // rank-r accuracy, clamped to the last entry
};

/// Query-gallery similarity scores with exactly one true match per query
/// (single-shot protocol).
struct ScoreMatrix {
  int n_queries = 0;
  int n_gallery = 0;
  std::vector<double> scores;  // row-major [q][g]
  std::vector<int> match;      // gallery index of the true match per query

  double& at(int q, int g) { return scores[static_cast<size_t>(q) * n_gallery + g]; }
  double at(int q, int g) const { return scores[static_cast<size_t>(q) * n_gallery + g]; }
  void validate() const;
};

enum class Scorer { kClsProb, kNegEuclid };
Scorer scorer_from_name(const std::string& name);  // "cls_prob" | "neg_euclid"

/// Single-shot evaluation: one seeded camera-1 image per test identity as the
/// query, one seeded camera-2 image per test identity as its gallery entry,
/// plus every camera-2 distractor image. kClsProb scores with the pair
/// classifier p(same|q,g) and needs a TestPair net; kNegEuclid scores with
/// -|f_q - f_g| and needs an EmbedOnly net.
ScoreMatrix build_single_shot_eval(const Dataset& test_set, const Dataset& distractors,
                                   Network& net, Scorer scorer, std::uint64_t seed);

/// Rank of a match = 1 + number of gallery entries scoring >= the match
/// (ties count against the match).
CmcCurve cmc(const ScoreMatrix& scores);

/// Executable comparison of the two failure modes of single-loss training:
/// Case 1 ranks perfectly but no global threshold separates the classes well;
/// Case 2 separates well globally but one query has a false rank-1.
struct CaseStudyReport {
  double rank1_case1 = 0, rank1_case2 = 0;
  double cls_loss_case1 = 0, cls_loss_case2 = 0;  // best-threshold cross-entropy
  double threshold_case1 = 0, threshold_case2 = 0;

  bool pass() const;
  std::string to_string() const;
};
CaseStudyReport fig1_case_study();

/// `rank,accuracy` rows under a fixed header.
void write_cmc_csv(const CmcCurve& curve, const std::filesystem::path& path);
std::string cmc_summary(const CmcCurve& curve);  // rank-1/5/10 one-liner

}  // namespace mtdnet
