#include "mtdnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include "mtdnet/common.hpp"

namespace mtdnet {

double CmcCurve::at(int rank) const {
  if (accuracies.empty()) return 0.0;
  const int idx = std::clamp(rank, 1, static_cast<int>(accuracies.size()));
  return accuracies[idx - 1];
}

void ScoreMatrix::validate() const {
  if (n_queries < 1 || n_gallery < 1)
    throw std::invalid_argument("score matrix: need at least one query and one gallery entry");
  if (scores.size() != static_cast<size_t>(n_queries) * n_gallery)
    throw std::invalid_argument("score matrix: score buffer does not match dimensions");
  if (match.size() != static_cast<size_t>(n_queries))
    throw std::invalid_argument("score matrix: one match index per query required");
  for (int m : match)
    if (m < 0 || m >= n_gallery)
      throw std::invalid_argument("score matrix: match index out of gallery range");
}

Scorer scorer_from_name(const std::string& name) {
  if (name == "cls_prob") return Scorer::kClsProb;
  if (name == "neg_euclid") return Scorer::kNegEuclid;
  throw std::invalid_argument("unknown scorer '" + name + "' (cls_prob, neg_euclid)");
}

CmcCurve cmc(const ScoreMatrix& scores) {
  scores.validate();
  CmcCurve curve;
  curve.n_queries = scores.n_queries;
  curve.gallery_size = scores.n_gallery;
  std::vector<int> rank_hits(scores.n_gallery, 0);
  for (int q = 0; q < scores.n_queries; ++q) {
    const double match_score = scores.at(q, scores.match[q]);
    int rank = 1;
    for (int g = 0; g < scores.n_gallery; ++g) {
      if (g == scores.match[q]) continue;
      if (scores.at(q, g) >= match_score) ++rank;  // ties count against the match
    }
    ++rank_hits[rank - 1];
  }
  curve.accuracies.resize(scores.n_gallery);
  int cum = 0;
  for (int r = 0; r < scores.n_gallery; ++r) {
    cum += rank_hits[r];
    curve.accuracies[r] = static_cast<double>(cum) / scores.n_queries;
  }
  return curve;
}

namespace {

std::span<const float> image_span(const LabeledImage& im, const NetConfig& cfg) {
  if (im.image.shape.size() != 3 || im.image.shape[0] != cfg.input_shape[0] ||
      im.image.shape[1] != cfg.input_shape[1] || im.image.shape[2] != cfg.input_shape[2])
    throw std::invalid_argument("evaluation: image shape " + shape_str(im.image.shape) +
                                " does not match net input " +
                                shape_str({cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]}));
  return im.image.data;
}

}  // namespace

ScoreMatrix build_single_shot_eval(const Dataset& test_set, const Dataset& distractors,
                                   Network& net, Scorer scorer, std::uint64_t seed) {
  if (scorer == Scorer::kClsProb && net.mode != ForwardMode::kTestPair)
    throw std::invalid_argument("cls_prob scorer needs a TestPair net");
  if (scorer == Scorer::kNegEuclid && net.mode != ForwardMode::kEmbedOnly)
    throw std::invalid_argument("neg_euclid scorer needs an EmbedOnly net");

  std::map<int, std::array<std::vector<int>, 2>> by_person;
  for (int i = 0; i < test_set.size(); ++i) {
    const LabeledImage& im = test_set.images[i];
    by_person[im.person_id][im.camera_id - 1].push_back(i);
  }

  std::vector<int> queries, gallery;
  for (const auto& [pid, cams] : by_person) {
    if (cams[0].empty() || cams[1].empty())
      throw std::invalid_argument("single-shot eval: identity " + std::to_string(pid) +
                                  " is missing a camera view");
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(pid)));
    const int qi = cams[0][std::uniform_int_distribution<size_t>(0, cams[0].size() - 1)(rng)];
    const int gi = cams[1][std::uniform_int_distribution<size_t>(0, cams[1].size() - 1)(rng)];
    queries.push_back(qi);
    gallery.push_back(gi);
  }

  // All camera-2 distractor images join the gallery with no matching query.
  std::vector<const LabeledImage*> gallery_images;
  for (int gi : gallery) gallery_images.push_back(&test_set.images[gi]);
  for (const LabeledImage& im : distractors.images)
    if (im.camera_id == 2) gallery_images.push_back(&im);

  ScoreMatrix m;
  m.n_queries = static_cast<int>(queries.size());
  m.n_gallery = static_cast<int>(gallery_images.size());
  m.scores.assign(static_cast<size_t>(m.n_queries) * m.n_gallery, 0.0);
  m.match.resize(m.n_queries);
  for (int q = 0; q < m.n_queries; ++q) m.match[q] = q;  // canonical ordering: diagonal

  if (scorer == Scorer::kClsProb) {
    for (int q = 0; q < m.n_queries; ++q) {
      const auto qspan = image_span(test_set.images[queries[q]], net.cfg);
      for (int g = 0; g < m.n_gallery; ++g)
        m.at(q, g) = forward_similarity(net, qspan, image_span(*gallery_images[g], net.cfg));
    }
  } else {
    std::vector<std::vector<float>> qf, gf;
    for (int qi : queries)
      qf.push_back(forward_embedding(net, image_span(test_set.images[qi], net.cfg)).data);
    for (const LabeledImage* g : gallery_images)
      gf.push_back(forward_embedding(net, image_span(*g, net.cfg)).data);
    for (int q = 0; q < m.n_queries; ++q)
      for (int g = 0; g < m.n_gallery; ++g) {
        double acc = 0;
        for (size_t i = 0; i < qf[q].size(); ++i) {
          const double d = static_cast<double>(qf[q][i]) - gf[g][i];
          acc += d * d;
        }
        m.at(q, g) = -std::sqrt(acc);
      }
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Fig. 1(a) case study
// ---------------------------------------------------------------------------

namespace {

ScoreMatrix case_matrix(const std::array<std::array<double, 3>, 3>& s) {
  ScoreMatrix m;
  m.n_queries = 3;
  m.n_gallery = 3;
  m.match = {0, 1, 2};
  m.scores.resize(9);
  for (int q = 0; q < 3; ++q)
    for (int g = 0; g < 3; ++g) m.at(q, g) = s[q][g];
  return m;
}

// Cross-entropy of the best hard threshold classifier over all pair samples,
// with predictions smoothed to confidence 0.9 so errors stay finite.
std::pair<double, double> best_threshold_loss(const ScoreMatrix& m) {
  std::vector<double> cuts{0.0, 1.0};
  for (double s : m.scores) {
    cuts.push_back(s);
    cuts.push_back(s + 1e-9);  // just above each score, so both sides of every tie are swept
  }
  const double correct_cost = -std::log(0.9), wrong_cost = -std::log(0.1);
  double best_loss = std::numeric_limits<double>::infinity(), best_cut = 0;
  for (double t : cuts) {
    double loss = 0;
    for (int q = 0; q < m.n_queries; ++q)
      for (int g = 0; g < m.n_gallery; ++g) {
        const bool predicted_same = m.at(q, g) >= t;
        const bool is_same = g == m.match[q];
        loss += predicted_same == is_same ? correct_cost : wrong_cost;
      }
    if (loss < best_loss) {
      best_loss = loss;
      best_cut = t;
    }
  }
  return {best_loss, best_cut};
}

}  // namespace

bool CaseStudyReport::pass() const {
  return rank1_case1 == 1.0 && rank1_case2 < 1.0 && cls_loss_case2 < cls_loss_case1;
}

std::string CaseStudyReport::to_string() const {
  std::string s;
  s += "case 1 (per-query ranking intact, no clean global threshold):\n";
  s += "  rank-1 " + format_double(rank1_case1) + ", best-threshold classification loss " +
       format_double(cls_loss_case1) + " @ t=" + format_double(threshold_case1) + "\n";
  s += "case 2 (clean global threshold, one false rank-1):\n";
  s += "  rank-1 " + format_double(rank1_case2) + ", best-threshold classification loss " +
       format_double(cls_loss_case2) + " @ t=" + format_double(threshold_case2) + "\n";
  s += "classification prefers case 2 (lower loss): ";
  s += cls_loss_case2 < cls_loss_case1 ? "yes" : "NO";
  s += "\nranking prefers case 1 (rank-1 1.0 vs ";
  s += format_double(rank1_case2) + "): ";
  s += (rank1_case1 == 1.0 && rank1_case2 < 1.0) ? "yes" : "NO";
  s += "\n";
  return s;
}

CaseStudyReport fig1_case_study() {
  // Three queries, matches on the diagonal. Case 1: every query's positive
  // outscores its own negatives, but the per-query score bands overlap across
  // queries, so any single threshold misclassifies at least two pairs.
  const ScoreMatrix case1 = case_matrix({{{0.90, 0.80, 0.70},
                                          {0.50, 0.60, 0.40},
                                          {0.20, 0.15, 0.30}}});
  // Case 2: one threshold separates all but one pair, but that pair (query
  // A's 0.85 negative) steals the rank-1 spot from the 0.80 positive.
  const ScoreMatrix case2 = case_matrix({{{0.80, 0.85, 0.20},
                                          {0.15, 0.75, 0.10},
                                          {0.25, 0.10, 0.70}}});

  CaseStudyReport r;
  r.rank1_case1 = cmc(case1).at(1);
  r.rank1_case2 = cmc(case2).at(1);
  std::tie(r.cls_loss_case1, r.threshold_case1) = best_threshold_loss(case1);
  std::tie(r.cls_loss_case2, r.threshold_case2) = best_threshold_loss(case2);
  return r;
}

void write_cmc_csv(const CmcCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "rank,accuracy\n";
  for (size_t r = 0; r < curve.accuracies.size(); ++r)
    out << (r + 1) << "," << format_double(curve.accuracies[r]) << "\n";
}

std::string cmc_summary(const CmcCurve& curve) {
  return "rank-1 " + format_double(curve.at(1)) + "  rank-5 " + format_double(curve.at(5)) +
         "  rank-10 " + format_double(curve.at(10)) + "  (queries=" +
         std::to_string(curve.n_queries) + " gallery=" + std::to_string(curve.gallery_size) + ")";
}

}  // namespace mtdnet
