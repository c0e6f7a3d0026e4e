#include "mtdnet/sampling.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "mtdnet/common.hpp"
#include "mtdnet/image_io.hpp"

namespace mtdnet {

std::vector<int> Dataset::person_ids() const {
  std::set<int> ids;
  for (const LabeledImage& im : images) ids.insert(im.person_id);
  return {ids.begin(), ids.end()};
}

std::vector<PositivePair> enumerate_positive_pairs(const Dataset& ds,
                                                   std::vector<std::string>* warnings) {
  // person_id -> per-camera image indices, in dataset order.
  std::map<int, std::array<std::vector<int>, 2>> by_person;
  for (int i = 0; i < ds.size(); ++i) {
    const LabeledImage& im = ds.images[i];
    if (im.camera_id != 1 && im.camera_id != 2)
      throw std::invalid_argument("enumerate_positive_pairs: camera_id must be 1 or 2, got " +
                                  std::to_string(im.camera_id));
    by_person[im.person_id][im.camera_id - 1].push_back(i);
  }
  std::vector<PositivePair> pairs;
  for (const auto& [pid, cams] : by_person) {
    if (cams[0].empty() || cams[1].empty()) {
      if (warnings)
        warnings->push_back("person " + std::to_string(pid) +
                            " has images in only one camera; no positive pairs");
      continue;
    }
    for (int a1 : cams[0])
      for (int a2 : cams[1]) pairs.push_back({a1, a2});
  }
  return pairs;
}

std::vector<Triplet> make_triplets(const std::vector<PositivePair>& pairs, const Dataset& ds,
                                   int k, std::uint64_t seed,
                                   std::vector<std::string>* warnings) {
  if (k < 1) throw std::invalid_argument("make_triplets: k must be >= 1");
  if (ds.person_ids().size() < 2)
    throw std::invalid_argument("make_triplets: need at least 2 identities to draw negatives");

  // Candidate negatives live in the positive's camera view (camera 2).
  std::vector<int> cam2;
  for (int i = 0; i < ds.size(); ++i)
    if (ds.images[i].camera_id == 2) cam2.push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<Triplet> out;
  out.reserve(pairs.size() * static_cast<size_t>(k));
  bool warned_replacement = false;
  for (const PositivePair& p : pairs) {
    const int pid = ds.images[p.a1].person_id;
    std::vector<int> candidates;
    for (int i : cam2)
      if (ds.images[i].person_id != pid) candidates.push_back(i);
    if (candidates.empty())
      throw std::invalid_argument("make_triplets: no negative candidates for person " +
                                  std::to_string(pid));
    if (static_cast<int>(candidates.size()) >= k) {
      // Partial Fisher-Yates draw without replacement.
      for (int j = 0; j < k; ++j) {
        std::uniform_int_distribution<int> dist(j, static_cast<int>(candidates.size()) - 1);
        std::swap(candidates[j], candidates[dist(rng)]);
        out.push_back({p.a1, p.a2, candidates[j]});
      }
    } else {
      if (warnings && !warned_replacement) {
        warnings->push_back("fewer than k=" + std::to_string(k) +
                            " distinct negatives available; sampling with replacement");
        warned_replacement = true;
      }
      std::uniform_int_distribution<int> dist(0, static_cast<int>(candidates.size()) - 1);
      for (int j = 0; j < k; ++j) out.push_back({p.a1, p.a2, candidates[dist(rng)]});
    }
  }
  return out;
}

Dataset mirror_augment(const Dataset& ds) {
  Dataset out;
  out.images.reserve(ds.images.size() * 2);
  for (const LabeledImage& im : ds.images) {
    out.images.push_back(im);
    LabeledImage twin = im;
    twin.image = hflip(im.image);
    twin.mirrored = !im.mirrored;
    out.images.push_back(std::move(twin));
  }
  return out;
}

std::vector<TripletBatch> batch_iter(const std::vector<Triplet>& triplets, int batch_size,
                                     std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  if (triplets.empty()) throw std::invalid_argument("batch_iter: empty triplet list");
  std::vector<int> order(triplets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<TripletBatch> batches;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    TripletBatch batch;
    const size_t end = std::min(order.size(), start + batch_size);
    for (size_t i = start; i < end; ++i) batch.push_back(triplets[order[i]]);
    batches.push_back(std::move(batch));
  }
  return batches;
}

void check_triplet(const Dataset& ds, const Triplet& t) {
  auto in_range = [&](int i) { return i >= 0 && i < ds.size(); };
  if (!in_range(t.anchor) || !in_range(t.positive) || !in_range(t.negative))
    throw std::invalid_argument("triplet: index out of range");
  const LabeledImage& a = ds.images[t.anchor];
  const LabeledImage& p = ds.images[t.positive];
  const LabeledImage& n = ds.images[t.negative];
  if (a.person_id != p.person_id) throw std::invalid_argument("triplet: anchor/positive person differ");
  if (n.person_id == a.person_id) throw std::invalid_argument("triplet: negative shares anchor person");
  if (p.camera_id != n.camera_id) throw std::invalid_argument("triplet: positive/negative camera differ");
  if (a.camera_id == p.camera_id) throw std::invalid_argument("triplet: anchor/positive camera equal");
}

}  // namespace mtdnet
