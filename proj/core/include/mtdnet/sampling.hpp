#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtdnet/tensor.hpp"

namespace mtdnet {

/// An image with its ReID annotation. Two-view protocol: camera_id is 1 or 2.
struct LabeledImage {
  Tensor image;  // [3,H,W], values in [0,1]
  int person_id = 0;
  int camera_id = 1;
  bool mirrored = false;
};

struct Dataset {
  std::vector<LabeledImage> images;

  int size() const { return static_cast<int>(images.size()); }
  std::vector<int> person_ids() const;  // distinct, ascending
};

/// Indices into a Dataset. anchor is the camera-1 image A1; positive (A2) and
/// negative (B2, different person) are both camera-2 images.
struct Triplet {
  int anchor = -1;
  int positive = -1;
  int negative = -1;
};

struct PositivePair {
  int a1 = -1;  // camera-1 index
  int a2 = -1;  // camera-2 index
};

using TripletBatch = std::vector<Triplet>;

/// All cross-camera same-person pairs, ordered by (person_id, a1 index, a2
/// index). Persons present in only one camera are skipped with a warning.
std::vector<PositivePair> enumerate_positive_pairs(const Dataset& ds,
                                                   std::vector<std::string>* warnings = nullptr);

/// For each positive pair, k triplets with k distinct negatives drawn
/// uniformly without replacement from other-person images in camera 2; if
/// fewer than k candidates exist the draw falls back to replacement and a
/// warning is recorded. Fully determined by seed.
std::vector<Triplet> make_triplets(const std::vector<PositivePair>& pairs, const Dataset& ds,
                                   int k, std::uint64_t seed,
                                   std::vector<std::string>* warnings = nullptr);

/// Adds a horizontally mirrored twin directly after every image. Pair
/// enumeration over the result yields 4 variants per original cross-camera
/// pair (each member mirrored or not).
Dataset mirror_augment(const Dataset& ds);

/// Epoch-wise reshuffle keyed by (seed, epoch); the last batch may be short.
std::vector<TripletBatch> batch_iter(const std::vector<Triplet>& triplets, int batch_size,
                                     std::uint64_t seed, int epoch);

/// Throws std::invalid_argument if t violates the triplet invariants w.r.t. ds.
void check_triplet(const Dataset& ds, const Triplet& t);

}  // namespace mtdnet
