#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "mtdnet/sampling.hpp"

namespace mtdnet {

/// Per-camera appearance transform applied after rendering.
struct CameraModel {
  double brightness_shift = 0.0;  // added to all channels
  double hue_rotation = 0.0;      // radians, rotation about the gray axis
  int horizontal_jitter = 0;      // max |shift| in pixels, drawn per image
  double noise_sigma = 0.0;       // gaussian pixel noise
};

/// Procedural stand-in for a two-view ReID dataset: each identity is a small
/// parameter vector (torso/leg colors, body aspect, texture phase) rendered
/// as a blocky figure; camera 2 additionally diverges from camera 1 by an
/// amount scaled with domain_shift.
struct SynthSpec {
  int n_identities = 2;
  int images_per_camera = 1;
  int height = 32;
  int width = 32;
  std::array<CameraModel, 2> cameras{};
  double domain_shift = 0.0;  // in [0,1]; 0 = near-identical views
  std::uint64_t seed = 1;

  void validate() const;
};

/// Camera models pre-filled so that view divergence grows with `shift`.
SynthSpec make_synth_spec(int n_identities, int images_per_camera, int h, int w, double shift,
                          std::uint64_t seed);

Dataset generate(const SynthSpec& spec);

struct SplitProtocol {
  int n_test_identities = 0;
  int n_val_identities = 0;
  int gallery_distractors = 0;
  std::uint64_t seed = 1;
};

struct DatasetSplit {
  Dataset train, val, test, distractors;
};

/// Identity-disjoint partition; distractor identities appear only in the
/// gallery at evaluation time.
DatasetSplit split(const Dataset& ds, const SplitProtocol& protocol);

/// Writes `<person_id>/<camera_id>/NNNN[m].ppm` plus manifest.csv with one
/// `path,person_id,camera_id` record per image.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Loads a dataset directory. Uses manifest.csv when present; otherwise scans
/// the `<person_id>/<camera_id>/` layout, where any unreadable or non-image
/// file is an error, never a silent skip. Images are resized to
/// [3,target_h,target_w] bilinearly.
Dataset load_folder(const std::filesystem::path& dir, int target_h, int target_w);

}  // namespace mtdnet
