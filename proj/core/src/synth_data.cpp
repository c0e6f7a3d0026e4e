#include "mtdnet/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mtdnet/common.hpp"
#include "mtdnet/image_io.hpp"

namespace mtdnet {

void SynthSpec::validate() const {
  if (n_identities < 2) throw std::invalid_argument("synth: n_identities must be >= 2");
  if (images_per_camera < 1) throw std::invalid_argument("synth: images_per_camera must be >= 1");
  if (height < 16 || width < 16)
    throw std::invalid_argument("synth: image size too small to render (< 16 px a side)");
  if (domain_shift < 0 || domain_shift > 1)
    throw std::invalid_argument("synth: domain_shift must be in [0,1]");
  for (const CameraModel& c : cameras)
    if (c.noise_sigma < 0 || c.horizontal_jitter < 0)
      throw std::invalid_argument("synth: camera noise/jitter must be >= 0");
}

SynthSpec make_synth_spec(int n_identities, int images_per_camera, int h, int w, double shift,
                          std::uint64_t seed) {
  SynthSpec spec;
  spec.n_identities = n_identities;
  spec.images_per_camera = images_per_camera;
  spec.height = h;
  spec.width = w;
  spec.domain_shift = shift;
  spec.seed = seed;
  spec.cameras[0] = {0.0, 0.0, 1, 0.04};
  // Camera 2 diverges more as the shift grows.
  spec.cameras[1] = {0.06 + 0.30 * shift, 0.12 + 1.1 * shift,
                     1 + static_cast<int>(std::lround(6 * shift)), 0.04 + 0.20 * shift};
  spec.validate();
  return spec;
}

namespace {

struct IdentityParams {
  float torso[3], legs[3], head_tone;
  float aspect;   // torso width as a fraction of image width
  float phase;    // texture stripe phase
};

IdentityParams draw_identity(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> color(0.10f, 0.90f);
  IdentityParams p{};
  for (float& c : p.torso) c = color(rng);
  for (float& c : p.legs) c = color(rng);
  p.head_tone = std::uniform_real_distribution<float>(0.55f, 0.85f)(rng);
  p.aspect = std::uniform_real_distribution<float>(0.30f, 0.55f)(rng);
  p.phase = std::uniform_real_distribution<float>(0.0f, 2.0f * std::numbers::pi_v<float>)(rng);
  return p;
}

void fill_rect(Tensor& img, int y0, int y1, int x0, int x1, const float rgb[3]) {
  const int h = img.shape[1], w = img.shape[2];
  y0 = std::clamp(y0, 0, h);
  y1 = std::clamp(y1, 0, h);
  x0 = std::clamp(x0, 0, w);
  x1 = std::clamp(x1, 0, w);
  for (int c = 0; c < 3; ++c)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) img.at3(c, y, x) = rgb[c];
}

Tensor render_figure(const IdentityParams& id, int h, int w, int dx) {
  Tensor img({3, h, w});
  std::fill(img.data.begin(), img.data.end(), 0.82f);  // flat background
  const int cx = w / 2 + dx;

  const float head[3] = {id.head_tone, id.head_tone * 0.92f, id.head_tone * 0.85f};
  const int head_w = std::max(2, w / 5);
  fill_rect(img, static_cast<int>(0.06 * h), static_cast<int>(0.20 * h), cx - head_w / 2,
            cx + head_w / 2, head);

  const int torso_w = std::max(3, static_cast<int>(id.aspect * w));
  const int ty0 = static_cast<int>(0.22 * h), ty1 = static_cast<int>(0.56 * h);
  fill_rect(img, ty0, ty1, cx - torso_w / 2, cx + torso_w / 2, id.torso);
  // Low-frequency horizontal stripes over the torso.
  for (int y = ty0; y < std::min(ty1, h); ++y) {
    const float mod =
        1.0f + 0.22f * std::sin(2.0f * std::numbers::pi_v<float> * 2.5f * y / h + id.phase);
    for (int c = 0; c < 3; ++c)
      for (int x = std::max(0, cx - torso_w / 2); x < std::min(w, cx + torso_w / 2); ++x)
        img.at3(c, y, x) = std::clamp(img.at3(c, y, x) * mod, 0.0f, 1.0f);
  }

  const int leg_w = std::max(1, torso_w / 3);
  const int ly0 = static_cast<int>(0.58 * h), ly1 = static_cast<int>(0.94 * h);
  fill_rect(img, ly0, ly1, cx - torso_w / 2, cx - torso_w / 2 + leg_w, id.legs);
  fill_rect(img, ly0, ly1, cx + torso_w / 2 - leg_w, cx + torso_w / 2, id.legs);
  return img;
}

void rotate_hue(Tensor& img, double theta) {
  if (theta == 0.0) return;
  const float c = static_cast<float>(std::cos(theta));
  const float m1 = (1.0f - c) / 3.0f;
  const float s = static_cast<float>(std::sin(theta)) / std::sqrt(3.0f);
  const std::int64_t plane = static_cast<std::int64_t>(img.shape[1]) * img.shape[2];
  for (std::int64_t i = 0; i < plane; ++i) {
    const float r = img.data[i], g = img.data[i + plane], b = img.data[i + 2 * plane];
    const float m = m1 * (r + g + b);
    img.data[i] = c * r + m + s * (b - g);
    img.data[i + plane] = c * g + m + s * (r - b);
    img.data[i + 2 * plane] = c * b + m + s * (g - r);
  }
}

}  // namespace

Dataset generate(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.images.reserve(static_cast<size_t>(spec.n_identities) * 2 * spec.images_per_camera);
  for (int id = 0; id < spec.n_identities; ++id) {
    const IdentityParams params = draw_identity(derive_seed(spec.seed, id));
    for (int cam = 1; cam <= 2; ++cam) {
      const CameraModel& model = spec.cameras[cam - 1];
      for (int shot = 0; shot < spec.images_per_camera; ++shot) {
        std::mt19937_64 rng(derive_seed(derive_seed(spec.seed, id),
                                        static_cast<std::uint64_t>(cam) * 1000003 + shot));
        int dx = 0;
        if (model.horizontal_jitter > 0)
          dx = std::uniform_int_distribution<int>(-model.horizontal_jitter,
                                                  model.horizontal_jitter)(rng);
        Tensor img = render_figure(params, spec.height, spec.width, dx);
        rotate_hue(img, model.hue_rotation);
        if (model.brightness_shift != 0.0)
          for (float& v : img.data) v += static_cast<float>(model.brightness_shift);
        if (model.noise_sigma > 0.0) {
          std::normal_distribution<float> noise(0.0f, static_cast<float>(model.noise_sigma));
          for (float& v : img.data) v += noise(rng);
        }
        for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
        ds.images.push_back({std::move(img), id, cam, false});
      }
    }
  }
  return ds;
}

DatasetSplit split(const Dataset& ds, const SplitProtocol& protocol) {
  std::vector<int> ids = ds.person_ids();
  const int need = protocol.n_test_identities + protocol.n_val_identities + protocol.gallery_distractors;
  if (protocol.n_test_identities < 0 || protocol.n_val_identities < 0 || protocol.gallery_distractors < 0)
    throw std::invalid_argument("split: negative counts");
  if (need > static_cast<int>(ids.size()))
    throw std::invalid_argument("split: need " + std::to_string(need) + " identities, dataset has " +
                                std::to_string(ids.size()));
  std::mt19937_64 rng(protocol.seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  std::map<int, int> bucket;  // 0 test, 1 val, 2 distractor, 3 train
  int at = 0;
  for (int i = 0; i < protocol.n_test_identities; ++i) bucket[ids[at++]] = 0;
  for (int i = 0; i < protocol.n_val_identities; ++i) bucket[ids[at++]] = 1;
  for (int i = 0; i < protocol.gallery_distractors; ++i) bucket[ids[at++]] = 2;
  for (; at < static_cast<int>(ids.size()); ++at) bucket[ids[at]] = 3;

  DatasetSplit out;
  for (const LabeledImage& im : ds.images) {
    switch (bucket.at(im.person_id)) {
      case 0: out.test.images.push_back(im); break;
      case 1: out.val.images.push_back(im); break;
      case 2: out.distractors.images.push_back(im); break;
      default: out.train.images.push_back(im); break;
    }
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "path,person_id,camera_id\n";
  std::map<std::pair<int, int>, int> counter;
  for (const LabeledImage& im : ds.images) {
    const int index = counter[{im.person_id, im.camera_id}]++;
    char name[32];
    std::snprintf(name, sizeof(name), "%04d.ppm", index);
    const fs::path rel = fs::path(std::to_string(im.person_id)) / std::to_string(im.camera_id) / name;
    fs::create_directories(dir / rel.parent_path());
    write_ppm(im.image, dir / rel);
    manifest << rel.generic_string() << "," << im.person_id << "," << im.camera_id << "\n";
  }
}

namespace {

Dataset load_from_manifest(const std::filesystem::path& dir, const std::filesystem::path& manifest,
                           int target_h, int target_w) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot read " + manifest.string());
  Dataset ds;
  std::string line;
  std::getline(in, line);  // header
  if (line != "path,person_id,camera_id")
    throw std::runtime_error(manifest.string() + ": unexpected header '" + line + "'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string path_field, pid_field, cam_field;
    if (!std::getline(row, path_field, ',') || !std::getline(row, pid_field, ',') ||
        !std::getline(row, cam_field))
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": malformed record");
    LabeledImage im;
    im.person_id = std::stoi(pid_field);
    im.camera_id = std::stoi(cam_field);
    im.image = resize_bilinear(read_ppm(dir / path_field), target_h, target_w);
    ds.images.push_back(std::move(im));
  }
  return ds;
}

Dataset load_from_layout(const std::filesystem::path& dir, int target_h, int target_w) {
  namespace fs = std::filesystem;
  std::vector<std::tuple<int, int, fs::path>> entries;
  for (const auto& person_dir : fs::directory_iterator(dir)) {
    if (!person_dir.is_directory())
      throw std::runtime_error("unexpected file in dataset root: " + person_dir.path().string());
    int pid = 0;
    try {
      pid = std::stoi(person_dir.path().filename().string());
    } catch (const std::exception&) {
      throw std::runtime_error("person directory is not an integer id: " + person_dir.path().string());
    }
    for (const auto& cam_dir : fs::directory_iterator(person_dir.path())) {
      if (!cam_dir.is_directory())
        throw std::runtime_error("unexpected file in person directory: " + cam_dir.path().string());
      const std::string cam_name = cam_dir.path().filename().string();
      if (cam_name != "1" && cam_name != "2")
        throw std::runtime_error("camera directory must be '1' or '2': " + cam_dir.path().string());
      for (const auto& file : fs::directory_iterator(cam_dir.path())) {
        if (!file.is_regular_file())
          throw std::runtime_error("unexpected entry in camera directory: " + file.path().string());
        entries.emplace_back(pid, cam_name == "1" ? 1 : 2, file.path());
      }
    }
  }
  std::sort(entries.begin(), entries.end());  // directory iteration order is unspecified
  Dataset ds;
  for (const auto& [pid, cam, path] : entries) {
    LabeledImage im;
    im.person_id = pid;
    im.camera_id = cam;
    im.image = resize_bilinear(read_ppm(path), target_h, target_w);  // throws naming the path
    ds.images.push_back(std::move(im));
  }
  return ds;
}

}  // namespace

Dataset load_folder(const std::filesystem::path& dir, int target_h, int target_w) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  Dataset ds;
  const fs::path manifest = dir / "manifest.csv";
  if (fs::exists(manifest))
    ds = load_from_manifest(dir, manifest, target_h, target_w);
  else
    ds = load_from_layout(dir, target_h, target_w);
  if (ds.images.empty()) throw std::runtime_error("dataset is empty: " + dir.string());
  return ds;
}

}  // namespace mtdnet
