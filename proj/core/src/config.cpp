#include "mtdnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mtdnet/common.hpp"

namespace mtdnet {

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kSingle: return "single";
    case TrainMode::kCross: return "cross";
    case TrainMode::kAug: return "aug";
  }
  return "?";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "single") return TrainMode::kSingle;
  if (name == "cross") return TrainMode::kCross;
  if (name == "aug") return TrainMode::kAug;
  throw std::invalid_argument("unknown train mode '" + name + "' (single, cross, aug)");
}

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("train.learning_rate must be > 0");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train.momentum must be in [0,1)");
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (triplets_per_pair < 1) throw std::invalid_argument("train.triplets_per_pair must be >= 1");
  if (eval_every < 0) throw std::invalid_argument("train.eval_every must be >= 0");
}

namespace {
std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path.string());
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text, const std::string& origin) {
  KeyValueConfig kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" +
                               line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.set(key, value);
  }
  return kv;
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void KeyValueConfig::set_int(const std::string& key, std::int64_t v) { set(key, std::to_string(v)); }
void KeyValueConfig::set_uint(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }
void KeyValueConfig::set_double(const std::string& key, double v) { set(key, format_double(v)); }
void KeyValueConfig::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

const std::string* KeyValueConfig::find(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) {
      read_.insert(key);
      return &v;
    }
  return nullptr;
}

bool KeyValueConfig::has(const std::string& key) const { return find(key) != nullptr; }

std::string KeyValueConfig::get_string(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw std::runtime_error(origin_ + ": missing required key '" + key + "'");
  return *v;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& dflt) const {
  const std::string* v = find(key);
  return v ? *v : dflt;
}

namespace {
std::int64_t to_int(const std::string& s, const std::string& key, const std::string& origin) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error(origin + ": key '" + key + "': not an integer: '" + s + "'");
  return v;
}
}  // namespace

std::int64_t KeyValueConfig::get_int(const std::string& key) const {
  return to_int(get_string(key), key, origin_);
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t dflt) const {
  const std::string* v = find(key);
  return v ? to_int(*v, key, origin_) : dflt;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key, std::uint64_t dflt) const {
  const std::string* v = find(key);
  if (!v) return dflt;
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || p != v->data() + v->size())
    throw std::runtime_error(origin_ + ": key '" + key + "': not an unsigned integer: '" + *v + "'");
  return out;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string s = get_string(key);
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(origin_ + ": key '" + key + "': not a number: '" + s + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double dflt) const {
  return find(key) ? get_double(key) : dflt;
}

bool KeyValueConfig::get_bool(const std::string& key, bool dflt) const {
  const std::string* v = find(key);
  if (!v) return dflt;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw std::runtime_error(origin_ + ": key '" + key + "': not a boolean: '" + *v + "'");
}

std::vector<std::string> KeyValueConfig::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

// ---------------------------------------------------------------------------
// Domain configs
// ---------------------------------------------------------------------------

namespace {

void write_stage(KeyValueConfig& kv, const std::string& prefix, const ConvStage& s) {
  kv.set_int(prefix + ".channels", s.out_channels);
  kv.set_int(prefix + ".kernel", s.kernel);
  kv.set_int(prefix + ".stride", s.stride);
  kv.set_int(prefix + ".pad", s.pad);
  kv.set_int(prefix + ".pool_k", s.pool_k);
  kv.set_int(prefix + ".pool_stride", s.pool_stride);
}

ConvStage read_stage(const KeyValueConfig& kv, const std::string& prefix, const ConvStage& dflt) {
  ConvStage s;
  s.out_channels = static_cast<int>(kv.get_int(prefix + ".channels", dflt.out_channels));
  s.kernel = static_cast<int>(kv.get_int(prefix + ".kernel", dflt.kernel));
  s.stride = static_cast<int>(kv.get_int(prefix + ".stride", dflt.stride));
  s.pad = static_cast<int>(kv.get_int(prefix + ".pad", dflt.pad));
  s.pool_k = static_cast<int>(kv.get_int(prefix + ".pool_k", dflt.pool_k));
  s.pool_stride = static_cast<int>(kv.get_int(prefix + ".pool_stride", dflt.pool_stride));
  return s;
}

const char* reduction_name(LossConfig::Reduction r) {
  return r == LossConfig::Reduction::kSum ? "sum" : "mean";
}

LossConfig::Reduction reduction_from_name(const std::string& s) {
  if (s == "sum") return LossConfig::Reduction::kSum;
  if (s == "mean") return LossConfig::Reduction::kMean;
  throw std::invalid_argument("unknown loss.reduction '" + s + "' (sum, mean)");
}

}  // namespace

void write_net_config(KeyValueConfig& kv, const NetConfig& cfg) {
  kv.set("net.preset", cfg.preset);
  kv.set_int("net.input.height", cfg.input_shape[1]);
  kv.set_int("net.input.width", cfg.input_shape[2]);
  write_stage(kv, "net.trunk.conv1", cfg.trunk[0]);
  write_stage(kv, "net.trunk.conv2", cfg.trunk[1]);
  kv.set_int("net.embed_dim", cfg.embed_dim);
  for (int i = 0; i < 3; ++i) write_stage(kv, "net.cls.conv" + std::to_string(i + 3), cfg.cls_convs[i]);
  kv.set_int("net.fc.d6", cfg.fc_dims[0]);
  kv.set_int("net.fc.d7", cfg.fc_dims[1]);
  kv.set_int("net.fc.out", cfg.fc_dims[2]);
  kv.set_double("loss.alpha", cfg.loss.alpha);
  kv.set_double("loss.margin", cfg.loss.margin);
  kv.set("loss.reduction", reduction_name(cfg.loss.reduction));
  kv.set_double("loss.lambda_rnk", cfg.loss.lambda_rnk);
  kv.set_double("loss.lambda_cls", cfg.loss.lambda_cls);
  kv.set_double("loss.lambda_cts", cfg.loss.lambda_cts);
  kv.set_bool("loss.normalize_embeddings", cfg.loss.normalize_embeddings);
}

NetConfig read_net_config(const KeyValueConfig& kv) {
  const std::string preset = kv.get_string("net.preset", "custom");
  NetConfig cfg;
  if (preset != "custom") cfg = preset_by_name(preset);
  cfg.preset = preset;
  cfg.input_shape[1] = static_cast<int>(kv.get_int("net.input.height", cfg.input_shape[1]));
  cfg.input_shape[2] = static_cast<int>(kv.get_int("net.input.width", cfg.input_shape[2]));
  cfg.trunk[0] = read_stage(kv, "net.trunk.conv1", cfg.trunk[0]);
  cfg.trunk[1] = read_stage(kv, "net.trunk.conv2", cfg.trunk[1]);
  cfg.embed_dim = static_cast<int>(kv.get_int("net.embed_dim", cfg.embed_dim));
  for (int i = 0; i < 3; ++i)
    cfg.cls_convs[i] = read_stage(kv, "net.cls.conv" + std::to_string(i + 3), cfg.cls_convs[i]);
  cfg.fc_dims[0] = static_cast<int>(kv.get_int("net.fc.d6", cfg.fc_dims[0]));
  cfg.fc_dims[1] = static_cast<int>(kv.get_int("net.fc.d7", cfg.fc_dims[1]));
  cfg.fc_dims[2] = static_cast<int>(kv.get_int("net.fc.out", cfg.fc_dims[2]));
  cfg.loss.alpha = kv.get_double("loss.alpha", cfg.loss.alpha);
  cfg.loss.margin = kv.get_double("loss.margin", cfg.loss.margin);
  cfg.loss.reduction = reduction_from_name(kv.get_string("loss.reduction", reduction_name(cfg.loss.reduction)));
  cfg.loss.lambda_rnk = kv.get_double("loss.lambda_rnk", cfg.loss.lambda_rnk);
  cfg.loss.lambda_cls = kv.get_double("loss.lambda_cls", cfg.loss.lambda_cls);
  cfg.loss.lambda_cts = kv.get_double("loss.lambda_cts", cfg.loss.lambda_cts);
  cfg.loss.normalize_embeddings = kv.get_bool("loss.normalize_embeddings", cfg.loss.normalize_embeddings);
  cfg.validate();
  return cfg;
}

void write_train_config(KeyValueConfig& kv, const TrainConfig& cfg) {
  kv.set_double("train.learning_rate", cfg.learning_rate);
  kv.set_double("train.momentum", cfg.momentum);
  kv.set_int("train.epochs", cfg.epochs);
  kv.set_int("train.batch_size", cfg.batch_size);
  kv.set_uint("train.seed", cfg.seed);
  kv.set("train.mode", train_mode_name(cfg.mode));
  kv.set_int("train.eval_every", cfg.eval_every);
  kv.set_int("train.triplets_per_pair", cfg.triplets_per_pair);
  kv.set_bool("train.mirror", cfg.mirror);
  kv.set_bool("train.resample_negatives_each_epoch", cfg.resample_negatives_each_epoch);
  kv.set_bool("train.freeze_source", cfg.freeze_source);
}

TrainConfig read_train_config(const KeyValueConfig& kv) {
  TrainConfig cfg;
  cfg.learning_rate = kv.get_double("train.learning_rate", cfg.learning_rate);
  cfg.momentum = kv.get_double("train.momentum", cfg.momentum);
  cfg.epochs = static_cast<int>(kv.get_int("train.epochs", cfg.epochs));
  cfg.batch_size = static_cast<int>(kv.get_int("train.batch_size", cfg.batch_size));
  cfg.seed = kv.get_uint("train.seed", cfg.seed);
  cfg.mode = train_mode_from_name(kv.get_string("train.mode", train_mode_name(cfg.mode)));
  cfg.eval_every = static_cast<int>(kv.get_int("train.eval_every", cfg.eval_every));
  cfg.triplets_per_pair = static_cast<int>(kv.get_int("train.triplets_per_pair", cfg.triplets_per_pair));
  cfg.mirror = kv.get_bool("train.mirror", cfg.mirror);
  cfg.resample_negatives_each_epoch =
      kv.get_bool("train.resample_negatives_each_epoch", cfg.resample_negatives_each_epoch);
  cfg.freeze_source = kv.get_bool("train.freeze_source", cfg.freeze_source);
  cfg.validate();
  return cfg;
}

}  // namespace mtdnet
