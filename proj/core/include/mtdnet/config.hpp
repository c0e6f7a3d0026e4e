#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mtdnet/network.hpp"
#include "mtdnet/trainer_config.hpp"

namespace mtdnet {

/// Flat `key = value` configuration with dotted sections and '#' comments.
/// Keys keep insertion order, which makes serialize() canonical for a given
/// write sequence. Reads are tracked so callers can reject unknown keys.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse_string(const std::string& text, const std::string& origin = "<string>");

  std::string serialize() const;

  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, std::int64_t v);
  void set_uint(const std::string& key, std::uint64_t v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;                     // required
  std::string get_string(const std::string& key, const std::string& dflt) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t dflt) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;

  /// Keys present but never read through a getter. Call after reading a whole
  /// config to surface typos as errors.
  std::vector<std::string> unread_keys() const;

 private:
  const std::string* find(const std::string& key) const;
  std::vector<std::pair<std::string, std::string>> entries_;
  mutable std::set<std::string> read_;
  std::string origin_ = "<new>";
};

// Domain config <-> key-value mapping. Readers accept `net.preset` plus
// selective overrides; writers emit the full key set.
void write_net_config(KeyValueConfig& kv, const NetConfig& cfg);
NetConfig read_net_config(const KeyValueConfig& kv);
void write_train_config(KeyValueConfig& kv, const TrainConfig& cfg);
TrainConfig read_train_config(const KeyValueConfig& kv);

}  // namespace mtdnet
