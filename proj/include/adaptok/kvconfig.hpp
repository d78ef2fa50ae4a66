#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "adaptok/toymodel.hpp"

namespace adaptok {

// Flat `key = value` text with `#` comments. Every key must be consumed;
// leftovers are reported as unknown.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& name = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.contains(key); }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Throws if any key was never read.
  void check_all_used() const;
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
  mutable std::set<std::string> used_;

  [[noreturn]] void fail(const std::string& key, const std::string& what) const;
};

struct TrainRunConfig {
  std::filesystem::path source;
  std::filesystem::path target;
  std::filesystem::path validation_source;  // optional pair
  std::filesystem::path validation_target;
  std::vector<std::string> phase_names;
  std::vector<TrainConfig> schedule;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  double init_scale = 0.1;
  std::uint64_t init_seed = 17;
  unsigned threads = 1;
  DecodeConfig decode;

  // Fully resolved `key = value` listing, parseable by parse_train_config.
  std::string render() const;
};

// Relative paths are resolved against base_dir. `seed` and `threads` fill
// keys the file leaves unset.
TrainRunConfig parse_train_config(const KeyValueConfig& config, const std::filesystem::path& base_dir,
                                  std::uint64_t seed = 17, unsigned threads = 1);

}  // namespace adaptok
