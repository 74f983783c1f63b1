#pragma once

#include "rcnet/data.hpp"
#include "rcnet/model.hpp"
#include "rcnet/optim.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcnet {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Everything a CLI run needs, read from `key = value` lines with `#`
/// comments and overridable per key from the command line.
struct RunConfig {
  std::string dataset_root;
  std::string protocol = "drive-fixed";  // drive-fixed | stare-50-50 | stare-loo
  int holdout = 0;                       // stare-loo only
  bool whole_image_fov = false;          // STARE: skip FOV synthesis

  RCNetConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;

  bool augment = true;
  AugmentPlan augment_plan;
  int train_subset = 0;  // > 0: use only the first N training images

  double threshold = 0.5;
  std::string out_dir = "out";

  static const std::vector<std::string>& keys();

  /// Throws ConfigError naming the key for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Applies every `key = value` line of a config file.
  void load_file(const std::filesystem::path& path);
  void parse(const std::string& text, const std::string& origin = "config");

  /// Fully resolved configuration in the same `key = value` format.
  std::string resolved() const;

  Protocol protocol_id() const;
};

}  // namespace rcnet
