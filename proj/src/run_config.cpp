#include "rcnet/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace rcnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(key, "config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) parts.push_back(trim(part));
  return parts;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{
      "dataset_root",  "protocol",       "holdout",        "whole_image_fov",
      "channels",      "convs_per_block", "learning_rate", "batch_size",
      "epochs",        "seed",           "loss_weights",   "deterministic",
      "augment",       "rotation_step",  "brightness_variants", "brightness_min",
      "brightness_max", "train_subset",  "threshold",      "out_dir"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "dataset_root") {
    dataset_root = v;
  } else if (key == "protocol") {
    if (v != "drive-fixed" && v != "stare-50-50" && v != "stare-loo")
      throw ConfigError(key, "config key 'protocol': expected drive-fixed, stare-50-50 or "
                             "stare-loo, got '" + v + "'");
    protocol = v;
  } else if (key == "holdout") {
    holdout = parse_number<int>(key, v);
  } else if (key == "whole_image_fov") {
    whole_image_fov = parse_bool(key, v);
  } else if (key == "channels") {
    const auto parts = split_commas(v);
    if (parts.size() != 6)
      throw ConfigError(key, "config key 'channels': expected 6 comma-separated counts");
    for (std::size_t i = 0; i < 6; ++i) model.channels[i] = parse_number<std::uint32_t>(key, parts[i]);
  } else if (key == "convs_per_block") {
    model.convs_per_block = parse_number<std::uint32_t>(key, v);
  } else if (key == "learning_rate") {
    train.learning_rate = parse_number<double>(key, v);
  } else if (key == "batch_size") {
    train.batch_size = parse_number<int>(key, v);
  } else if (key == "epochs") {
    train.epochs = parse_number<int>(key, v);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, v);
    train.seed = seed;
    augment_plan.seed = seed;
  } else if (key == "loss_weights") {
    if (v == "auto") {
      train.loss_weights.reset();
    } else {
      const auto parts = split_commas(v);
      if (parts.size() != 2)
        throw ConfigError(key, "config key 'loss_weights': expected 'auto' or 'w_bg,w_vessel'");
      train.loss_weights = ClassWeights{parse_number<double>(key, parts[0]),
                                        parse_number<double>(key, parts[1])};
    }
  } else if (key == "deterministic") {
    train.deterministic = parse_bool(key, v);
  } else if (key == "augment") {
    augment = parse_bool(key, v);
  } else if (key == "rotation_step") {
    augment_plan.rotation_step_deg = parse_number<double>(key, v);
  } else if (key == "brightness_variants") {
    augment_plan.brightness_variants = parse_number<int>(key, v);
  } else if (key == "brightness_min") {
    augment_plan.brightness_min = parse_number<double>(key, v);
  } else if (key == "brightness_max") {
    augment_plan.brightness_max = parse_number<double>(key, v);
  } else if (key == "train_subset") {
    train_subset = parse_number<int>(key, v);
  } else if (key == "threshold") {
    threshold = parse_number<double>(key, v);
  } else if (key == "out_dir") {
    out_dir = v;
  } else {
    throw ConfigError(key, "unknown config key '" + key + "'");
  }
}

std::string RunConfig::get(const std::string& key) const {
  if (key == "dataset_root") return dataset_root;
  if (key == "protocol") return protocol;
  if (key == "holdout") return std::to_string(holdout);
  if (key == "whole_image_fov") return whole_image_fov ? "true" : "false";
  if (key == "channels") {
    std::string s;
    for (std::size_t i = 0; i < 6; ++i) s += (i ? "," : "") + std::to_string(model.channels[i]);
    return s;
  }
  if (key == "convs_per_block") return std::to_string(model.convs_per_block);
  if (key == "learning_rate") return fmt(train.learning_rate);
  if (key == "batch_size") return std::to_string(train.batch_size);
  if (key == "epochs") return std::to_string(train.epochs);
  if (key == "seed") return std::to_string(seed);
  if (key == "loss_weights")
    return train.loss_weights ? fmt(train.loss_weights->background) + "," +
                                    fmt(train.loss_weights->vessel)
                              : "auto";
  if (key == "deterministic") return train.deterministic ? "true" : "false";
  if (key == "augment") return augment ? "true" : "false";
  if (key == "rotation_step") return fmt(augment_plan.rotation_step_deg);
  if (key == "brightness_variants") return std::to_string(augment_plan.brightness_variants);
  if (key == "brightness_min") return fmt(augment_plan.brightness_min);
  if (key == "brightness_max") return fmt(augment_plan.brightness_max);
  if (key == "train_subset") return std::to_string(train_subset);
  if (key == "threshold") return fmt(threshold);
  if (key == "out_dir") return out_dir;
  throw ConfigError(key, "unknown config key '" + key + "'");
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  parse(ss.str(), path.string());
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const std::string& k : keys()) out += k + " = " + get(k) + "\n";
  return out;
}

Protocol RunConfig::protocol_id() const {
  if (protocol == "stare-50-50") return Protocol::Stare5050;
  if (protocol == "stare-loo") return Protocol::StareLeaveOneOut;
  return Protocol::DriveFixed;
}

}  // namespace rcnet
