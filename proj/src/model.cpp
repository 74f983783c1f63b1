#include "rcnet/model.hpp"

#include <stdexcept>

namespace rcnet {

void RCNetConfig::validate() const {
  for (std::size_t i = 0; i < channels.size(); ++i)
    if (channels[i] == 0)
      throw std::invalid_argument("config: channel count for " + std::string(kBlockNames[i]) +
                                  " must be positive");
  if (convs_per_block != 1 && convs_per_block != 2)
    throw std::invalid_argument("config: convs_per_block must be 1 or 2");
  if (in_channels == 0) throw std::invalid_argument("config: in_channels must be positive");
  if (num_classes != 2) throw std::invalid_argument("config: num_classes must be 2");
  if (channels[3] != channels[2])
    throw std::invalid_argument(
        "config: bridge channels must equal down2 channels for the identity skip (" +
        std::to_string(channels[3]) + " vs " + std::to_string(channels[2]) + ")");
  if (channels[4] != channels[1])
    throw std::invalid_argument(
        "config: up1 channels must equal down1 channels for the identity skip (" +
        std::to_string(channels[4]) + " vs " + std::to_string(channels[1]) + ")");
}

namespace {

void add_conv(std::vector<ParamSpec>& out, const std::string& prefix, Index cin, Index cout,
              Index k) {
  out.push_back({prefix + ".weight", {cout, cin, k, k}, true});
  out.push_back({prefix + ".bias", {cout}, true});
}

void add_bn(std::vector<ParamSpec>& out, const std::string& prefix, Index ch) {
  out.push_back({prefix + ".gamma", {ch}, true});
  out.push_back({prefix + ".beta", {ch}, true});
  out.push_back({prefix + ".running_mean", {ch}, false});
  out.push_back({prefix + ".running_var", {ch}, false});
}

}  // namespace

std::vector<ParamSpec> param_layout(const RCNetConfig& config) {
  config.validate();
  std::vector<ParamSpec> out;
  Index cin = config.in_channels;
  for (std::size_t b = 0; b < kBlockNames.size(); ++b) {
    const std::string name(kBlockNames[b]);
    const Index cout = config.channels[b];
    Index h = cin;
    for (std::uint32_t i = 1; i <= config.convs_per_block; ++i) {
      add_conv(out, name + ".conv" + std::to_string(i), h, cout, 3);
      add_bn(out, name + ".bn" + std::to_string(i), cout);
      h = cout;
    }
    add_conv(out, name + ".skip", cin, cout, 1);
    add_bn(out, name + ".skip_bn", cout);
    cin = cout;
  }
  add_conv(out, "output.conv1", cin, cin, 3);
  add_bn(out, "output.bn1", cin);
  add_conv(out, "head", cin, config.num_classes, 1);
  return out;
}

std::vector<std::string> activation_names(const RCNetConfig& config) {
  Tape<float> tape;
  auto params = build<float>(config, 0);
  const ForwardResult r = forward(tape, params, TensorF({1, config.in_channels, 4, 4}), Mode::Eval);
  std::vector<std::string> names;
  for (const auto& a : r.activations) names.push_back(a.first);
  return names;
}

}  // namespace rcnet
