#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nilm/errors.hpp"
#include "nilm/layers.hpp"
#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

// Sequence-to-sequence disaggregation network.
//
// The model runs several residual-block stacks ("bodies") over the same
// input in parallel.  Within a body, block i uses dilation 2^i, so each body
// covers a different time horizon; a body whose deepest block has dilation
// 2^D sees
//
//     receptive_field = (2^(D+2) - 2) * (kernel_size - 1) + 1
//
// input samples around every output position.  The bodies' outputs are
// concatenated on the channel axis and reduced to one sigmoid unit per time
// step by a position-wise dense head, so input and output lengths are equal.

namespace nilm {

using json = nlohmann::json;

inline long long receptive_field(int kernel_size, int deepest_dilation_log2) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("receptive_field: kernel size must be odd and positive");
  }
  if (deepest_dilation_log2 < 0 || deepest_dilation_log2 > 60) {
    throw ConfigError("receptive_field: dilation exponent out of range");
  }
  return ((1LL << (deepest_dilation_log2 + 2)) - 2) * (kernel_size - 1) + 1;
}

// Receptive field of a body made of `blocks` residual blocks whose dilations
// run 1, 2, 4, ..., 2^(blocks-1).
inline long long body_receptive_field(int kernel_size, int blocks) {
  if (blocks < 1) throw ConfigError("receptive_field: need at least 1 block");
  return receptive_field(kernel_size, blocks - 1);
}

// ---------------------------------------------------------------------------

struct ModelConfig {
  int in_channels = 1;
  int kernel_size = 5;
  std::vector<int> blocks_per_body = {2, 3, 4, 5};
  // out-channel width per block, per body; must mirror blocks_per_body
  std::vector<std::vector<int>> body_channels = uniform_channels({2, 3, 4, 5},
                                                                 96);
  int head_hidden = 128;
  double dropout = 0.1;
  std::string precision = "float32";

  static std::vector<std::vector<int>> uniform_channels(
      const std::vector<int>& blocks, int width) {
    std::vector<std::vector<int>> out;
    out.reserve(blocks.size());
    for (const int n : blocks) out.emplace_back(n, width);
    return out;
  }

  // Same topology, every width scaled down; used by narrow test builds.
  static ModelConfig with_width(int width, int head_hidden_width) {
    ModelConfig cfg;
    cfg.body_channels = uniform_channels(cfg.blocks_per_body, width);
    cfg.head_hidden = head_hidden_width;
    return cfg;
  }

  void validate() const {
    if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) {
      throw ConfigError("model: kernel_size must be odd and positive, got " +
                        std::to_string(kernel_size));
    }
    if (blocks_per_body.empty()) {
      throw ConfigError("model: needs at least one body");
    }
    if (body_channels.size() != blocks_per_body.size()) {
      throw ConfigError("model: body_channels lists " +
                        std::to_string(body_channels.size()) +
                        " bodies but blocks_per_body lists " +
                        std::to_string(blocks_per_body.size()));
    }
    for (std::size_t i = 0; i < blocks_per_body.size(); ++i) {
      if (blocks_per_body[i] < 1) {
        throw ConfigError("model: body " + std::to_string(i) +
                          " must have at least one block");
      }
      if (body_channels[i].size() !=
          static_cast<std::size_t>(blocks_per_body[i])) {
        throw ConfigError("model: body " + std::to_string(i) + " lists " +
                          std::to_string(body_channels[i].size()) +
                          " widths for " + std::to_string(blocks_per_body[i]) +
                          " blocks");
      }
      for (const int c : body_channels[i]) {
        if (c < 1) {
          throw ConfigError("model: channel widths must be positive");
        }
      }
    }
    if (head_hidden < 1) throw ConfigError("model: head_hidden must be >= 1");
    if (!(dropout >= 0.0) || dropout >= 1.0) {
      throw ConfigError("model: dropout must lie in [0, 1)");
    }
    if (precision != "float32" && precision != "float64") {
      throw ConfigError("model: precision must be float32 or float64, got " +
                        precision);
    }
  }

  json to_json() const {
    return json{{"kind", "multiscale"},
                {"in_channels", in_channels},
                {"kernel_size", kernel_size},
                {"blocks_per_body", blocks_per_body},
                {"channels", body_channels},
                {"head_hidden", head_hidden},
                {"dropout", dropout},
                {"precision", precision}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig cfg;
    try {
      if (j.contains("kind") && j.at("kind") != "multiscale") {
        throw ConfigError("model: expected kind \"multiscale\", got " +
                          j.at("kind").dump());
      }
      cfg.in_channels = j.value("in_channels", cfg.in_channels);
      cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
      cfg.blocks_per_body =
          j.value("blocks_per_body", cfg.blocks_per_body);
      if (j.contains("channels")) {
        const json& ch = j.at("channels");
        if (ch.is_number_integer()) {
          cfg.body_channels =
              uniform_channels(cfg.blocks_per_body, ch.get<int>());
        } else {
          cfg.body_channels = ch.get<std::vector<std::vector<int>>>();
        }
      } else {
        cfg.body_channels = uniform_channels(cfg.blocks_per_body, 96);
      }
      cfg.head_hidden = j.value("head_hidden", cfg.head_hidden);
      cfg.dropout = j.value("dropout", cfg.dropout);
      cfg.precision = j.value("precision", cfg.precision);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model: bad config json: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }
};

// ---------------------------------------------------------------------------

// conv -> LayerNorm -> Dropout -> ReLU, twice, plus a shortcut add of the
// block input.  The shortcut is the identity when widths agree and a 1x1
// convolution otherwise.  No activation follows the add.
template <typename S>
class ResidualBlock {
 public:
  ResidualBlock(int in_channels, int out_channels, int kernel_size,
                int dilation, double dropout)
      : conv1_(in_channels, out_channels, kernel_size, dilation),
        ln1_(out_channels),
        conv2_(out_channels, out_channels, kernel_size, dilation),
        ln2_(out_channels),
        drop_(dropout) {
    if (in_channels != out_channels) {
      shortcut_.emplace(in_channels, out_channels, 1, 1);
    }
  }

  Tensor<S> forward(const Tensor<S>& x, const ForwardCtx& ctx) const {
    Tensor<S> h = relu(drop_.forward(ln1_.forward(conv1_.forward(x)), ctx));
    h = relu(drop_.forward(ln2_.forward(conv2_.forward(h)), ctx));
    const Tensor<S> skip = shortcut_ ? shortcut_->forward(x) : x;
    return add(skip, h);
  }

  int dilation() const { return conv1_.dilation(); }
  bool has_projection() const { return shortcut_.has_value(); }

  void collect_parameters(
      const std::string& prefix,
      std::vector<std::pair<std::string, Tensor<S>>>& out) const {
    out.emplace_back(prefix + ".conv1.weight", conv1_.weight());
    out.emplace_back(prefix + ".conv1.bias", conv1_.bias());
    out.emplace_back(prefix + ".ln1.gamma", ln1_.gamma());
    out.emplace_back(prefix + ".ln1.beta", ln1_.beta());
    out.emplace_back(prefix + ".conv2.weight", conv2_.weight());
    out.emplace_back(prefix + ".conv2.bias", conv2_.bias());
    out.emplace_back(prefix + ".ln2.gamma", ln2_.gamma());
    out.emplace_back(prefix + ".ln2.beta", ln2_.beta());
    if (shortcut_) {
      out.emplace_back(prefix + ".shortcut.weight", shortcut_->weight());
      out.emplace_back(prefix + ".shortcut.bias", shortcut_->bias());
    }
  }

  void init_parameters(Rng& rng) {
    conv1_.init_parameters(rng);
    conv2_.init_parameters(rng);
    if (shortcut_) shortcut_->init_parameters(rng);
  }

 private:
  DilatedConv1d<S> conv1_;
  LayerNorm<S> ln1_;
  DilatedConv1d<S> conv2_;
  LayerNorm<S> ln2_;
  Dropout<S> drop_;
  std::optional<DilatedConv1d<S>> shortcut_;
};

// A stack of residual blocks with dilations 1, 2, 4, ... 2^(blocks-1).
template <typename S>
class ResidualBody {
 public:
  ResidualBody(int in_channels, const std::vector<int>& widths,
               int kernel_size, double dropout) {
    if (widths.empty()) {
      throw ConfigError("body: needs at least one block");
    }
    int c_in = in_channels;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      blocks_.emplace_back(c_in, widths[i], kernel_size, 1 << i, dropout);
      c_in = widths[i];
    }
    out_channels_ = c_in;
    kernel_size_ = kernel_size;
  }

  Tensor<S> forward(const Tensor<S>& x, const ForwardCtx& ctx) const {
    Tensor<S> h = x;
    for (const auto& block : blocks_) h = block.forward(h, ctx);
    return h;
  }

  int out_channels() const { return out_channels_; }
  std::size_t block_count() const { return blocks_.size(); }

  long long receptive_field_samples() const {
    return body_receptive_field(kernel_size_,
                                static_cast<int>(blocks_.size()));
  }

  void collect_parameters(
      const std::string& prefix,
      std::vector<std::pair<std::string, Tensor<S>>>& out) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect_parameters(prefix + ".block" + std::to_string(i),
                                    out);
    }
  }

  void init_parameters(Rng& rng) {
    for (auto& b : blocks_) b.init_parameters(rng);
  }

 private:
  std::vector<ResidualBlock<S>> blocks_;
  int out_channels_ = 0;
  int kernel_size_ = 0;
};

// ---------------------------------------------------------------------------

template <typename S>
class MultiScaleModel {
 public:
  explicit MultiScaleModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int concat_channels = 0;
    for (std::size_t i = 0; i < cfg_.blocks_per_body.size(); ++i) {
      bodies_.emplace_back(cfg_.in_channels, cfg_.body_channels[i],
                           cfg_.kernel_size, cfg_.dropout);
      concat_channels += bodies_.back().out_channels();
    }
    head_hidden_.emplace(concat_channels, cfg_.head_hidden);
    head_out_.emplace(cfg_.head_hidden, 1);
  }

  // x: [batch, in_channels, time] -> [batch, 1, time], values in (0, 1)
  Tensor<S> forward(const Tensor<S>& x, const ForwardCtx& ctx) const {
    std::vector<Tensor<S>> outs;
    outs.reserve(bodies_.size());
    for (const auto& body : bodies_) outs.push_back(body.forward(x, ctx));
    const Tensor<S> cat = concat_channels(outs);
    const Tensor<S> hidden = relu(head_hidden_->forward(cat));
    return sigmoid(head_out_->forward(hidden));
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (std::size_t i = 0; i < bodies_.size(); ++i) {
      bodies_[i].collect_parameters("body" + std::to_string(i), out);
    }
    out.emplace_back("head.hidden.weight", head_hidden_->weight());
    out.emplace_back("head.hidden.bias", head_hidden_->bias());
    out.emplace_back("head.out.weight", head_out_->weight());
    out.emplace_back("head.out.bias", head_out_->bias());
    return out;
  }

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }

  void init_parameters(Rng& rng) {
    for (auto& body : bodies_) body.init_parameters(rng);
    head_hidden_->init_parameters(rng);
    head_out_->init_parameters(rng);
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<ResidualBody<S>>& bodies() const { return bodies_; }

 private:
  ModelConfig cfg_;
  std::vector<ResidualBody<S>> bodies_;
  std::optional<PositionwiseDense<S>> head_hidden_;
  std::optional<PositionwiseDense<S>> head_out_;
};

// ---------------------------------------------------------------------------

// Plain undilated convolution stack used as a training baseline.
struct BaselineCnnConfig {
  int in_channels = 1;
  int kernel_size = 5;
  std::vector<int> channels = {32, 32};
  int head_hidden = 64;
  std::string precision = "float32";

  void validate() const {
    if (in_channels < 1) throw ConfigError("baseline: in_channels >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) {
      throw ConfigError("baseline: kernel_size must be odd and positive");
    }
    if (channels.empty()) throw ConfigError("baseline: needs conv layers");
    for (const int c : channels) {
      if (c < 1) throw ConfigError("baseline: channel widths positive");
    }
    if (head_hidden < 1) throw ConfigError("baseline: head_hidden >= 1");
    if (precision != "float32" && precision != "float64") {
      throw ConfigError("baseline: precision must be float32 or float64");
    }
  }

  json to_json() const {
    return json{{"kind", "baseline_cnn"},
                {"in_channels", in_channels},
                {"kernel_size", kernel_size},
                {"channels", channels},
                {"head_hidden", head_hidden},
                {"precision", precision}};
  }

  static BaselineCnnConfig from_json(const json& j) {
    BaselineCnnConfig cfg;
    try {
      if (j.contains("kind") && j.at("kind") != "baseline_cnn") {
        throw ConfigError("baseline: expected kind \"baseline_cnn\"");
      }
      cfg.in_channels = j.value("in_channels", cfg.in_channels);
      cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
      cfg.channels = j.value("channels", cfg.channels);
      cfg.head_hidden = j.value("head_hidden", cfg.head_hidden);
      cfg.precision = j.value("precision", cfg.precision);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("baseline: bad config json: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }
};

template <typename S>
class BaselineCnn {
 public:
  explicit BaselineCnn(const BaselineCnnConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int c_in = cfg_.in_channels;
    for (const int c : cfg_.channels) {
      convs_.emplace_back(c_in, c, cfg_.kernel_size, 1);
      c_in = c;
    }
    head_hidden_.emplace(c_in, cfg_.head_hidden);
    head_out_.emplace(cfg_.head_hidden, 1);
  }

  Tensor<S> forward(const Tensor<S>& x, const ForwardCtx&) const {
    Tensor<S> h = x;
    for (const auto& conv : convs_) h = relu(conv.forward(h));
    return sigmoid(head_out_->forward(relu(head_hidden_->forward(h))));
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const std::string p = "conv" + std::to_string(i);
      out.emplace_back(p + ".weight", convs_[i].weight());
      out.emplace_back(p + ".bias", convs_[i].bias());
    }
    out.emplace_back("head.hidden.weight", head_hidden_->weight());
    out.emplace_back("head.hidden.bias", head_hidden_->bias());
    out.emplace_back("head.out.weight", head_out_->weight());
    out.emplace_back("head.out.bias", head_out_->bias());
    return out;
  }

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }

  void init_parameters(Rng& rng) {
    for (auto& c : convs_) c.init_parameters(rng);
    head_hidden_->init_parameters(rng);
    head_out_->init_parameters(rng);
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

  const BaselineCnnConfig& config() const { return cfg_; }

 private:
  BaselineCnnConfig cfg_;
  std::vector<DilatedConv1d<S>> convs_;
  std::optional<PositionwiseDense<S>> head_hidden_;
  std::optional<PositionwiseDense<S>> head_out_;
};

}  // namespace nilm
