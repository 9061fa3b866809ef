#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ecw/common.hpp"
#include "ecw/rng.hpp"
#include "ecw/tensor.hpp"

namespace ecw {

enum class LayerKind { conv, deconv, pool, upsample, relu, sigmoid };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::deconv: return "deconv";
    case LayerKind::pool: return "pool";
    case LayerKind::upsample: return "upsample";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "deconv") return LayerKind::deconv;
  if (s == "pool") return LayerKind::pool;
  if (s == "upsample") return LayerKind::upsample;
  if (s == "relu") return LayerKind::relu;
  if (s == "sigmoid") return LayerKind::sigmoid;
  throw ConfigError("unknown layer kind: " + s);
}

// One declared unit of the network. conv/deconv carry kernel and channel
// counts, pool/upsample carry factors, activations carry nothing.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int64_t kh = 0, kw = 0;
  int64_t in_channels = 0, out_channels = 0;
  int64_t ph = 0, pw = 0;

  bool weighted() const { return kind == LayerKind::conv || kind == LayerKind::deconv; }

  static LayerSpec conv(int64_t kh, int64_t kw, int64_t in, int64_t out) {
    return {LayerKind::conv, kh, kw, in, out, 0, 0};
  }
  static LayerSpec deconv(int64_t kh, int64_t kw, int64_t in, int64_t out) {
    return {LayerKind::deconv, kh, kw, in, out, 0, 0};
  }
  static LayerSpec pool(int64_t ph, int64_t pw) {
    return {LayerKind::pool, 0, 0, 0, 0, ph, pw};
  }
  static LayerSpec upsample(int64_t ph, int64_t pw) {
    return {LayerKind::upsample, 0, 0, 0, 0, ph, pw};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 0, 0, 0}; }
  static LayerSpec sigmoid() { return {LayerKind::sigmoid, 0, 0, 0, 0, 0, 0}; }
};

struct NetworkSpec {
  int64_t input_height = 0;
  int64_t input_width = 0;
  std::vector<LayerSpec> layers;

  // Counting convention: every declared unit is one layer.
  int64_t layer_count() const { return static_cast<int64_t>(layers.size()); }
};

// Reference full-size input per the published architecture table.
constexpr int64_t kReferenceHeight = 360;
constexpr int64_t kReferenceWidth = 652;
constexpr int64_t kParamBudgetLo = 600000;
constexpr int64_t kParamBudgetHi = 720000;

inline int64_t count_params(const NetworkSpec& spec) {
  int64_t total = 0;
  for (const auto& l : spec.layers)
    if (l.weighted()) total += (l.kh * l.kw * l.in_channels + 1) * l.out_channels;
  return total;
}

// Shape flow check; returns the output (c,h,w). Throws on any structural
// problem so build_network can reject a spec before allocating weights.
inline std::array<int64_t, 3> validate_spec(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw AsymmetricSpec("empty layer list");
  if (spec.input_height <= 0 || spec.input_width <= 0)
    throw ShapeFlowError("input dims must be positive");

  int64_t c = 1, h = spec.input_height, w = spec.input_width;
  std::vector<std::pair<int64_t, int64_t>> pool_factors, up_factors;
  int64_t n_conv = 0, n_deconv = 0;

  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::deconv:
        if (l.kh % 2 == 0 || l.kw % 2 == 0)
          throw ShapeFlowError("layer " + std::to_string(i) + ": even kernel");
        if (l.in_channels != c)
          throw ShapeFlowError("layer " + std::to_string(i) + ": expects " +
                               std::to_string(l.in_channels) + " channels, flow has " +
                               std::to_string(c));
        c = l.out_channels;
        (l.kind == LayerKind::conv ? n_conv : n_deconv)++;
        break;
      case LayerKind::pool:
        if (l.ph < 1 || l.pw < 1 || h % l.ph != 0 || w % l.pw != 0)
          throw ShapeFlowError("layer " + std::to_string(i) + ": pool factor (" +
                               std::to_string(l.ph) + "," + std::to_string(l.pw) +
                               ") does not divide " + std::to_string(h) + "x" +
                               std::to_string(w));
        h /= l.ph;
        w /= l.pw;
        pool_factors.emplace_back(l.ph, l.pw);
        break;
      case LayerKind::upsample:
        if (l.ph < 1 || l.pw < 1) throw ShapeFlowError("upsample factor must be >= 1");
        h *= l.ph;
        w *= l.pw;
        up_factors.emplace_back(l.ph, l.pw);
        break;
      case LayerKind::relu:
      case LayerKind::sigmoid:
        break;
    }
  }

  // Symmetry: one upsample per pool with mirrored factors, one deconv per conv
  // excluding the final 1x1 projection, sigmoid output.
  if (spec.layers.back().kind != LayerKind::sigmoid)
    throw AsymmetricSpec("network must end in a sigmoid layer");
  for (size_t i = 0; i + 1 < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::sigmoid)
      throw AsymmetricSpec("sigmoid only allowed as the final layer");

  if (pool_factors.size() != up_factors.size())
    throw AsymmetricSpec("pool/upsample counts differ: " +
                         std::to_string(pool_factors.size()) + " vs " +
                         std::to_string(up_factors.size()));
  for (size_t i = 0; i < pool_factors.size(); ++i)
    if (up_factors[i] != pool_factors[pool_factors.size() - 1 - i])
      throw AsymmetricSpec("upsample factors must mirror pool factors");

  // The projection is the last weighted layer: a 1x1 conv down to one channel.
  const LayerSpec* last_weighted = nullptr;
  for (const auto& l : spec.layers)
    if (l.weighted()) last_weighted = &l;
  const bool has_projection = last_weighted && last_weighted->kind == LayerKind::conv &&
                              last_weighted->kh == 1 && last_weighted->kw == 1 &&
                              last_weighted->out_channels == 1;
  const int64_t paired_convs = n_conv - (has_projection ? 1 : 0);
  if (paired_convs != n_deconv)
    throw AsymmetricSpec("deconv count " + std::to_string(n_deconv) +
                         " must equal conv count " + std::to_string(paired_convs) +
                         " (final 1x1 projection excluded)");

  if (h != spec.input_height || w != spec.input_width)
    throw AsymmetricSpec("output dims " + std::to_string(h) + "x" + std::to_string(w) +
                         " do not restore input dims");
  if (c != 1) throw AsymmetricSpec("output must be single-channel");

  // The budget applies to the full-size reference resolution.
  if (spec.input_height == kReferenceHeight && spec.input_width == kReferenceWidth) {
    const int64_t p = count_params(spec);
    if (p < kParamBudgetLo || p > kParamBudgetHi)
      throw ParamBudgetViolation("full-size config has " + std::to_string(p) +
                                 " trainable parameters, outside [" +
                                 std::to_string(kParamBudgetLo) + ", " +
                                 std::to_string(kParamBudgetHi) + "]");
  }
  return {c, h, w};
}

// The symmetric 41-unit corridor stack. Four encoder stages of two 3x3 convs
// with ReLU and a pool each, a mirrored decoder, and a 1x1 sigmoid projection.
// The last deconv has no ReLU of its own: the projection + sigmoid follow it
// directly, which is what puts the unit count at exactly 41.
inline NetworkSpec make_corridor_spec(int64_t input_h, int64_t input_w,
                                      std::array<int64_t, 4> ch = {27, 54, 81, 108}) {
  const int64_t c1 = ch[0], c2 = ch[1], c3 = ch[2], c4 = ch[3];
  NetworkSpec s;
  s.input_height = input_h;
  s.input_width = input_w;
  auto& L = s.layers;

  const std::array<std::pair<int64_t, int64_t>, 4> pools{{{2, 2}, {2, 2}, {3, 1}, {2, 1}}};
  const std::array<int64_t, 5> chain{1, c1, c2, c3, c4};

  for (int stage = 0; stage < 4; ++stage) {
    L.push_back(LayerSpec::conv(3, 3, chain[stage], chain[stage + 1]));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::conv(3, 3, chain[stage + 1], chain[stage + 1]));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::pool(pools[stage].first, pools[stage].second));
  }
  for (int stage = 3; stage >= 0; --stage) {
    L.push_back(LayerSpec::upsample(pools[stage].first, pools[stage].second));
    L.push_back(LayerSpec::deconv(3, 3, chain[stage + 1], chain[stage + 1]));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::deconv(3, 3, chain[stage + 1], stage == 0 ? c1 : chain[stage]));
    if (stage != 0) L.push_back(LayerSpec::relu());
  }
  L.push_back(LayerSpec::conv(1, 1, c1, 1));
  L.push_back(LayerSpec::sigmoid());
  return s;
}

inline NetworkSpec reference_spec() {
  return make_corridor_spec(kReferenceHeight, kReferenceWidth);
}

// Slim profile used for CPU-budget desk training; same topology.
constexpr std::array<int64_t, 4> kDeskChannels = {6, 12, 24, 48};

// ---- JSON ----

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"kind", to_string(l.kind)}};
  if (l.weighted()) {
    j["kernel"] = {l.kh, l.kw};
    j["in"] = l.in_channels;
    j["out"] = l.out_channels;
  } else if (l.kind == LayerKind::pool || l.kind == LayerKind::upsample) {
    j["factor"] = {l.ph, l.pw};
  }
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  l = LayerSpec{};
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  if (l.kind == LayerKind::conv || l.kind == LayerKind::deconv) {
    l.kh = j.at("kernel").at(0).get<int64_t>();
    l.kw = j.at("kernel").at(1).get<int64_t>();
    l.in_channels = j.at("in").get<int64_t>();
    l.out_channels = j.at("out").get<int64_t>();
  } else if (l.kind == LayerKind::pool || l.kind == LayerKind::upsample) {
    l.ph = j.at("factor").at(0).get<int64_t>();
    l.pw = j.at("factor").at(1).get<int64_t>();
  }
}

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = nlohmann::json{
      {"input_height", s.input_height}, {"input_width", s.input_width}, {"layers", s.layers}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.input_height = j.at("input_height").get<int64_t>();
  s.input_width = j.at("input_width").get<int64_t>();
  s.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

// ---- Instantiated network ----

template <typename T>
class Network {
 public:
  Network() = default;

  explicit Network(NetworkSpec spec, uint64_t seed = 0) : spec_(std::move(spec)) {
    validate_spec(spec_);
    for (const auto& l : spec_.layers)
      if (l.weighted())
        params_.push_back(ConvParams<T>::make(l.kh, l.kw, l.in_channels, l.out_channels));
    init_weights(seed);
  }

  const NetworkSpec& spec() const { return spec_; }
  int64_t layer_count() const { return spec_.layer_count(); }
  int64_t param_count() const { return count_params(spec_); }

  std::vector<ConvParams<T>>& params() { return params_; }
  const std::vector<ConvParams<T>>& params() const { return params_; }

  // Zero-mean uniform scaled by 1/sqrt(fan_in), one seeded stream per layer.
  void init_weights(uint64_t seed) {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      Rng rng(seed, hash_combine(0x77656967687473ULL, i));  // "weights", layer i
      const double bound = 1.0 / std::sqrt(double(p.kh * p.kw * p.in_channels));
      for (auto& v : p.weights.data) v = static_cast<T>(rng.uniform(-bound, bound));
      std::fill(p.bias.begin(), p.bias.end(), T(0));
    }
  }

  // Accepts any single-channel input whose dims the pool chain divides exactly;
  // the nominal spec resolution is just the reference (fully convolutional).
  void check_input(const Tensor<T>& image) const {
    if (image.shape.c != 1)
      throw ShapeMismatch("forward: input must be single-channel grayscale");
    int64_t fh = 1, fw = 1;
    for (const auto& l : spec_.layers)
      if (l.kind == LayerKind::pool) {
        fh *= l.ph;
        fw *= l.pw;
      }
    if (image.shape.h % fh != 0 || image.shape.w % fw != 0)
      throw ShapeMismatch("forward: input dims " + std::to_string(image.shape.h) + "x" +
                          std::to_string(image.shape.w) + " not divisible by pool chain " +
                          std::to_string(fh) + "x" + std::to_string(fw));
  }

  Tensor<T> forward(const Tensor<T>& image) const {
    check_input(image);
    Tensor<T> x = image;
    size_t wi = 0;
    for (const auto& l : spec_.layers) {
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::deconv:
          x = conv2d_forward(x, params_[wi++]);
          break;
        case LayerKind::pool:
          x = maxpool_forward(x, PoolParams{l.ph, l.pw}).first;
          break;
        case LayerKind::upsample:
          x = upsample_nearest(x, PoolParams{l.ph, l.pw});
          break;
        case LayerKind::relu:
          x = relu(x);
          break;
        case LayerKind::sigmoid:
          x = sigmoid(x);
          break;
      }
    }
    return x;
  }

  // Training-path forward keeping every unit output for backprop.
  struct Tape {
    std::vector<Tensor<T>> outputs;       // outputs[0] = input, outputs[i+1] = unit i
    std::vector<PoolIndexMap> pool_maps;  // one per pool unit, in order
  };

  Tensor<T> forward_tape(const Tensor<T>& image, Tape& tape) const {
    check_input(image);
    tape.outputs.clear();
    tape.pool_maps.clear();
    tape.outputs.reserve(spec_.layers.size() + 1);
    tape.outputs.push_back(image);
    size_t wi = 0;
    for (const auto& l : spec_.layers) {
      const Tensor<T>& x = tape.outputs.back();
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::deconv:
          tape.outputs.push_back(conv2d_forward(x, params_[wi++]));
          break;
        case LayerKind::pool: {
          auto [out, map] = maxpool_forward(x, PoolParams{l.ph, l.pw});
          tape.outputs.push_back(std::move(out));
          tape.pool_maps.push_back(std::move(map));
          break;
        }
        case LayerKind::upsample:
          tape.outputs.push_back(upsample_nearest(x, PoolParams{l.ph, l.pw}));
          break;
        case LayerKind::relu:
          tape.outputs.push_back(relu(x));
          break;
        case LayerKind::sigmoid:
          tape.outputs.push_back(sigmoid(x));
          break;
      }
    }
    return tape.outputs.back();
  }

  struct Grads {
    std::vector<Tensor<T>> weights;       // per weighted layer
    std::vector<std::vector<T>> biases;   // per weighted layer
  };

  Grads backward(const Tape& tape, const Tensor<T>& grad_output) const {
    Grads g;
    g.weights.resize(params_.size());
    g.biases.resize(params_.size());

    Tensor<T> grad = grad_output;
    int64_t wi = static_cast<int64_t>(params_.size()) - 1;
    int64_t pi = static_cast<int64_t>(tape.pool_maps.size()) - 1;

    for (int64_t i = static_cast<int64_t>(spec_.layers.size()) - 1; i >= 0; --i) {
      const auto& l = spec_.layers[static_cast<size_t>(i)];
      const Tensor<T>& unit_in = tape.outputs[static_cast<size_t>(i)];
      const Tensor<T>& unit_out = tape.outputs[static_cast<size_t>(i) + 1];
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::deconv: {
          auto cg = conv2d_backward(unit_in, params_[static_cast<size_t>(wi)], grad);
          g.weights[static_cast<size_t>(wi)] = std::move(cg.weights);
          g.biases[static_cast<size_t>(wi)] = std::move(cg.bias);
          grad = std::move(cg.input);
          --wi;
          break;
        }
        case LayerKind::pool:
          grad = maxpool_backward(tape.pool_maps[static_cast<size_t>(pi)], grad);
          --pi;
          break;
        case LayerKind::upsample:
          grad = upsample_backward(grad, PoolParams{l.ph, l.pw});
          break;
        case LayerKind::relu:
          grad = relu_backward(unit_out, grad);
          break;
        case LayerKind::sigmoid:
          grad = sigmoid_backward(unit_out, grad);
          break;
      }
    }
    return g;
  }

 private:
  NetworkSpec spec_;
  std::vector<ConvParams<T>> params_;
};

template <typename T>
Network<T> build_network(const NetworkSpec& spec, uint64_t seed = 0) {
  return Network<T>(spec, seed);
}

}  // namespace ecw
