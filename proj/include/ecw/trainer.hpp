#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecw/common.hpp"
#include "ecw/dataset.hpp"
#include "ecw/network.hpp"
#include "ecw/rng.hpp"

namespace ecw {

struct TrainConfig {
    std::int64_t batch_size = 16;
    std::int64_t epochs = 60; // 250 at full scale, 60 for desk runs
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;
};

inline void validate(const TrainConfig& c) {
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0))
        throw ConfigError("val_fraction must be inside (0,1)");
    if (c.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"learning_rate", c.learning_rate},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"epsilon", c.epsilon},
                       {"seed", c.seed},
                       {"val_fraction", c.val_fraction}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    validate(c);
}

// RMSE over the whole batch tensor. The gradient has a removable singularity
// at a perfect fit; the epsilon guard pins it to zero there.
inline constexpr double kLossEpsilon = 1e-12;

template <typename T>
struct RmseResult {
    double loss = 0.0;
    Tensor<T> grad;
};

template <typename T>
RmseResult<T> rmse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!(pred.shape == target.shape)) throw ShapeMismatch("rmse_loss: shape mismatch");
    const std::int64_t n = pred.size();
    double sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred.data[static_cast<std::size_t>(i)]) -
                         static_cast<double>(target.data[static_cast<std::size_t>(i)]);
        sq += d * d;
    }
    RmseResult<T> r;
    r.loss = std::sqrt(sq / static_cast<double>(n));
    r.grad = Tensor<T>(pred.shape);
    const double denom = static_cast<double>(n) * std::max(r.loss, kLossEpsilon);
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred.data[static_cast<std::size_t>(i)]) -
                         static_cast<double>(target.data[static_cast<std::size_t>(i)]);
        r.grad.data[static_cast<std::size_t>(i)] = static_cast<T>(d / denom);
    }
    return r;
}

// Bias-corrected Adam; epsilon sits outside the square root, so the very
// first step with unit gradient moves by -lr/(1+eps).
struct AdamState {
    std::int64_t t = 0;
    std::vector<Tensor<float>> m_w, v_w;
    std::vector<std::vector<float>> m_b, v_b;

    static AdamState like(const Network<float>& net) {
        AdamState s;
        for (const auto& p : net.params()) {
            s.m_w.emplace_back(p.weights.shape);
            s.v_w.emplace_back(p.weights.shape);
            s.m_b.emplace_back(p.bias.size(), 0.0f);
            s.v_b.emplace_back(p.bias.size(), 0.0f);
        }
        return s;
    }
};

inline void adam_step(Network<float>& net, const Network<float>::Grads& grads,
                      AdamState& state, const TrainConfig& cfg) {
    state.t += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

    auto update = [&](float* theta, float* m, float* v, const float* g, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double m_hat = mi / c1;
            const double v_hat = vi / c2;
            theta[i] -= static_cast<float>(cfg.learning_rate * m_hat /
                                           (std::sqrt(v_hat) + cfg.epsilon));
        }
    };

    auto& params = net.params();
    for (std::size_t li = 0; li < params.size(); ++li) {
        update(params[li].weights.data.data(), state.m_w[li].data.data(),
               state.v_w[li].data.data(), grads.weights[li].data.data(),
               params[li].weights.data.size());
        update(params[li].bias.data(), state.m_b[li].data(), state.v_b[li].data(),
               grads.biases[li].data(), params[li].bias.size());
    }
}

struct EpochLoss {
    double train_rmse = 0.0;
    double val_rmse = 0.0;
};

struct LossHistory {
    std::vector<EpochLoss> epochs;
    std::int64_t best_epoch = 0; // 1-based; first occurrence of the val minimum

    void recompute_best() {
        best_epoch = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < epochs.size(); ++i)
            if (epochs[i].val_rmse < best) {
                best = epochs[i].val_rmse;
                best_epoch = static_cast<std::int64_t>(i) + 1;
            }
    }
};

// Doubles are printed round-trip exact so identical runs produce identical
// files byte for byte.
inline void write_loss_csv(const std::filesystem::path& path, const LossHistory& h) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write loss csv: " + path.string());
    out << "epoch,train_rmse,val_rmse\n";
    char buf[96];
    for (std::size_t i = 0; i < h.epochs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i + 1, h.epochs[i].train_rmse,
                      h.epochs[i].val_rmse);
        out << buf;
    }
    if (!out) throw IoFailure("short write on loss csv: " + path.string());
}

// Validation membership depends only on the frame id, never on the seed, so
// growing a dataset leaves earlier assignments untouched. FNV alone leaves the
// high bits undermixed on short ids; one splitmix round fixes the spread.
inline bool is_validation_id(const std::string& id, double val_fraction) {
    std::uint64_t h = fnv1a64(id);
    const double u = static_cast<double>(splitmix64(h) >> 11) * 0x1.0p-53;
    return u < val_fraction;
}

struct TrainOutput {
    Network<float> best;
    Network<float> final_net;
    LossHistory history;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

// Deterministic end to end: split by id hash, per-epoch Fisher-Yates shuffle
// from a seeded stream, fixed batch assembly order, sequential Adam updates.
// The last incomplete batch of each epoch is dropped.
inline TrainOutput train(const NetworkSpec& spec, const std::vector<LabeledFrame>& frames,
                         const TrainConfig& cfg,
                         const std::function<void(std::int64_t, const EpochLoss&)>& on_epoch = {}) {
    validate(cfg);
    if (frames.empty()) throw EmptyDataset("no frames to train on");
    for (const auto& f : frames) {
        if (f.image.shape.h != spec.input_height || f.image.shape.w != spec.input_width ||
            !(f.image.shape == f.mask.shape))
            throw ShapeMismatch("frame " + f.id + " does not match the network input dims");
    }

    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < frames.size(); ++i)
        (is_validation_id(frames[i].id, cfg.val_fraction) ? val_idx : train_idx).push_back(i);
    // tiny datasets can land everything on one side; rebalance deterministically
    if (val_idx.empty()) {
        val_idx.push_back(train_idx.back());
        train_idx.pop_back();
    }
    if (train_idx.empty()) {
        train_idx.push_back(val_idx.back());
        val_idx.pop_back();
    }
    if (train_idx.empty() || val_idx.empty())
        throw EmptyDataset("dataset too small to split");
    if (static_cast<std::int64_t>(train_idx.size()) < cfg.batch_size)
        throw EmptyDataset("training split smaller than one batch");

    TrainOutput out;
    for (auto i : train_idx) out.train_ids.push_back(frames[i].id);
    for (auto i : val_idx) out.val_ids.push_back(frames[i].id);

    Network<float> net(spec, cfg.seed);
    AdamState adam = AdamState::like(net);

    const std::int64_t bs = cfg.batch_size;
    const Shape in_shape{bs, 1, spec.input_height, spec.input_width};
    Tensor<float> batch_img(in_shape);
    Tensor<float> batch_mask(in_shape);
    const std::size_t plane = static_cast<std::size_t>(spec.input_height * spec.input_width);

    auto val_rmse = [&](const Network<float>& n) {
        double sq = 0.0;
        std::int64_t count = 0;
        for (auto i : val_idx) {
            const auto pred = n.forward(frames[i].image);
            for (std::size_t k = 0; k < pred.data.size(); ++k) {
                const double d = static_cast<double>(pred.data[k]) -
                                 static_cast<double>(frames[i].mask.data[k]);
                sq += d * d;
            }
            count += pred.size();
        }
        return std::sqrt(sq / static_cast<double>(count));
    };

    double best_val = std::numeric_limits<double>::infinity();
    Network<float>::Tape tape;

    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        Rng shuffle_rng(cfg.seed, hash_combine(0x657063686f726472ULL, // "epchordr"
                                               static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        const std::size_t n_batches = order.size() / static_cast<std::size_t>(bs);
        double train_loss_sum = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            for (std::int64_t s = 0; s < bs; ++s) {
                const auto& f = frames[order[b * static_cast<std::size_t>(bs) +
                                             static_cast<std::size_t>(s)]];
                std::copy(f.image.data.begin(), f.image.data.end(),
                          batch_img.data.begin() + static_cast<std::size_t>(s) * plane);
                std::copy(f.mask.data.begin(), f.mask.data.end(),
                          batch_mask.data.begin() + static_cast<std::size_t>(s) * plane);
            }
            const auto pred = net.forward_tape(batch_img, tape);
            auto loss = rmse_loss(pred, batch_mask);
            train_loss_sum += loss.loss;
            const auto grads = net.backward(tape, loss.grad);
            adam_step(net, grads, adam, cfg);
        }

        EpochLoss el;
        el.train_rmse = n_batches ? train_loss_sum / static_cast<double>(n_batches) : 0.0;
        el.val_rmse = val_rmse(net);
        out.history.epochs.push_back(el);
        if (el.val_rmse < best_val) {
            best_val = el.val_rmse;
            out.best = net;
        }
        if (on_epoch) on_epoch(epoch, el);
    }

    out.history.recompute_best();
    out.final_net = std::move(net);
    return out;
}

} // namespace ecw
