#include <catch_amalgamated.hpp>

#include <array>
#include <map>
#include <vector>

#include <ecw/network.hpp>
#include <ecw/rng.hpp>

#include "fd_check.hpp"

using ecw::LayerKind;
using ecw::LayerSpec;
using ecw::Network;
using ecw::NetworkSpec;
using ecw::Shape;
using ecw::Tensor;

namespace {

// Closed-form parameter oracle: the weighted-layer table is written out by
// hand, independent of the builder.
std::int64_t closed_form_params(const std::array<std::int64_t, 4>& ch) {
    const auto [c1, c2, c3, c4] = ch;
    const std::vector<std::array<std::int64_t, 3>> weighted = {
        // encoder: {kernel, in, out}
        {3, 1, c1},  {3, c1, c1},
        {3, c1, c2}, {3, c2, c2},
        {3, c2, c3}, {3, c3, c3},
        {3, c3, c4}, {3, c4, c4},
        // decoder
        {3, c4, c4}, {3, c4, c3},
        {3, c3, c3}, {3, c3, c2},
        {3, c2, c2}, {3, c2, c1},
        {3, c1, c1}, {3, c1, c1},
        // projection
        {1, c1, 1},
    };
    std::int64_t total = 0;
    for (const auto& [k, in, out] : weighted) total += (k * k * in + 1) * out;
    return total;
}

} // namespace

TEST_CASE("reference architecture has 41 layers and 663931 parameters") {
    const auto spec = ecw::reference_spec();
    CHECK(spec.layer_count() == 41);
    CHECK(ecw::count_params(spec) == 663931);
    CHECK(ecw::count_params(spec) == closed_form_params({27, 54, 81, 108}));
    CHECK(ecw::count_params(spec) >= ecw::kParamBudgetLo);
    CHECK(ecw::count_params(spec) <= ecw::kParamBudgetHi);

    const auto out = ecw::validate_spec(spec);
    CHECK(out == std::array<std::int64_t, 3>{1, 360, 652});

    std::map<LayerKind, int> kinds;
    for (const auto& l : spec.layers) kinds[l.kind]++;
    CHECK(kinds[LayerKind::conv] == 9); // 8 encoder + final projection
    CHECK(kinds[LayerKind::deconv] == 8);
    CHECK(kinds[LayerKind::pool] == 4);
    CHECK(kinds[LayerKind::upsample] == 4);
    CHECK(kinds[LayerKind::relu] == 15);
    CHECK(kinds[LayerKind::sigmoid] == 1);
}

TEST_CASE("desk profile keeps the topology with 82999 parameters") {
    const auto spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    CHECK(spec.layer_count() == 41);
    CHECK(ecw::count_params(spec) == 82999);
    CHECK(ecw::count_params(spec) == closed_form_params(ecw::kDeskChannels));
    CHECK(ecw::validate_spec(spec) == std::array<std::int64_t, 3>{1, 96, 160});
}

TEST_CASE("validate_spec rejects structural defects") {
    // channel flow break
    auto spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    spec.layers[2].in_channels = 5;
    CHECK_THROWS_AS(ecw::validate_spec(spec), ecw::ShapeFlowError);

    // pool factor does not divide the running dims
    spec = ecw::make_corridor_spec(100, 100, ecw::kDeskChannels);
    CHECK_THROWS_AS(ecw::validate_spec(spec), ecw::ShapeFlowError);

    // missing final sigmoid
    spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    spec.layers.pop_back();
    CHECK_THROWS_AS(ecw::validate_spec(spec), ecw::AsymmetricSpec);

    // sigmoid away from the end
    spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    spec.layers.insert(spec.layers.begin() + 3, LayerSpec::sigmoid());
    CHECK_THROWS_AS(ecw::validate_spec(spec), ecw::AsymmetricSpec);

    // upsample factors must mirror pool factors
    spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    for (auto& l : spec.layers)
        if (l.kind == LayerKind::upsample && l.ph == 3) std::swap(l.ph, l.pw);
    CHECK_THROWS_AS(ecw::validate_spec(spec), ecw::AsymmetricSpec);

    // dangling extra pool
    spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    spec.layers.insert(spec.layers.begin() + 5, LayerSpec::pool(1, 1));
    CHECK_THROWS_AS(ecw::validate_spec(spec), ecw::AsymmetricSpec);

    // deconv/conv pairing broken: drop one deconv+relu, splice channels back
    spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    NetworkSpec broken = spec;
    REQUIRE(broken.layers.size() > 23);
    broken.layers.erase(broken.layers.begin() + 21, broken.layers.begin() + 23);
    CHECK_THROWS_AS(ecw::validate_spec(broken), ecw::Error);

    // even kernel
    spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    spec.layers[0].kh = 2;
    CHECK_THROWS_AS(ecw::validate_spec(spec), ecw::ShapeFlowError);

    CHECK_THROWS_AS(ecw::validate_spec(NetworkSpec{}), ecw::AsymmetricSpec);
}

TEST_CASE("parameter budget is enforced only at the reference resolution") {
    // too heavy at full size
    auto heavy = ecw::make_corridor_spec(360, 652, {32, 64, 96, 128});
    CHECK_THROWS_AS(ecw::validate_spec(heavy), ecw::ParamBudgetViolation);

    auto light = ecw::make_corridor_spec(360, 652, {8, 16, 24, 32});
    CHECK_THROWS_AS(ecw::validate_spec(light), ecw::ParamBudgetViolation);

    // the same channel profiles pass at desk resolution
    auto desk_heavy = ecw::make_corridor_spec(96, 160, {32, 64, 96, 128});
    CHECK_NOTHROW(ecw::validate_spec(desk_heavy));
}

TEST_CASE("forward runs at any pool-compatible resolution and stays in (0,1)") {
    const auto spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    Network<float> net(spec, 11);

    ecw::Rng rng(5);
    Tensor<float> in(Shape{1, 1, 96, 160});
    for (auto& v : in.data) v = static_cast<float>(rng.uniform());
    auto out = net.forward(in);
    REQUIRE(out.shape == Shape{1, 1, 96, 160});
    REQUIRE(out.all_finite());
    for (float v : out.data) {
        REQUIRE(v > 0.0f);
        REQUIRE(v < 1.0f);
    }

    // fully convolutional: a different divisible resolution just works
    Tensor<float> small(Shape{1, 1, 72, 40});
    for (auto& v : small.data) v = 0.25f;
    CHECK(net.forward(small).shape == Shape{1, 1, 72, 40});

    // indivisible or multi-channel inputs are rejected
    CHECK_THROWS_AS(net.forward(Tensor<float>(Shape{1, 1, 95, 160})), ecw::ShapeMismatch);
    CHECK_THROWS_AS(net.forward(Tensor<float>(Shape{1, 2, 96, 160})), ecw::ShapeMismatch);
}

TEST_CASE("weight init is seed-deterministic with zero bias and fan-in scaling") {
    const auto spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    Network<float> a(spec, 7);
    Network<float> b(spec, 7);
    Network<float> c(spec, 8);

    bool identical = true;
    bool differs = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        identical = identical && a.params()[i].weights.data == b.params()[i].weights.data;
        differs = differs || a.params()[i].weights.data != c.params()[i].weights.data;
        for (float bias : a.params()[i].bias) CHECK(bias == 0.0f);
        const auto& p = a.params()[i];
        const double bound = 1.0 / std::sqrt(double(p.kh * p.kw * p.in_channels));
        for (float w : p.weights.data) {
            REQUIRE(w >= -bound);
            REQUIRE(w <= bound);
        }
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("network backward matches finite differences end to end") {
    NetworkSpec spec;
    spec.input_height = 4;
    spec.input_width = 6;
    spec.layers = {
        LayerSpec::conv(3, 3, 1, 2),  LayerSpec::relu(),
        LayerSpec::conv(3, 3, 2, 2),  LayerSpec::relu(),
        LayerSpec::pool(2, 2),        LayerSpec::upsample(2, 2),
        LayerSpec::deconv(3, 3, 2, 2), LayerSpec::relu(),
        LayerSpec::deconv(3, 3, 2, 2), LayerSpec::conv(1, 1, 2, 1),
        LayerSpec::sigmoid(),
    };
    REQUIRE_NOTHROW(ecw::validate_spec(spec));

    for (std::uint64_t seed = 900; seed < 903; ++seed) {
        Network<double> net(spec, seed);
        ecw::Rng rng(seed, 1);
        Tensor<double> in(Shape{1, 1, 4, 6});
        for (auto& v : in.data) v = rng.uniform(0.1, 1.0);

        Network<double>::Tape tape;
        auto out = net.forward_tape(in, tape);
        Tensor<double> probe(out.shape);
        probe.data = fd::random_probe(probe.data.size(), rng);
        auto grads = net.backward(tape, probe);

        auto loss = [&] {
            double s = 0.0;
            const auto o = net.forward(in);
            for (std::size_t i = 0; i < o.data.size(); ++i) s += o.data[i] * probe.data[i];
            return s;
        };
        INFO("seed " << seed);
        for (std::size_t li = 0; li < net.params().size(); ++li) {
            auto num_w = fd::gradient(net.params()[li].weights.data, loss);
            CHECK(fd::rel_error(grads.weights[li].data, num_w) < fd::kTolerance);
            auto num_b = fd::gradient(net.params()[li].bias, loss);
            CHECK(fd::rel_error(grads.biases[li], num_b) < fd::kTolerance);
        }
    }
}

TEST_CASE("tape forward agrees with plain forward") {
    const auto spec = ecw::make_corridor_spec(24, 8, {2, 3, 4, 5});
    Network<float> net(spec, 2);
    Tensor<float> in(Shape{2, 1, 24, 8});
    ecw::Rng rng(3);
    for (auto& v : in.data) v = static_cast<float>(rng.uniform());
    Network<float>::Tape tape;
    auto a = net.forward_tape(in, tape);
    auto b = net.forward(in);
    CHECK(a.data == b.data);
    CHECK(tape.outputs.size() == 42); // input + one output per unit
    CHECK(tape.pool_maps.size() == 4);
}

TEST_CASE("network spec json round trip is lossless") {
    const auto spec = ecw::make_corridor_spec(96, 160, ecw::kDeskChannels);
    nlohmann::json j = spec;
    const auto back = j.get<NetworkSpec>();
    REQUIRE(back.layer_count() == spec.layer_count());
    CHECK(ecw::count_params(back) == ecw::count_params(spec));
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        CHECK(back.layers[i].kind == spec.layers[i].kind);
        CHECK(back.layers[i].kh == spec.layers[i].kh);
        CHECK(back.layers[i].in_channels == spec.layers[i].in_channels);
        CHECK(back.layers[i].out_channels == spec.layers[i].out_channels);
        CHECK(back.layers[i].ph == spec.layers[i].ph);
        CHECK(back.layers[i].pw == spec.layers[i].pw);
    }
    CHECK_NOTHROW(ecw::validate_spec(back));

    nlohmann::json bad = j;
    bad["layers"][0]["kind"] = "dense";
    CHECK_THROWS_AS(bad.get<NetworkSpec>(), ecw::ConfigError);
}
