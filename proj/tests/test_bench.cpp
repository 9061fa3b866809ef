#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "ecw/bench.hpp"
#include "ecw/camera.hpp"
#include "ecw/eval.hpp"
#include "ecw/hough.hpp"
#include "ecw/network.hpp"
#include "ecw/scene.hpp"

namespace fs = std::filesystem;

namespace {

const ecw::CameraModel kCam = ecw::default_camera(160, 96);

// A short clean sequence rendered by hand; generate_sequence always emits the
// full 450 frames, which a unit test does not need.
ecw::Sequence tiny_sequence(ecw::DegradationKind kind, std::uint64_t seed,
                            std::size_t n_frames) {
    ecw::Sequence seq;
    seq.spec.seed = seed;
    seq.spec.degradation = kind;
    seq.spec.severity = kind == ecw::DegradationKind::none ? 0.0 : 0.5;
    seq.motion.base_speed = 15.0;
    ecw::FrameRenderer renderer(seq.spec, kCam);
    for (std::size_t i = 0; i < n_frames; ++i) {
        const double t = static_cast<double>(i) / ecw::kFrameRateHz;
        auto [img, mask] = renderer.render(ecw::EgoPose{seq.motion.distance(t), 0.0},
                                           static_cast<std::int64_t>(i));
        seq.frames.push_back(ecw::SequenceFrame{t, std::move(img), std::move(mask)});
    }
    const auto n_samples = static_cast<std::int64_t>(
        std::ceil(static_cast<double>(n_frames) / ecw::kFrameRateHz * ecw::kSpeedRateHz));
    for (std::int64_t j = 0; j <= n_samples; ++j) {
        const double t = static_cast<double>(j) / ecw::kSpeedRateHz;
        seq.speed.push_back(ecw::SpeedSample{t, seq.motion.speed(t)});
    }
    return seq;
}

ecw::Network<float> tiny_net(std::uint64_t seed = 9) {
    return ecw::Network<float>(ecw::make_corridor_spec(96, 160, {2, 3, 4, 5}), seed);
}

} // namespace

TEST_CASE("speed lookup interpolates the trace linearly and clamps the ends") {
    std::vector<ecw::SpeedSample> trace{{0.0, 10.0}, {0.5, 20.0}, {1.0, 14.0}};

    CHECK(ecw::speed_at(trace, 0.0) == Catch::Approx(10.0));
    CHECK(ecw::speed_at(trace, 0.5) == Catch::Approx(20.0));
    CHECK(ecw::speed_at(trace, 1.0) == Catch::Approx(14.0));

    CHECK(ecw::speed_at(trace, 0.25) == Catch::Approx(15.0));
    CHECK(ecw::speed_at(trace, 0.75) == Catch::Approx(17.0));
    CHECK(ecw::speed_at(trace, 0.1) == Catch::Approx(12.0));

    CHECK(ecw::speed_at(trace, -3.0) == Catch::Approx(10.0));
    CHECK(ecw::speed_at(trace, 7.0) == Catch::Approx(14.0));

    CHECK_THROWS_AS(ecw::speed_at({}, 0.0), ecw::EmptySequence);
}

TEST_CASE("bench frames carry ids, trace speeds and untouched pixels") {
    const auto seq = tiny_sequence(ecw::DegradationKind::faded_lines, 5, 4);
    const auto b = ecw::bench_from_sequence(seq, "seq_x");

    REQUIRE(b.frames.size() == 4);
    CHECK(b.id == "seq_x");
    CHECK(b.category == "faded_lines");
    CHECK(b.frames[0].id == "seq_x_000000");
    CHECK(b.frames[3].id == "seq_x_000003");
    for (std::size_t i = 0; i < b.frames.size(); ++i) {
        CHECK(b.frames[i].t == seq.frames[i].t);
        CHECK(b.frames[i].speed_mps == ecw::speed_at(seq.speed, seq.frames[i].t));
        REQUIRE(b.frames[i].image.pixels == seq.frames[i].image.pixels);
    }
}

TEST_CASE("benchmark_sequence wires both detector paths in frame order") {
    const auto seq = tiny_sequence(ecw::DegradationKind::none, 11, 6);
    const auto b = ecw::bench_from_sequence(seq, "clean");
    const auto net = tiny_net();
    const ecw::HoughConfig hough;
    const ecw::KpiConfig kpi;

    const auto r = ecw::benchmark_sequence(b, net, hough, kCam, kpi);
    CHECK(r.id == "clean");
    CHECK(r.category == "none");
    REQUIRE(r.dnn_flags.size() == 6);
    REQUIRE(r.classical_flags.size() == 6);

    // the classical path needs no training: clean frames are all available
    for (bool f : r.classical_flags) CHECK(f);

    // re-derive the DNN path step by step
    ecw::MaskSmoother smoother(kpi.smoothing_window);
    for (std::size_t i = 0; i < b.frames.size(); ++i) {
        const auto prob = net.forward(ecw::image_to_tensor(b.frames[i].image));
        const auto est = ecw::extract_corridor(smoother.push(prob), kCam, kpi, b.frames[i].id);
        CHECK(r.dnn_flags[i] == ecw::frame_availability(est, b.frames[i].speed_mps, kpi));
    }

    CHECK(r.dnn_activated == ecw::sequence_activation(r.dnn_flags, kpi));
    CHECK(r.classical_activated == ecw::sequence_activation(r.classical_flags, kpi));

    CHECK_THROWS_AS(ecw::benchmark_sequence(ecw::BenchSequence{"e", "none", {}}, net, hough,
                                            kCam, kpi),
                    ecw::EmptySequence);
}

TEST_CASE("benchmark aggregates categories in first-appearance order") {
    const auto net = tiny_net();
    const ecw::HoughConfig hough;
    const ecw::KpiConfig kpi;

    std::vector<ecw::BenchSequence> seqs;
    seqs.push_back(ecw::bench_from_sequence(tiny_sequence(ecw::DegradationKind::none, 1, 3),
                                            "s0"));
    seqs.push_back(ecw::bench_from_sequence(
        tiny_sequence(ecw::DegradationKind::faded_lines, 2, 3), "s1"));
    seqs.push_back(ecw::bench_from_sequence(tiny_sequence(ecw::DegradationKind::none, 3, 3),
                                            "s2"));

    const auto report = ecw::benchmark(seqs, net, hough, kCam, kpi);
    REQUIRE(report.categories.size() == 2);
    CHECK(report.categories[0].category == "none");
    CHECK(report.categories[1].category == "faded_lines");
    CHECK(report.categories[0].classical.frames_total == 6);
    CHECK(report.categories[0].classical.sequences_total == 2);
    CHECK(report.categories[1].classical.frames_total == 3);
    CHECK(report.overall.classical.frames_total == 9);
    REQUIRE(report.sequences.size() == 3);
    CHECK(report.sequences[0].id == "s0");

    // per-category counts re-sum from the per-sequence flags
    std::int64_t none_avail = 0;
    for (const auto& r : report.sequences)
        if (r.category == "none")
            for (bool f : r.classical_flags) none_avail += f;
    CHECK(report.categories[0].classical.frames_available == none_avail);

    // determinism: the same inputs give the same report
    const auto report2 = ecw::benchmark(seqs, net, hough, kCam, kpi);
    CHECK(nlohmann::json(report2) == nlohmann::json(report));

    CHECK_THROWS_AS(ecw::benchmark({}, net, hough, kCam, kpi), ecw::EmptySequence);
}

TEST_CASE("sequence directories round-trip through the bench loader") {
    const auto seq = tiny_sequence(ecw::DegradationKind::heavy_rain, 21, 5);
    const auto root = fs::temp_directory_path() / "ecw_bench_test";
    fs::remove_all(root);

    ecw::write_sequence(root / "seq_b", seq, kCam, "seq_b");
    ecw::write_sequence(root / "seq_a", seq, kCam, "seq_a");

    const auto loaded = ecw::load_bench_sequence(root / "seq_a");
    const auto direct = ecw::bench_from_sequence(seq, "seq_a");
    CHECK(loaded.id == direct.id);
    CHECK(loaded.category == direct.category);
    REQUIRE(loaded.frames.size() == direct.frames.size());
    for (std::size_t i = 0; i < loaded.frames.size(); ++i) {
        CHECK(loaded.frames[i].id == direct.frames[i].id);
        CHECK(loaded.frames[i].t == direct.frames[i].t);
        CHECK(loaded.frames[i].speed_mps == direct.frames[i].speed_mps);
        REQUIRE(loaded.frames[i].image.pixels == direct.frames[i].image.pixels);
    }

    const auto all = ecw::load_bench_sequences(root);
    REQUIRE(all.size() == 2);
    CHECK(all[0].id == "seq_a"); // name order, not creation order
    CHECK(all[1].id == "seq_b");

    CHECK_THROWS_AS(ecw::load_bench_sequence(root / "missing"), ecw::IoFailure);
    CHECK_THROWS_AS(ecw::load_bench_sequences(root / "missing"), ecw::IoFailure);
    fs::remove_all(root);
}
