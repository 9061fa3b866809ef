#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "ecw/camera.hpp"
#include "ecw/eval.hpp"
#include "ecw/image.hpp"
#include "ecw/scene.hpp"

namespace {

const ecw::CameraModel kFullCam = ecw::default_camera(652, 360);
const ecw::CameraModel kDeskCam = ecw::default_camera(160, 96);

// corridor membership on the ground plane, sampled at pixel centers
ecw::Tensor<float> rect_mask(const ecw::CameraModel& cam, double x_lo, double x_hi,
                             double z_lo, double z_hi) {
    ecw::Tensor<float> mask(1, 1, cam.image_height, cam.image_width);
    for (std::int64_t y = 0; y < cam.image_height; ++y)
        for (std::int64_t x = 0; x < cam.image_width; ++x) {
            ecw::GroundPoint g;
            if (!ecw::try_pixel_to_ground(cam, x + 0.5, y + 0.5, g)) continue;
            if (g.x >= x_lo && g.x <= x_hi && g.z >= z_lo && g.z <= z_hi)
                mask.data[static_cast<std::size_t>(y * cam.image_width + x)] = 1.0f;
        }
    return mask;
}

ecw::Image8 strip_mask(std::int64_t h, std::int64_t w, std::int64_t row0, std::int64_t rows) {
    ecw::Image8 m(h, w, 0);
    for (std::int64_t y = row0; y < row0 + rows; ++y)
        for (std::int64_t x = 0; x < w; ++x) m.at(y, x) = 255;
    return m;
}

std::vector<bool> run_flags(std::initializer_list<int> v) {
    std::vector<bool> out;
    for (int x : v) out.push_back(x != 0);
    return out;
}

} // namespace

TEST_CASE("ratio display matches the published round-half-up table") {
    CHECK(ecw::format_ratio(191, 900) == "0.21");
    CHECK(ecw::format_ratio(858, 900) == "0.95");
    CHECK(ecw::format_ratio(284, 1350) == "0.21");
    CHECK(ecw::format_ratio(1099, 1350) == "0.81");
    CHECK(ecw::format_ratio(1109, 1350) == "0.82");
    CHECK(ecw::format_ratio(967, 1350) == "0.72");
    CHECK(ecw::format_ratio(1182, 2700) == "0.44");
    CHECK(ecw::format_ratio(2020, 2700) == "0.75");
    CHECK(ecw::format_ratio(1312, 1350) == "0.97");
    CHECK(ecw::format_ratio(1339, 1350) == "0.99");

    CHECK(ecw::format_ratio(0, 450) == "0.00");
    CHECK(ecw::format_ratio(450, 450) == "1.00");
    CHECK(ecw::format_ratio(15, 1000) == "0.02"); // exact half rounds up
    CHECK(ecw::format_ratio(1, 8) == "0.13");     // 0.125 rounds up

    CHECK_THROWS_AS(ecw::format_ratio(1, 0), ecw::ConfigError);
    CHECK_THROWS_AS(ecw::format_ratio(5, 4), ecw::ConfigError);
    CHECK_THROWS_AS(ecw::format_ratio(-1, 4), ecw::ConfigError);
}

TEST_CASE("iou counts pixels the obvious way") {
    const auto a = strip_mask(30, 20, 5, 10);
    const auto b = strip_mask(30, 20, 10, 10); // shifted 5 rows
    CHECK(ecw::iou(a, a) == 1.0);
    CHECK(std::abs(ecw::iou(a, b) - 5.0 / 15.0) < 1e-12);
    CHECK(ecw::iou(a, b) == ecw::iou(b, a));

    const auto c = strip_mask(30, 20, 20, 5);
    CHECK(ecw::iou(a, c) == 0.0);

    const ecw::Image8 empty1(30, 20, 0);
    const ecw::Image8 empty2(30, 20, 0);
    CHECK(ecw::iou(empty1, empty2) == 1.0);

    // translation of both masks together preserves the value
    const auto a2 = strip_mask(30, 20, 7, 10);
    const auto b2 = strip_mask(30, 20, 12, 10);
    CHECK(ecw::iou(a, b) == ecw::iou(a2, b2));

    const ecw::Image8 other(31, 20, 0);
    CHECK_THROWS_AS(ecw::iou(a, other), ecw::ShapeMismatch);
}

TEST_CASE("sequence activation tolerates runs up to five frames") {
    ecw::KpiConfig cfg;
    CHECK(ecw::sequence_activation(run_flags({1, 1, 0, 0, 0, 0, 0, 1, 1}), cfg));
    CHECK_FALSE(ecw::sequence_activation(run_flags({1, 1, 0, 0, 0, 0, 0, 0, 1}), cfg));
    CHECK(ecw::sequence_activation(run_flags({1, 1, 1, 1}), cfg));
    CHECK(ecw::sequence_activation(run_flags({0, 0, 0, 0, 0}), cfg)); // run of 5 at the edge
    CHECK_FALSE(ecw::sequence_activation(run_flags({0, 0, 0, 0, 0, 0}), cfg));

    // only the longest run matters, not its position
    CHECK(ecw::sequence_activation(run_flags({0, 0, 1, 0, 0, 0, 1, 0}), cfg) ==
          ecw::sequence_activation(run_flags({1, 0, 0, 0, 1, 0, 0, 0}), cfg));

    CHECK_THROWS_AS(ecw::sequence_activation({}, cfg), ecw::EmptySequence);
}

TEST_CASE("frame availability applies the width band and time gap") {
    ecw::KpiConfig cfg;
    ecw::CorridorEstimate est;
    est.available = true;
    est.width = 3.5;
    est.length = 25.0;
    CHECK(ecw::frame_availability(est, 30.0, cfg)); // threshold 21 m

    est.width = 1.8;
    CHECK_FALSE(ecw::frame_availability(est, 30.0, cfg));
    est.width = 2.0; // band bounds inclusive
    CHECK(ecw::frame_availability(est, 30.0, cfg));
    est.width = 6.0;
    CHECK(ecw::frame_availability(est, 30.0, cfg));
    est.width = 6.1;
    CHECK_FALSE(ecw::frame_availability(est, 30.0, cfg));

    est.width = 3.5;
    est.length = 21.0; // exactly the time-gap distance: strictly greater required
    CHECK_FALSE(ecw::frame_availability(est, 30.0, cfg));
    est.length = 0.5;
    CHECK(ecw::frame_availability(est, 0.0, cfg)); // speed 0: any positive length

    est.available = false;
    est.length = 50.0;
    CHECK_FALSE(ecw::frame_availability(est, 10.0, cfg));

    // monotonicity: growing length never revokes availability
    est.available = true;
    est.width = 4.0;
    for (double len = 22.0; len < 60.0; len += 7.0) {
        est.length = len;
        CHECK(ecw::frame_availability(est, 30.0, cfg));
    }
}

TEST_CASE("mask smoother averages a growing window of at most three") {
    ecw::MaskSmoother sm(3);
    ecw::Tensor<float> zeros(1, 1, 2, 2);
    ecw::Tensor<float> halves(1, 1, 2, 2);
    halves.fill(0.5f);
    ecw::Tensor<float> ones(1, 1, 2, 2);
    ones.fill(1.0f);

    const auto first = sm.push(zeros); // window of 1: first frame never blocked
    CHECK(first.data[0] == 0.0f);
    const auto second = sm.push(halves); // mean(0, 0.5)
    CHECK(second.data[0] == 0.25f);
    const auto third = sm.push(ones); // mean(0, 0.5, 1)
    CHECK(third.data[0] == 0.5f);
    const auto fourth = sm.push(ones); // 0 evicted: mean(0.5, 1, 1)
    CHECK(std::abs(fourth.data[0] - 5.0f / 6.0f) < 1e-6f);
    CHECK(sm.size() == 3);

    // idempotent on identical masks
    ecw::MaskSmoother sm2(3);
    for (int i = 0; i < 3; ++i) {
        const auto out = sm2.push(halves);
        for (float v : out.data) CHECK(v == 0.5f);
    }

    ecw::Tensor<float> odd(1, 1, 3, 2);
    CHECK_THROWS_AS(sm.push(odd), ecw::ShapeMismatch);
    sm.reset();
    CHECK(sm.size() == 0);
    CHECK_NOTHROW(sm.push(odd));
}

TEST_CASE("corridor extraction measures a synthetic ground rectangle") {
    ecw::KpiConfig cfg;
    const auto mask = rect_mask(kFullCam, -1.75, 1.75, 5.0, 30.0);
    const auto est = ecw::extract_corridor(mask, kFullCam, cfg, "rect");
    REQUIRE(est.available);
    CHECK(est.frame_id == "rect");
    CHECK(est.source == ecw::DetectorSource::dnn);
    INFO("width " << est.width << " length " << est.length);
    CHECK(std::abs(est.width - 3.5) < 0.1);
    CHECK(std::abs(est.length - 30.0) < 0.5);
}

TEST_CASE("corridor extraction ignores blobs disconnected from the seed") {
    ecw::KpiConfig cfg;
    auto mask = rect_mask(kFullCam, -1.75, 1.75, 5.0, 30.0);
    const auto clean = ecw::extract_corridor(mask, kFullCam, cfg);

    // distractor blob below the horizon, not touching the corridor
    for (std::int64_t y = 200; y < 225; ++y)
        for (std::int64_t x = 30; x < 90; ++x)
            mask.data[static_cast<std::size_t>(y * kFullCam.image_width + x)] = 1.0f;
    const auto with_blob = ecw::extract_corridor(mask, kFullCam, cfg);
    CHECK(with_blob.width == clean.width);
    CHECK(with_blob.length == clean.length);
    CHECK(with_blob.available == clean.available);
}

TEST_CASE("corridor extraction falls back to the largest bottom component") {
    ecw::KpiConfig cfg;
    // off-center rectangle: the bottom-center seed pixel is empty
    const auto mask = rect_mask(kFullCam, 0.3, 2.3, 5.0, 30.0);
    const std::int64_t seed =
        (kFullCam.image_height - 1) * kFullCam.image_width + kFullCam.image_width / 2;
    REQUIRE(mask.data[static_cast<std::size_t>(seed)] == 0.0f);
    const auto est = ecw::extract_corridor(mask, kFullCam, cfg);
    REQUIRE(est.available);
    INFO("width " << est.width << " length " << est.length);
    CHECK(std::abs(est.width - 2.0) < 0.15);
    CHECK(std::abs(est.length - 30.0) < 0.5);
}

TEST_CASE("corridor extraction reports unavailable degenerate masks") {
    ecw::KpiConfig cfg;
    ecw::Tensor<float> empty(1, 1, kDeskCam.image_height, kDeskCam.image_width);
    const auto est = ecw::extract_corridor(empty, kDeskCam, cfg);
    CHECK_FALSE(est.available);
    CHECK(est.width == 0.0);
    CHECK(est.length == 0.0);

    // two mask rows only: below the three-row minimum
    ecw::Tensor<float> thin(1, 1, kDeskCam.image_height, kDeskCam.image_width);
    for (std::int64_t y = kDeskCam.image_height - 2; y < kDeskCam.image_height; ++y)
        for (std::int64_t x = 70; x < 90; ++x)
            thin.data[static_cast<std::size_t>(y * kDeskCam.image_width + x)] = 1.0f;
    CHECK_FALSE(ecw::extract_corridor(thin, kDeskCam, cfg).available);

    ecw::Tensor<float> wrong(1, 1, 50, 50);
    CHECK_THROWS_AS(ecw::extract_corridor(wrong, kDeskCam, cfg), ecw::ShapeMismatch);
}

TEST_CASE("smoothing carries availability through a one-frame dropout") {
    ecw::KpiConfig cfg;
    ecw::SceneSpec spec;
    spec.seed = 31;
    const auto frame = ecw::FrameRenderer(spec, kDeskCam).render({0.0, 0.0}, 0);
    const auto truth = ecw::mask_to_tensor(frame.mask);

    ecw::Tensor<float> strong(truth.shape);
    for (std::size_t i = 0; i < truth.data.size(); ++i)
        strong.data[i] = 0.02f + 0.88f * truth.data[i];
    ecw::Tensor<float> dropout(truth.shape);
    dropout.fill(0.02f);

    // the dropout alone loses the corridor entirely
    CHECK_FALSE(ecw::extract_corridor(dropout, kDeskCam, cfg).available);

    const double speed = 15.0;
    ecw::MaskSmoother sm(cfg.smoothing_window);
    const ecw::Tensor<float>* stream[5] = {&strong, &strong, &dropout, &strong, &strong};
    for (int i = 0; i < 5; ++i) {
        const auto smoothed = sm.push(*stream[i]);
        const auto est = ecw::extract_corridor(smoothed, kDeskCam, cfg);
        INFO("frame " << i << " width " << est.width << " length " << est.length);
        CHECK(ecw::frame_availability(est, speed, cfg));
    }
}

TEST_CASE("report aggregation keeps counts exact and renders the table") {
    std::vector<ecw::SequenceResult> results(3);
    ecw::KpiConfig cfg;

    results[0].id = "rain_a";
    results[0].category = "heavy_rain";
    results[0].dnn_flags = std::vector<bool>(10, true);
    results[0].classical_flags = run_flags({1, 1, 0, 0, 0, 0, 0, 0, 1, 1}); // 6-run
    results[1].id = "rain_b";
    results[1].category = "heavy_rain";
    results[1].dnn_flags = run_flags({1, 1, 1, 1, 1, 1, 1, 1, 0, 1});
    results[1].classical_flags = run_flags({1, 0, 0, 1, 1, 1, 1, 1, 1, 1});
    results[2].id = "clean";
    results[2].category = "none";
    results[2].dnn_flags = std::vector<bool>(10, true);
    results[2].classical_flags = std::vector<bool>(10, true);
    for (auto& r : results) {
        r.dnn_activated = ecw::sequence_activation(r.dnn_flags, cfg);
        r.classical_activated = ecw::sequence_activation(r.classical_flags, cfg);
    }

    const auto report = ecw::aggregate_results(results);
    REQUIRE(report.categories.size() == 2);
    CHECK(report.categories[0].category == "heavy_rain");
    CHECK(report.categories[0].dnn.frames_available == 19);
    CHECK(report.categories[0].dnn.frames_total == 20);
    CHECK(report.categories[0].dnn.sequences_activated == 2);
    CHECK(report.categories[0].classical.frames_available == 12);
    CHECK(report.categories[0].classical.sequences_activated == 1); // the 6-run fails
    CHECK(report.categories[0].classical.sequences_total == 2);
    CHECK(report.overall.dnn.frames_total == 30);
    CHECK(report.overall.classical.frames_available == 22);

    const auto text = ecw::render_report_text(report);
    INFO(text);
    CHECK(text.find("heavy_rain") != std::string::npos);
    CHECK(text.find("1/2") != std::string::npos); // classical sequence column
    CHECK(text.find("0.60 (12/20)") != std::string::npos);
    CHECK(text.find("overall") != std::string::npos);

    const nlohmann::json j = report;
    CHECK(j.at("categories").size() == 2);
    CHECK(j.at("categories")[0].at("classical").at("ratio") == "0.60");
    CHECK(j.at("categories")[0].at("classical").at("frames_available") == 12);
    CHECK(j.at("overall").at("dnn").at("frames_total") == 30);
    CHECK(j.at("sequences")[0].at("classical").at("activated") == false);
}

TEST_CASE("overlay tints corridor pixels green") {
    ecw::Image8 frame(10, 10, 100);
    ecw::Tensor<float> prob(1, 1, 10, 10);
    prob.data[5 * 10 + 5] = 0.9f;
    const auto overlay = ecw::render_overlay(frame, prob, 0.5);
    CHECK(overlay.at(5, 5)[1] > overlay.at(5, 5)[0]); // green dominates
    CHECK(overlay.at(0, 0)[0] == 100);                // untouched pixels stay gray
    CHECK(overlay.at(0, 0)[1] == 100);

    ecw::Tensor<float> wrong(1, 1, 9, 10);
    CHECK_THROWS_AS(ecw::render_overlay(frame, wrong, 0.5), ecw::ShapeMismatch);
}

TEST_CASE("kpi config validates and round-trips as JSON") {
    ecw::KpiConfig cfg;
    cfg.width_min = 1.5;
    cfg.time_gap = 0.9;
    cfg.max_unavailable_run = 3;
    nlohmann::json j = cfg;
    const auto back = j.get<ecw::KpiConfig>();
    CHECK(back.width_min == 1.5);
    CHECK(back.width_max == 6.0);
    CHECK(back.time_gap == 0.9);
    CHECK(back.max_unavailable_run == 3);

    const nlohmann::json bad_band = {{"width_min", 7.0}};
    CHECK_THROWS_AS(bad_band.get<ecw::KpiConfig>(), ecw::ConfigError);
    const nlohmann::json bad_thresh = {{"binarize_threshold", 1.5}};
    CHECK_THROWS_AS(bad_thresh.get<ecw::KpiConfig>(), ecw::ConfigError);
}
