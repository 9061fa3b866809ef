#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ecw/camera.hpp"
#include "ecw/common.hpp"
#include "ecw/dataset.hpp"
#include "ecw/eval.hpp"
#include "ecw/hough.hpp"
#include "ecw/image.hpp"
#include "ecw/network.hpp"
#include "ecw/scene.hpp"

namespace ecw {

// One frame as the benchmark consumes it: pixels plus the ego speed at capture
// time. Ground-truth masks are not needed for availability KPIs.
struct BenchFrame {
    std::string id;
    double t = 0.0;
    double speed_mps = 0.0;
    Image8 image;
};

struct BenchSequence {
    std::string id;
    std::string category;
    std::vector<BenchFrame> frames;
};

// Speed at time t by linear interpolation over the 50 Hz trace, clamped at
// both ends. The trace must be sorted by t.
inline double speed_at(const std::vector<SpeedSample>& trace, double t) {
    if (trace.empty()) throw EmptySequence("speed_at: empty trace");
    if (t <= trace.front().t) return trace.front().speed_mps;
    if (t >= trace.back().t) return trace.back().speed_mps;
    const auto hi = std::lower_bound(trace.begin(), trace.end(), t,
                                     [](const SpeedSample& s, double x) { return s.t < x; });
    const auto lo = hi - 1;
    const double span = hi->t - lo->t;
    if (span <= 0.0) return hi->speed_mps;
    const double w = (t - lo->t) / span;
    return lo->speed_mps * (1.0 - w) + hi->speed_mps * w;
}

// Both entry points resolve frame speeds through the trace so in-memory and
// on-disk benchmarks of the same sequence agree bit for bit.
inline BenchSequence bench_from_sequence(const Sequence& seq, std::string id) {
    BenchSequence b;
    b.id = std::move(id);
    b.category = to_string(seq.spec.degradation);
    b.frames.reserve(seq.frames.size());
    char name[16];
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        std::snprintf(name, sizeof name, "%06zu", i);
        b.frames.push_back(BenchFrame{b.id + "_" + name, seq.frames[i].t,
                                      speed_at(seq.speed, seq.frames[i].t),
                                      seq.frames[i].image});
    }
    return b;
}

// Reads one sequence directory as written by write_sequence.
inline BenchSequence load_bench_sequence(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json", std::ios::binary);
    if (!in) throw IoFailure("cannot open " + (dir / "meta.json").string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("meta.json under " + dir.string() + ": " + e.what());
    }
    BenchSequence b;
    try {
        b.id = meta.at("id").get<std::string>();
        b.category = meta.at("category").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("meta.json under " + dir.string() + ": " + e.what());
    }
    const auto records = read_manifest(dir / "manifest.jsonl");
    const auto trace = read_speed_csv(dir / "speed.csv");
    b.frames.reserve(records.size());
    for (const auto& r : records)
        b.frames.push_back(
            BenchFrame{r.id, r.t, speed_at(trace, r.t), read_pgm((dir / r.image).string())});
    return b;
}

// Sequence directories in name order: every direct child holding a meta.json.
inline std::vector<std::filesystem::path> list_sequence_dirs(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::error_code ec;
    std::vector<fs::path> dirs;
    for (fs::directory_iterator it(root, ec), end; !ec && it != end; it.increment(ec))
        if (it->is_directory() && fs::exists(it->path() / "meta.json")) dirs.push_back(it->path());
    if (ec) throw IoFailure("cannot scan " + root.string() + ": " + ec.message());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

inline std::vector<BenchSequence> load_bench_sequences(const std::filesystem::path& root) {
    std::vector<BenchSequence> out;
    for (const auto& d : list_sequence_dirs(root)) out.push_back(load_bench_sequence(d));
    return out;
}

// Runs both detectors over one sequence. DNN path: forward, 3-frame smoothing,
// corridor extraction; classical path: unsmoothed Hough estimate per frame.
inline SequenceResult benchmark_sequence(const BenchSequence& seq, const Network<float>& net,
                                         const HoughConfig& hough_cfg, const CameraModel& cam,
                                         const KpiConfig& kpi) {
    if (seq.frames.empty()) throw EmptySequence("benchmark_sequence: " + seq.id + " is empty");
    SequenceResult r;
    r.id = seq.id;
    r.category = seq.category;
    r.dnn_flags.reserve(seq.frames.size());
    r.classical_flags.reserve(seq.frames.size());
    MaskSmoother smoother(kpi.smoothing_window);
    for (const auto& f : seq.frames) {
        const auto prob = net.forward(image_to_tensor(f.image));
        const auto dnn_est = extract_corridor(smoother.push(prob), cam, kpi, f.id);
        r.dnn_flags.push_back(frame_availability(dnn_est, f.speed_mps, kpi));
        const auto cls_est = classical_estimate(f.image, cam, hough_cfg, kpi, f.id);
        r.classical_flags.push_back(frame_availability(cls_est, f.speed_mps, kpi));
    }
    r.dnn_activated = sequence_activation(r.dnn_flags, kpi);
    r.classical_activated = sequence_activation(r.classical_flags, kpi);
    return r;
}

inline KpiReport benchmark(const std::vector<BenchSequence>& sequences,
                           const Network<float>& net, const HoughConfig& hough_cfg,
                           const CameraModel& cam, const KpiConfig& kpi) {
    if (sequences.empty()) throw EmptySequence("benchmark: no sequences");
    std::vector<SequenceResult> results;
    results.reserve(sequences.size());
    for (const auto& s : sequences)
        results.push_back(benchmark_sequence(s, net, hough_cfg, cam, kpi));
    return aggregate_results(std::move(results));
}

} // namespace ecw
