#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecw/camera.hpp"
#include "ecw/common.hpp"
#include "ecw/image.hpp"
#include "ecw/tensor.hpp"

namespace ecw {

struct KpiConfig {
    double width_min = 2.0;           // m
    double width_max = 6.0;           // m
    double time_gap = 0.7;            // s, length threshold = time_gap * speed
    std::int64_t max_unavailable_run = 5;
    double binarize_threshold = 0.5;
    std::int64_t smoothing_window = 3;
};

inline void validate(const KpiConfig& c) {
    if (!(c.width_min < c.width_max)) throw ConfigError("width_min must be below width_max");
    if (c.time_gap <= 0.0) throw ConfigError("time_gap must be positive");
    if (c.max_unavailable_run < 0) throw ConfigError("max_unavailable_run must be >= 0");
    if (c.binarize_threshold <= 0.0 || c.binarize_threshold >= 1.0)
        throw ConfigError("binarize_threshold must lie in (0, 1)");
    if (c.smoothing_window < 1) throw ConfigError("smoothing_window must be >= 1");
}

inline void to_json(nlohmann::json& j, const KpiConfig& c) {
    j = nlohmann::json{{"width_min", c.width_min},
                       {"width_max", c.width_max},
                       {"time_gap", c.time_gap},
                       {"max_unavailable_run", c.max_unavailable_run},
                       {"binarize_threshold", c.binarize_threshold},
                       {"smoothing_window", c.smoothing_window}};
}

inline void from_json(const nlohmann::json& j, KpiConfig& c) {
    c = KpiConfig{};
    c.width_min = j.value("width_min", c.width_min);
    c.width_max = j.value("width_max", c.width_max);
    c.time_gap = j.value("time_gap", c.time_gap);
    c.max_unavailable_run = j.value("max_unavailable_run", c.max_unavailable_run);
    c.binarize_threshold = j.value("binarize_threshold", c.binarize_threshold);
    c.smoothing_window = j.value("smoothing_window", c.smoothing_window);
    validate(c);
}

enum class DetectorSource { dnn, classical };

inline const char* to_string(DetectorSource s) {
    return s == DetectorSource::dnn ? "dnn" : "classical";
}

struct CorridorEstimate {
    double width = 0.0;  // m
    double length = 0.0; // m
    bool available = false;
    DetectorSource source = DetectorSource::dnn;
    std::string frame_id;
};

// One corridor row in image space: row center v, left/right corridor edges in
// continuous pixel coordinates.
struct RowSpan {
    double v = 0.0;
    double u_left = 0.0;
    double u_right = 0.0;
};

// Shared metric conversion for both detector paths: rows below the horizon are
// projected onto the ground, width is the median row width over the nearest
// 5 m, length the far edge of the farthest row (capped at the horizon). Each
// span stands for one image row [v-0.5, v+0.5). Fewer than 3 usable rows means
// unavailable.
inline CorridorEstimate estimate_from_spans(const std::vector<RowSpan>& spans,
                                            const CameraModel& cam, const KpiConfig&,
                                            DetectorSource source, std::string frame_id) {
    CorridorEstimate est;
    est.source = source;
    est.frame_id = std::move(frame_id);

    const double vh = horizon_row(cam);
    std::vector<std::pair<double, double>> rows; // (z, width)
    double v_far = 0.0;
    double z_max = 0.0;
    for (const auto& s : spans) {
        if (s.v <= vh) continue;
        GroundPoint gl, gr;
        if (!try_pixel_to_ground(cam, s.u_left, s.v, gl)) continue;
        if (!try_pixel_to_ground(cam, s.u_right, s.v, gr)) continue;
        if (gr.x <= gl.x) continue;
        if (rows.empty() || gl.z > z_max) {
            z_max = gl.z;
            v_far = s.v;
        }
        rows.push_back({gl.z, gr.x - gl.x});
    }
    if (rows.size() < 3) return est;

    double z_min = rows[0].first;
    for (const auto& r : rows) z_min = std::min(z_min, r.first);
    std::vector<double> widths;
    for (const auto& r : rows)
        if (r.first <= z_min + 5.0) widths.push_back(r.second);
    std::sort(widths.begin(), widths.end());
    const std::size_t n = widths.size();
    est.width = n % 2 == 1 ? widths[n / 2] : 0.5 * (widths[n / 2 - 1] + widths[n / 2]);

    // far edge of the farthest row; rows grazing the horizon keep their center z
    GroundPoint far_edge;
    est.length = try_pixel_to_ground(cam, cam.cx, v_far - 0.5, far_edge) ? far_edge.z : z_max;
    est.available = true;
    return est;
}

// Rolling mean over the last <= window probability masks; the window grows
// 1 -> 2 -> window at stream start so the first frames are never blocked.
class MaskSmoother {
  public:
    explicit MaskSmoother(std::int64_t window = 3) : window_(window) {
        if (window < 1) throw ConfigError("smoothing window must be >= 1");
    }

    Tensor<float> push(const Tensor<float>& mask) {
        if (!history_.empty() && !(history_.front().shape == mask.shape))
            throw ShapeMismatch("smoother: mask dims changed mid-stream");
        history_.push_back(mask);
        if (static_cast<std::int64_t>(history_.size()) > window_) history_.pop_front();
        Tensor<float> mean(mask.shape);
        const float inv = 1.0f / static_cast<float>(history_.size());
        for (const auto& h : history_)
            for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += h.data[i];
        for (auto& v : mean.data) v *= inv;
        return mean;
    }

    void reset() { history_.clear(); }
    std::int64_t size() const { return static_cast<std::int64_t>(history_.size()); }

  private:
    std::int64_t window_;
    std::deque<Tensor<float>> history_;
};

// Binarize, pick the component under the ego (bottom-center seed, else the
// largest bottom-touching one), measure its rows on the ground plane.
inline CorridorEstimate extract_corridor(const Tensor<float>& mask, const CameraModel& cam,
                                         const KpiConfig& cfg, std::string frame_id = {}) {
    if (mask.shape.n != 1 || mask.shape.c != 1 || mask.shape.h != cam.image_height ||
        mask.shape.w != cam.image_width)
        throw ShapeMismatch("extract_corridor: mask dims do not match the camera");
    const std::int64_t H = mask.shape.h;
    const std::int64_t W = mask.shape.w;

    std::vector<char> bin(static_cast<std::size_t>(H * W));
    for (std::int64_t i = 0; i < H * W; ++i)
        bin[static_cast<std::size_t>(i)] =
            mask.data[static_cast<std::size_t>(i)] >= cfg.binarize_threshold;

    std::vector<std::int32_t> label(static_cast<std::size_t>(H * W), -1);
    std::vector<std::int64_t> stack;
    std::int32_t n_labels = 0;
    auto flood = [&](std::int64_t start, std::int32_t lab) {
        std::int64_t count = 0;
        stack.push_back(start);
        label[static_cast<std::size_t>(start)] = lab;
        while (!stack.empty()) {
            const std::int64_t i = stack.back();
            stack.pop_back();
            ++count;
            const std::int64_t y = i / W;
            const std::int64_t x = i % W;
            const std::int64_t ny[4] = {y - 1, y + 1, y, y};
            const std::int64_t nx[4] = {x, x, x - 1, x + 1};
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || ny[k] >= H || nx[k] < 0 || nx[k] >= W) continue;
                const std::int64_t jdx = ny[k] * W + nx[k];
                if (!bin[static_cast<std::size_t>(jdx)] ||
                    label[static_cast<std::size_t>(jdx)] >= 0)
                    continue;
                label[static_cast<std::size_t>(jdx)] = lab;
                stack.push_back(jdx);
            }
        }
        return count;
    };

    std::int32_t chosen = -1;
    const std::int64_t seed = (H - 1) * W + W / 2;
    if (bin[static_cast<std::size_t>(seed)]) {
        chosen = n_labels++;
        flood(seed, chosen);
    } else {
        std::int64_t best_count = 0;
        for (std::int64_t x = 0; x < W; ++x) {
            const std::int64_t i = (H - 1) * W + x;
            if (!bin[static_cast<std::size_t>(i)] || label[static_cast<std::size_t>(i)] >= 0)
                continue;
            const std::int32_t lab = n_labels++;
            const std::int64_t count = flood(i, lab);
            if (count > best_count) {
                best_count = count;
                chosen = lab;
            }
        }
    }
    if (chosen < 0) {
        CorridorEstimate est;
        est.frame_id = std::move(frame_id);
        return est;
    }

    std::vector<RowSpan> spans;
    for (std::int64_t y = 0; y < H; ++y) {
        std::int64_t x_min = -1;
        std::int64_t x_max = -1;
        for (std::int64_t x = 0; x < W; ++x)
            if (label[static_cast<std::size_t>(y * W + x)] == chosen) {
                if (x_min < 0) x_min = x;
                x_max = x;
            }
        if (x_min < 0) continue;
        // outer pixel edges at the row center
        spans.push_back(RowSpan{static_cast<double>(y) + 0.5, static_cast<double>(x_min),
                                static_cast<double>(x_max) + 1.0});
    }
    return estimate_from_spans(spans, cam, cfg, DetectorSource::dnn, std::move(frame_id));
}

inline bool frame_availability(const CorridorEstimate& est, double speed,
                               const KpiConfig& cfg) {
    if (!est.available) return false;
    if (est.width < cfg.width_min || est.width > cfg.width_max) return false;
    return est.length > cfg.time_gap * speed;
}

inline bool sequence_activation(const std::vector<bool>& flags, const KpiConfig& cfg) {
    if (flags.empty()) throw EmptySequence("sequence_activation: no frames");
    std::int64_t run = 0;
    std::int64_t worst = 0;
    for (bool f : flags) {
        run = f ? 0 : run + 1;
        worst = std::max(worst, run);
    }
    return worst <= cfg.max_unavailable_run;
}

inline double iou(const Image8& pred, const Image8& truth) {
    if (pred.height != truth.height || pred.width != truth.width)
        throw ShapeMismatch("iou: mask dims differ");
    std::int64_t inter = 0;
    std::int64_t uni = 0;
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const bool a = pred.pixels[i] != 0;
        const bool b = truth.pixels[i] != 0;
        inter += a && b;
        uni += a || b;
    }
    if (uni == 0) return 1.0; // vacuous agreement of two empty masks
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Round-half-up to two decimals, computed in integers so the displayed ratio
// is exactly reproducible from the raw counts.
inline std::string format_ratio(std::int64_t available, std::int64_t total) {
    if (total <= 0 || available < 0 || available > total)
        throw ConfigError("format_ratio: counts out of range");
    const std::int64_t scaled = (200 * available + total) / (2 * total);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld.%02lld", static_cast<long long>(scaled / 100),
                  static_cast<long long>(scaled % 100));
    return buf;
}

// ---- benchmark report ----

struct SequenceResult {
    std::string id;
    std::string category;
    std::vector<bool> dnn_flags;
    std::vector<bool> classical_flags;
    bool dnn_activated = false;
    bool classical_activated = false;
};

struct CategoryCounts {
    std::int64_t frames_available = 0;
    std::int64_t frames_total = 0;
    std::int64_t sequences_activated = 0;
    std::int64_t sequences_total = 0;
};

struct CategoryRow {
    std::string category;
    CategoryCounts dnn;
    CategoryCounts classical;
};

struct KpiReport {
    std::vector<SequenceResult> sequences;
    std::vector<CategoryRow> categories; // in order of first appearance
    CategoryRow overall;                 // category = "overall"
};

inline KpiReport aggregate_results(std::vector<SequenceResult> results) {
    KpiReport report;
    report.overall.category = "overall";
    std::map<std::string, std::size_t> index;
    for (auto& r : results) {
        if (!index.count(r.category)) {
            index[r.category] = report.categories.size();
            report.categories.push_back(CategoryRow{r.category, {}, {}});
        }
        auto& row = report.categories[index[r.category]];
        auto add = [&](CategoryCounts& c, const std::vector<bool>& flags, bool activated) {
            for (bool f : flags) c.frames_available += f;
            c.frames_total += static_cast<std::int64_t>(flags.size());
            c.sequences_activated += activated;
            c.sequences_total += 1;
        };
        add(row.dnn, r.dnn_flags, r.dnn_activated);
        add(row.classical, r.classical_flags, r.classical_activated);
        add(report.overall.dnn, r.dnn_flags, r.dnn_activated);
        add(report.overall.classical, r.classical_flags, r.classical_activated);
        report.sequences.push_back(std::move(r));
    }
    return report;
}

inline void to_json(nlohmann::json& j, const CategoryCounts& c) {
    j = nlohmann::json{{"frames_available", c.frames_available},
                       {"frames_total", c.frames_total},
                       {"sequences_activated", c.sequences_activated},
                       {"sequences_total", c.sequences_total}};
    if (c.frames_total > 0) j["ratio"] = format_ratio(c.frames_available, c.frames_total);
}

inline void to_json(nlohmann::json& j, const CategoryRow& row) {
    j = nlohmann::json{{"category", row.category}, {"dnn", row.dnn},
                       {"classical", row.classical}};
}

inline void to_json(nlohmann::json& j, const SequenceResult& r) {
    j = nlohmann::json{{"id", r.id},
                       {"category", r.category},
                       {"dnn", {{"activated", r.dnn_activated}, {"flags", r.dnn_flags}}},
                       {"classical",
                        {{"activated", r.classical_activated}, {"flags", r.classical_flags}}}};
}

inline void to_json(nlohmann::json& j, const KpiReport& report) {
    j = nlohmann::json{{"categories", report.categories},
                       {"overall", report.overall},
                       {"sequences", report.sequences}};
}

// Plain-text availability table, one row per category plus the overall row.
inline std::string render_report_text(const KpiReport& report) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s  %-22s  %-22s  %-10s  %-10s\n", "category",
                  "classical frames", "dnn frames", "classical", "dnn");
    out += line;
    std::snprintf(line, sizeof line, "%-16s  %-22s  %-22s  %-10s  %-10s\n", "", "", "",
                  "sequences", "sequences");
    out += line;
    out += std::string(88, '-') + "\n";
    auto cell = [](const CategoryCounts& c) {
        char buf[48];
        if (c.frames_total == 0) return std::string("-");
        std::snprintf(buf, sizeof buf, "%s (%lld/%lld)",
                      format_ratio(c.frames_available, c.frames_total).c_str(),
                      static_cast<long long>(c.frames_available),
                      static_cast<long long>(c.frames_total));
        return std::string(buf);
    };
    auto seqs = [](const CategoryCounts& c) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "%lld/%lld",
                      static_cast<long long>(c.sequences_activated),
                      static_cast<long long>(c.sequences_total));
        return std::string(buf);
    };
    for (const auto& row : report.categories) {
        std::snprintf(line, sizeof line, "%-16s  %-22s  %-22s  %-10s  %-10s\n",
                      row.category.c_str(), cell(row.classical).c_str(), cell(row.dnn).c_str(),
                      seqs(row.classical).c_str(), seqs(row.dnn).c_str());
        out += line;
    }
    out += std::string(88, '-') + "\n";
    std::snprintf(line, sizeof line, "%-16s  %-22s  %-22s  %-10s  %-10s\n", "overall",
                  cell(report.overall.classical).c_str(), cell(report.overall.dnn).c_str(),
                  seqs(report.overall.classical).c_str(), seqs(report.overall.dnn).c_str());
    out += line;
    return out;
}

// Fig.-1 style visualization: corridor pixels tinted green over the frame.
inline ImageRgb render_overlay(const Image8& frame, const Tensor<float>& prob,
                               double threshold) {
    if (prob.shape.h != frame.height || prob.shape.w != frame.width)
        throw ShapeMismatch("overlay: mask dims do not match the frame");
    ImageRgb out(frame.height, frame.width);
    for (std::int64_t y = 0; y < frame.height; ++y)
        for (std::int64_t x = 0; x < frame.width; ++x) {
            const std::uint8_t v = frame.at(y, x);
            if (prob.data[static_cast<std::size_t>(y * frame.width + x)] >= threshold) {
                const auto g = static_cast<std::uint8_t>(
                    std::min(255.0, 0.55 * static_cast<double>(v) + 110.0));
                out.set(y, x, static_cast<std::uint8_t>(0.45 * v), g,
                        static_cast<std::uint8_t>(0.45 * v));
            } else {
                out.set(y, x, v, v, v);
            }
        }
    return out;
}

} // namespace ecw
