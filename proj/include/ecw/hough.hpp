#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecw/camera.hpp"
#include "ecw/common.hpp"
#include "ecw/eval.hpp"
#include "ecw/image.hpp"

namespace ecw {

struct HoughConfig {
    double rho_resolution = 1.0;            // px per rho bin
    double theta_resolution = kPi / 180.0;  // rad per theta bin
    double edge_percentile = 0.95;
    double vote_floor = 0.3;                // fraction of the max accumulator value
    double nms_rho = 8.0;                   // px suppression window
    double nms_theta = 8.0 * kPi / 180.0;   // rad suppression window
    std::int64_t max_lines = 8;
    double refine_radius = 3.0;             // px support band for the TLS polish; 0 disables
};

inline void validate(const HoughConfig& c) {
    if (c.rho_resolution <= 0.0 || c.theta_resolution <= 0.0)
        throw ConfigError("hough resolutions must be positive");
    if (c.edge_percentile <= 0.0 || c.edge_percentile >= 1.0)
        throw ConfigError("edge_percentile must lie in (0, 1)");
    if (c.vote_floor <= 0.0 || c.vote_floor > 1.0)
        throw ConfigError("vote_floor must lie in (0, 1]");
    if (c.nms_rho < 0.0 || c.nms_theta < 0.0) throw ConfigError("nms windows must be >= 0");
    if (c.max_lines < 1) throw ConfigError("max_lines must be >= 1");
    if (c.refine_radius < 0.0) throw ConfigError("refine_radius must be >= 0");
}

inline void to_json(nlohmann::json& j, const HoughConfig& c) {
    j = nlohmann::json{{"rho_resolution", c.rho_resolution},
                       {"theta_resolution", c.theta_resolution},
                       {"edge_percentile", c.edge_percentile},
                       {"vote_floor", c.vote_floor},
                       {"nms_rho", c.nms_rho},
                       {"nms_theta", c.nms_theta},
                       {"max_lines", c.max_lines},
                       {"refine_radius", c.refine_radius}};
}

inline void from_json(const nlohmann::json& j, HoughConfig& c) {
    c = HoughConfig{};
    c.rho_resolution = j.value("rho_resolution", c.rho_resolution);
    c.theta_resolution = j.value("theta_resolution", c.theta_resolution);
    c.edge_percentile = j.value("edge_percentile", c.edge_percentile);
    c.vote_floor = j.value("vote_floor", c.vote_floor);
    c.nms_rho = j.value("nms_rho", c.nms_rho);
    c.nms_theta = j.value("nms_theta", c.nms_theta);
    c.max_lines = j.value("max_lines", c.max_lines);
    c.refine_radius = j.value("refine_radius", c.refine_radius);
    validate(c);
}

// x*cos(theta) + y*sin(theta) = rho, with theta in [0, pi) and signed rho.
struct LinePolar {
    double rho = 0.0;
    double theta = 0.0;
    std::int64_t votes = 0;
};

inline LinePolar line_from_points(const PixelPoint& a, const PixelPoint& b) {
    const double du = b.u - a.u;
    const double dv = b.v - a.v;
    if (std::abs(du) < 1e-12 && std::abs(dv) < 1e-12)
        throw DegenerateGeometry("line_from_points: coincident points");
    double theta = std::atan2(du, -dv); // angle of the normal to (du, dv)
    if (theta < 0.0) theta += kPi;
    if (theta >= kPi) theta -= kPi;
    LinePolar line;
    line.theta = theta;
    line.rho = a.u * std::cos(theta) + a.v * std::sin(theta);
    return line;
}

// Sobel gradient magnitude thresholded at the percentile of its own
// distribution (strict >, so ties at the threshold stay out).
inline Image8 detect_edges(const Image8& img, const HoughConfig& cfg) {
    validate(cfg);
    const std::int64_t H = img.height;
    const std::int64_t W = img.width;
    Image8 edges(H, W, 0);
    if (H < 3 || W < 3) return edges;

    std::vector<double> mag(static_cast<std::size_t>(H * W), 0.0);
    for (std::int64_t y = 1; y + 1 < H; ++y)
        for (std::int64_t x = 1; x + 1 < W; ++x) {
            const auto p = [&](std::int64_t yy, std::int64_t xx) {
                return static_cast<double>(img.at(yy, xx));
            };
            const double gx = p(y - 1, x + 1) + 2.0 * p(y, x + 1) + p(y + 1, x + 1) -
                              p(y - 1, x - 1) - 2.0 * p(y, x - 1) - p(y + 1, x - 1);
            const double gy = p(y + 1, x - 1) + 2.0 * p(y + 1, x) + p(y + 1, x + 1) -
                              p(y - 1, x - 1) - 2.0 * p(y - 1, x) - p(y - 1, x + 1);
            mag[static_cast<std::size_t>(y * W + x)] = std::hypot(gx, gy);
        }

    std::vector<double> sorted = mag;
    const auto idx = static_cast<std::size_t>(
        std::floor(cfg.edge_percentile * static_cast<double>(sorted.size() - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx),
                     sorted.end());
    const double threshold = sorted[idx];

    for (std::int64_t i = 0; i < H * W; ++i)
        if (mag[static_cast<std::size_t>(i)] > threshold)
            edges.pixels[static_cast<std::size_t>(i)] = 255;
    return edges;
}

namespace detail {

struct HoughGrid {
    std::int64_t n_theta = 0;
    std::int64_t n_rho = 0;
    std::int64_t rho_offset = 0;
    std::vector<std::int64_t> votes; // theta-major: votes[t * n_rho + r]
};

inline HoughGrid hough_accumulate(const Image8& edges, const HoughConfig& cfg) {
    HoughGrid g;
    g.n_theta = static_cast<std::int64_t>(std::llround(kPi / cfg.theta_resolution));
    const double diag = std::hypot(static_cast<double>(edges.width),
                                   static_cast<double>(edges.height));
    g.rho_offset = static_cast<std::int64_t>(std::ceil(diag / cfg.rho_resolution));
    g.n_rho = 2 * g.rho_offset + 1;
    g.votes.assign(static_cast<std::size_t>(g.n_theta * g.n_rho), 0);

    std::vector<double> cos_t(static_cast<std::size_t>(g.n_theta));
    std::vector<double> sin_t(static_cast<std::size_t>(g.n_theta));
    for (std::int64_t t = 0; t < g.n_theta; ++t) {
        cos_t[static_cast<std::size_t>(t)] =
            std::cos(static_cast<double>(t) * cfg.theta_resolution);
        sin_t[static_cast<std::size_t>(t)] =
            std::sin(static_cast<double>(t) * cfg.theta_resolution);
    }
    for (std::int64_t y = 0; y < edges.height; ++y)
        for (std::int64_t x = 0; x < edges.width; ++x) {
            if (!edges.at(y, x)) continue;
            for (std::int64_t t = 0; t < g.n_theta; ++t) {
                const double rho = static_cast<double>(x) * cos_t[static_cast<std::size_t>(t)] +
                                   static_cast<double>(y) * sin_t[static_cast<std::size_t>(t)];
                const std::int64_t r =
                    static_cast<std::int64_t>(std::llround(rho / cfg.rho_resolution)) +
                    g.rho_offset;
                ++g.votes[static_cast<std::size_t>(t * g.n_rho + r)];
            }
        }
    return g;
}

// suppression window around an accepted peak, wrapping theta across pi with
// the matching rho sign flip
inline bool suppressed_by(const LinePolar& peak, double rho, double theta,
                          const HoughConfig& cfg) {
    const double dt = std::abs(peak.theta - theta);
    if (dt <= kPi / 2.0)
        return dt <= cfg.nms_theta && std::abs(peak.rho - rho) <= cfg.nms_rho;
    return kPi - dt <= cfg.nms_theta && std::abs(peak.rho + rho) <= cfg.nms_rho;
}

// total-least-squares polish over the edge pixels supporting a peak; two
// rounds so a line seeded on one side of a thick stripe settles on its spine
inline LinePolar refine_line(const Image8& edges, LinePolar line, double radius) {
    if (radius <= 0.0) return line;
    for (int round = 0; round < 2; ++round) {
        const double c = std::cos(line.theta);
        const double s = std::sin(line.theta);
        double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
        std::int64_t n = 0;
        for (std::int64_t y = 0; y < edges.height; ++y)
            for (std::int64_t x = 0; x < edges.width; ++x) {
                if (!edges.at(y, x)) continue;
                const double xd = static_cast<double>(x);
                const double yd = static_cast<double>(y);
                if (std::abs(xd * c + yd * s - line.rho) > radius) continue;
                sx += xd;
                sy += yd;
                sxx += xd * xd;
                sxy += xd * yd;
                syy += yd * yd;
                ++n;
            }
        if (n < 2) return line;
        const double inv = 1.0 / static_cast<double>(n);
        const double mx = sx * inv;
        const double my = sy * inv;
        const double cxx = sxx * inv - mx * mx;
        const double cxy = sxy * inv - mx * my;
        const double cyy = syy * inv - my * my;
        // eigenvector of the smaller eigenvalue = line normal
        const double gap = std::sqrt((cxx - cyy) * (cxx - cyy) + 4.0 * cxy * cxy);
        const double lam = 0.5 * (cxx + cyy - gap);
        double nx, ny;
        if (std::abs(cxy) > 1e-12) {
            nx = cxy;
            ny = lam - cxx;
        } else {
            nx = cxx <= cyy ? 1.0 : 0.0;
            ny = cxx <= cyy ? 0.0 : 1.0;
        }
        const double norm = std::hypot(nx, ny);
        if (norm < 1e-12) return line;
        nx /= norm;
        ny /= norm;
        if (ny < 0.0 || (ny == 0.0 && nx < 0.0)) {
            nx = -nx;
            ny = -ny;
        }
        double theta = std::atan2(ny, nx);
        if (theta >= kPi) theta -= kPi;
        line.theta = theta;
        line.rho = mx * nx + my * ny;
    }
    return line;
}

} // namespace detail

inline std::vector<LinePolar> hough_lines(const Image8& edges, const HoughConfig& cfg) {
    validate(cfg);
    const auto grid = detail::hough_accumulate(edges, cfg);
    std::int64_t vote_max = 0;
    for (const auto v : grid.votes) vote_max = std::max(vote_max, v);
    std::vector<LinePolar> lines;
    if (vote_max == 0) return lines;
    const double floor_votes = cfg.vote_floor * static_cast<double>(vote_max);

    struct Candidate {
        std::int64_t votes, t, r;
    };
    std::vector<Candidate> cands;
    for (std::int64_t t = 0; t < grid.n_theta; ++t)
        for (std::int64_t r = 0; r < grid.n_rho; ++r) {
            const std::int64_t v = grid.votes[static_cast<std::size_t>(t * grid.n_rho + r)];
            if (static_cast<double>(v) >= floor_votes) cands.push_back({v, t, r});
        }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.votes != b.votes) return a.votes > b.votes;
        if (a.t != b.t) return a.t < b.t;
        return a.r < b.r;
    });

    for (const auto& c : cands) {
        if (static_cast<std::int64_t>(lines.size()) >= cfg.max_lines) break;
        const double theta = static_cast<double>(c.t) * cfg.theta_resolution;
        double rho = static_cast<double>(c.r - grid.rho_offset) * cfg.rho_resolution;
        bool keep = true;
        for (const auto& line : lines)
            if (detail::suppressed_by(line, rho, theta, cfg)) {
                keep = false;
                break;
            }
        if (!keep) continue;
        lines.push_back(
            detail::refine_line(edges, LinePolar{rho, theta, c.votes}, cfg.refine_radius));
    }
    return lines;
}

// normalized accumulator dump for debugging
inline Image8 accumulator_image(const Image8& edges, const HoughConfig& cfg) {
    const auto grid = detail::hough_accumulate(edges, cfg);
    std::int64_t vote_max = 1;
    for (const auto v : grid.votes) vote_max = std::max(vote_max, v);
    Image8 out(grid.n_rho, grid.n_theta);
    for (std::int64_t t = 0; t < grid.n_theta; ++t)
        for (std::int64_t r = 0; r < grid.n_rho; ++r)
            out.at(r, t) = static_cast<std::uint8_t>(
                255 * grid.votes[static_cast<std::size_t>(t * grid.n_rho + r)] / vote_max);
    return out;
}

struct PairPrior {
    double min_separation = 2.0;      // m
    double max_separation = 6.0;      // m
    double nominal_separation = 3.5;  // m, band fit peaks at a standard lane width
    double max_parallel_error = 0.12; // sine of the ground angle between tracks
    double horizon_band_frac = 0.12;  // tolerance on the vanishing row, in image heights
    bool require_straddle = true;     // ego lane must contain the camera's forward axis
};

struct LanePair {
    LinePolar left;
    LinePolar right;
    double separation = 0.0; // m
};

namespace detail {

// u as a function of image row v; lane boundaries are never near-horizontal
inline bool line_u_at(const LinePolar& line, double v, double& u) {
    const double c = std::cos(line.theta);
    if (std::abs(c) < 0.15) return false;
    u = (line.rho - v * std::sin(line.theta)) / c;
    return true;
}

} // namespace detail

inline std::optional<LanePair> try_select_lane_pair(const std::vector<LinePolar>& lines,
                                                    const CameraModel& cam,
                                                    const PairPrior& prior = PairPrior{}) {
    const double vh = horizon_row(cam);
    const double H = static_cast<double>(cam.image_height);
    const double v_near = H - 0.5;
    const double v_far = vh + 0.2 * (H - vh);
    std::int64_t vote_max = 1;
    for (const auto& l : lines) vote_max = std::max(vote_max, l.votes);

    std::optional<LanePair> best;
    double best_score = -1.0;
    double best_votes = -1.0;
    for (std::size_t i = 0; i < lines.size(); ++i)
        for (std::size_t j = i + 1; j < lines.size(); ++j) {
            double ui_n, ui_f, uj_n, uj_f;
            if (!detail::line_u_at(lines[i], v_near, ui_n)) continue;
            if (!detail::line_u_at(lines[i], v_far, ui_f)) continue;
            if (!detail::line_u_at(lines[j], v_near, uj_n)) continue;
            if (!detail::line_u_at(lines[j], v_far, uj_f)) continue;

            GroundPoint gi_n, gi_f, gj_n, gj_f;
            if (!try_pixel_to_ground(cam, ui_n, v_near, gi_n)) continue;
            if (!try_pixel_to_ground(cam, ui_f, v_far, gi_f)) continue;
            if (!try_pixel_to_ground(cam, uj_n, v_near, gj_n)) continue;
            if (!try_pixel_to_ground(cam, uj_f, v_far, gj_f)) continue;

            // ground-track directions and their parallelism
            const double di_x = gi_f.x - gi_n.x;
            const double di_z = gi_f.z - gi_n.z;
            const double dj_x = gj_f.x - gj_n.x;
            const double dj_z = gj_f.z - gj_n.z;
            const double li = std::hypot(di_x, di_z);
            const double lj = std::hypot(dj_x, dj_z);
            if (li < 1e-9 || lj < 1e-9) continue;
            const double parallel_err =
                std::abs(di_x * dj_z - di_z * dj_x) / (li * lj);
            if (parallel_err > prior.max_parallel_error) continue;

            // metric separation at the near end, where pixel errors translate
            // to the fewest metres: j's near point against i's track normal
            const double sep = std::abs((gj_n.x - gi_n.x) * (di_z / li) -
                                        (gj_n.z - gi_n.z) * (di_x / li));
            if (sep < prior.min_separation || sep > prior.max_separation) continue;

            // the ego lane contains the ego: camera axis between the tracks
            if (prior.require_straddle &&
                (std::min(gi_n.x, gj_n.x) >= 0.0 || std::max(gi_n.x, gj_n.x) <= 0.0))
                continue;

            // image intersection must sit near the horizon (vanishing point)
            const double ca = std::cos(lines[i].theta);
            const double sa = std::sin(lines[i].theta);
            const double cb = std::cos(lines[j].theta);
            const double sb = std::sin(lines[j].theta);
            const double det = ca * sb - sa * cb;
            if (std::abs(det) < 1e-9) continue;
            const double v_cross = (ca * lines[j].rho - cb * lines[i].rho) / det;
            if (std::abs(v_cross - vh) > prior.horizon_band_frac * H) continue;

            const double band_reach = std::max(prior.nominal_separation - prior.min_separation,
                                               prior.max_separation - prior.nominal_separation);
            const double band_fit = 1.0 - std::abs(sep - prior.nominal_separation) / band_reach;
            const double vote_mass =
                0.5 * static_cast<double>(lines[i].votes + lines[j].votes) /
                static_cast<double>(vote_max);
            const double score = 0.4 * (1.0 - parallel_err / prior.max_parallel_error) +
                                 0.3 * band_fit + 0.3 * vote_mass;
            if (score > best_score ||
                (score == best_score && vote_mass > best_votes)) {
                best_score = score;
                best_votes = vote_mass;
                LanePair pair;
                const bool i_left = ui_n < uj_n;
                pair.left = i_left ? lines[i] : lines[j];
                pair.right = i_left ? lines[j] : lines[i];
                pair.separation = sep;
                best = pair;
            }
        }
    return best;
}

inline LanePair select_lane_pair(const std::vector<LinePolar>& lines, const CameraModel& cam,
                                 const PairPrior& prior = PairPrior{}) {
    auto pair = try_select_lane_pair(lines, cam, prior);
    if (!pair) throw NoPair("select_lane_pair: no line pair inside the lane band");
    return *pair;
}

// Corridor between the two lines from the image bottom up to the horizon band
// (or the row where the lines cross). No lead-vehicle truncation: the
// classical path carries no vehicle detector.
inline CorridorEstimate corridor_from_lines(const LanePair& pair, const CameraModel& cam,
                                            const KpiConfig& cfg, std::string frame_id = {}) {
    const double vh = horizon_row(cam);
    std::vector<RowSpan> spans;
    bool crossed_below_bottom = false;
    for (std::int64_t y = cam.image_height - 1; y >= 0; --y) {
        const double v = static_cast<double>(y) + 0.5;
        if (v <= vh) break;
        double ul, ur;
        if (!detail::line_u_at(pair.left, v, ul) || !detail::line_u_at(pair.right, v, ur))
            break;
        if (ul >= ur) {
            if (y == cam.image_height - 1) crossed_below_bottom = true;
            break; // lines crossed: corridor ends at this row
        }
        spans.push_back(RowSpan{v, ul, ur});
    }
    if (crossed_below_bottom)
        throw DegenerateGeometry("corridor_from_lines: lines cross below the image bottom");
    auto est =
        estimate_from_spans(spans, cam, cfg, DetectorSource::classical, std::move(frame_id));
    return est;
}

// Full classical pipeline for one frame; detection failures surface as an
// unavailable estimate, never an exception.
inline CorridorEstimate classical_estimate(const Image8& frame, const CameraModel& cam,
                                           const HoughConfig& hough_cfg, const KpiConfig& kpi,
                                           std::string frame_id = {}) {
    const auto edges = detect_edges(frame, hough_cfg);
    const auto lines = hough_lines(edges, hough_cfg);
    const auto pair = try_select_lane_pair(lines, cam);
    CorridorEstimate est;
    est.source = DetectorSource::classical;
    est.frame_id = frame_id;
    if (!pair) return est;
    try {
        est = corridor_from_lines(*pair, cam, kpi, std::move(frame_id));
    } catch (const DegenerateGeometry&) {
        // leave unavailable
    }
    return est;
}

} // namespace ecw
