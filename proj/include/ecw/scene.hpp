#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecw/camera.hpp"
#include "ecw/common.hpp"
#include "ecw/dataset.hpp"
#include "ecw/image.hpp"
#include "ecw/rng.hpp"

namespace ecw {

enum class DegradationKind {
    none,
    heavy_rain,      // bright streaks + spray behind the lead vehicle + drop blur
    sun_after_rain,  // reflection band on the wet road
    direct_sunlight, // global glare gradient + flare disc
    faded_lines,     // marking contrast scaled down
    tar_seams,       // dark low-contrast longitudinal curves
    shadows,         // dark polygons cast across the road
};

inline const char* to_string(DegradationKind k) {
    switch (k) {
        case DegradationKind::none: return "none";
        case DegradationKind::heavy_rain: return "heavy_rain";
        case DegradationKind::sun_after_rain: return "sun_after_rain";
        case DegradationKind::direct_sunlight: return "direct_sunlight";
        case DegradationKind::faded_lines: return "faded_lines";
        case DegradationKind::tar_seams: return "tar_seams";
        case DegradationKind::shadows: return "shadows";
    }
    return "?";
}

inline DegradationKind degradation_from_string(const std::string& s) {
    for (DegradationKind k :
         {DegradationKind::none, DegradationKind::heavy_rain, DegradationKind::sun_after_rain,
          DegradationKind::direct_sunlight, DegradationKind::faded_lines,
          DegradationKind::tar_seams, DegradationKind::shadows})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown degradation kind: " + s);
}

struct SceneSpec {
    // road
    double lane_width = 3.5; // m
    double curvature = 0.0;  // 1/m, signed (positive = left curve)
    std::int64_t n_lanes = 2;
    // marking
    bool dashed = false;   // style of interior lane dividers
    double contrast = 1.0; // [0,1] marking/road contrast scale
    // lead vehicle
    bool has_lead = false;
    double lead_distance = 30.0; // m along the road
    double lead_width = 1.9;     // m
    // degradation
    DegradationKind degradation = DegradationKind::none;
    double severity = 0.0; // [0,1]
    std::uint64_t seed = 0;
};

inline void validate(const SceneSpec& s) {
    if (s.lane_width < 2.5 || s.lane_width > 4.5)
        throw ConfigError("lane_width must lie in [2.5, 4.5] m, got " +
                          std::to_string(s.lane_width));
    if (std::abs(s.curvature) > 0.003)
        throw ConfigError("curvature magnitude must be <= 0.003 1/m, got " +
                          std::to_string(s.curvature));
    if (s.n_lanes < 1 || s.n_lanes > 4) throw ConfigError("n_lanes must lie in [1, 4]");
    if (s.contrast < 0.0 || s.contrast > 1.0)
        throw ConfigError("marking contrast must lie in [0, 1]");
    if (s.has_lead && s.lead_distance <= 0.0)
        throw ConfigError("lead_vehicle distance must be positive");
    if (s.has_lead && (s.lead_width < 1.0 || s.lead_width > 2.6))
        throw ConfigError("lead_vehicle width must lie in [1.0, 2.6] m");
    if (s.severity < 0.0 || s.severity > 1.0)
        throw ConfigError("degradation severity must lie in [0, 1]");
}

inline void to_json(nlohmann::json& j, const SceneSpec& s) {
    j = nlohmann::json{
        {"lane_width", s.lane_width},
        {"curvature", s.curvature},
        {"n_lanes", s.n_lanes},
        {"marking", {{"style", s.dashed ? "dashed" : "solid"}, {"contrast", s.contrast}}},
        {"degradation", {{"kind", to_string(s.degradation)}, {"severity", s.severity}}},
        {"seed", s.seed}};
    if (s.has_lead)
        j["lead_vehicle"] = {{"distance", s.lead_distance}, {"width", s.lead_width}};
    else
        j["lead_vehicle"] = nullptr;
}

inline void from_json(const nlohmann::json& j, SceneSpec& s) {
    s = SceneSpec{};
    s.lane_width = j.value("lane_width", s.lane_width);
    s.curvature = j.value("curvature", s.curvature);
    s.n_lanes = j.value("n_lanes", s.n_lanes);
    if (j.contains("marking")) {
        const auto& m = j.at("marking");
        const auto style = m.value("style", std::string("solid"));
        if (style != "solid" && style != "dashed")
            throw ConfigError("marking style must be solid or dashed, got " + style);
        s.dashed = style == "dashed";
        s.contrast = m.value("contrast", s.contrast);
    }
    if (j.contains("lead_vehicle") && !j.at("lead_vehicle").is_null()) {
        s.has_lead = true;
        s.lead_distance = j.at("lead_vehicle").at("distance").get<double>();
        s.lead_width = j.at("lead_vehicle").value("width", s.lead_width);
    }
    if (j.contains("degradation")) {
        const auto& d = j.at("degradation");
        s.degradation = degradation_from_string(d.value("kind", std::string("none")));
        s.severity = d.value("severity", s.severity);
    }
    s.seed = j.value("seed", s.seed);
    validate(s);
}

// Speed and lateral-offset profiles as bounded sinusoids so the integrated
// travel distance has a closed form (no clamping mid-sequence).
struct MotionProfile {
    double base_speed = 30.0;       // m/s
    double speed_amplitude = 0.0;   // m/s
    double speed_period = 10.0;     // s
    double lateral_amplitude = 0.0; // m
    double lateral_period = 8.0;    // s

    double speed(double t) const {
        return base_speed +
               speed_amplitude * std::sin(2.0 * kPi * t / std::max(speed_period, 1e-9));
    }
    double distance(double t) const {
        const double w = 2.0 * kPi / std::max(speed_period, 1e-9);
        return base_speed * t + speed_amplitude / w * (1.0 - std::cos(w * t));
    }
    double lateral(double t) const {
        return lateral_amplitude * std::sin(2.0 * kPi * t / std::max(lateral_period, 1e-9));
    }
};

inline void validate(const MotionProfile& m) {
    if (m.base_speed - std::abs(m.speed_amplitude) < 0.0 ||
        m.base_speed + std::abs(m.speed_amplitude) > 60.0)
        throw ConfigError("speed profile must stay inside [0, 60] m/s");
    if (m.speed_period <= 0.0 || m.lateral_period <= 0.0)
        throw ConfigError("profile periods must be positive");
    if (std::abs(m.lateral_amplitude) > 1.0)
        throw ConfigError("lateral amplitude must stay within 1 m of the lane center");
}

inline void to_json(nlohmann::json& j, const MotionProfile& m) {
    j = nlohmann::json{{"base_speed", m.base_speed},
                       {"speed_amplitude", m.speed_amplitude},
                       {"speed_period", m.speed_period},
                       {"lateral_amplitude", m.lateral_amplitude},
                       {"lateral_period", m.lateral_period}};
}

inline void from_json(const nlohmann::json& j, MotionProfile& m) {
    m = MotionProfile{};
    m.base_speed = j.value("base_speed", m.base_speed);
    m.speed_amplitude = j.value("speed_amplitude", m.speed_amplitude);
    m.speed_period = j.value("speed_period", m.speed_period);
    m.lateral_amplitude = j.value("lateral_amplitude", m.lateral_amplitude);
    m.lateral_period = j.value("lateral_period", m.lateral_period);
    validate(m);
}

// Every rendering and degradation constant in one place. Intensities are
// 8-bit levels; lengths are metres unless noted.
struct SceneConstants {
    double road_brightness = 95.0;
    double road_noise = 1.5;          // asphalt texture amplitude
    double marking_brightness = 225.0;
    double marking_width = 0.15;
    double dash_length = 3.0;
    double dash_period = 12.0;        // dash + gap
    double shoulder_brightness = 72.0;
    double shoulder_margin = 0.5;     // paved margin beyond the outer markings
    double sky_top = 205.0;
    double sky_horizon = 158.0;
    double vehicle_height = 1.45;
    double vehicle_brightness = 58.0;
    double vehicle_base_band = 0.18;  // dark under-body fraction of the rect

    // heavy_rain
    double rain_contrast_lift = 0.75;   // blend toward mid-grey at severity 1 (wet film)
    double rain_streaks_per_kpx = 12.0; // streak count per 1000 pixels at severity 1
    double rain_streak_gain = 110.0;    // added brightness at streak core
    double rain_spray_gain = 46.0;     // spray blob peak add
    double rain_blur_blend = 0.55;     // 3x3 mean blur blend at severity 1

    // sun_after_rain
    double reflect_band_frac = 0.16; // band half-width as a fraction of image width
    double reflect_gain = 0.85;      // fraction of headroom added at band center

    // direct_sunlight
    double glare_ramp_gain = 0.55; // headroom fraction added at the horizon
    double flare_radius_frac = 0.13;
    double flare_gain = 0.95;

    // tar_seams
    double seam_width = 0.12;
    double seam_darken = 26.0;
    double seam_wander = 0.35;  // lateral sine amplitude
    double seam_wavelength = 41.0;

    // shadows
    double shadow_darken = 0.45;   // multiplicative darkening at severity 1
    double shadow_spacing = 55.0;  // mean spacing along the road
    double shadow_min_len = 4.0;
    double shadow_max_len = 14.0;
};

inline constexpr double kFrameRateHz = 15.0;
inline constexpr std::int64_t kFramesPerSequence = 450;
inline constexpr double kSpeedRateHz = 50.0;
inline constexpr std::int64_t kSpeedSamplesPerSequence = 1500;

// Ego pose on the road: arc length travelled and lateral offset from the
// ego-lane center (right positive).
struct EgoPose {
    double s = 0.0;
    double lateral = 0.0;
};

// Road coordinates: ds = arc length ahead of the ego, d = lateral offset from
// the ego-lane centerline (right positive).
struct RoadPoint {
    double ds = 0.0;
    double d = 0.0;
};

namespace road {

// Constant-curvature arc. For curvature k > 0 the circle center sits at
// x = -1/k (left of the ego); the ego rides at lateral offset `lateral`.
inline GroundPoint to_ego(double curvature, double lateral, RoadPoint p) {
    if (std::abs(curvature) < 1e-12)
        return GroundPoint{p.d - lateral, p.ds};
    const double R = 1.0 / curvature;
    const double phi = curvature * p.ds;
    return GroundPoint{(R + p.d) * std::cos(phi) - R - lateral, (R + p.d) * std::sin(phi)};
}

inline RoadPoint from_ego(double curvature, double lateral, GroundPoint g) {
    if (std::abs(curvature) < 1e-12)
        return RoadPoint{g.z, g.x + lateral};
    const double R = 1.0 / curvature;
    const double cx = g.x + lateral + R; // x distance from the circle center
    const double r = std::hypot(cx, g.z);
    const double rho = R > 0.0 ? r : -r;
    const double phi = R > 0.0 ? std::atan2(g.z, cx) : std::atan2(-g.z, -cx);
    return RoadPoint{phi / curvature, rho - R};
}

} // namespace road

struct FramePair {
    Image8 image;
    Image8 mask;
};

namespace detail {

// Deterministic per-cell noise in [-1, 1], anchored to world road coordinates.
inline double cell_noise(std::uint64_t seed, std::int64_t cell_s, std::int64_t cell_d) {
    std::uint64_t h = hash_combine(seed, hash_combine(static_cast<std::uint64_t>(cell_s),
                                                      static_cast<std::uint64_t>(cell_d) ^
                                                          0x9e3779b97f4a7c15ULL));
    h = splitmix64(h);
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

inline double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

} // namespace detail

// Renders one frame of a scene. All randomness is derived from the spec seed,
// the pose, and the frame index, so identical inputs give identical bytes.
class FrameRenderer {
  public:
    FrameRenderer(const SceneSpec& spec, const CameraModel& cam,
                  SceneConstants constants = SceneConstants{})
        : spec_(spec), cam_(cam), k_(constants) {
        validate(spec_);
        noise_seed_ = hash_combine(spec_.seed, fnv1a64("asphalt"));
        layout_seed_ = hash_combine(spec_.seed, fnv1a64("layout"));
        // marking centerlines: +w/2 is the ego right edge, then leftward
        const double w = spec_.lane_width;
        for (std::int64_t jline = 0; jline <= spec_.n_lanes; ++jline) {
            Marking m;
            m.d = w / 2.0 - static_cast<double>(jline) * w;
            const bool edge = jline == 0 || jline == spec_.n_lanes;
            m.dashed = !edge && spec_.dashed;
            markings_.push_back(m);
        }
        road_left_ = w / 2.0 - static_cast<double>(spec_.n_lanes) * w - k_.shoulder_margin;
        road_right_ = w / 2.0 + k_.shoulder_margin;
        horizon_ = horizon_row(cam_);
    }

    FramePair render(const EgoPose& pose, std::int64_t frame_index = 0) const {
        const std::int64_t W = cam_.image_width;
        const std::int64_t H = cam_.image_height;
        std::vector<double> shade(static_cast<std::size_t>(W * H), 0.0);
        Image8 mask(H, W, 0);

        // 2x2 supersampled ground shading + mask coverage
        static constexpr double offs[2] = {0.25, 0.75};
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                double acc = 0.0;
                int cover = 0;
                for (double oy : offs) {
                    const double v = static_cast<double>(y) + oy;
                    for (double ox : offs) {
                        const double u = static_cast<double>(x) + ox;
                        GroundPoint g;
                        if (!try_pixel_to_ground(cam_, u, v, g)) {
                            acc += sky_shade(v);
                            continue;
                        }
                        const RoadPoint rp = road::from_ego(spec_.curvature, pose.lateral, g);
                        acc += ground_shade(pose.s + rp.ds, rp.d);
                        if (in_corridor(rp)) ++cover;
                    }
                }
                shade[static_cast<std::size_t>(y * W + x)] = acc / 4.0;
                if (cover >= 2) mask.at(y, x) = 255;
            }
        }

        keep_bottom_component(mask);

        const auto veh = vehicle_rect(pose);
        if (veh) paint_vehicle(shade, *veh);
        apply_image_degradations(shade, veh, frame_index);

        Image8 img(H, W);
        for (std::size_t i = 0; i < shade.size(); ++i)
            img.pixels[i] =
                static_cast<std::uint8_t>(std::lround(std::clamp(shade[i], 0.0, 255.0)));
        return {std::move(img), std::move(mask)};
    }

    // Ego-lane marking centerline at ds ahead, as an image line segment;
    // used as ground truth by the detector tests. side: -1 left, +1 right.
    std::pair<PixelPoint, PixelPoint> marking_segment(const EgoPose& pose, int side,
                                                      double ds_near, double ds_far) const {
        const double d = side >= 0 ? spec_.lane_width / 2.0 : -spec_.lane_width / 2.0;
        const auto g1 = road::to_ego(spec_.curvature, pose.lateral, RoadPoint{ds_near, d});
        const auto g2 = road::to_ego(spec_.curvature, pose.lateral, RoadPoint{ds_far, d});
        return {ground_to_pixel(cam_, g1), ground_to_pixel(cam_, g2)};
    }

  private:
    struct Marking {
        double d = 0.0;
        bool dashed = false;
    };

    // The label is the drivable region reachable from the ego: far fragments
    // that pinch off at the resolution limit are dropped, which keeps every
    // mask a single 4-connected component touching the bottom rows.
    static void keep_bottom_component(Image8& mask) {
        const std::int64_t H = mask.height;
        const std::int64_t W = mask.width;
        std::vector<char> keep(static_cast<std::size_t>(H * W), 0);
        std::vector<std::int64_t> stack;
        for (std::int64_t x = 0; x < W; ++x)
            if (mask.at(H - 1, x)) {
                keep[static_cast<std::size_t>((H - 1) * W + x)] = 1;
                stack.push_back((H - 1) * W + x);
            }
        while (!stack.empty()) {
            const std::int64_t i = stack.back();
            stack.pop_back();
            const std::int64_t y = i / W;
            const std::int64_t x = i % W;
            const std::int64_t ny[4] = {y - 1, y + 1, y, y};
            const std::int64_t nx[4] = {x, x, x - 1, x + 1};
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || ny[k] >= H || nx[k] < 0 || nx[k] >= W) continue;
                const std::int64_t j = ny[k] * W + nx[k];
                if (keep[static_cast<std::size_t>(j)] || !mask.at(ny[k], nx[k])) continue;
                keep[static_cast<std::size_t>(j)] = 1;
                stack.push_back(j);
            }
        }
        for (std::int64_t i = 0; i < H * W; ++i)
            if (!keep[static_cast<std::size_t>(i)])
                mask.pixels[static_cast<std::size_t>(i)] = 0;
    }

    struct VehicleRect {
        std::int64_t x0, x1, y0, y1; // half-open pixel bounds, clipped
        double cx, base_v, width_px; // for spray anchoring
    };

    double sky_shade(double v) const {
        const double span = std::max(horizon_, 1.0);
        const double f = std::clamp(v / span, 0.0, 1.0);
        return k_.sky_top + (k_.sky_horizon - k_.sky_top) * f;
    }

    bool marking_at(double s_abs, double d, const Marking& m) const {
        if (std::abs(d - m.d) > k_.marking_width / 2.0) return false;
        if (!m.dashed) return true;
        double phase = std::fmod(s_abs, k_.dash_period);
        if (phase < 0.0) phase += k_.dash_period;
        return phase < k_.dash_length;
    }

    double ground_shade(double s_abs, double d) const {
        const double noise =
            k_.road_noise * detail::cell_noise(noise_seed_,
                                               static_cast<std::int64_t>(std::floor(s_abs * 2.0)),
                                               static_cast<std::int64_t>(std::floor(d * 4.0)));
        if (d < road_left_ || d > road_right_) return k_.shoulder_brightness + 2.0 * noise;

        double base = k_.road_brightness;
        for (const auto& m : markings_) {
            if (!marking_at(s_abs, d, m)) continue;
            double gain = spec_.contrast;
            if (spec_.degradation == DegradationKind::faded_lines)
                gain *= 1.0 - spec_.severity;
            base += gain * (k_.marking_brightness - k_.road_brightness);
            break;
        }

        if (spec_.degradation == DegradationKind::tar_seams) {
            for (int seam = 0; seam < 3; ++seam) {
                const double d0 = -spec_.lane_width + 0.8 * static_cast<double>(seam) +
                                  0.4 * detail::cell_noise(layout_seed_, seam, 17);
                const double wander =
                    k_.seam_wander *
                    std::sin(s_abs / k_.seam_wavelength * 2.0 * kPi +
                             2.1 * static_cast<double>(seam));
                if (std::abs(d - (d0 + wander)) < k_.seam_width / 2.0)
                    base -= k_.seam_darken * spec_.severity;
            }
        }
        if (spec_.degradation == DegradationKind::shadows) {
            const double cell = std::floor(s_abs / k_.shadow_spacing);
            const auto ci = static_cast<std::int64_t>(cell);
            const double u0 = detail::cell_noise(layout_seed_, ci, 3);
            const double len = k_.shadow_min_len +
                               (k_.shadow_max_len - k_.shadow_min_len) * std::abs(u0);
            const double start = cell * k_.shadow_spacing +
                                 0.5 * k_.shadow_spacing * std::abs(detail::cell_noise(layout_seed_, ci, 5));
            // slanted edges make the polygon non-rectangular
            const double slant = 1.5 * detail::cell_noise(layout_seed_, ci, 7);
            const double lo = start + slant * d;
            if (s_abs >= lo && s_abs <= lo + len) {
                const double edge = std::min(s_abs - lo, lo + len - s_abs);
                base *= 1.0 - k_.shadow_darken * spec_.severity *
                                  detail::smoothstep(0.0, 0.4, edge);
            }
        }
        return base + noise;
    }

    bool in_corridor(const RoadPoint& rp) const {
        if (std::abs(rp.d) > spec_.lane_width / 2.0) return false;
        if (spec_.has_lead && rp.ds > spec_.lead_distance) return false;
        return true;
    }

    std::optional<VehicleRect> vehicle_rect(const EgoPose& pose) const {
        if (!spec_.has_lead) return std::nullopt;
        const double half = spec_.lead_width / 2.0;
        const auto gl =
            road::to_ego(spec_.curvature, pose.lateral, RoadPoint{spec_.lead_distance, -half});
        const auto gr =
            road::to_ego(spec_.curvature, pose.lateral, RoadPoint{spec_.lead_distance, half});
        PixelPoint bl, br, tl, tr;
        if (!try_ground_to_pixel(cam_, gl, bl) || !try_ground_to_pixel(cam_, gr, br) ||
            !try_point_to_pixel(cam_, gl.x, k_.vehicle_height, gl.z, tl) ||
            !try_point_to_pixel(cam_, gr.x, k_.vehicle_height, gr.z, tr))
            return std::nullopt;
        VehicleRect r;
        const double x0 = std::min(bl.u, tl.u);
        const double x1 = std::max(br.u, tr.u);
        const double y0 = std::min(tl.v, tr.v);
        const double y1 = std::max(bl.v, br.v);
        r.x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(x0)), 0,
                                        cam_.image_width);
        r.x1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(x1)), 0,
                                        cam_.image_width);
        r.y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(y0)), 0,
                                        cam_.image_height);
        r.y1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(y1)), 0,
                                        cam_.image_height);
        if (r.x0 >= r.x1 || r.y0 >= r.y1) return std::nullopt;
        r.cx = (x0 + x1) / 2.0;
        r.base_v = y1;
        r.width_px = x1 - x0;
        return r;
    }

    void paint_vehicle(std::vector<double>& shade, const VehicleRect& r) const {
        const std::int64_t W = cam_.image_width;
        const std::int64_t band =
            std::max<std::int64_t>(1, static_cast<std::int64_t>(k_.vehicle_base_band *
                                                                static_cast<double>(r.y1 - r.y0)));
        for (std::int64_t y = r.y0; y < r.y1; ++y)
            for (std::int64_t x = r.x0; x < r.x1; ++x) {
                double v = k_.vehicle_brightness +
                           3.0 * detail::cell_noise(noise_seed_, y, x + 7919);
                if (y >= r.y1 - band) v *= 0.55; // under-body shadow
                shade[static_cast<std::size_t>(y * W + x)] = v;
            }
    }

    void apply_image_degradations(std::vector<double>& shade,
                                  const std::optional<VehicleRect>& veh,
                                  std::int64_t frame_index) const {
        const double sev = spec_.severity;
        if (spec_.degradation == DegradationKind::heavy_rain && sev > 0.0) {
            apply_rain(shade, veh, frame_index, sev);
        } else if (spec_.degradation == DegradationKind::sun_after_rain && sev > 0.0) {
            apply_reflection_band(shade, sev);
        } else if (spec_.degradation == DegradationKind::direct_sunlight && sev > 0.0) {
            apply_sunlight(shade, sev);
        }
    }

    void apply_rain(std::vector<double>& shade, const std::optional<VehicleRect>& veh,
                    std::int64_t frame_index, double sev) const {
        const std::int64_t W = cam_.image_width;
        const std::int64_t H = cam_.image_height;
        // contrast lift toward mid-grey: the wet film drowns the markings first
        const double blend = k_.rain_contrast_lift * sev;
        for (auto& v : shade) v = v * (1.0 - blend) + 118.0 * blend;

        // droplet blur: blend with a 3x3 mean; a second pass past severity 0.5
        // smears thin far-field markings out of the gradient picture entirely
        const double alpha = k_.rain_blur_blend * sev;
        const int passes = sev >= 0.5 ? 2 : 1;
        for (int pass = 0; pass < passes && alpha > 0.0; ++pass) {
            std::vector<double> blurred(shade.size());
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t x = 0; x < W; ++x) {
                    double acc = 0.0;
                    int n = 0;
                    for (std::int64_t dy = -1; dy <= 1; ++dy)
                        for (std::int64_t dx = -1; dx <= 1; ++dx) {
                            const std::int64_t yy = y + dy;
                            const std::int64_t xx = x + dx;
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                            acc += shade[static_cast<std::size_t>(yy * W + xx)];
                            ++n;
                        }
                    blurred[static_cast<std::size_t>(y * W + x)] = acc / n;
                }
            for (std::size_t i = 0; i < shade.size(); ++i)
                shade[i] = shade[i] * (1.0 - alpha) + blurred[i] * alpha;
        }

        // streaks reseeded per frame: rain flickers. Painted after the blur —
        // airborne drops stay crisp over the smeared scene.
        Rng rng(spec_.seed, hash_combine(fnv1a64("rain"),
                                         static_cast<std::uint64_t>(frame_index)));
        const double scale = static_cast<double>(H) / 96.0;
        const auto n_streaks = static_cast<std::int64_t>(
            k_.rain_streaks_per_kpx * sev * static_cast<double>(W * H) / 1000.0);
        for (std::int64_t i = 0; i < n_streaks; ++i) {
            double x = rng.uniform(0.0, static_cast<double>(W));
            double y = rng.uniform(0.0, static_cast<double>(H));
            const double len = (8.0 + 13.0 * rng.uniform()) * scale;
            const double dx = rng.uniform(-0.35, 0.1); // slight wind slant
            const double gain = k_.rain_streak_gain * sev * (0.5 + 0.5 * rng.uniform());
            const auto steps = static_cast<std::int64_t>(len);
            for (std::int64_t t = 0; t < steps; ++t) {
                const auto px = static_cast<std::int64_t>(x);
                const auto py = static_cast<std::int64_t>(y);
                if (px >= 0 && px < W && py >= 0 && py < H) {
                    auto& p = shade[static_cast<std::size_t>(py * W + px)];
                    p += gain * (1.0 - static_cast<double>(t) / static_cast<double>(steps));
                }
                x += dx;
                y += 1.0;
            }
        }

        // spray cloud hugging the lead vehicle's base
        if (veh) {
            const double sigma = std::max(3.0, veh->width_px * 0.7);
            const std::int64_t cy0 = std::max<std::int64_t>(
                0, static_cast<std::int64_t>(veh->base_v - 2.0 * sigma));
            const std::int64_t cy1 =
                std::min(H, static_cast<std::int64_t>(veh->base_v + sigma));
            const std::int64_t cx0 = std::max<std::int64_t>(
                0, static_cast<std::int64_t>(veh->cx - 2.5 * sigma));
            const std::int64_t cx1 =
                std::min(W, static_cast<std::int64_t>(veh->cx + 2.5 * sigma));
            for (std::int64_t y = cy0; y < cy1; ++y)
                for (std::int64_t x = cx0; x < cx1; ++x) {
                    const double du = (static_cast<double>(x) - veh->cx) / (1.6 * sigma);
                    const double dv = (static_cast<double>(y) - veh->base_v) / sigma;
                    const double g = std::exp(-(du * du + dv * dv) * 2.2);
                    shade[static_cast<std::size_t>(y * W + x)] += k_.rain_spray_gain * sev * g;
                }
        }
    }

    void apply_reflection_band(std::vector<double>& shade, double sev) const {
        const std::int64_t W = cam_.image_width;
        const std::int64_t H = cam_.image_height;
        Rng rng(spec_.seed, fnv1a64("sunband"));
        const double center =
            static_cast<double>(W) * (0.35 + 0.3 * rng.uniform()); // stable per sequence
        const double half = k_.reflect_band_frac * static_cast<double>(W);
        const std::int64_t y0 = std::max<std::int64_t>(
            0, static_cast<std::int64_t>(std::floor(horizon_)) + 1);
        for (std::int64_t y = y0; y < H; ++y) {
            // glare strongest just below the horizon, fading toward the ego
            const double depth =
                1.0 - (static_cast<double>(y) - horizon_) / (static_cast<double>(H) - horizon_);
            const double row_gain = 0.35 + 0.65 * depth;
            for (std::int64_t x = 0; x < W; ++x) {
                const double fall =
                    std::exp(-std::pow((static_cast<double>(x) - center) / half, 2.0) * 1.6);
                auto& p = shade[static_cast<std::size_t>(y * W + x)];
                p += (255.0 - p) * k_.reflect_gain * sev * row_gain * fall;
            }
        }
    }

    void apply_sunlight(std::vector<double>& shade, double sev) const {
        const std::int64_t W = cam_.image_width;
        const std::int64_t H = cam_.image_height;
        Rng rng(spec_.seed, fnv1a64("flare"));
        const double fx = static_cast<double>(W) * (0.3 + 0.4 * rng.uniform());
        const double fy = std::max(2.0, horizon_ - 0.05 * static_cast<double>(H));
        const double radius = k_.flare_radius_frac * static_cast<double>(W);
        for (std::int64_t y = 0; y < H; ++y) {
            // global gradient: strongest at the top, still present on the road
            const double ramp = 1.0 - 0.65 * static_cast<double>(y) / static_cast<double>(H);
            for (std::int64_t x = 0; x < W; ++x) {
                auto& p = shade[static_cast<std::size_t>(y * W + x)];
                p += (255.0 - p) * k_.glare_ramp_gain * sev * ramp;
                const double r = std::hypot(static_cast<double>(x) - fx,
                                            static_cast<double>(y) - fy) / radius;
                if (r < 2.5) p += (255.0 - p) * k_.flare_gain * sev * std::exp(-r * r);
            }
        }
    }

    SceneSpec spec_;
    CameraModel cam_;
    SceneConstants k_;
    std::vector<Marking> markings_;
    double road_left_ = 0.0;
    double road_right_ = 0.0;
    double horizon_ = 0.0;
    std::uint64_t noise_seed_ = 0;
    std::uint64_t layout_seed_ = 0;
};

inline FramePair render_frame(const SceneSpec& spec, const CameraModel& cam, double t,
                              const MotionProfile& motion = MotionProfile{}) {
    FrameRenderer r(spec, cam);
    const EgoPose pose{motion.distance(t), motion.lateral(t)};
    return r.render(pose, static_cast<std::int64_t>(std::llround(t * kFrameRateHz)));
}

struct SequenceFrame {
    double t = 0.0;
    Image8 image;
    Image8 mask;
};

struct SpeedSample {
    double t = 0.0;
    double speed_mps = 0.0;
};

struct Sequence {
    SceneSpec spec;
    MotionProfile motion;
    std::vector<SequenceFrame> frames;
    std::vector<SpeedSample> speed;

    DegradationKind category() const { return spec.degradation; }
};

inline Sequence generate_sequence(const SceneSpec& spec, const CameraModel& cam,
                                  const MotionProfile& motion) {
    validate(spec);
    validate(motion);
    Sequence seq;
    seq.spec = spec;
    seq.motion = motion;
    FrameRenderer renderer(spec, cam);
    seq.frames.reserve(static_cast<std::size_t>(kFramesPerSequence));
    for (std::int64_t i = 0; i < kFramesPerSequence; ++i) {
        const double t = static_cast<double>(i) / kFrameRateHz;
        const EgoPose pose{motion.distance(t), motion.lateral(t)};
        auto [img, mask] = renderer.render(pose, i);
        seq.frames.push_back(SequenceFrame{t, std::move(img), std::move(mask)});
    }
    seq.speed.reserve(static_cast<std::size_t>(kSpeedSamplesPerSequence));
    for (std::int64_t j = 0; j < kSpeedSamplesPerSequence; ++j) {
        const double t = static_cast<double>(j) / kSpeedRateHz;
        seq.speed.push_back(SpeedSample{t, motion.speed(t)});
    }
    return seq;
}

// ---- disk layout ----

inline void write_speed_csv(const std::filesystem::path& path,
                            const std::vector<SpeedSample>& speed) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write speed trace: " + path.string());
    out << "t,speed_mps\n";
    char buf[80];
    for (const auto& s : speed) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", s.t, s.speed_mps);
        out << buf;
    }
    if (!out) throw IoFailure("short write on speed trace: " + path.string());
}

inline std::vector<SpeedSample> read_speed_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open speed trace: " + path.string());
    std::vector<SpeedSample> speed;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ConfigError("malformed speed row in " + path.string() + ": " + line);
        speed.push_back(SpeedSample{std::stod(line.substr(0, comma)),
                                    std::stod(line.substr(comma + 1))});
    }
    return speed;
}

// Writes one sequence directory: frames/, masks/, manifest.jsonl, speed.csv,
// meta.json. Frame speeds in the manifest are the profile sampled at frame time.
inline void write_sequence(const std::filesystem::path& dir, const Sequence& seq,
                           const CameraModel& cam, const std::string& sequence_id) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "frames", ec);
    fs::create_directories(dir / "masks", ec);
    if (ec) throw IoFailure("cannot create sequence dirs under " + dir.string());

    std::vector<FrameRecord> records;
    records.reserve(seq.frames.size());
    char name[32];
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        std::snprintf(name, sizeof name, "%06zu.pgm", i);
        const std::string img_rel = std::string("frames/") + name;
        const std::string mask_rel = std::string("masks/") + name;
        write_pgm((dir / img_rel).string(), seq.frames[i].image);
        write_pgm((dir / mask_rel).string(), seq.frames[i].mask);
        FrameRecord r;
        r.id = sequence_id + "_" + std::string(name, 6);
        r.image = img_rel;
        r.mask = mask_rel;
        r.category = to_string(seq.spec.degradation);
        r.speed_mps = seq.motion.speed(seq.frames[i].t);
        r.seed = seq.spec.seed;
        r.t = seq.frames[i].t;
        records.push_back(std::move(r));
    }
    write_manifest(dir / "manifest.jsonl", records);
    write_speed_csv(dir / "speed.csv", seq.speed);

    nlohmann::json meta;
    meta["id"] = sequence_id;
    meta["category"] = to_string(seq.spec.degradation);
    meta["spec"] = seq.spec;
    meta["motion"] = seq.motion;
    meta["camera"] = cam;
    meta["frame_count"] = seq.frames.size();
    std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write meta.json under " + dir.string());
    out << meta.dump(2) << "\n";
}

// Flat training dataset: a stride of prime-ish length decorrelates dash phase
// across frames; a slow lateral sway varies the ego offset.
inline std::vector<FrameRecord> build_dataset(const std::vector<SceneSpec>& catalog,
                                              std::int64_t frames_per_spec,
                                              const CameraModel& cam,
                                              const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (catalog.empty() || frames_per_spec < 1)
        throw ConfigError("catalog must list at least one spec and one frame per spec");
    for (const auto& s : catalog) validate(s);

    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (ec) throw IoFailure("cannot create dataset dirs under " + out_dir.string());

    std::vector<FrameRecord> records;
    char name[48];
    for (std::size_t si = 0; si < catalog.size(); ++si) {
        const auto& spec = catalog[si];
        FrameRenderer renderer(spec, cam);
        for (std::int64_t fi = 0; fi < frames_per_spec; ++fi) {
            const double s = 13.7 * static_cast<double>(fi);
            const double lateral = 0.35 * std::sin(0.61 * static_cast<double>(fi) +
                                                   static_cast<double>(si));
            auto [img, mask] = renderer.render(EgoPose{s, lateral}, fi);
            std::snprintf(name, sizeof name, "%03zu_%04lld", si,
                          static_cast<long long>(fi));
            const std::string stem = name;
            write_pgm((out_dir / "images" / (stem + ".pgm")).string(), img);
            write_pgm((out_dir / "masks" / (stem + ".pgm")).string(), mask);
            FrameRecord r;
            r.id = stem;
            r.image = "images/" + stem + ".pgm";
            r.mask = "masks/" + stem + ".pgm";
            r.category = to_string(spec.degradation);
            r.speed_mps = 30.0;
            r.seed = spec.seed;
            r.t = static_cast<double>(fi) / kFrameRateHz;
            records.push_back(std::move(r));
        }
    }
    write_manifest(out_dir / "manifest.jsonl", records);
    return records;
}

} // namespace ecw
