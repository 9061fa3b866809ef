#pragma once

#include <cmath>
#include <cstdint>

#include "json.hpp"

#include "ecw/common.hpp"

namespace ecw {

// Ground-plane point in vehicle coordinates: x lateral (right positive),
// z longitudinal (forward positive), metres. The camera sits at x=0, z=0,
// `height` metres above the road, pitched down by `pitch` radians.
struct GroundPoint {
    double x = 0.0;
    double z = 0.0;
};

struct PixelPoint {
    double u = 0.0; // column, continuous; pixel i spans [i, i+1)
    double v = 0.0; // row
};

struct CameraModel {
    double focal = 700.0;  // pixels, square aspect
    double cx = 326.0;     // principal point
    double cy = 180.0;
    double height = 1.5;   // metres above ground
    double pitch = 0.0349; // radians, down positive
    std::int64_t image_width = 652;
    std::int64_t image_height = 360;
};

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

// Reference intrinsics scale linearly with resolution so the field of view
// stays fixed across profiles.
inline CameraModel default_camera(std::int64_t width, std::int64_t height) {
    CameraModel cam;
    cam.image_width = width;
    cam.image_height = height;
    cam.focal = 700.0 * static_cast<double>(width) / 652.0;
    cam.cx = static_cast<double>(width) / 2.0;
    cam.cy = static_cast<double>(height) / 2.0;
    cam.height = 1.5;
    cam.pitch = deg_to_rad(2.0);
    return cam;
}

// Row at which the ground plane vanishes; rays at or above it never meet
// the road.
inline double horizon_row(const CameraModel& cam) {
    return cam.cy - cam.focal * std::tan(cam.pitch);
}

// Back-projects a pixel through the flat-ground model. Returns false when
// the ray points at or above the horizon.
inline bool try_pixel_to_ground(const CameraModel& cam, double u, double v,
                                GroundPoint& out) {
    const double dx = (u - cam.cx) / cam.focal;
    const double dy = (v - cam.cy) / cam.focal;
    const double c = std::cos(cam.pitch);
    const double s = std::sin(cam.pitch);
    const double denom = dy * c + s; // -D_y of the world ray
    if (denom <= 1e-12) return false;
    const double t = cam.height / denom;
    out.x = t * dx;
    out.z = t * (c - dy * s);
    return out.z > 0.0;
}

inline GroundPoint pixel_to_ground(const CameraModel& cam, double u, double v) {
    GroundPoint g;
    if (!try_pixel_to_ground(cam, u, v, g))
        throw HorizonRay("pixel row does not intersect the ground");
    return g;
}

// Projects a point at camera height offset y (0 = road surface, up positive).
// Returns false when the point is on or behind the image plane.
inline bool try_point_to_pixel(const CameraModel& cam, double x, double y, double z,
                               PixelPoint& out) {
    const double c = std::cos(cam.pitch);
    const double s = std::sin(cam.pitch);
    const double pc_x = x;
    const double pc_y = (cam.height - y) * c - z * s;
    const double pc_z = (cam.height - y) * s + z * c;
    if (pc_z <= 1e-9) return false;
    out.u = cam.cx + cam.focal * pc_x / pc_z;
    out.v = cam.cy + cam.focal * pc_y / pc_z;
    return true;
}

inline bool try_ground_to_pixel(const CameraModel& cam, const GroundPoint& g,
                                PixelPoint& out) {
    return try_point_to_pixel(cam, g.x, 0.0, g.z, out);
}

inline PixelPoint ground_to_pixel(const CameraModel& cam, const GroundPoint& g) {
    PixelPoint p;
    if (!try_ground_to_pixel(cam, g, p))
        throw Behind("ground point is behind the camera plane");
    return p;
}

inline void to_json(nlohmann::json& j, const CameraModel& cam) {
    j = nlohmann::json{{"focal", cam.focal},
                       {"cx", cam.cx},
                       {"cy", cam.cy},
                       {"height", cam.height},
                       {"pitch_deg", rad_to_deg(cam.pitch)},
                       {"image_width", cam.image_width},
                       {"image_height", cam.image_height}};
}

inline void from_json(const nlohmann::json& j, CameraModel& cam) {
    cam.focal = j.at("focal").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.height = j.at("height").get<double>();
    cam.pitch = deg_to_rad(j.at("pitch_deg").get<double>());
    cam.image_width = j.at("image_width").get<std::int64_t>();
    cam.image_height = j.at("image_height").get<std::int64_t>();
    if (cam.focal <= 0.0 || cam.height <= 0.0)
        throw ConfigError("camera focal and height must be positive");
}

} // namespace ecw
