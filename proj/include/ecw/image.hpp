#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ecw/common.hpp"
#include "ecw/tensor.hpp"

namespace ecw {

// 8-bit grayscale raster, row-major, origin top-left.
struct Image8 {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<std::uint8_t> pixels;

    Image8() = default;
    Image8(std::int64_t h, std::int64_t w, std::uint8_t fill = 0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h * w), fill) {}

    std::uint8_t& at(std::int64_t y, std::int64_t x) {
        return pixels[static_cast<std::size_t>(y * width + x)];
    }
    std::uint8_t at(std::int64_t y, std::int64_t x) const {
        return pixels[static_cast<std::size_t>(y * width + x)];
    }
};

// 8-bit RGB raster, interleaved, used only for overlay output.
struct ImageRgb {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<std::uint8_t> pixels;

    ImageRgb() = default;
    ImageRgb(std::int64_t h, std::int64_t w)
        : height(h), width(w), pixels(static_cast<std::size_t>(h * w * 3), 0) {}

    std::uint8_t* at(std::int64_t y, std::int64_t x) {
        return pixels.data() + static_cast<std::size_t>((y * width + x) * 3);
    }
    const std::uint8_t* at(std::int64_t y, std::int64_t x) const {
        return pixels.data() + static_cast<std::size_t>((y * width + x) * 3);
    }
    void set(std::int64_t y, std::int64_t x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        auto* p = at(y, x);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
};

namespace detail {

// Skips whitespace and '#' comment lines between PNM header tokens.
inline int pnm_token(std::istream& in, const std::string& path) {
    for (;;) {
        int c = in.peek();
        if (c == std::char_traits<char>::eof())
            throw IoFailure("truncated header: " + path);
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        if (std::isspace(c) != 0) {
            in.get();
            continue;
        }
        break;
    }
    int value = 0;
    if (!(in >> value)) throw IoFailure("bad header token: " + path);
    return value;
}

} // namespace detail

inline Image8 read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open: " + path);
    char m0 = 0;
    char m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P' || m1 != '5') throw IoFailure("not a P5 pgm: " + path);
    const int width = detail::pnm_token(in, path);
    const int height = detail::pnm_token(in, path);
    const int maxval = detail::pnm_token(in, path);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
        throw IoFailure("unsupported pgm header: " + path);
    in.get(); // single whitespace byte before raster
    Image8 img(height, width);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw IoFailure("truncated raster: " + path);
    return img;
}

inline void write_pgm(const std::string& path, const Image8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open for write: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoFailure("short write: " + path);
}

inline void write_ppm(const std::string& path, const ImageRgb& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open for write: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoFailure("short write: " + path);
}

// Network input: intensities scaled to [0,1].
inline Tensor<float> image_to_tensor(const Image8& img) {
    Tensor<float> t(Shape{1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        t.data[i] = static_cast<float>(img.pixels[i]) * (1.0f / 255.0f);
    return t;
}

// Training target: mask pixels {0,255} become {0,1}; anything midway counts
// as foreground at >=128 so hand-edited masks stay usable.
inline Tensor<float> mask_to_tensor(const Image8& img) {
    Tensor<float> t(Shape{1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        t.data[i] = img.pixels[i] >= 128 ? 1.0f : 0.0f;
    return t;
}

// Probability map to an 8-bit raster (round to nearest; clamp guards
// against stray values just outside [0,1]).
inline Image8 tensor_to_image(const Tensor<float>& t) {
    if (t.shape.n != 1 || t.shape.c != 1) throw ShapeMismatch("tensor_to_image wants 1x1xHxW");
    Image8 img(t.shape.h, t.shape.w);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        float v = t.data[i];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return img;
}

// Hard {0,255} mask from a probability map.
inline Image8 threshold_mask(const Tensor<float>& t, float threshold) {
    if (t.shape.n != 1 || t.shape.c != 1) throw ShapeMismatch("threshold_mask wants 1x1xHxW");
    Image8 img(t.shape.h, t.shape.w);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = t.data[i] >= threshold ? 255 : 0;
    return img;
}

} // namespace ecw
