#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lungseg/errors.hpp"
#include "lungseg/rng.hpp"

namespace lungseg {

// Grayscale raster. Pixel values are 8-bit intensities (0..255) at ingest
// and unit-interval reals after normalize(); both stages share this type.
struct GrayImage {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<float> pixels;  // row-major

    GrayImage() = default;
    GrayImage(int64_t w, int64_t h) : width(w), height(h) {
        if (w <= 0 || h <= 0) throw ShapeError("GrayImage dimensions must be positive");
        pixels.assign(static_cast<size_t>(w * h), 0.0f);
    }

    float& at(int64_t y, int64_t x) { return pixels[static_cast<size_t>(y * width + x)]; }
    float at(int64_t y, int64_t x) const { return pixels[static_cast<size_t>(y * width + x)]; }
};

// Strictly binary raster: every element is 0 or 1.
struct BinaryMask {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> bits;  // row-major, values in {0,1}

    BinaryMask() = default;
    BinaryMask(int64_t w, int64_t h) : width(w), height(h) {
        if (w <= 0 || h <= 0) throw ShapeError("BinaryMask dimensions must be positive");
        bits.assign(static_cast<size_t>(w * h), 0);
    }

    uint8_t& at(int64_t y, int64_t x) { return bits[static_cast<size_t>(y * width + x)]; }
    uint8_t at(int64_t y, int64_t x) const { return bits[static_cast<size_t>(y * width + x)]; }

    int64_t foreground_count() const {
        int64_t n = 0;
        for (uint8_t b : bits) n += b;
        return n;
    }

    bool operator==(const BinaryMask& o) const {
        return width == o.width && height == o.height && bits == o.bits;
    }
};

enum class ResizeMode { bilinear, nearest };

namespace detail {

// Nearest-neighbor source index under the half-pixel-center convention,
// computed in exact integer arithmetic. The sample point for output index d
// is (d+0.5)*in/out; when it falls exactly between two source pixels the tie
// resolves by output side (left half picks the left pixel), which keeps
// nearest resizing equivariant under horizontal mirroring.
inline int64_t nearest_src_index(int64_t dst, int64_t in_size, int64_t out_size) {
    const int64_t num = (2 * dst + 1) * in_size;
    const int64_t den = 2 * out_size;
    const int64_t q = num / den;
    if (num % den == 0 && 2 * dst + 1 < out_size) return q - 1;
    return q;
}

inline int64_t clamp_index(int64_t v, int64_t n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

}  // namespace detail

// Resamples under the half-pixel-center convention with edge clamping.
inline GrayImage resize(const GrayImage& img, int64_t out_w, int64_t out_h,
                        ResizeMode mode = ResizeMode::bilinear) {
    if (out_w < 1 || out_h < 1) throw UsageError("resize target dimensions must be at least 1");
    GrayImage out(out_w, out_h);
    if (mode == ResizeMode::nearest) {
        std::vector<int64_t> col(static_cast<size_t>(out_w));
        for (int64_t x = 0; x < out_w; ++x) col[static_cast<size_t>(x)] = detail::nearest_src_index(x, img.width, out_w);
        for (int64_t y = 0; y < out_h; ++y) {
            const int64_t sy = detail::nearest_src_index(y, img.height, out_h);
            for (int64_t x = 0; x < out_w; ++x) out.at(y, x) = img.at(sy, col[static_cast<size_t>(x)]);
        }
        return out;
    }
    const double rx = static_cast<double>(img.width) / static_cast<double>(out_w);
    const double ry = static_cast<double>(img.height) / static_cast<double>(out_h);
    for (int64_t y = 0; y < out_h; ++y) {
        const double yf = (static_cast<double>(y) + 0.5) * ry - 0.5;
        const int64_t y0 = static_cast<int64_t>(std::floor(yf));
        const double ty = yf - static_cast<double>(y0);
        const int64_t ya = detail::clamp_index(y0, img.height);
        const int64_t yb = detail::clamp_index(y0 + 1, img.height);
        for (int64_t x = 0; x < out_w; ++x) {
            const double xf = (static_cast<double>(x) + 0.5) * rx - 0.5;
            const int64_t x0 = static_cast<int64_t>(std::floor(xf));
            const double tx = xf - static_cast<double>(x0);
            const int64_t xa = detail::clamp_index(x0, img.width);
            const int64_t xb = detail::clamp_index(x0 + 1, img.width);
            const double top = (1.0 - tx) * img.at(ya, xa) + tx * img.at(ya, xb);
            const double bot = (1.0 - tx) * img.at(yb, xa) + tx * img.at(yb, xb);
            out.at(y, x) = static_cast<float>((1.0 - ty) * top + ty * bot);
        }
    }
    return out;
}

// Mask resizing is always nearest so the output stays binary.
inline BinaryMask resize(const BinaryMask& mask, int64_t out_w, int64_t out_h) {
    if (out_w < 1 || out_h < 1) throw UsageError("resize target dimensions must be at least 1");
    BinaryMask out(out_w, out_h);
    for (int64_t y = 0; y < out_h; ++y) {
        const int64_t sy = detail::nearest_src_index(y, mask.height, out_h);
        for (int64_t x = 0; x < out_w; ++x)
            out.at(y, x) = mask.at(sy, detail::nearest_src_index(x, mask.width, out_w));
    }
    return out;
}

// Maps 8-bit intensities onto [0,1] as p/255.
inline GrayImage normalize(const GrayImage& img) {
    GrayImage out = img;
    for (float& p : out.pixels) p = p / 255.0f;
    return out;
}

// Pixelwise OR.
inline BinaryMask union_masks(const BinaryMask& a, const BinaryMask& b) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("union_masks dimension mismatch: " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
    BinaryMask out = a;
    for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (a.bits[i] | b.bits[i]) ? 1 : 0;
    return out;
}

// Binary dilation with a 3x3 square structuring element, applied
// `iterations` times. Out-of-bounds neighbors count as background.
inline BinaryMask dilate(const BinaryMask& mask, int64_t iterations = 1) {
    if (iterations < 1) throw UsageError("dilate requires at least one iteration");
    BinaryMask cur = mask;
    for (int64_t it = 0; it < iterations; ++it) {
        BinaryMask next(cur.width, cur.height);
        for (int64_t y = 0; y < cur.height; ++y)
            for (int64_t x = 0; x < cur.width; ++x) {
                uint8_t v = 0;
                for (int64_t dy = -1; dy <= 1 && !v; ++dy)
                    for (int64_t dx = -1; dx <= 1 && !v; ++dx) {
                        const int64_t ny = y + dy, nx = x + dx;
                        if (ny >= 0 && ny < cur.height && nx >= 0 && nx < cur.width && cur.at(ny, nx)) v = 1;
                    }
                next.at(y, x) = v;
            }
        cur = std::move(next);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// augmentation

struct AugmentParams {
    double zoom_range = 0.05;   // scale ~ U[1-z, 1+z] about the image center
    double shift_range = 0.05;  // translation ~ U[-s*dim, +s*dim] per axis
    double hflip_prob = 0.5;
};

struct AffineSample {
    double scale = 1.0;
    double dx = 0.0;
    double dy = 0.0;
    bool hflip = false;
};

// Draws one transform. Always consumes four variates so call sequences stay
// aligned regardless of the parameter values.
inline AffineSample sample_augment(Rng& rng, const AugmentParams& p, int64_t width, int64_t height) {
    AffineSample s;
    s.scale = rng.uniform(1.0 - p.zoom_range, 1.0 + p.zoom_range);
    s.dx = rng.uniform(-p.shift_range * static_cast<double>(width), p.shift_range * static_cast<double>(width));
    s.dy = rng.uniform(-p.shift_range * static_cast<double>(height), p.shift_range * static_cast<double>(height));
    s.hflip = rng.bernoulli(p.hflip_prob);
    return s;
}

// Applies one affine sample to an image/mask pair: bilinear with constant-0
// fill for the image, nearest with constant-0 fill for the mask.
inline std::pair<GrayImage, BinaryMask> apply_augment(const GrayImage& img, const BinaryMask& mask,
                                                      const AffineSample& s) {
    if (img.width != mask.width || img.height != mask.height)
        throw ShapeError("augment image/mask dimension mismatch");

    const double cx = static_cast<double>(img.width) / 2.0;
    const double cy = static_cast<double>(img.height) / 2.0;
    const double mirror = s.hflip ? -1.0 : 1.0;

    GrayImage out_img(img.width, img.height);
    BinaryMask out_mask(mask.width, mask.height);
    for (int64_t y = 0; y < img.height; ++y) {
        const double py = static_cast<double>(y) + 0.5;
        const double sy = cy + (py - cy - s.dy) / s.scale;
        for (int64_t x = 0; x < img.width; ++x) {
            const double px = static_cast<double>(x) + 0.5;
            const double sx = cx + mirror * (px - cx - s.dx) / s.scale;

            // image: bilinear, taps outside the raster contribute 0
            const double xf = sx - 0.5, yf = sy - 0.5;
            const int64_t x0 = static_cast<int64_t>(std::floor(xf));
            const int64_t y0 = static_cast<int64_t>(std::floor(yf));
            const double tx = xf - static_cast<double>(x0);
            const double ty = yf - static_cast<double>(y0);
            double acc = 0.0;
            for (int b = 0; b < 2; ++b)
                for (int a = 0; a < 2; ++a) {
                    const int64_t xi = x0 + a, yi = y0 + b;
                    if (xi < 0 || xi >= img.width || yi < 0 || yi >= img.height) continue;
                    const double wgt = (a ? tx : 1.0 - tx) * (b ? ty : 1.0 - ty);
                    acc += wgt * img.at(yi, xi);
                }
            out_img.at(y, x) = static_cast<float>(acc);

            // mask: nearest (containing cell), outside is background
            const int64_t mx = static_cast<int64_t>(std::floor(sx));
            const int64_t my = static_cast<int64_t>(std::floor(sy));
            out_mask.at(y, x) =
                (mx >= 0 && mx < mask.width && my >= 0 && my < mask.height) ? mask.at(my, mx) : 0;
        }
    }
    return {std::move(out_img), std::move(out_mask)};
}

inline std::pair<GrayImage, BinaryMask> augment(const GrayImage& img, const BinaryMask& mask, Rng& rng,
                                                const AugmentParams& params) {
    return apply_augment(img, mask, sample_augment(rng, params, img.width, img.height));
}

// Copies the radiograph and paints mask boundary pixels white; used for
// prediction overlays. Expects a normalized ([0,1]) image.
inline GrayImage draw_boundary_overlay(const GrayImage& img, const BinaryMask& mask) {
    if (img.width != mask.width || img.height != mask.height)
        throw ShapeError("overlay image/mask dimension mismatch");
    GrayImage out = img;
    for (int64_t y = 0; y < mask.height; ++y)
        for (int64_t x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x)) continue;
            bool boundary = false;
            const int64_t ns[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
            for (const auto& d : ns) {
                const int64_t ny = y + d[0], nx = x + d[1];
                if (ny < 0 || ny >= mask.height || nx < 0 || nx >= mask.width || !mask.at(ny, nx)) {
                    boundary = true;
                    break;
                }
            }
            if (boundary) out.at(y, x) = 1.0f;
        }
    return out;
}

}  // namespace lungseg
