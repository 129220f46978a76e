#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "lungseg/image.hpp"
#include "lungseg/rng.hpp"

namespace lungseg {

// Synthetic chest-phantom generator for desk-scale verification: two dark
// elliptical "lung" fields on a brighter background with horizontal stripe
// structure and Gaussian noise. The mask is the exact union of the two
// ellipses (evaluated at pixel centers), and by construction covers between
// 10% and 60% of the frame. Image values are clamped to [0,1].
inline std::pair<GrayImage, BinaryMask> synth_phantom(Rng& rng, int64_t size) {
    if (size < 32) throw UsageError("synth_phantom requires size >= 32");

    const double w = static_cast<double>(size);
    const double h = static_cast<double>(size);

    struct Ellipse {
        double cx, cy, a, b;
    };
    auto draw_ellipse = [&](double cx_lo, double cx_hi) {
        Ellipse e;
        e.cx = rng.uniform(cx_lo, cx_hi) * w;
        e.cy = rng.uniform(0.48, 0.56) * h;
        e.a = rng.uniform(0.11, 0.15) * w;  // centers/axes keep the lungs disjoint
        e.b = rng.uniform(0.20, 0.30) * h;
        return e;
    };
    const Ellipse lungs[2] = {draw_ellipse(0.26, 0.32), draw_ellipse(0.68, 0.74)};

    const double background = 0.70 + rng.uniform(-0.05, 0.05);
    const double lung_value = 0.22 + rng.uniform(-0.05, 0.05);
    const double stripe_amp = 0.05;
    const double stripe_freq = rng.uniform(3.0, 5.0);
    const double stripe_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);

    GrayImage img(size, size);
    BinaryMask mask(size, size);
    for (int64_t y = 0; y < size; ++y) {
        const double py = static_cast<double>(y) + 0.5;
        const double stripe =
            stripe_amp * std::sin(2.0 * 3.14159265358979323846 * stripe_freq * py / h + stripe_phase);
        for (int64_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) + 0.5;
            bool inside = false;
            for (const Ellipse& e : lungs) {
                const double u = (px - e.cx) / e.a;
                const double v = (py - e.cy) / e.b;
                if (u * u + v * v <= 1.0) {
                    inside = true;
                    break;
                }
            }
            mask.at(y, x) = inside ? 1 : 0;
            double value = (inside ? lung_value : background) + stripe + 0.05 * rng.normal();
            img.at(y, x) = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
    }
    return {std::move(img), std::move(mask)};
}

}  // namespace lungseg
