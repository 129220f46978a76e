#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <thread>
#include <vector>

#include "lungseg/tensor.hpp"

namespace lungseg {

namespace detail {

inline int64_t worker_count() {
    static const int64_t n = [] {
        if (const char* env = std::getenv("LUNGSEG_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return std::min<int64_t>(v, 64);
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int64_t>(hw == 0 ? 1 : std::min(hw, 8u));
    }();
    return n;
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is owned
// by exactly one worker and processed in ascending order, so results do not
// depend on the thread count.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
    const int64_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        fn(int64_t(0), n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    const int64_t chunk = (n + workers - 1) / workers;
    for (int64_t w = 0; w < workers; ++w) {
        const int64_t b = w * chunk;
        const int64_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& t : pool) t.join();
}

// C[m x n] += A[m x k] * B[k x n], dense row-major. The k-middle loop makes
// the inner statement a contiguous axpy, which vectorizes without reordering
// the per-element accumulation (k ascending for every C[i][j]).
template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
    auto rows = [=](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            T* crow = c + i * n;
            const T* arow = a + i * k;
            for (int64_t kk = 0; kk < k; ++kk) {
                const T av = arow[kk];
                const T* brow = b + kk * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (m >= 2 && m * n * k >= (int64_t(1) << 21)) parallel_for(m, rows);
    else rows(0, m);
}

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* src, T* dst) {
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// Unrolls conv patches of one sample into col[(cin*kh*kw) x (oh*ow)], zero
// padding out-of-range taps.
template <typename T>
void im2col(const T* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* col) {
    int64_t row = 0;
    for (int64_t ci = 0; ci < cin; ++ci) {
        const T* plane = x + ci * h * w;
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj, ++row) {
                T* out_row = col + row * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t iy = oy * stride - pad + ki;
                    T* dst = out_row + oy * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = plane + iy * w;
                    if (stride == 1) {
                        const int64_t lo = std::max<int64_t>(0, pad - kj);
                        const int64_t hi = std::min<int64_t>(ow, w + pad - kj);
                        std::fill(dst, dst + std::min(lo, ow), T(0));
                        if (hi > lo) std::copy(src + (lo - pad + kj), src + (hi - pad + kj), dst + lo);
                        if (hi < ow) std::fill(dst + std::max(hi, int64_t(0)), dst + ow, T(0));
                    } else {
                        for (int64_t ox = 0; ox < ow; ++ox) {
                            const int64_t ix = ox * stride - pad + kj;
                            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Scatter-adds a col-format gradient back onto the input plane (adjoint of
// im2col).
template <typename T>
void col2im_add(const T* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* dx) {
    int64_t row = 0;
    for (int64_t ci = 0; ci < cin; ++ci) {
        T* plane = dx + ci * h * w;
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj, ++row) {
                const T* src_row = col + row * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = plane + iy * w;
                    const T* src = src_row + oy * ow;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-d convolution with zero padding. x: [N,Cin,H,W], w: [Cout,Cin,kh,kw],
// b: [Cout]. Output spatial dims follow (H + 2*pad - kh) / stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int64_t stride = 1, int64_t pad = 0) {
    if (x.shape.size() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_str(x.shape));
    if (w.shape.size() != 4) throw ShapeError("conv2d weight must be [Cout,Cin,kh,kw], got " + shape_str(w.shape));
    if (stride < 1) throw UsageError("conv2d stride must be positive");
    if (pad < 0) throw UsageError("conv2d pad must be non-negative");

    const int64_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const int64_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    if (w.shape[1] != cin)
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(cin) +
                         " channels, kernel expects " + std::to_string(w.shape[1]));
    if (b.shape.size() != 1 || b.shape[0] != cout)
        throw ShapeError("conv2d bias must be [Cout]=" + std::to_string(cout) + ", got " + shape_str(b.shape));
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw ShapeError("conv2d kernel larger than padded input");

    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (wd + 2 * pad - kw) / stride + 1;
    const int64_t k = cin * kh * kw;
    const int64_t p = oh * ow;

    Tensor<T> out({n, cout, oh, ow});
    std::vector<T> col(static_cast<size_t>(k * p));
    for (int64_t s = 0; s < n; ++s) {
        detail::im2col(x.data.data() + s * cin * h * wd, cin, h, wd, kh, kw, stride, pad, oh, ow, col.data());
        T* o = out.data.data() + s * cout * p;
        for (int64_t co = 0; co < cout; ++co) std::fill(o + co * p, o + (co + 1) * p, b.data[static_cast<size_t>(co)]);
        detail::gemm_nn(cout, p, k, w.data.data(), col.data(), o);
    }
    detail::check_finite("conv2d", out);

    Tape<T>* tape = detail::common_tape<T>({&x, &w, &b});
    if (tape == nullptr) return out;

    const int64_t xn = x.node, wn = w.node, bn = b.node;
    out.tape = tape;
    out.node = tape->emit(
        out.shape,
        [xd = x.data, wd_data = w.data, n, cin, h, wd, cout, kh, kw, stride, pad, oh, ow, k, p, xn, wn,
         bn](Tape<T>& tp, int64_t out_node) {
            const std::vector<T>& g = tp.grad_buffer(out_node);
            const bool want_x = tp.wants_grad(xn);
            const bool want_w = tp.wants_grad(wn);
            const bool want_b = tp.wants_grad(bn);
            if (!want_x && !want_w && !want_b) return;

            std::vector<T> col_buf, col_t, dcol, w_t;
            std::vector<T> dx, dw, db;
            if (want_x || want_w) col_buf.resize(static_cast<size_t>(k * p));
            if (want_w) {
                col_t.resize(static_cast<size_t>(p * k));
                dw.assign(wd_data.size(), T(0));
            }
            if (want_x) {
                dcol.resize(static_cast<size_t>(k * p));
                w_t.resize(static_cast<size_t>(k * cout));
                detail::transpose(cout, k, wd_data.data(), w_t.data());
                dx.assign(xd.size(), T(0));
            }
            if (want_b) db.assign(static_cast<size_t>(cout), T(0));

            for (int64_t s = 0; s < n; ++s) {
                const T* gs = g.data() + s * cout * p;
                if (want_x || want_w)
                    detail::im2col(xd.data() + s * cin * h * wd, cin, h, wd, kh, kw, stride, pad, oh, ow,
                                   col_buf.data());
                if (want_w) {
                    detail::transpose(k, p, col_buf.data(), col_t.data());
                    detail::gemm_nn(cout, k, p, gs, col_t.data(), dw.data());
                }
                if (want_b)
                    for (int64_t co = 0; co < cout; ++co) {
                        T acc = T(0);
                        const T* grow = gs + co * p;
                        for (int64_t i = 0; i < p; ++i) acc += grow[i];
                        db[static_cast<size_t>(co)] += acc;
                    }
                if (want_x) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_nn(k, p, cout, w_t.data(), gs, dcol.data());
                    detail::col2im_add(dcol.data(), cin, h, wd, kh, kw, stride, pad, oh, ow,
                                       dx.data() + s * cin * h * wd);
                }
            }
            if (want_x) tp.add_grad(xn, dx.data(), static_cast<int64_t>(dx.size()));
            if (want_w) tp.add_grad(wn, dw.data(), static_cast<int64_t>(dw.size()));
            if (want_b) tp.add_grad(bn, db.data(), static_cast<int64_t>(db.size()));
        });
    return out;
}

// 2x2 max pooling with stride 2. Ties go to the first element in row-major
// window order; the backward pass routes the gradient only to that element.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
    if (x.shape.size() != 4) throw ShapeError("max_pool2 input must be NCHW, got " + shape_str(x.shape));
    const int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("max_pool2 requires even spatial dims, got " + shape_str(x.shape));

    const int64_t oh = h / 2, ow = w / 2;
    Tensor<T> out({n, c, oh, ow});
    std::vector<int64_t> argmax(out.data.size());
    int64_t oi = 0;
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t plane = (s * c + ch) * h * w;
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
                    const int64_t base = plane + (2 * oy) * w + 2 * ox;
                    const int64_t cand[4] = {base, base + 1, base + w, base + w + 1};
                    int64_t best = cand[0];
                    T bv = x.data[static_cast<size_t>(best)];
                    for (int i = 1; i < 4; ++i) {
                        const T v = x.data[static_cast<size_t>(cand[i])];
                        if (v > bv) {
                            bv = v;
                            best = cand[i];
                        }
                    }
                    out.data[static_cast<size_t>(oi)] = bv;
                    argmax[static_cast<size_t>(oi)] = best;
                }
        }
    detail::check_finite("max_pool2", out);

    Tape<T>* tape = detail::common_tape<T>({&x});
    if (tape == nullptr) return out;

    const int64_t xn = x.node;
    out.tape = tape;
    out.node = tape->emit(out.shape, [arg = std::move(argmax), xn](Tape<T>& tp, int64_t out_node) {
        if (!tp.wants_grad(xn)) return;
        const std::vector<T>& g = tp.grad_buffer(out_node);
        std::vector<T>& dx = tp.grad_buffer_mut(xn);
        for (size_t i = 0; i < g.size(); ++i) dx[static_cast<size_t>(arg[i])] += g[i];
    });
    return out;
}

// Nearest-neighbor 2x upsampling: each pixel becomes a constant 2x2 block.
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    if (x.shape.size() != 4) throw ShapeError("upsample_nearest2 input must be NCHW, got " + shape_str(x.shape));
    const int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    Tensor<T> out({n, c, 2 * h, 2 * w});
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ch = 0; ch < c; ++ch) {
            const T* src = x.data.data() + (s * c + ch) * h * w;
            T* dst = out.data.data() + (s * c + ch) * 4 * h * w;
            for (int64_t y = 0; y < h; ++y) {
                T* row0 = dst + (2 * y) * 2 * w;
                for (int64_t xx = 0; xx < w; ++xx) {
                    const T v = src[y * w + xx];
                    row0[2 * xx] = v;
                    row0[2 * xx + 1] = v;
                }
                std::copy(row0, row0 + 2 * w, row0 + 2 * w);
            }
        }
    detail::check_finite("upsample_nearest2", out);

    Tape<T>* tape = detail::common_tape<T>({&x});
    if (tape == nullptr) return out;

    const int64_t xn = x.node;
    out.tape = tape;
    out.node = tape->emit(out.shape, [n, c, h, w, xn](Tape<T>& tp, int64_t out_node) {
        if (!tp.wants_grad(xn)) return;
        const std::vector<T>& g = tp.grad_buffer(out_node);
        std::vector<T>& dx = tp.grad_buffer_mut(xn);
        for (int64_t s = 0; s < n; ++s)
            for (int64_t ch = 0; ch < c; ++ch) {
                const T* gsrc = g.data() + (s * c + ch) * 4 * h * w;
                T* dst = dx.data() + (s * c + ch) * h * w;
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t xx = 0; xx < w; ++xx) {
                        const T* g0 = gsrc + (2 * y) * 2 * w + 2 * xx;
                        const T* g1 = g0 + 2 * w;
                        dst[y * w + xx] += ((g0[0] + g0[1]) + g1[0]) + g1[1];
                    }
            }
    });
    return out;
}

// Concatenates along the channel axis: channels of a first, then b.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.size() != 4 || b.shape.size() != 4)
        throw ShapeError("concat_channels inputs must be NCHW");
    if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3])
        throw ShapeError("concat_channels batch/spatial mismatch: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));

    const int64_t n = a.shape[0], ca = a.shape[1], cb = b.shape[1], h = a.shape[2], w = a.shape[3];
    const int64_t plane = h * w;
    Tensor<T> out({n, ca + cb, h, w});
    for (int64_t s = 0; s < n; ++s) {
        T* dst = out.data.data() + s * (ca + cb) * plane;
        std::copy(a.data.data() + s * ca * plane, a.data.data() + (s + 1) * ca * plane, dst);
        std::copy(b.data.data() + s * cb * plane, b.data.data() + (s + 1) * cb * plane, dst + ca * plane);
    }
    detail::check_finite("concat_channels", out);

    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    if (tape == nullptr) return out;

    const int64_t an = a.node, bn = b.node;
    out.tape = tape;
    out.node = tape->emit(out.shape, [n, ca, cb, plane, an, bn](Tape<T>& tp, int64_t out_node) {
        const std::vector<T>& g = tp.grad_buffer(out_node);
        if (tp.wants_grad(an)) {
            std::vector<T>& da = tp.grad_buffer_mut(an);
            for (int64_t s = 0; s < n; ++s) {
                const T* gs = g.data() + s * (ca + cb) * plane;
                T* dst = da.data() + s * ca * plane;
                for (int64_t i = 0; i < ca * plane; ++i) dst[i] += gs[i];
            }
        }
        if (tp.wants_grad(bn)) {
            std::vector<T>& db = tp.grad_buffer_mut(bn);
            for (int64_t s = 0; s < n; ++s) {
                const T* gs = g.data() + s * (ca + cb) * plane + ca * plane;
                T* dst = db.data() + s * cb * plane;
                for (int64_t i = 0; i < cb * plane; ++i) dst[i] += gs[i];
            }
        }
    });
    return out;
}

enum class Activation { relu, sigmoid };

// Elementwise activation. relu' is 0 at x = 0.
template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
    if (kind != Activation::relu && kind != Activation::sigmoid)
        throw UsageError("unknown activation kind");

    Tensor<T> out(x.shape);
    if (kind == Activation::relu) {
        for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    } else {
        for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
    }
    detail::check_finite(kind == Activation::relu ? "relu" : "sigmoid", out);

    Tape<T>* tape = detail::common_tape<T>({&x});
    if (tape == nullptr) return out;

    const int64_t xn = x.node;
    out.tape = tape;
    if (kind == Activation::relu) {
        std::vector<uint8_t> positive(x.data.size());
        for (size_t i = 0; i < x.data.size(); ++i) positive[i] = x.data[i] > T(0) ? 1 : 0;
        out.node = tape->emit(out.shape, [mask = std::move(positive), xn](Tape<T>& tp, int64_t out_node) {
            if (!tp.wants_grad(xn)) return;
            const std::vector<T>& g = tp.grad_buffer(out_node);
            std::vector<T>& dx = tp.grad_buffer_mut(xn);
            for (size_t i = 0; i < g.size(); ++i)
                if (mask[i]) dx[i] += g[i];
        });
    } else {
        out.node = tape->emit(out.shape, [s = out.data, xn](Tape<T>& tp, int64_t out_node) {
            if (!tp.wants_grad(xn)) return;
            const std::vector<T>& g = tp.grad_buffer(out_node);
            std::vector<T>& dx = tp.grad_buffer_mut(xn);
            for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * s[i] * (T(1) - s[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return activation(x, Activation::relu);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return activation(x, Activation::sigmoid);
}

// Sum of all elements, as a scalar tensor of shape (1).
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out({1});
    T acc = T(0);
    for (const T& v : x.data) acc += v;
    out.data[0] = acc;
    detail::check_finite("sum", out);

    Tape<T>* tape = detail::common_tape<T>({&x});
    if (tape == nullptr) return out;

    const int64_t xn = x.node;
    out.tape = tape;
    out.node = tape->emit(out.shape, [xn](Tape<T>& tp, int64_t out_node) {
        if (!tp.wants_grad(xn)) return;
        const T g = tp.grad_buffer(out_node)[0];
        std::vector<T>& dx = tp.grad_buffer_mut(xn);
        for (T& v : dx) v += g;
    });
    return out;
}

}  // namespace lungseg
