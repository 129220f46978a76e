#pragma once

#include <functional>

#include "lungseg/ops.hpp"
#include "lungseg/tensor.hpp"

namespace lungseg {

// Compares the tape gradient of a scalar-valued function against central
// finite differences. Returns the max over elements of
//   |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
// Meant to run with T = double; float truncation error swamps the tolerance.
template <typename T>
T grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, T h) {
    Tape<T> tape;
    Tensor<T> tracked = x;
    tracked.tape = nullptr;
    tracked.node = -1;
    tape.track(tracked);

    Tensor<T> y = f(tracked);
    if (y.numel() != 1)
        throw UsageError("grad_check requires a scalar-valued function, got shape " + shape_str(y.shape));

    Tensor<T> analytic(x.shape);
    if (y.tracked()) {
        tape.backward(y);
        analytic = tape.grad(tracked);
    }

    auto eval = [&f](const Tensor<T>& probe) {
        Tensor<T> p = probe;
        p.tape = nullptr;
        p.node = -1;
        return f(p).scalar();
    };

    T worst = T(0);
    Tensor<T> probe = x;
    probe.tape = nullptr;
    probe.node = -1;
    for (size_t i = 0; i < probe.data.size(); ++i) {
        const T keep = probe.data[i];
        probe.data[i] = keep + h;
        const T fp = eval(probe);
        probe.data[i] = keep - h;
        const T fm = eval(probe);
        probe.data[i] = keep;

        const T numeric = (fp - fm) / (2 * h);
        const T a = analytic.data[i];
        const T err = std::abs(a - numeric) / std::max(T(1e-12), std::abs(a) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace lungseg
