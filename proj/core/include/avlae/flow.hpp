#pragma once

// Frozen, differentiable optical flow. A fixed number of Horn-Schunck
// iterations minimizes brightness-constancy + smoothness energy on
// grayscale-converted, average-pooled frames. Every arithmetic step is a
// graph operation, so gradients reach the input video; the operator itself
// owns no trainable parameters.
//
// Output is [2, T-1, H/s, W/s]: channel 0 holds u (horizontal displacement,
// +x to the right), channel 1 holds v (vertical, +y downward), both in pixels
// at the pooled resolution. Field t maps frame t onto frame t+1.

#include <cstdint>
#include <stdexcept>

#include "avlae/tensor.hpp"

namespace avlae {

struct FlowParams {
    std::int64_t iterations = 20;
    double smoothness = 0.5;  // the alpha of the Horn-Schunck energy; alpha^2 weights the smoothness term
    std::int64_t scale = 8;   // spatial pooling factor applied before solving
};

namespace detail {

// Derivative and averaging stencils of the classic Horn-Schunck scheme;
// constants, so gradients flow only through the image operand.
template <typename T>
TensorPtr<T> hs_kernel_x() {
    return TensorT<T>::make({1, 1, 2, 2}, {T(-0.25), T(0.25), T(-0.25), T(0.25)});
}

template <typename T>
TensorPtr<T> hs_kernel_y() {
    return TensorT<T>::make({1, 1, 2, 2}, {T(-0.25), T(-0.25), T(0.25), T(0.25)});
}

template <typename T>
TensorPtr<T> hs_kernel_avg4() {
    return TensorT<T>::make({1, 1, 2, 2}, {T(0.25), T(0.25), T(0.25), T(0.25)});
}

template <typename T>
TensorPtr<T> hs_kernel_neighborhood() {
    const T c = T(1) / T(12), e = T(1) / T(6);
    return TensorT<T>::make({1, 1, 3, 3}, {c, e, c, e, T(0), e, c, e, c});
}

// 2x2 stencil with replicate extension on the +1 sides, matching the
// original scheme's boundary handling.
template <typename T>
TensorPtr<T> stencil(const TensorPtr<T>& img, const TensorPtr<T>& kernel) {
    return conv2d(pad2d(img, std::int64_t(0), std::int64_t(1), std::int64_t(0), std::int64_t(1),
                        PadMode::kReplicate),
                  kernel, std::int64_t(1), std::int64_t(0));
}

}  // namespace detail

/// Luminance conversion [3, T, H, W] -> [1, T, H, W] with fixed weights.
template <typename T>
TensorPtr<T> to_grayscale(const TensorPtr<T>& video) {
    if (video->shape.size() != 4 || video->shape[0] != 3) {
        throw std::invalid_argument("to_grayscale: expected [3, T, H, W], got " + shape_str(video->shape));
    }
    auto r = slice(video, 0, 0, 1);
    auto g = slice(video, 0, 1, 1);
    auto b = slice(video, 0, 2, 1);
    return add(add(scale(r, T(0.299)), scale(g, T(0.587))), scale(b, T(0.114)));
}

/// Average pooling by an integer factor on H and W, all channels.
template <typename T>
TensorPtr<T> avg_pool2d(const TensorPtr<T>& x, std::int64_t factor) {
    if (factor == 1) return x;
    if (x->shape.size() != 4) throw std::invalid_argument("avg_pool2d: input must be [C, T, H, W]");
    const std::int64_t C = x->shape[0];
    if (x->shape[2] % factor != 0 || x->shape[3] % factor != 0) {
        throw std::invalid_argument("avg_pool2d: factor " + std::to_string(factor) +
                                    " does not divide " + shape_str(x->shape));
    }
    if (C == 1) {
        auto k = TensorT<T>::full({1, 1, factor, factor}, T(1) / static_cast<T>(factor * factor));
        return conv2d(x, k, factor, std::int64_t(0));
    }
    std::vector<TensorPtr<T>> pooled;
    for (std::int64_t c = 0; c < C; ++c) {
        auto k = TensorT<T>::full({1, 1, factor, factor}, T(1) / static_cast<T>(factor * factor));
        pooled.push_back(conv2d(slice(x, 0, c, 1), k, factor, std::int64_t(0)));
    }
    return concat(pooled, 0);
}

/// Horn-Schunck flow for every consecutive frame pair of a [3, T, H, W] video.
template <typename T>
TensorPtr<T> estimate_flow(const TensorPtr<T>& video, const FlowParams& params) {
    if (video->shape.size() != 4) throw std::invalid_argument("estimate_flow: video must be [3, T, H, W]");
    const std::int64_t Tn = video->shape[1], H = video->shape[2], W = video->shape[3];
    if (Tn < 2) throw std::invalid_argument("estimate_flow: need at least 2 frames, got " + std::to_string(Tn));
    if (params.scale < 1 || H % params.scale != 0 || W % params.scale != 0) {
        throw std::invalid_argument("estimate_flow: scale " + std::to_string(params.scale) +
                                    " does not divide " + std::to_string(H) + "x" + std::to_string(W));
    }
    if (params.iterations < 1) throw std::invalid_argument("estimate_flow: iterations must be >= 1");

    auto gray = avg_pool2d(to_grayscale(video), params.scale);  // [1, T, h, w]
    // Pair frames: a_t flows onto b_t = a_{t+1}. The pair index rides the T axis.
    auto a = slice(gray, 1, 0, Tn - 1);
    auto b = slice(gray, 1, 1, Tn - 1);

    auto kx = detail::hs_kernel_x<T>();
    auto ky = detail::hs_kernel_y<T>();
    auto kt = detail::hs_kernel_avg4<T>();
    auto ex = add(detail::stencil(a, kx), detail::stencil(b, kx));
    auto ey = add(detail::stencil(a, ky), detail::stencil(b, ky));
    auto et = detail::stencil(sub(b, a), kt);

    const T alpha2 = static_cast<T>(params.smoothness * params.smoothness);
    auto denom = add_scalar(add(square(ex), square(ey)), alpha2);

    auto u = TensorT<T>::zeros(ex->shape);
    auto v = TensorT<T>::zeros(ex->shape);
    auto navg = detail::hs_kernel_neighborhood<T>();
    for (std::int64_t it = 0; it < params.iterations; ++it) {
        auto ubar = conv2d(pad2d(u, std::int64_t(1), std::int64_t(1), std::int64_t(1), std::int64_t(1),
                                 PadMode::kReplicate),
                           navg, std::int64_t(1), std::int64_t(0));
        auto vbar = conv2d(pad2d(v, std::int64_t(1), std::int64_t(1), std::int64_t(1), std::int64_t(1),
                                 PadMode::kReplicate),
                           navg, std::int64_t(1), std::int64_t(0));
        auto rate = div(add(add(mul(ex, ubar), mul(ey, vbar)), et), denom);
        u = sub(ubar, mul(ex, rate));
        v = sub(vbar, mul(ey, rate));
    }
    return concat<T>({u, v}, 0);  // [2, T-1, h, w]
}

}  // namespace avlae
