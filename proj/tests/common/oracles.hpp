#pragma once

// Brute-force reference implementations used only by tests. These stay
// deliberately naive (plain nested loops, no shared code with the library
// kernels) so they remain an independent route to the same numbers.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// c[m x n] = a[m x k] * b[k x n], triple loop.
template <typename T>
std::vector<T> matmul(const std::vector<T>& a, const std::vector<T>& b,
                      std::size_t m, std::size_t k, std::size_t n) {
    std::vector<T> c(m * n, T{0});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc{0};
            for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[l * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

template <typename T>
std::vector<T> softmax_rows(const std::vector<T>& x, std::size_t m, std::size_t n) {
    std::vector<T> y(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        T mx = x[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
        T sum{0};
        for (std::size_t j = 0; j < n; ++j) {
            y[i * n + j] = std::exp(x[i * n + j] - mx);
            sum += y[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] /= sum;
    }
    return y;
}

// Cross-correlation with stride/dilation/zero-padding, quintuple loop.
template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, std::size_t c_in, std::size_t h, std::size_t w,
                      const std::vector<T>& k, std::size_t c_out, std::size_t kh, std::size_t kw,
                      int stride, int dilation, int padding,
                      std::size_t* h_out_p = nullptr, std::size_t* w_out_p = nullptr) {
    const std::size_t h_out =
        static_cast<std::size_t>((static_cast<long>(h) + 2 * padding - dilation * (static_cast<long>(kh) - 1) - 1) / stride) + 1;
    const std::size_t w_out =
        static_cast<std::size_t>((static_cast<long>(w) + 2 * padding - dilation * (static_cast<long>(kw) - 1) - 1) / stride) + 1;
    if (h_out_p) *h_out_p = h_out;
    if (w_out_p) *w_out_p = w_out;
    std::vector<T> y(c_out * h_out * w_out, T{0});
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t oh = 0; oh < h_out; ++oh)
            for (std::size_t ow = 0; ow < w_out; ++ow) {
                T acc{0};
                for (std::size_t ci = 0; ci < c_in; ++ci)
                    for (std::size_t u = 0; u < kh; ++u)
                        for (std::size_t v = 0; v < kw; ++v) {
                            const long iy = static_cast<long>(oh) * stride - padding +
                                            static_cast<long>(u) * dilation;
                            const long ix = static_cast<long>(ow) * stride - padding +
                                            static_cast<long>(v) * dilation;
                            if (iy < 0 || iy >= static_cast<long>(h) || ix < 0 ||
                                ix >= static_cast<long>(w))
                                continue;
                            acc += x[(ci * h + iy) * w + ix] *
                                   k[((co * c_in + ci) * kh + u) * kw + v];
                        }
                y[(co * h_out + oh) * w_out + ow] = acc;
            }
    return y;
}

// Single-head scaled dot-product attention with output projection,
// everything written as explicit loops.
template <typename T>
std::vector<T> attention(const std::vector<T>& x, std::size_t m, std::size_t k,
                         const std::vector<T>& wq, const std::vector<T>& wk,
                         const std::vector<T>& wv, const std::vector<T>& wo) {
    auto q = matmul(x, wq, m, k, k);
    auto kk = matmul(x, wk, m, k, k);
    auto v = matmul(x, wv, m, k, k);
    std::vector<T> scores(m * m);
    const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(k));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            T acc{0};
            for (std::size_t l = 0; l < k; ++l) acc += q[i * k + l] * kk[j * k + l];
            scores[i * m + j] = acc * inv_sqrt;
        }
    auto p = softmax_rows(scores, m, m);
    auto ctx = matmul(p, v, m, m, k);
    return matmul(ctx, wo, m, k, k);
}

// AUROC by direct pairwise comparison, O(n0 * n1).
inline double auroc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1) continue;
        ++n_pos;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] == 1) continue;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    for (int l : labels) n_neg += (l != 1);
    return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

} // namespace oracle
