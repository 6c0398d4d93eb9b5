#pragma once

// Anomaly maps and scores from reconstruction residuals, plus AUROC
// evaluation. The map is the per-token channel-wise Euclidean residual norm,
// bilinearly upsampled (aligned corners) to image resolution; the image
// score is its maximum.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "maae/errors.hpp"
#include "maae/ffm.hpp"
#include "maae/image.hpp"
#include "maae/tensor.hpp"

namespace maae {

struct AnomalyMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values; // nonnegative, height * width
    std::string image_id;
};

template <typename T>
AnomalyMap anomaly_map(const Tensor<T>& y, const Tensor<T>& x_ref, std::size_t grid_h,
                       std::size_t grid_w, std::size_t out_h, std::size_t out_w) {
    if (y.shape() != x_ref.shape())
        throw ShapeMismatch("anomaly_map: " + shape_str(y.shape()) + " vs " +
                            shape_str(x_ref.shape()));
    if (y.rank() != 2 || y.dim(0) != grid_h * grid_w)
        throw ShapeMismatch("anomaly_map: tokens do not match grid");
    if (out_h < grid_h || out_w < grid_w)
        throw ShapeMismatch("anomaly_map: output resolution below grid resolution");
    const std::size_t n = y.dim(0), c = y.dim(1);
    std::vector<T> token_norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        T s{0};
        for (std::size_t j = 0; j < c; ++j) {
            const T d = y.values()[i * c + j] - x_ref.values()[i * c + j];
            s += d * d;
        }
        token_norms[i] = std::sqrt(s);
    }
    auto up = detail::bilinear_resize(token_norms.data(), grid_h, grid_w, out_h, out_w);
    AnomalyMap map;
    map.height = out_h;
    map.width = out_w;
    map.values.assign(up.begin(), up.end());
    return map;
}

inline float anomaly_score(const AnomalyMap& map) {
    if (map.values.empty()) throw EmptyMap("anomaly_score on empty map");
    return *std::max_element(map.values.begin(), map.values.end());
}

/// AUROC via the Mann-Whitney U statistic with midrank tie handling.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeMismatch("auroc: score/label sizes differ");
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += (l == 1);
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DegenerateLabels("auroc needs both classes present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0; // ranks are 1-based
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Pools every pixel of every map into one score/label set. Masks mark
/// anomalous pixels; normal images contribute all-negative pixels.
inline double pixel_auroc(const std::vector<AnomalyMap>& maps,
                          const std::vector<ByteGrid>& masks) {
    if (maps.size() != masks.size())
        throw ShapeMismatch("pixel_auroc: map/mask counts differ");
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].height != masks[i].height || maps[i].width != masks[i].width)
            throw ShapeMismatch("pixel_auroc: map and mask dims differ for image " +
                                std::to_string(i));
        for (std::size_t p = 0; p < maps[i].values.size(); ++p) {
            scores.push_back(static_cast<double>(maps[i].values[p]));
            labels.push_back(masks[i].data[p] > 127 ? 1 : 0);
        }
    }
    return auroc(scores, labels);
}

/// 8-bit grayscale PGM, min-max normalized per map. A constant map emits
/// mid-gray 128.
inline void emit_heatmap(const AnomalyMap& map, const std::filesystem::path& path) {
    if (map.values.empty()) throw EmptyMap("emit_heatmap on empty map");
    const auto [mn_it, mx_it] = std::minmax_element(map.values.begin(), map.values.end());
    const float mn = *mn_it, mx = *mx_it;
    ByteGrid g{map.height, map.width, std::vector<std::uint8_t>(map.values.size())};
    if (mx == mn) {
        std::fill(g.data.begin(), g.data.end(), std::uint8_t{128});
    } else {
        for (std::size_t i = 0; i < map.values.size(); ++i)
            g.data[i] = static_cast<std::uint8_t>(
                std::lround((map.values[i] - mn) / (mx - mn) * 255.f));
    }
    write_pgm(path, g);
}

// ---------------------------------------------------------------------------
// evaluation report
// ---------------------------------------------------------------------------

struct ClassResult {
    std::string class_name;
    double image_auroc = 0.0;
    double pixel_auroc = 0.0;
    std::size_t test_images = 0;
};

struct EvalReport {
    std::vector<ClassResult> per_class;
    double avg_image_auroc = 0.0;
    double avg_pixel_auroc = 0.0;
    std::size_t total_test_images = 0;
    std::string config_digest;

    void finalize() {
        avg_image_auroc = 0.0;
        avg_pixel_auroc = 0.0;
        total_test_images = 0;
        for (const auto& c : per_class) {
            avg_image_auroc += c.image_auroc;
            avg_pixel_auroc += c.pixel_auroc;
            total_test_images += c.test_images;
        }
        if (!per_class.empty()) {
            avg_image_auroc /= static_cast<double>(per_class.size());
            avg_pixel_auroc /= static_cast<double>(per_class.size());
        }
    }

    std::string to_text() const {
        std::ostringstream os;
        char buf[64];
        for (const auto& c : per_class) {
            std::snprintf(buf, sizeof buf, "%.6f\t%.6f", c.image_auroc, c.pixel_auroc);
            os << c.class_name << '\t' << buf << '\n';
        }
        std::snprintf(buf, sizeof buf, "%.6f\t%.6f", avg_image_auroc, avg_pixel_auroc);
        os << "average\t" << buf << '\n';
        return os.str();
    }
};

} // namespace maae
