#pragma once

// Dataset enumeration and the seeded synthetic multi-class corpus used for
// desk-scale experiments. Each class gets a distinct procedural texture
// (sinusoid + checker mixture); normal samples are jittered renders of it,
// anomalous samples carry exactly one injected defect plus a binary mask.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "maae/errors.hpp"
#include "maae/image.hpp"
#include "maae/rng.hpp"

namespace maae {

enum class Split { train, test };
enum class Label { normal, anomalous };

struct DatasetRecord {
    std::string image_path; // image or feature file, resolved
    int class_id = 0;
    Split split = Split::train;
    Label label = Label::normal;
    std::string mask_path; // empty when absent
};

struct DatasetIndex {
    std::vector<std::string> class_names;
    std::vector<DatasetRecord> records;
};

enum class AnomalyKind { patch_swap, intensity_blob, stripe_break };

struct SyntheticSpec {
    int num_classes = 3;
    std::size_t image_size = 64;
    std::uint64_t seed = 1234;
    int train_per_class = 20;
    int normal_test_per_class = 10;
    int anomaly_test_per_class = 10;
    std::vector<AnomalyKind> kinds = {AnomalyKind::patch_swap, AnomalyKind::intensity_blob,
                                      AnomalyKind::stripe_break};
    double channel_jitter = 0.25; // multiplicative per-channel lighting jitter
    double pixel_noise = 0.02;
    double shift_jitter = 3.0; // max texture translation in pixels
};

namespace detail {

struct ClassTexture {
    double fx, fy, phase_x, phase_y;
    double checker_period;
    double base[3], amp_sin[3], amp_checker[3];
};

inline ClassTexture make_texture(std::uint64_t seed, int class_id) {
    SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(class_id)));
    ClassTexture t;
    t.fx = rng.uniform(1.0, 3.0);
    t.fy = rng.uniform(1.0, 3.0);
    t.phase_x = rng.uniform();
    t.phase_y = rng.uniform();
    t.checker_period = rng.uniform(10.0, 20.0);
    for (int c = 0; c < 3; ++c) {
        t.base[c] = rng.uniform(0.35, 0.65);
        t.amp_sin[c] = rng.uniform(0.12, 0.25);
        t.amp_checker[c] = rng.uniform(0.06, 0.15);
    }
    return t;
}

inline double texture_value(const ClassTexture& t, int c, double y, double x, std::size_t size) {
    const double u = x / static_cast<double>(size);
    const double v = y / static_cast<double>(size);
    const double tau = 2.0 * 3.14159265358979323846;
    const double s = std::sin(tau * (t.fx * u + t.phase_x)) * std::cos(tau * (t.fy * v + t.phase_y));
    const int cell = static_cast<int>(std::floor(x / t.checker_period)) +
                     static_cast<int>(std::floor(y / t.checker_period));
    const double chk = (cell % 2 == 0) ? 1.0 : -1.0;
    return t.base[c] + t.amp_sin[c] * s + t.amp_checker[c] * chk;
}

inline Image render_normal(const ClassTexture& tex, const SyntheticSpec& spec, SplitMix64& rng) {
    const std::size_t s = spec.image_size;
    Image img{3, s, s, std::vector<float>(3 * s * s)};
    const double dx = rng.uniform(0.0, spec.shift_jitter);
    const double dy = rng.uniform(0.0, spec.shift_jitter);
    double gain[3];
    for (auto& g : gain) g = rng.uniform(1.0 - spec.channel_jitter, 1.0 + spec.channel_jitter);
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = texture_value(tex, c, static_cast<double>(y) + dy,
                                         static_cast<double>(x) + dx, s);
                v = gain[c] * v + spec.pixel_noise * rng.normal();
                img.at(static_cast<std::size_t>(c), y, x) =
                    static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    return img;
}

inline void inject_defect(Image& img, ByteGrid& mask, AnomalyKind kind,
                          const ClassTexture& foreign, const SyntheticSpec& spec,
                          SplitMix64& rng) {
    const std::size_t s = spec.image_size;
    mask = ByteGrid{s, s, std::vector<std::uint8_t>(s * s, 0)};
    switch (kind) {
    case AnomalyKind::patch_swap: {
        // contaminate a rectangle with another texture
        const std::size_t sz = static_cast<std::size_t>(rng.uniform(s / 4.0, s / 2.0));
        const std::size_t y0 = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(s - sz)));
        const std::size_t x0 = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(s - sz)));
        for (std::size_t j = 0; j < sz; ++j)
            for (std::size_t i = 0; i < sz; ++i) {
                for (int c = 0; c < 3; ++c) {
                    const double v = texture_value(foreign, c, static_cast<double>(y0 + j),
                                                   static_cast<double>(x0 + i), s);
                    img.at(static_cast<std::size_t>(c), y0 + j, x0 + i) =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
                mask.data[(y0 + j) * s + x0 + i] = 255;
            }
        break;
    }
    case AnomalyKind::intensity_blob: {
        const double r = rng.uniform(s / 6.0, s / 3.0);
        const double cy = rng.uniform(r, static_cast<double>(s) - r);
        const double cx = rng.uniform(r, static_cast<double>(s) - r);
        const double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.4, 0.6);
        const double sigma = r / 1.5;
        const int nch = rng.uniform() < 0.5 ? 1 : 3;
        const int ch0 = static_cast<int>(rng.uniform(0.0, 3.0)) % 3;
        const double cutoff = 2.0 / 255.0;
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                const double delta = amp * std::exp(-d2 / (2.0 * sigma * sigma));
                if (std::abs(delta) < cutoff) continue;
                for (int k = 0; k < nch; ++k) {
                    const auto c = static_cast<std::size_t>((ch0 + k) % 3);
                    img.at(c, y, x) = static_cast<float>(
                        std::clamp(static_cast<double>(img.at(c, y, x)) + delta, 0.0, 1.0));
                }
                mask.data[y * s + x] = 255;
            }
        break;
    }
    case AnomalyKind::stripe_break: {
        const bool horizontal = rng.uniform() < 0.5;
        const std::size_t thick = 4 + static_cast<std::size_t>(rng.uniform(0.0, 5.0));
        const std::size_t len = static_cast<std::size_t>(rng.uniform(s / 3.0, 2.0 * s / 3.0));
        const std::size_t a0 = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(s - thick)));
        const std::size_t b0 = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(s - len)));
        double mean = 0.0;
        for (std::size_t i = 0; i < 3 * s * s; ++i) mean += img.data[i];
        mean /= static_cast<double>(3 * s * s);
        const float fill = mean > 0.5 ? 0.06f : 0.94f;
        for (std::size_t u = 0; u < thick; ++u)
            for (std::size_t v = 0; v < len; ++v) {
                const std::size_t y = horizontal ? a0 + u : b0 + v;
                const std::size_t x = horizontal ? b0 + v : a0 + u;
                for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = fill;
                mask.data[y * s + x] = 255;
            }
        break;
    }
    }
}

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }
inline const char* label_name(Label l) { return l == Label::normal ? "normal" : "anomalous"; }

inline bool is_image_file(const std::filesystem::path& p) {
    static const char* exts[] = {".ppm", ".pgm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
    const auto e = p.extension().string();
    for (const char* x : exts)
        if (e == x) return true;
    return false;
}

} // namespace detail

/// Generate the synthetic corpus under `dir` (images/, masks/, manifest.tsv)
/// and return the resolved index. Fully deterministic in spec.seed.
inline DatasetIndex generate_synthetic_dataset(const SyntheticSpec& spec,
                                               const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (spec.num_classes < 1) throw ConfigError("synthetic dataset needs num_classes >= 1");
    if (spec.kinds.empty()) throw ConfigError("synthetic dataset needs at least one anomaly kind");
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    fs::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create dataset directories under " + dir.string());

    DatasetIndex index;
    std::ostringstream manifest;
    auto emit = [&](const std::string& rel_img, int cls, Split split, Label label,
                    const std::string& rel_mask) {
        DatasetRecord rec;
        rec.image_path = (dir / rel_img).string();
        rec.class_id = cls;
        rec.split = split;
        rec.label = label;
        if (!rel_mask.empty()) rec.mask_path = (dir / rel_mask).string();
        index.records.push_back(rec);
        manifest << rel_img << '\t' << index.class_names[cls] << '\t'
                 << detail::split_name(split) << '\t' << detail::label_name(label) << '\t'
                 << rel_mask << '\n';
    };

    for (int cls = 0; cls < spec.num_classes; ++cls)
        index.class_names.push_back("class" + std::to_string(cls));

    for (int cls = 0; cls < spec.num_classes; ++cls) {
        const auto tex = detail::make_texture(spec.seed, cls);
        const auto foreign = detail::make_texture(
            spec.seed, spec.num_classes > 1 ? (cls + 1) % spec.num_classes : cls + 7919);
        const std::string cname = index.class_names[cls];

        auto sample_rng = [&](int group, int idx) {
            return SplitMix64(mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(cls)),
                                       static_cast<std::uint64_t>(group) * 1000003u +
                                           static_cast<std::uint64_t>(idx)));
        };

        for (int i = 0; i < spec.train_per_class; ++i) {
            auto rng = sample_rng(0, i);
            const auto img = detail::render_normal(tex, spec, rng);
            const std::string rel = "images/" + cname + "_train_" + std::to_string(i) + ".ppm";
            write_ppm(dir / rel, img);
            emit(rel, cls, Split::train, Label::normal, "");
        }
        for (int i = 0; i < spec.normal_test_per_class; ++i) {
            auto rng = sample_rng(1, i);
            const auto img = detail::render_normal(tex, spec, rng);
            const std::string rel = "images/" + cname + "_test_good_" + std::to_string(i) + ".ppm";
            write_ppm(dir / rel, img);
            emit(rel, cls, Split::test, Label::normal, "");
        }
        for (int i = 0; i < spec.anomaly_test_per_class; ++i) {
            auto rng = sample_rng(2, i);
            auto img = detail::render_normal(tex, spec, rng);
            ByteGrid mask;
            const auto kind = spec.kinds[static_cast<std::size_t>(i) % spec.kinds.size()];
            detail::inject_defect(img, mask, kind, foreign, spec, rng);
            const std::string rel = "images/" + cname + "_test_anom_" + std::to_string(i) + ".ppm";
            const std::string rel_mask = "masks/" + cname + "_test_anom_" + std::to_string(i) + ".pgm";
            write_ppm(dir / rel, img);
            write_pgm(dir / rel_mask, mask);
            emit(rel, cls, Split::test, Label::anomalous, rel_mask);
        }
    }

    std::ofstream mf(dir / "manifest.tsv");
    if (!mf) throw IoError("cannot write manifest under " + dir.string());
    mf << manifest.str();
    return index;
}

namespace detail {

inline DatasetIndex load_tsv_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open manifest: " + file.string());
    const auto base = file.parent_path();
    DatasetIndex index;
    std::map<std::string, int> class_ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (;;) {
            const auto tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (cols.size() < 4)
            throw LayoutError("manifest line " + std::to_string(lineno) + ": expected at least 4 columns");
        DatasetRecord rec;
        rec.image_path = (base / cols[0]).string();
        auto [it, inserted] = class_ids.emplace(cols[1], static_cast<int>(index.class_names.size()));
        if (inserted) index.class_names.push_back(cols[1]);
        rec.class_id = it->second;
        if (cols[2] == "train") rec.split = Split::train;
        else if (cols[2] == "test") rec.split = Split::test;
        else throw LayoutError("manifest line " + std::to_string(lineno) + ": bad split '" + cols[2] + "'");
        if (cols[3] == "normal") rec.label = Label::normal;
        else if (cols[3] == "anomalous") rec.label = Label::anomalous;
        else throw LayoutError("manifest line " + std::to_string(lineno) + ": bad label '" + cols[3] + "'");
        if (cols.size() >= 5 && !cols[4].empty()) rec.mask_path = (base / cols[4]).string();
        if (rec.split == Split::train && rec.label == Label::anomalous)
            throw LayoutError("manifest line " + std::to_string(lineno) +
                              ": anomalous record in train split");
        index.records.push_back(std::move(rec));
    }
    return index;
}

inline DatasetIndex load_mvtec_layout(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    DatasetIndex index;
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "train")) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty())
        throw LayoutError("no <class>/train directories under " + root.string());

    auto sorted_images = [](const fs::path& dir) {
        std::vector<fs::path> out;
        if (!fs::exists(dir)) return out;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
        std::sort(out.begin(), out.end());
        return out;
    };

    for (const auto& cdir : class_dirs) {
        const int cls = static_cast<int>(index.class_names.size());
        index.class_names.push_back(cdir.filename().string());

        for (const auto& sub : fs::directory_iterator(cdir / "train")) {
            if (!sub.is_directory()) continue;
            if (sub.path().filename() != "good")
                throw LayoutError("train split of " + cdir.filename().string() +
                                  " contains non-good directory '" +
                                  sub.path().filename().string() + "'");
        }
        for (const auto& img : sorted_images(cdir / "train" / "good"))
            index.records.push_back({img.string(), cls, Split::train, Label::normal, ""});

        if (!fs::exists(cdir / "test")) continue;
        std::vector<fs::path> defect_dirs;
        for (const auto& sub : fs::directory_iterator(cdir / "test"))
            if (sub.is_directory()) defect_dirs.push_back(sub.path());
        std::sort(defect_dirs.begin(), defect_dirs.end());
        for (const auto& ddir : defect_dirs) {
            const bool good = ddir.filename() == "good";
            for (const auto& img : sorted_images(ddir)) {
                DatasetRecord rec{img.string(), cls, Split::test,
                                  good ? Label::normal : Label::anomalous, ""};
                if (!good) {
                    const auto gt_dir = cdir / "ground_truth" / ddir.filename();
                    const auto stem = img.stem().string();
                    for (const auto& m : sorted_images(gt_dir))
                        if (m.stem().string().rfind(stem, 0) == 0) {
                            rec.mask_path = m.string();
                            break;
                        }
                    if (rec.mask_path.empty())
                        throw MissingMask("no ground_truth mask for " + img.string());
                }
                index.records.push_back(std::move(rec));
            }
        }
    }
    return index;
}

} // namespace detail

/// Load a dataset index either from an explicit TSV manifest
/// (path<TAB>class<TAB>split<TAB>label<TAB>maskpath?) or from an MVTec-style
/// directory tree (class/train/good, class/test/<defect>, class/ground_truth).
inline DatasetIndex load_dataset_manifest(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw IoError("dataset path does not exist: " + path.string());
    if (fs::is_directory(path)) {
        if (fs::exists(path / "manifest.tsv")) return detail::load_tsv_manifest(path / "manifest.tsv");
        return detail::load_mvtec_layout(path);
    }
    return detail::load_tsv_manifest(path);
}

} // namespace maae
