#pragma once

// Minimal binary PPM (P6) / PGM (P5) reader-writer. Images are planar CHW
// float in [0,1]; masks are single-channel byte grids.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "maae/errors.hpp"

namespace maae {

struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data; // planar, channels * height * width

    float& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }
    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }
};

struct ByteGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

inline std::size_t read_pnm_int(std::istream& in) {
    skip_pnm_space(in);
    std::size_t v = 0;
    if (!(in >> v)) throw IoError("malformed PNM header");
    return v;
}

inline std::uint8_t quantize(float v) {
    const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return static_cast<std::uint8_t>(std::lround(c * 255.f));
}

} // namespace detail

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> row(img.width * 3);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                row[x * 3 + c] = detail::quantize(img.at(c, y, x));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '6') throw IoError("not a P6 PPM: " + path.string());
    const std::size_t w = detail::read_pnm_int(in);
    const std::size_t h = detail::read_pnm_int(in);
    const std::size_t maxval = detail::read_pnm_int(in);
    if (maxval != 255) throw IoError("unsupported PPM maxval in " + path.string());
    in.get(); // single whitespace after header
    Image img{3, h, w, std::vector<float>(3 * h * w)};
    std::vector<std::uint8_t> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw IoError("truncated PPM: " + path.string());
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(row[x * 3 + c]) / 255.f;
    }
    return img;
}

inline void write_pgm(const std::filesystem::path& path, const ByteGrid& g) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << "P5\n" << g.width << " " << g.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(g.data.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline ByteGrid read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw IoError("not a P5 PGM: " + path.string());
    const std::size_t w = detail::read_pnm_int(in);
    const std::size_t h = detail::read_pnm_int(in);
    const std::size_t maxval = detail::read_pnm_int(in);
    if (maxval != 255) throw IoError("unsupported PGM maxval in " + path.string());
    in.get();
    ByteGrid g{h, w, std::vector<std::uint8_t>(h * w)};
    in.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(g.data.size()));
    if (!in) throw IoError("truncated PGM: " + path.string());
    return g;
}

} // namespace maae
