#pragma once

// Binary container formats.
//
// MAAF (feature stacks):  magic "MAAF", u16 version=1, u16 num_stages,
//   per stage u32 C,H,W followed by C*H*W little-endian float32 row-major,
//   then CRC32 of everything between the 8-byte header and the checksum.
//
// MAAC (checkpoints): magic "MAAC", u16 version=1, u32 num_params,
//   per param u16 name_len + name, u32 rank, u32 dims[rank], float32 values,
//   then CRC32 of the parameter table. Same conventions as MAAF.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "maae/errors.hpp"
#include "maae/tensor.hpp"

namespace maae {

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len,
                           std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
    std::vector<std::uint8_t> bytes;
    void u16(std::uint16_t v) {
        bytes.push_back(static_cast<std::uint8_t>(v & 0xFF));
        bytes.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
};

struct ByteReader {
    const std::uint8_t* p;
    std::size_t remaining;
    const char* what;

    void need(std::size_t n) const {
        if (remaining < n) throw TruncatedFile(std::string(what) + ": file ends early");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        remaining -= 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        remaining -= 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void raw(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, p, n);
        p += n;
        remaining -= n;
    }
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open: " + path.string());
    const auto sz = static_cast<std::size_t>(in.tellg());
    std::vector<std::uint8_t> buf(sz);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sz));
    if (!in) throw IoError("read failed: " + path.string());
    return buf;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace detail

// ---------------------------------------------------------------------------
// MAAF feature files
// ---------------------------------------------------------------------------

/// Per-stage backbone feature maps for one image, stage s shaped C_s x H_s x W_s.
template <typename T>
struct FeatureStack {
    std::vector<Tensor<T>> stages;
    std::string image_id;
    int class_id = -1;
};

/// Enforce the 4-stage pyramid contract: halving spatial dims, non-decreasing
/// channel counts.
template <typename T>
void validate_stack(const FeatureStack<T>& stack) {
    if (stack.stages.size() != 4)
        throw ShapeMismatch("feature stack must have exactly 4 stages, got " +
                            std::to_string(stack.stages.size()));
    for (std::size_t s = 0; s < 4; ++s) {
        if (stack.stages[s].rank() != 3)
            throw RankError("stage " + std::to_string(s) + " must be CxHxW");
        if (s > 0) {
            const auto& lo = stack.stages[s - 1];
            const auto& hi = stack.stages[s];
            if (hi.dim(1) * 2 != lo.dim(1) || hi.dim(2) * 2 != lo.dim(2))
                throw ShapeMismatch("stage " + std::to_string(s) +
                                    " spatial dims are not exactly half of stage " +
                                    std::to_string(s - 1));
            if (hi.dim(0) < lo.dim(0))
                throw ShapeMismatch("stage channel counts must be non-decreasing");
        }
    }
}

template <typename T>
void save_feature_file(const FeatureStack<T>& stack, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.raw("MAAF", 4);
    w.u16(1);
    w.u16(static_cast<std::uint16_t>(stack.stages.size()));
    const std::size_t payload_start = w.bytes.size();
    for (const auto& stage : stack.stages) {
        w.u32(static_cast<std::uint32_t>(stage.dim(0)));
        w.u32(static_cast<std::uint32_t>(stage.dim(1)));
        w.u32(static_cast<std::uint32_t>(stage.dim(2)));
        for (T v : stage.values()) w.f32(static_cast<float>(v));
    }
    w.u32(detail::crc32(w.bytes.data() + payload_start, w.bytes.size() - payload_start));
    detail::write_file(path, w.bytes);
}

inline FeatureStack<float> load_feature_file(const std::filesystem::path& path) {
    const auto buf = detail::read_file(path);
    detail::ByteReader r{buf.data(), buf.size(), "MAAF"};
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "MAAF", 4) != 0) throw BadMagic("not a MAAF file: " + path.string());
    const auto version = r.u16();
    if (version != 1) throw VersionMismatch("MAAF version " + std::to_string(version));
    const auto num_stages = r.u16();
    const std::uint8_t* payload = r.p;
    FeatureStack<float> stack;
    for (std::uint16_t s = 0; s < num_stages; ++s) {
        const std::size_t c = r.u32(), h = r.u32(), w = r.u32();
        r.need(c * h * w * 4);
        std::vector<float> vals(c * h * w);
        for (auto& v : vals) v = r.f32();
        stack.stages.push_back(Tensor<float>::from({c, h, w}, std::move(vals)));
    }
    const std::size_t payload_len = static_cast<std::size_t>(r.p - payload);
    const auto stored = r.u32();
    if (detail::crc32(payload, payload_len) != stored)
        throw ChecksumMismatch("MAAF checksum failed: " + path.string());
    stack.image_id = path.stem().string();
    return stack;
}

// ---------------------------------------------------------------------------
// MAAC checkpoints
// ---------------------------------------------------------------------------

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void save_checkpoint(const NamedParams<T>& params, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.raw("MAAC", 4);
    w.u16(1);
    w.u32(static_cast<std::uint32_t>(params.size()));
    const std::size_t payload_start = w.bytes.size();
    for (const auto& [name, tensor] : params) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.raw(name.data(), name.size());
        w.u32(static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (T v : tensor.values()) w.f32(static_cast<float>(v));
    }
    w.u32(detail::crc32(w.bytes.data() + payload_start, w.bytes.size() - payload_start));
    detail::write_file(path, w.bytes);
}

inline NamedParams<float> load_checkpoint(const std::filesystem::path& path) {
    const auto buf = detail::read_file(path);
    detail::ByteReader r{buf.data(), buf.size(), "MAAC"};
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "MAAC", 4) != 0) throw BadMagic("not a MAAC file: " + path.string());
    const auto version = r.u16();
    if (version != 1) throw VersionMismatch("MAAC version " + std::to_string(version));
    const auto count = r.u32();
    const std::uint8_t* payload = r.p;
    NamedParams<float> params;
    params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.u16();
        std::string name(name_len, '\0');
        r.raw(name.data(), name_len);
        const auto rank = r.u32();
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        std::vector<float> vals(shape_numel(shape));
        r.need(vals.size() * 4);
        for (auto& v : vals) v = r.f32();
        params.emplace_back(std::move(name), Tensor<float>::from(std::move(shape), std::move(vals)));
    }
    const std::size_t payload_len = static_cast<std::size_t>(r.p - payload);
    const auto stored = r.u32();
    if (detail::crc32(payload, payload_len) != stored)
        throw ChecksumMismatch("MAAC checksum failed: " + path.string());
    return params;
}

/// Copy checkpoint values into an existing parameter set, matching by name
/// and shape.
template <typename T>
void apply_checkpoint(const NamedParams<float>& loaded, NamedParams<T>& params) {
    if (loaded.size() != params.size())
        throw CheckpointMismatch("checkpoint has " + std::to_string(loaded.size()) +
                                 " parameters, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (loaded[i].first != params[i].first)
            throw CheckpointMismatch("parameter name mismatch: " + loaded[i].first + " vs " +
                                     params[i].first);
        if (loaded[i].second.shape() != params[i].second.shape())
            throw CheckpointMismatch("shape mismatch for " + loaded[i].first + ": " +
                                     shape_str(loaded[i].second.shape()) + " vs " +
                                     shape_str(params[i].second.shape()));
        auto dst = params[i].second.values_mut();
        const auto src = loaded[i].second.values();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
    }
}

} // namespace maae
