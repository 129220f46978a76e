#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lungseg/errors.hpp"
#include "lungseg/unet.hpp"

namespace lungseg {

namespace detail {

// Checkpoint integers are little-endian on disk regardless of host order.
inline void put_u16(std::ostream& os, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

inline void read_exact(std::istream& is, void* dst, size_t n) {
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) throw FormatError("truncated checkpoint file");
}

inline uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    read_exact(is, b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    read_exact(is, b, 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline float get_f32(std::istream& is) {
    const uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'L', 'S', 'E', 'G'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Layout: magic "LSEG", u32 version, five u32 config fields (in, out, depth,
// base, input_size), u32 parameter count, then per parameter: u16 name
// length + UTF-8 name, u8 rank, u32 dims, raw f32 data. All little-endian.
template <typename T>
void save_checkpoint(const ParamStore<T>& params, const UNetConfig& cfg, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);

    os.write(kCheckpointMagic, 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, static_cast<uint32_t>(cfg.in_channels));
    detail::put_u32(os, static_cast<uint32_t>(cfg.out_channels));
    detail::put_u32(os, static_cast<uint32_t>(cfg.depth));
    detail::put_u32(os, static_cast<uint32_t>(cfg.base_channels));
    detail::put_u32(os, static_cast<uint32_t>(cfg.input_size));
    detail::put_u32(os, static_cast<uint32_t>(params.by_name.size()));
    for (const auto& [name, tensor] : params.by_name) {
        detail::put_u16(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(tensor.shape.size()));
        for (int64_t d : tensor.shape) detail::put_u32(os, static_cast<uint32_t>(d));
        for (const T& v : tensor.data) detail::put_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("write failed for checkpoint: " + path);
}

inline std::pair<ParamStore<float>, UNetConfig> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);

    char magic[4];
    detail::read_exact(is, magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic: " + path);
    const uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));

    UNetConfig cfg;
    cfg.in_channels = detail::get_u32(is);
    cfg.out_channels = detail::get_u32(is);
    cfg.depth = detail::get_u32(is);
    cfg.base_channels = detail::get_u32(is);
    cfg.input_size = detail::get_u32(is);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint carries an invalid config: ") + e.what());
    }

    const uint32_t count = detail::get_u32(is);
    ParamStore<float> params;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = detail::get_u16(is);
        std::string name(name_len, '\0');
        detail::read_exact(is, name.data(), name_len);
        unsigned char rank;
        detail::read_exact(is, &rank, 1);
        Shape shape(rank);
        for (unsigned r = 0; r < rank; ++r) shape[r] = detail::get_u32(is);

        Tensor<float> t;
        try {
            t = Tensor<float>(shape);
        } catch (const ShapeError& e) {
            throw FormatError(std::string("checkpoint parameter ") + name + " has invalid shape: " + e.what());
        }
        for (float& v : t.data) v = detail::get_f32(is);
        if (!params.by_name.emplace(name, std::move(t)).second)
            throw FormatError("duplicate parameter in checkpoint: " + name);
    }

    // The stored name set must be exactly the set the config generates.
    std::set<std::string> expected;
    for (const ConvSpec& layer : unet_layer_plan(cfg)) {
        expected.insert(layer.name + ".w");
        expected.insert(layer.name + ".b");
    }
    std::set<std::string> actual;
    for (const auto& [name, t] : params.by_name) actual.insert(name);
    if (expected != actual) throw FormatError("checkpoint parameter names do not match its config: " + path);

    return {std::move(params), cfg};
}

}  // namespace lungseg
