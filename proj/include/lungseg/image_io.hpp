#pragma once

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lungseg/errors.hpp"
#include "lungseg/image.hpp"

namespace lungseg {

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open file for writing: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path);
}

// --- PGM (P5, maxval <= 255) ---

inline GrayImage decode_pgm(const std::vector<unsigned char>& bytes, const std::string& path) {
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {  // comment to end of line
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok.push_back(static_cast<char>(bytes[pos++]));
        if (tok.empty()) throw FormatError("truncated PGM header: " + path);
        return tok;
    };

    if (next_token() != "P5") throw FormatError("not a binary PGM (P5): " + path);
    const long w = std::stol(next_token());
    const long h = std::stol(next_token());
    const long maxval = std::stol(next_token());
    if (w <= 0 || h <= 0) throw FormatError("invalid PGM dimensions: " + path);
    if (maxval <= 0 || maxval > 255) throw FormatError("only 8-bit PGM supported: " + path);
    ++pos;  // single whitespace after maxval
    if (bytes.size() - pos < static_cast<size_t>(w) * static_cast<size_t>(h))
        throw FormatError("truncated PGM pixel data: " + path);

    GrayImage img(w, h);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(bytes[pos + i]);
    return img;
}

inline std::vector<unsigned char> encode_pgm(const std::vector<unsigned char>& gray, int64_t w, int64_t h) {
    std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.insert(out.end(), gray.begin(), gray.end());
    return out;
}

// --- PNG ---

inline constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

inline uint32_t be32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void push_be32(std::vector<unsigned char>& v, uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

inline int paeth_predict(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

// Decodes an 8/16-bit PNG of any standard color type to an 8-bit grayscale
// raster (color via rounded BT.601 luma, palette expanded, alpha dropped,
// 16-bit truncated to the high byte). Interlaced files are rejected.
inline GrayImage decode_png(const std::vector<unsigned char>& bytes, const std::string& path) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0)
        throw FormatError("bad PNG signature: " + path);

    uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = -1;
    std::vector<unsigned char> idat;
    std::vector<unsigned char> palette;  // rgb triples
    bool saw_ihdr = false, saw_iend = false;

    size_t pos = 8;
    while (pos + 12 <= bytes.size() && !saw_iend) {
        const uint32_t len = be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw FormatError("truncated PNG chunk: " + path);
        const unsigned char* type = &bytes[pos + 4];
        const unsigned char* data = &bytes[pos + 8];
        const uint32_t stored_crc = be32(&bytes[pos + 8 + len]);
        uint32_t crc = static_cast<uint32_t>(crc32(0L, Z_NULL, 0));
        crc = static_cast<uint32_t>(crc32(crc, type, 4 + len));
        if (crc != stored_crc) throw FormatError("PNG chunk CRC mismatch: " + path);

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw FormatError("bad IHDR length: " + path);
            width = be32(data);
            height = be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            if (data[10] != 0 || data[11] != 0) throw FormatError("unsupported PNG compression/filter: " + path);
            if (data[12] != 0) throw FormatError("interlaced PNG not supported: " + path);
            if (width == 0 || height == 0) throw FormatError("zero PNG dimensions: " + path);
            saw_ihdr = true;
        } else if (std::memcmp(type, "PLTE", 4) == 0) {
            palette.assign(data, data + len);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty()) throw FormatError("incomplete PNG: " + path);

    int channels = 0;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 3: channels = 1; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: throw FormatError("unsupported PNG color type: " + path);
    }
    const bool depth_ok = (color_type == 0 && (bit_depth == 1 || bit_depth == 2 || bit_depth == 4 ||
                                               bit_depth == 8 || bit_depth == 16)) ||
                          (color_type == 3 && (bit_depth == 1 || bit_depth == 2 || bit_depth == 4 ||
                                               bit_depth == 8)) ||
                          ((color_type == 2 || color_type == 4 || color_type == 6) &&
                           (bit_depth == 8 || bit_depth == 16));
    if (!depth_ok) throw FormatError("unsupported PNG bit depth: " + path);
    if (color_type == 3 && palette.empty()) throw FormatError("palette PNG without PLTE: " + path);

    const size_t row_bytes = (static_cast<size_t>(width) * channels * bit_depth + 7) / 8;
    const size_t raw_size = (row_bytes + 1) * height;
    std::vector<unsigned char> raw(raw_size);

    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw FormatError("zlib init failed");
    zs.next_in = idat.data();
    zs.avail_in = static_cast<uInt>(idat.size());
    zs.next_out = raw.data();
    zs.avail_out = static_cast<uInt>(raw.size());
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || zs.avail_out != 0) throw FormatError("corrupt PNG pixel stream: " + path);

    // undo per-row filters in place
    const size_t bpp = std::max<size_t>(1, static_cast<size_t>(channels) * bit_depth / 8);
    std::vector<unsigned char> prev(row_bytes, 0);
    std::vector<unsigned char> rows(static_cast<size_t>(height) * row_bytes);
    for (uint32_t y = 0; y < height; ++y) {
        const unsigned char filter = raw[y * (row_bytes + 1)];
        const unsigned char* src = &raw[y * (row_bytes + 1) + 1];
        unsigned char* cur = &rows[y * row_bytes];
        for (size_t i = 0; i < row_bytes; ++i) {
            const int a = i >= bpp ? cur[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= bpp ? prev[i - bpp] : 0;
            int v;
            switch (filter) {
                case 0: v = src[i]; break;
                case 1: v = src[i] + a; break;
                case 2: v = src[i] + b; break;
                case 3: v = src[i] + (a + b) / 2; break;
                case 4: v = src[i] + paeth_predict(a, b, c); break;
                default: throw FormatError("unknown PNG filter type: " + path);
            }
            cur[i] = static_cast<unsigned char>(v & 0xFF);
        }
        std::memcpy(prev.data(), cur, row_bytes);
    }

    GrayImage img(static_cast<int64_t>(width), static_cast<int64_t>(height));
    auto luma = [](int r, int g, int b) { return (r * 299 + g * 587 + b * 114 + 500) / 1000; };
    const int sample_bytes = bit_depth == 16 ? 2 : 1;
    for (uint32_t y = 0; y < height; ++y) {
        const unsigned char* row = &rows[y * row_bytes];
        for (uint32_t x = 0; x < width; ++x) {
            int gray = 0;
            if (bit_depth < 8) {  // sub-byte gray or palette indices
                const size_t bit_pos = static_cast<size_t>(x) * bit_depth;
                const int shift = 8 - bit_depth - static_cast<int>(bit_pos % 8);
                int v = (row[bit_pos / 8] >> shift) & ((1 << bit_depth) - 1);
                if (color_type == 3) {
                    if (static_cast<size_t>(v) * 3 + 2 >= palette.size())
                        throw FormatError("palette index out of range: " + path);
                    gray = luma(palette[v * 3], palette[v * 3 + 1], palette[v * 3 + 2]);
                } else {
                    gray = v * 255 / ((1 << bit_depth) - 1);  // expand to full range
                }
            } else {
                const unsigned char* px = row + static_cast<size_t>(x) * channels * sample_bytes;
                auto sample = [&](int ch) { return static_cast<int>(px[ch * sample_bytes]); };  // high byte of 16-bit
                switch (color_type) {
                    case 0: gray = sample(0); break;
                    case 2: gray = luma(sample(0), sample(1), sample(2)); break;
                    case 3: {
                        const int v = px[0];
                        if (static_cast<size_t>(v) * 3 + 2 >= palette.size())
                            throw FormatError("palette index out of range: " + path);
                        gray = luma(palette[v * 3], palette[v * 3 + 1], palette[v * 3 + 2]);
                        break;
                    }
                    case 4: gray = sample(0); break;
                    case 6: gray = luma(sample(0), sample(1), sample(2)); break;
                }
            }
            img.at(y, x) = static_cast<float>(gray);
        }
    }
    return img;
}

inline std::vector<unsigned char> encode_png_gray8(const std::vector<unsigned char>& gray, int64_t w,
                                                   int64_t h) {
    std::vector<unsigned char> out(kPngSignature, kPngSignature + 8);

    auto put_chunk = [&out](const char* type, const std::vector<unsigned char>& data) {
        push_be32(out, static_cast<uint32_t>(data.size()));
        const size_t type_at = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), data.begin(), data.end());
        uint32_t crc = static_cast<uint32_t>(crc32(0L, Z_NULL, 0));
        crc = static_cast<uint32_t>(crc32(crc, &out[type_at], static_cast<uInt>(4 + data.size())));
        push_be32(out, crc);
    };

    std::vector<unsigned char> ihdr;
    push_be32(ihdr, static_cast<uint32_t>(w));
    push_be32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);  // no interlace
    put_chunk("IHDR", ihdr);

    std::vector<unsigned char> raw(static_cast<size_t>(h) * (static_cast<size_t>(w) + 1));
    for (int64_t y = 0; y < h; ++y) {
        raw[static_cast<size_t>(y) * (w + 1)] = 0;  // filter: none
        std::memcpy(&raw[static_cast<size_t>(y) * (w + 1) + 1], &gray[static_cast<size_t>(y * w)],
                    static_cast<size_t>(w));
    }
    uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_size);
    if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("zlib compression failed");
    comp.resize(comp_size);
    put_chunk("IDAT", comp);
    put_chunk("IEND", {});
    return out;
}

inline std::vector<unsigned char> quantize_unit(const std::vector<float>& px) {
    std::vector<unsigned char> q(px.size());
    for (size_t i = 0; i < px.size(); ++i) {
        const long v = std::lround(static_cast<double>(px[i]) * 255.0);
        q[i] = static_cast<unsigned char>(std::clamp(v, 0L, 255L));
    }
    return q;
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

// Reads a PGM (P5) or PNG file into 8-bit intensities (stored as floats in
// 0..255). Format is detected from the file contents, not the extension.
inline GrayImage read_gray_image(const std::string& path) {
    const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), detail::kPngSignature, 8) == 0)
        return detail::decode_png(bytes, path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return detail::decode_pgm(bytes, path);
    throw FormatError("unrecognized image format (expected PNG or P5 PGM): " + path);
}

// Reads a mask file: any nonzero pixel means foreground.
inline BinaryMask read_mask(const std::string& path) {
    const GrayImage img = read_gray_image(path);
    BinaryMask mask(img.width, img.height);
    for (size_t i = 0; i < img.pixels.size(); ++i) mask.bits[i] = img.pixels[i] != 0.0f ? 1 : 0;
    return mask;
}

// Writes a normalized ([0,1]) image; the extension picks the format.
inline void write_gray_image(const GrayImage& img, const std::string& path) {
    const std::vector<unsigned char> gray = detail::quantize_unit(img.pixels);
    if (detail::has_suffix(path, ".png"))
        detail::write_file_bytes(path, detail::encode_png_gray8(gray, img.width, img.height));
    else if (detail::has_suffix(path, ".pgm"))
        detail::write_file_bytes(path, detail::encode_pgm(gray, img.width, img.height));
    else
        throw UsageError("unsupported image extension (use .png or .pgm): " + path);
}

// Writes a mask as 0/255 grayscale; the extension picks the format.
inline void write_mask(const BinaryMask& mask, const std::string& path) {
    std::vector<unsigned char> gray(mask.bits.size());
    for (size_t i = 0; i < mask.bits.size(); ++i) gray[i] = mask.bits[i] ? 255 : 0;
    if (detail::has_suffix(path, ".png"))
        detail::write_file_bytes(path, detail::encode_png_gray8(gray, mask.width, mask.height));
    else if (detail::has_suffix(path, ".pgm"))
        detail::write_file_bytes(path, detail::encode_pgm(gray, mask.width, mask.height));
    else
        throw UsageError("unsupported image extension (use .png or .pgm): " + path);
}

}  // namespace lungseg
