#pragma once

#include "bgmatte/types.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace bgmatte::png {

// Minimal 8-bit PNG reader/writer (gray, RGB, RGBA; no interlacing). zlib does the
// compression; this file only handles the container and scanline filters.

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[5], const std::vector<std::uint8_t>& data) {
    put_u32(out, std::uint32_t(data.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    std::uint32_t crc = std::uint32_t(::crc32(0, out.data() + crc_start, uInt(out.size() - crc_start)));
    put_u32(out, crc);
}

inline std::uint8_t paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return std::uint8_t(a);
    if (pb <= pc) return std::uint8_t(b);
    return std::uint8_t(c);
}

}  // namespace detail

/// Encodes 8-bit samples (row-major, `channels` interleaved) as a PNG file.
inline void write(const std::string& path, const std::vector<std::uint8_t>& pixels, int width, int height,
                  int channels) {
    if (channels != 1 && channels != 3)
        throw std::invalid_argument("png::write: only gray or RGB supported, got " + std::to_string(channels) +
                                    " channels");
    if (pixels.size() != std::size_t(width) * height * channels)
        throw std::invalid_argument("png::write: pixel buffer size mismatch");

    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(height) * (std::size_t(width) * channels + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter: none
        const std::uint8_t* row = pixels.data() + std::size_t(y) * width * channels;
        raw.insert(raw.end(), row, row + std::size_t(width) * channels);
    }
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png::write: deflate failed");
    compressed.resize(bound);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<std::uint8_t> ihdr;
    detail::put_u32(ihdr, std::uint32_t(width));
    detail::put_u32(ihdr, std::uint32_t(height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);               // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);                                   // no interlace
    detail::append_chunk(out, "IHDR", ihdr);
    detail::append_chunk(out, "IDAT", compressed);
    detail::append_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png::write: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
}

struct Decoded {
    std::vector<std::uint8_t> pixels;  // row-major interleaved
    int width = 0;
    int height = 0;
    int channels = 0;
};

inline Decoded read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png::read: cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw std::runtime_error("png::read: not a PNG file: " + path);

    int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        std::uint32_t len = detail::get_u32(buf.data() + pos);
        std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
        const std::uint8_t* data = buf.data() + pos + 8;
        if (pos + 12 + len > buf.size()) throw std::runtime_error("png::read: truncated chunk in " + path);
        if (type == "IHDR") {
            width = int(detail::get_u32(data));
            height = int(detail::get_u32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (bit_depth != 8) throw std::runtime_error("png::read: only 8-bit PNGs supported: " + path);
    if (interlace != 0) throw std::runtime_error("png::read: interlaced PNGs not supported: " + path);
    int channels = 0;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 6: channels = 4; break;
        default: throw std::runtime_error("png::read: unsupported color type in " + path);
    }

    const std::size_t stride = std::size_t(width) * channels;
    std::vector<std::uint8_t> raw(std::size_t(height) * (stride + 1));
    uLongf raw_len = uLongf(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("png::read: inflate failed for " + path);

    Decoded dec;
    dec.width = width;
    dec.height = height;
    dec.channels = channels;
    dec.pixels.resize(std::size_t(height) * stride);
    std::vector<std::uint8_t> prev(stride, 0);
    for (int y = 0; y < height; ++y) {
        std::uint8_t filter = raw[std::size_t(y) * (stride + 1)];
        const std::uint8_t* src = raw.data() + std::size_t(y) * (stride + 1) + 1;
        std::uint8_t* dst = dec.pixels.data() + std::size_t(y) * stride;
        for (std::size_t i = 0; i < stride; ++i) {
            int a = i >= std::size_t(channels) ? dst[i - std::size_t(channels)] : 0;
            int b = prev[i];
            int c = i >= std::size_t(channels) ? prev[i - std::size_t(channels)] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw std::runtime_error("png::read: bad filter byte in " + path);
            }
            dst[i] = std::uint8_t(v);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return dec;
}

// ---------------------------------------------------------------------------
// FeatureGrid / AlphaMatte adapters (8-bit quantization, [0,1] range)
// ---------------------------------------------------------------------------

template <typename S>
void write_image(const std::string& path, const FeatureGrid<S>& img) {
    if (img.channels() != 3) throw std::invalid_argument("write_image: expected 3 channels");
    std::vector<std::uint8_t> px(std::size_t(img.pixels()) * 3);
    for (Eigen::Index i = 0; i < img.pixels(); ++i)
        for (int c = 0; c < 3; ++c) {
            double v = std::clamp(double(img.data(i, c)), 0.0, 1.0);
            px[std::size_t(i) * 3 + std::size_t(c)] = std::uint8_t(std::lround(v * 255.0));
        }
    write(path, px, img.width, img.height, 3);
}

template <typename S>
void write_alpha(const std::string& path, const AlphaMatte<S>& alpha) {
    std::vector<std::uint8_t> px(std::size_t(alpha.height()) * alpha.width());
    for (int y = 0; y < alpha.height(); ++y)
        for (int x = 0; x < alpha.width(); ++x) {
            double v = std::clamp(double(alpha.alpha(y, x)), 0.0, 1.0);
            px[std::size_t(y) * alpha.width() + std::size_t(x)] = std::uint8_t(std::lround(v * 255.0));
        }
    write(path, px, alpha.width(), alpha.height(), 1);
}

template <typename S>
FeatureGrid<S> read_image(const std::string& path) {
    Decoded d = read(path);
    FeatureGrid<S> img(d.height, d.width, 3);
    for (Eigen::Index i = 0; i < img.pixels(); ++i)
        for (int c = 0; c < 3; ++c) {
            int src_c = d.channels == 1 ? 0 : c;
            img.data(i, c) = S(d.pixels[std::size_t(i) * d.channels + std::size_t(src_c)]) / S(255);
        }
    return img;
}

template <typename S>
AlphaMatte<S> read_alpha(const std::string& path) {
    Decoded d = read(path);
    AlphaMatte<S> a(d.height, d.width);
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) {
            std::size_t i = (std::size_t(y) * d.width + std::size_t(x)) * d.channels;
            a.alpha(y, x) = S(d.pixels[i]) / S(255);  // first channel; alpha files are gray
        }
    return a;
}

}  // namespace bgmatte::png
