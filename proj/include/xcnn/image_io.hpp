#pragma once

// Binary portable pixmap (P6, RGB) and graymap (P5) I/O, 8-bit only.
// Images are [C,H,W] tensors in [0,1]; bytes map to v/255 on read and to
// round(255 v) on write.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "xcnn/serialize.hpp"
#include "xcnn/tensor.hpp"

namespace xcnn {

namespace detail {

inline std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

struct PnmHeader {
    char type = 0;
    std::size_t width = 0, height = 0, maxval = 0;
    std::size_t data_offset = 0;
};

inline PnmHeader parse_pnm_header(std::string_view bytes) {
    PnmHeader h;
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw FormatError("not a binary PGM/PPM file");
    h.type = bytes[1];
    std::size_t pos = 2;
    auto next_number = [&]() -> std::size_t {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
            throw FormatError("malformed PNM header");
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > 1u << 20) throw FormatError("PNM header value too large");
            ++pos;
        }
        return v;
    };
    h.width = next_number();
    h.height = next_number();
    h.maxval = next_number();
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw FormatError("malformed PNM header");
    h.data_offset = pos + 1;
    if (h.width == 0 || h.height == 0) throw FormatError("PNM image has zero extent");
    if (h.maxval != 255) throw FormatError("only 8-bit PNM (maxval 255) is supported");
    return h;
}

inline std::string encode_pnm(const Tensor& image, char type) {
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::string out = std::string("P") + type + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + ch * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < ch; ++c) out.push_back(static_cast<char>(to_byte(image.at(c, y, x))));
    return out;
}

inline Tensor decode_pnm(std::string_view bytes, char want) {
    const PnmHeader h = parse_pnm_header(bytes);
    if (h.type != want) throw FormatError(std::string("expected a P") + want + " file, found P" + h.type);
    const std::size_t ch = want == '6' ? 3 : 1;
    if (bytes.size() - h.data_offset < ch * h.width * h.height) throw FormatError("truncated PNM pixel data");
    Tensor out({ch, h.height, h.width});
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + h.data_offset;
    for (std::size_t y = 0; y < h.height; ++y)
        for (std::size_t x = 0; x < h.width; ++x)
            for (std::size_t c = 0; c < ch; ++c) out.at(c, y, x) = static_cast<float>(*p++) / 255.0f;
    return out;
}

} // namespace detail

/// RGB image [3,H,W] to P6 bytes. Single-channel tensors are replicated to gray.
inline std::string encode_ppm(const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1))
        throw ShapeError("encode_ppm expects [3,H,W] or [1,H,W], got " + shape_str(image.shape()));
    if (image.dim(0) == 3) return detail::encode_pnm(image, '6');
    Tensor rgb({3, image.dim(1), image.dim(2)});
    for (std::size_t c = 0; c < 3; ++c) std::copy(image.values().begin(), image.values().end(), rgb.slice(c).begin());
    return detail::encode_pnm(rgb, '6');
}

inline Tensor decode_ppm(std::string_view bytes) { return detail::decode_pnm(bytes, '6'); }

/// Grayscale/mask [1,H,W] or [H,W] to P5 bytes.
inline std::string encode_pgm(const Tensor& gray) {
    if (gray.rank() == 2) return detail::encode_pnm(gray.reshaped({1, gray.dim(0), gray.dim(1)}), '5');
    if (gray.rank() != 3 || gray.dim(0) != 1) throw ShapeError("encode_pgm expects a single-channel image");
    return detail::encode_pnm(gray, '5');
}

/// P5 bytes to an [H,W] tensor in [0,1].
inline Tensor decode_pgm(std::string_view bytes) {
    Tensor t = detail::decode_pnm(bytes, '5');
    return t.reshaped({t.dim(1), t.dim(2)});
}

inline Tensor read_ppm(const std::string& path) { return decode_ppm(detail::read_file(path)); }
inline void write_ppm(const std::string& path, const Tensor& image) { detail::write_file(path, encode_ppm(image)); }
inline Tensor read_pgm(const std::string& path) { return decode_pgm(detail::read_file(path)); }
inline void write_pgm(const std::string& path, const Tensor& gray) { detail::write_file(path, encode_pgm(gray)); }

using Rgb = std::array<float, 3>;

/// 1-pixel rectangle outline over rows [top, bottom) and cols [left, right).
inline void draw_rectangle(Tensor& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width,
                           const Rgb& color) {
    if (height == 0 || width == 0) return;
    const std::size_t bottom = top + height - 1, right = left + width - 1;
    if (bottom >= image.dim(1) || right >= image.dim(2)) throw ShapeError("rectangle outside image");
    auto put = [&](std::size_t y, std::size_t x) {
        for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = color[c];
    };
    for (std::size_t x = left; x <= right; ++x) {
        put(top, x);
        put(bottom, x);
    }
    for (std::size_t y = top; y <= bottom; ++y) {
        put(y, left);
        put(y, right);
    }
}

/// Bilinear resize of a [C,H,W] tensor with pixel-center alignment and edge clamping.
inline Tensor resize_bilinear(const Tensor& src, std::size_t out_h, std::size_t out_w) {
    const std::size_t ch = src.dim(0), h = src.dim(1), w = src.dim(2);
    Tensor out({ch, out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
            const double tx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < ch; ++c) {
                const double top = src.at(c, y0, x0) * (1.0 - tx) + src.at(c, y0, x1) * tx;
                const double bot = src.at(c, y1, x0) * (1.0 - tx) + src.at(c, y1, x1) * tx;
                out.at(c, y, x) = static_cast<float>(top * (1.0 - ty) + bot * ty);
            }
        }
    }
    return out;
}

} // namespace xcnn
