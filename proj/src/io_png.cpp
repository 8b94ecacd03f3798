#include "heatrank/io/png.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "heatrank/error.hpp"

namespace heatrank::pngio {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_common(const std::string& path, int w, int h, int color_type, const uint8_t* pixels,
                  size_t stride, const std::vector<std::array<uint8_t, 3>>* palette,
                  const TextChunks& text) {
    if (w <= 0 || h <= 0) throw InvalidArgument("png write: empty image for " + path);
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

    std::vector<png_color> pal;
    if (palette) {
        for (const auto& c : *palette) pal.push_back({c[0], c[1], c[2]});
        png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
    }

    std::vector<png_text> txt;
    std::vector<std::string> keys, values;  // keep storage alive across the write
    keys.reserve(text.size());
    values.reserve(text.size());
    for (const auto& [k, v] : text) {
        keys.push_back(k);
        values.push_back(v);
        png_text t{};
        t.compression = PNG_TEXT_COMPRESSION_NONE;
        t.key = keys.back().data();
        t.text = values.back().data();
        t.text_length = values.back().size();
        txt.push_back(t);
    }
    if (!txt.empty()) png_set_text(png, info, txt.data(), static_cast<int>(txt.size()));

    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pixels + static_cast<size_t>(y) * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_rgb(const std::string& path, int w, int h, const std::vector<uint8_t>& rgb,
               const TextChunks& text) {
    if (rgb.size() != static_cast<size_t>(w) * h * 3)
        throw InvalidArgument("png write: pixel buffer size mismatch for " + path);
    write_common(path, w, h, PNG_COLOR_TYPE_RGB, rgb.data(), static_cast<size_t>(w) * 3, nullptr, text);
}

void write_gray(const std::string& path, int w, int h, const std::vector<uint8_t>& gray,
                const TextChunks& text) {
    if (gray.size() != static_cast<size_t>(w) * h)
        throw InvalidArgument("png write: pixel buffer size mismatch for " + path);
    write_common(path, w, h, PNG_COLOR_TYPE_GRAY, gray.data(), static_cast<size_t>(w), nullptr, text);
}

void write_indexed(const std::string& path, int w, int h, const std::vector<uint8_t>& indices,
                   const std::vector<std::array<uint8_t, 3>>& palette, const TextChunks& text) {
    if (indices.size() != static_cast<size_t>(w) * h)
        throw InvalidArgument("png write: index buffer size mismatch for " + path);
    if (palette.empty() || palette.size() > 256)
        throw InvalidArgument("png write: palette must have 1..256 entries for " + path);
    write_common(path, w, h, PNG_COLOR_TYPE_PALETTE, indices.data(), static_cast<size_t>(w), &palette,
                 text);
}

Image8 read(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw IoError("not a png file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported 16-bit png: " + path);
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    Image8 img;
    img.w = static_cast<int>(png_get_image_width(png, info));
    img.h = static_cast<int>(png_get_image_height(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3 && img.channels != 4) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported channel count in png: " + path);
    }
    const size_t stride = png_get_rowbytes(png, info);
    std::vector<uint8_t> raw(stride * static_cast<size_t>(img.h));
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    for (int y = 0; y < img.h; ++y) rows[static_cast<size_t>(y)] = raw.data() + static_cast<size_t>(y) * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (img.channels == 4) {
        // Alpha survived the transform chain; drop it here.
        img.channels = 3;
        img.data.resize(static_cast<size_t>(img.w) * img.h * 3);
        for (size_t p = 0; p < static_cast<size_t>(img.w) * img.h; ++p)
            for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = raw[p * 4 + c];
    } else {
        img.data.assign(raw.begin(), raw.begin() + static_cast<ptrdiff_t>(static_cast<size_t>(img.w) * img.h * img.channels));
    }
    return img;
}

TextChunks read_text(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw IoError("not a png file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        throw IoError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_textp txt = nullptr;
    int count = 0;
    TextChunks out;
    if (png_get_text(png, info, &txt, &count) > 0)
        for (int i = 0; i < count; ++i) out[txt[i].key] = txt[i].text ? txt[i].text : "";
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace heatrank::pngio
