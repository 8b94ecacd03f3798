#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace heatrank::pngio {

// Interleaved row-major 8-bit pixels; channels is 1 (gray) or 3 (RGB).
struct Image8 {
    int w = 0, h = 0, channels = 0;
    std::vector<uint8_t> data;
};

using TextChunks = std::map<std::string, std::string>;

void write_rgb(const std::string& path, int w, int h, const std::vector<uint8_t>& rgb,
               const TextChunks& text = {});
void write_gray(const std::string& path, int w, int h, const std::vector<uint8_t>& gray,
                const TextChunks& text = {});
// Indexed color with an explicit palette; at most 256 entries.
void write_indexed(const std::string& path, int w, int h, const std::vector<uint8_t>& indices,
                   const std::vector<std::array<uint8_t, 3>>& palette, const TextChunks& text = {});

// Accepts 8-bit gray and RGB files; palette images are expanded to RGB,
// alpha is stripped. Anything else is rejected with the path in the message.
Image8 read(const std::string& path);

TextChunks read_text(const std::string& path);

}  // namespace heatrank::pngio
