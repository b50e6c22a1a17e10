#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "glyphcrm/error.hpp"

namespace glyphcrm {

// Parsed bitmap font. Every glyph is stored placed inside the native cell
// (FONTBOUNDINGBOX), so all bitmaps share the same dimensions. Immutable
// after construction; concurrent reads are safe.
class FontAtlas {
public:
    struct Glyph {
        std::vector<std::uint8_t> bits;  // native_height x native_width, values 0/1
    };

    std::int64_t native_width() const { return width_; }
    std::int64_t native_height() const { return height_; }
    const std::string& name() const { return name_; }
    std::size_t glyph_count() const { return glyphs_.size(); }

    bool has(char32_t cp) const { return glyphs_.count(cp) != 0; }

    // Throws GlyphMissError for absent codepoints.
    const Glyph& glyph(char32_t cp) const;

private:
    friend FontAtlas parse_bdf(std::string_view bytes);
    std::string name_;
    std::int64_t width_ = 0;
    std::int64_t height_ = 0;
    std::int64_t xoff_ = 0;  // FONTBOUNDINGBOX offsets relative to the origin
    std::int64_t yoff_ = 0;
    std::unordered_map<char32_t, Glyph> glyphs_;
};

// BDF 2.1: STARTCHAR/ENCODING/BBX/BITMAP/ENDCHAR records, hex rows MSB-first
// padded to byte boundaries. Glyphs with negative ENCODING are skipped.
// Throws ParseError naming the offending line.
FontAtlas parse_bdf(std::string_view bytes);

FontAtlas load_bdf_file(const std::filesystem::path& path);

// One BITMAP row: hex text -> width pixel values (0/1), MSB first.
std::vector<std::uint8_t> decode_bdf_row(std::string_view hex, std::int64_t width, int line);

// Inverse of decode_bdf_row; pads the last byte with zero bits.
std::string encode_bdf_row(std::span<const std::uint8_t> bits);

}  // namespace glyphcrm
