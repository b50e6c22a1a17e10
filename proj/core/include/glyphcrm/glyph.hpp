#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glyphcrm/font.hpp"
#include "glyphcrm/tensor.hpp"

namespace glyphcrm {

inline constexpr int kGlyphSize = 48;

// 48x48 binary raster of one character.
struct GlyphBitmap {
    std::array<std::uint8_t, kGlyphSize * kGlyphSize> pixels{};

    std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row * kGlyphSize + col)]; }
    void set(int row, int col, std::uint8_t v) { pixels[static_cast<std::size_t>(row * kGlyphSize + col)] = v; }
    std::int64_t pixel_count() const;
    bool operator==(const GlyphBitmap&) const = default;
};

// The two coordinate grids shared by every character: abscissa constant down
// each column, ordinate constant along each row, values in [-0.2, 0.2] with
// the origin at the image center.
struct PositionMaps {
    std::array<float, kGlyphSize * kGlyphSize> abscissa{};
    std::array<float, kGlyphSize * kGlyphSize> ordinate{};
};

// Coordinate of index j in {0..47}: -0.2 + 0.4 * j / 47.
float position_coord(int j);

// The canonical maps; identical object on every call.
const PositionMaps& position_maps();

// The five reserved tokens, in vocabulary id order.
enum class SpecialToken : std::int64_t { Pad = 0, Unk = 1, Cls = 2, Sep = 3, Mask = 4 };

const char* special_token_name(SpecialToken t);

// Fixed synthetic bitmaps, no font involved: Cls = 12 px border ring,
// Sep = 12 px center bar, Mask = 8x8 checkerboard, Unk = 8 px diagonal
// cross, Pad = all zeros.
GlyphBitmap special_glyph(SpecialToken t);

// Centers the native glyph in the 48x48 cell, scaled by integer
// nearest-neighbor replication: factor = floor(48 / max native dimension).
// Throws GlyphMissError if ch is absent from the atlas.
GlyphBitmap rasterize(char32_t ch, const FontAtlas& atlas);

// What to draw at one sequence position.
struct TokenRender {
    bool is_special = false;
    SpecialToken special = SpecialToken::Pad;
    char32_t cp = 0;

    static TokenRender character(char32_t c) { return {false, SpecialToken::Pad, c}; }
    static TokenRender of(SpecialToken t) { return {true, t, 0}; }
};

// 3-channel stack: glyph plane plus the two canonical position maps.
struct CharInput {
    Tensor channels;  // 3 x 48 x 48
};

CharInput encode_char(const TokenRender& token, const FontAtlas& atlas);

// L x 3 x 48 x 48 input stack. With unk_fallback, a character missing from
// the atlas renders the Unk glyph instead of throwing.
Tensor render_sequence(std::span<const TokenRender> tokens, const FontAtlas& atlas,
                       bool unk_fallback = false);

// P2 PGM with maxval 1, one text pixel per bit.
std::string to_pgm(const GlyphBitmap& bitmap);

// Glyphs side by side with a 1-pixel gap column of zeros.
std::string to_pgm_strip(std::span<const GlyphBitmap> bitmaps);

}  // namespace glyphcrm
