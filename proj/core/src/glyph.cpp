#include "glyphcrm/glyph.hpp"

#include <cstring>

#include "glyphcrm/utf8.hpp"

namespace glyphcrm {

std::int64_t GlyphBitmap::pixel_count() const {
    std::int64_t n = 0;
    for (std::uint8_t p : pixels) n += p;
    return n;
}

float position_coord(int j) {
    // algebraically -0.2 + 0.4*j/47, arranged so the endpoints hit exactly
    // +-0.2 and c_j == -c_{47-j} bitwise
    return static_cast<float>(2 * j - 47) / 47.0f * 0.2f;
}

const PositionMaps& position_maps() {
    static const PositionMaps maps = [] {
        PositionMaps m;
        for (int i = 0; i < kGlyphSize; ++i) {
            for (int j = 0; j < kGlyphSize; ++j) {
                m.abscissa[static_cast<std::size_t>(i * kGlyphSize + j)] = position_coord(j);
                m.ordinate[static_cast<std::size_t>(i * kGlyphSize + j)] = position_coord(i);
            }
        }
        return m;
    }();
    return maps;
}

const char* special_token_name(SpecialToken t) {
    switch (t) {
        case SpecialToken::Pad: return "[PAD]";
        case SpecialToken::Unk: return "[UNK]";
        case SpecialToken::Cls: return "[CLS]";
        case SpecialToken::Sep: return "[SEP]";
        case SpecialToken::Mask: return "[MASK]";
    }
    throw Error("unknown special token");
}

GlyphBitmap special_glyph(SpecialToken t) {
    GlyphBitmap b;
    switch (t) {
        case SpecialToken::Pad:
            break;
        case SpecialToken::Cls:
            for (int i = 0; i < kGlyphSize; ++i) {
                for (int j = 0; j < kGlyphSize; ++j) {
                    const int edge = std::min(std::min(i, j), std::min(47 - i, 47 - j));
                    if (edge < 12) b.set(i, j, 1);
                }
            }
            break;
        case SpecialToken::Sep:
            for (int i = 0; i < kGlyphSize; ++i) {
                for (int j = 18; j < 30; ++j) b.set(i, j, 1);
            }
            break;
        case SpecialToken::Mask:
            for (int i = 0; i < kGlyphSize; ++i) {
                for (int j = 0; j < kGlyphSize; ++j) {
                    if ((i / 8 + j / 8) % 2 == 0) b.set(i, j, 1);
                }
            }
            break;
        case SpecialToken::Unk:
            for (int i = 0; i < kGlyphSize; ++i) {
                for (int j = 0; j < kGlyphSize; ++j) {
                    const int d1 = j - i;
                    const int d2 = j - (47 - i);
                    if ((d1 >= -4 && d1 <= 3) || (d2 >= -4 && d2 <= 3)) b.set(i, j, 1);
                }
            }
            break;
    }
    return b;
}

GlyphBitmap rasterize(char32_t ch, const FontAtlas& atlas) {
    const FontAtlas::Glyph& g = atlas.glyph(ch);
    const std::int64_t nw = atlas.native_width();
    const std::int64_t nh = atlas.native_height();
    const std::int64_t factor = kGlyphSize / std::max(nw, nh);
    if (factor < 1) {
        throw GlyphMissError("glyph cell " + std::to_string(nw) + "x" + std::to_string(nh) +
                                 " larger than " + std::to_string(kGlyphSize),
                             ch);
    }
    const std::int64_t off_x = (kGlyphSize - nw * factor) / 2;
    const std::int64_t off_y = (kGlyphSize - nh * factor) / 2;

    GlyphBitmap out;
    for (std::int64_t r = 0; r < nh; ++r) {
        for (std::int64_t c = 0; c < nw; ++c) {
            if (!g.bits[static_cast<std::size_t>(r * nw + c)]) continue;
            for (std::int64_t dr = 0; dr < factor; ++dr) {
                for (std::int64_t dc = 0; dc < factor; ++dc) {
                    out.set(static_cast<int>(off_y + r * factor + dr),
                            static_cast<int>(off_x + c * factor + dc), 1);
                }
            }
        }
    }
    return out;
}

namespace {

void fill_char_input(float* dst, const GlyphBitmap& bitmap) {
    constexpr std::size_t plane = kGlyphSize * kGlyphSize;
    const PositionMaps& maps = position_maps();
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(bitmap.pixels[i]);
    std::memcpy(dst + plane, maps.abscissa.data(), plane * sizeof(float));
    std::memcpy(dst + 2 * plane, maps.ordinate.data(), plane * sizeof(float));
}

GlyphBitmap token_bitmap(const TokenRender& token, const FontAtlas& atlas, bool unk_fallback) {
    if (token.is_special) return special_glyph(token.special);
    if (unk_fallback && !atlas.has(token.cp)) return special_glyph(SpecialToken::Unk);
    return rasterize(token.cp, atlas);
}

}  // namespace

CharInput encode_char(const TokenRender& token, const FontAtlas& atlas) {
    CharInput ci{Tensor({3, kGlyphSize, kGlyphSize})};
    fill_char_input(ci.channels.data(), token_bitmap(token, atlas, false));
    return ci;
}

Tensor render_sequence(std::span<const TokenRender> tokens, const FontAtlas& atlas,
                       bool unk_fallback) {
    const auto n = static_cast<std::int64_t>(tokens.size());
    Tensor out({n, 3, kGlyphSize, kGlyphSize});
    constexpr std::size_t stride = 3 * kGlyphSize * kGlyphSize;
    for (std::int64_t i = 0; i < n; ++i) {
        fill_char_input(out.data() + static_cast<std::size_t>(i) * stride,
                        token_bitmap(tokens[static_cast<std::size_t>(i)], atlas, unk_fallback));
    }
    return out;
}

std::string to_pgm(const GlyphBitmap& bitmap) {
    std::string s = "P2\n48 48\n1\n";
    for (int i = 0; i < kGlyphSize; ++i) {
        for (int j = 0; j < kGlyphSize; ++j) {
            s += bitmap.at(i, j) ? '1' : '0';
            s += j + 1 < kGlyphSize ? ' ' : '\n';
        }
    }
    return s;
}

std::string to_pgm_strip(std::span<const GlyphBitmap> bitmaps) {
    const int n = static_cast<int>(bitmaps.size());
    const int width = n > 0 ? n * kGlyphSize + (n - 1) : 1;
    std::string s = "P2\n" + std::to_string(width) + " 48\n1\n";
    for (int i = 0; i < kGlyphSize; ++i) {
        bool first = true;
        for (int g = 0; g < n; ++g) {
            if (!first) s += "0 ";
            first = false;
            for (int j = 0; j < kGlyphSize; ++j) {
                s += bitmaps[static_cast<std::size_t>(g)].at(i, j) ? '1' : '0';
                s += (g + 1 == n && j + 1 == kGlyphSize) ? '\n' : ' ';
            }
        }
        if (n == 0) s += "0\n";
    }
    return s;
}

}  // namespace glyphcrm
