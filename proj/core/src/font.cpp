#include "glyphcrm/font.hpp"

#include <fstream>
#include <sstream>

#include "glyphcrm/utf8.hpp"

namespace glyphcrm {

const FontAtlas::Glyph& FontAtlas::glyph(char32_t cp) const {
    auto it = glyphs_.find(cp);
    if (it == glyphs_.end()) {
        throw GlyphMissError("no glyph for U+" + [cp] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%04X", static_cast<unsigned>(cp));
            return std::string(buf);
        }(), cp);
    }
    return it->second;
}

std::vector<std::uint8_t> decode_bdf_row(std::string_view hex, std::int64_t width, int line) {
    const std::size_t need = (static_cast<std::size_t>(width) + 7) / 8 * 2;
    if (hex.size() < need) {
        throw ParseError("BITMAP row '" + std::string(hex) + "' too short for width " +
                         std::to_string(width), line);
    }
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(width), 0);
    for (std::int64_t x = 0; x < width; ++x) {
        const char c = hex[static_cast<std::size_t>(x / 4)];
        int nib;
        if (c >= '0' && c <= '9') nib = c - '0';
        else if (c >= 'A' && c <= 'F') nib = c - 'A' + 10;
        else if (c >= 'a' && c <= 'f') nib = c - 'a' + 10;
        else throw ParseError(std::string("invalid hex digit '") + c + "' in BITMAP row", line);
        bits[static_cast<std::size_t>(x)] =
            static_cast<std::uint8_t>((nib >> (3 - (x % 4))) & 1);
    }
    return bits;
}

std::string encode_bdf_row(std::span<const std::uint8_t> bits) {
    static const char* digits = "0123456789ABCDEF";
    std::string out;
    const std::size_t nibbles = (bits.size() + 3) / 4;
    const std::size_t padded = (nibbles + 1) / 2 * 2;  // whole bytes
    for (std::size_t k = 0; k < padded; ++k) {
        int nib = 0;
        for (std::size_t b = 0; b < 4; ++b) {
            const std::size_t x = k * 4 + b;
            if (x < bits.size() && bits[x]) nib |= 1 << (3 - b);
        }
        out.push_back(digits[nib]);
    }
    return out;
}

namespace {

struct LineReader {
    std::string_view text;
    std::size_t pos = 0;
    int line = 0;

    bool next(std::string& out) {
        if (pos >= text.size()) return false;
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        out.assign(text.substr(pos, end - pos));
        if (!out.empty() && out.back() == '\r') out.pop_back();
        pos = end + 1;
        ++line;
        return true;
    }
};

struct Fields {
    std::string keyword;
    std::vector<std::string> args;
};

Fields split_line(const std::string& s) {
    Fields f;
    std::istringstream iss(s);
    iss >> f.keyword;
    std::string a;
    while (iss >> a) f.args.push_back(a);
    return f;
}

std::int64_t parse_int_arg(const Fields& f, std::size_t idx, int line) {
    if (idx >= f.args.size()) {
        throw ParseError(f.keyword + " needs at least " + std::to_string(idx + 1) + " arguments",
                         line);
    }
    try {
        return std::stoll(f.args[idx]);
    } catch (const std::exception&) {
        throw ParseError("bad integer '" + f.args[idx] + "' after " + f.keyword, line);
    }
}

}  // namespace

FontAtlas parse_bdf(std::string_view bytes) {
    LineReader rd{bytes};
    std::string s;

    if (!rd.next(s)) throw ParseError("empty font file", 0);
    Fields f = split_line(s);
    if (f.keyword != "STARTFONT") throw ParseError("expected STARTFONT, got '" + s + "'", rd.line);

    FontAtlas atlas;
    bool have_bbox = false;

    while (rd.next(s)) {
        f = split_line(s);
        if (f.keyword.empty()) continue;
        if (f.keyword == "FONT") {
            atlas.name_ = f.args.empty() ? "" : f.args[0];
        } else if (f.keyword == "FONTBOUNDINGBOX") {
            atlas.width_ = parse_int_arg(f, 0, rd.line);
            atlas.height_ = parse_int_arg(f, 1, rd.line);
            if (atlas.width_ <= 0 || atlas.height_ <= 0) {
                throw ParseError("FONTBOUNDINGBOX must be positive", rd.line);
            }
            if (f.args.size() >= 4) {
                atlas.xoff_ = parse_int_arg(f, 2, rd.line);
                atlas.yoff_ = parse_int_arg(f, 3, rd.line);
            }
            have_bbox = true;
        } else if (f.keyword == "STARTCHAR") {
            if (!have_bbox) throw ParseError("STARTCHAR before FONTBOUNDINGBOX", rd.line);
            const std::int64_t fw = atlas.width_, fh = atlas.height_;

            std::int64_t encoding = -1;
            std::int64_t gw = -1, gh = -1, gx = 0, gy = 0;
            bool in_bitmap = false, ended = false;
            std::vector<std::vector<std::uint8_t>> rows;

            while (rd.next(s)) {
                f = split_line(s);
                if (in_bitmap) {
                    if (f.keyword == "ENDCHAR") {
                        ended = true;
                        break;
                    }
                    if (static_cast<std::int64_t>(rows.size()) >= gh) {
                        throw ParseError("more BITMAP rows than BBX height " + std::to_string(gh),
                                         rd.line);
                    }
                    rows.push_back(decode_bdf_row(f.keyword, gw, rd.line));
                    continue;
                }
                if (f.keyword == "ENCODING") {
                    encoding = parse_int_arg(f, 0, rd.line);
                } else if (f.keyword == "BBX") {
                    gw = parse_int_arg(f, 0, rd.line);
                    gh = parse_int_arg(f, 1, rd.line);
                    gx = parse_int_arg(f, 2, rd.line);
                    gy = parse_int_arg(f, 3, rd.line);
                } else if (f.keyword == "BITMAP") {
                    if (gw < 0 || gh < 0) throw ParseError("BITMAP before BBX", rd.line);
                    in_bitmap = true;
                } else if (f.keyword == "ENDCHAR") {
                    ended = true;
                    break;
                }
            }
            if (!ended) throw ParseError("truncated glyph record (missing ENDCHAR)", rd.line);
            if (in_bitmap && static_cast<std::int64_t>(rows.size()) != gh) {
                throw ParseError("BITMAP has " + std::to_string(rows.size()) + " rows, BBX says " +
                                 std::to_string(gh), rd.line);
            }
            if (encoding < 0) continue;  // unencoded glyph

            // Place the BBX-sized bitmap inside the native cell. Row 0 of the
            // cell is the top; offsets of glyph and cell are both relative to
            // the font origin on the baseline.
            FontAtlas::Glyph glyph;
            glyph.bits.assign(static_cast<std::size_t>(fw * fh), 0);
            const std::int64_t left = gx - atlas.xoff_;
            const std::int64_t top = (fh + atlas.yoff_) - (gh + gy);
            for (std::int64_t r = 0; r < static_cast<std::int64_t>(rows.size()); ++r) {
                const std::int64_t cy = top + r;
                if (cy < 0 || cy >= fh) continue;  // clip overhang
                for (std::int64_t c = 0; c < gw; ++c) {
                    const std::int64_t cx = left + c;
                    if (cx < 0 || cx >= fw) continue;
                    if (rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) {
                        glyph.bits[static_cast<std::size_t>(cy * fw + cx)] = 1;
                    }
                }
            }
            atlas.glyphs_[static_cast<char32_t>(encoding)] = std::move(glyph);
        } else if (f.keyword == "ENDFONT") {
            break;
        }
        // other header keywords (SIZE, CHARS, properties) are skipped
    }
    if (!have_bbox) throw ParseError("missing FONTBOUNDINGBOX", rd.line);
    return atlas;
}

FontAtlas load_bdf_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open font file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_bdf(ss.str());
}

}  // namespace glyphcrm
