#include <doctest.h>

#include <fstream>
#include <sstream>

#include "glyphcrm/font.hpp"
#include "testutil.hpp"

using namespace glyphcrm;

namespace {

// golden bits for the two hand-decoded fixture glyphs (16x16, '#' = 1)
const char* kGoldenYi[16] = {
    "................", "................", "................", "................",
    "................", "................", "................", ".##############.",
    ".##############.", "................", "................", "................",
    "................", "................", "................", "................",
};

const char* kGoldenWo[16] = {
    "......#...#.....", "......#...#..#..", "..########.##...", "......#...##....",
    "......#...#.....", ".#############..", "......#...#.....", "...#..#...#.....",
    "...#..#...#..#..", "...####...##.#..", "......#...#.#...", "......#...##....",
    "......#...#.....", "..#...#..###....", "..#..##.##..#.#.", "...###..#....##.",
};

void check_glyph(const FontAtlas& atlas, char32_t cp, const char* const art[16]) {
    const auto& g = atlas.glyph(cp);
    REQUIRE(atlas.native_width() == 16);
    REQUIRE(atlas.native_height() == 16);
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            const std::uint8_t expect = art[r][c] == '#' ? 1 : 0;
            INFO("row ", r, " col ", c);
            CHECK(g.bits[static_cast<std::size_t>(r * 16 + c)] == expect);
        }
    }
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("mini font: MSB-first single-row decode") {
    FontAtlas atlas = load_bdf_file(testutil::fixture("mini.bdf"));
    REQUIRE(atlas.glyph_count() == 1);
    REQUIRE(atlas.native_width() == 8);
    REQUIRE(atlas.native_height() == 1);
    const auto& g = atlas.glyph(U'A');
    const std::uint8_t expect[8] = {1, 0, 0, 0, 0, 0, 0, 0};
    for (int i = 0; i < 8; ++i) CHECK(g.bits[static_cast<std::size_t>(i)] == expect[i]);
}

TEST_CASE("empty input is a parse error") {
    CHECK_THROWS_AS(parse_bdf(""), ParseError);
}

TEST_CASE("malformed fonts raise parse errors naming the line") {
    SUBCASE("missing STARTFONT") {
        CHECK_THROWS_AS(parse_bdf("FONT x\n"), ParseError);
    }
    SUBCASE("truncated glyph record") {
        const char* text =
            "STARTFONT 2.1\nFONTBOUNDINGBOX 8 8 0 0\nSTARTCHAR a\nENCODING 65\nBBX 8 8 0 0\n"
            "BITMAP\nFF\n";
        try {
            parse_bdf(text);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() > 0);
        }
    }
    SUBCASE("bad hex digit") {
        const char* text =
            "STARTFONT 2.1\nFONTBOUNDINGBOX 8 1 0 0\nSTARTCHAR a\nENCODING 65\nBBX 8 1 0 0\n"
            "BITMAP\nZZ\nENDCHAR\nENDFONT\n";
        CHECK_THROWS_WITH_AS(parse_bdf(text), doctest::Contains("line 7"), ParseError);
    }
    SUBCASE("row count disagrees with BBX") {
        const char* text =
            "STARTFONT 2.1\nFONTBOUNDINGBOX 8 2 0 0\nSTARTCHAR a\nENCODING 65\nBBX 8 2 0 0\n"
            "BITMAP\nFF\nENDCHAR\nENDFONT\n";
        CHECK_THROWS_AS(parse_bdf(text), ParseError);
    }
}

TEST_CASE("BBX offsets place glyphs inside the native cell") {
    FontAtlas atlas = load_bdf_file(testutil::fixture("offsets.bdf"));
    REQUIRE(atlas.glyph_count() == 3);

    SUBCASE("2x2 dot at BBX offset (3,1) lands at rows 3-4, cols 3-4") {
        const auto& g = atlas.glyph(static_cast<char32_t>(100));
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const bool expect = (r == 3 || r == 4) && (c == 3 || c == 4);
                INFO("row ", r, " col ", c);
                CHECK(g.bits[static_cast<std::size_t>(r * 8 + c)] == (expect ? 1 : 0));
            }
        }
    }

    SUBCASE("12-wide bar clips to the cell at the bottom row") {
        const auto& g = atlas.glyph(static_cast<char32_t>(101));
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const bool expect = r == 7;
                CHECK(g.bits[static_cast<std::size_t>(r * 8 + c)] == (expect ? 1 : 0));
            }
        }
    }

    SUBCASE("full-cell ring fills the cell exactly") {
        const auto& g = atlas.glyph(static_cast<char32_t>(102));
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const bool expect = r == 0 || r == 7 || c == 0 || c == 7;
                CHECK(g.bits[static_cast<std::size_t>(r * 8 + c)] == (expect ? 1 : 0));
            }
        }
    }
}

TEST_CASE("CJK fixture golden bitmaps") {
    FontAtlas atlas = load_bdf_file(testutil::fixture("cjk16.bdf"));
    REQUIRE(atlas.glyph_count() == 104);

    SUBCASE("U+4E00 is a horizontal band") {
        check_glyph(atlas, U'一', kGoldenYi);
        // every 1-pixel confined to rows 7-8
        const auto& g = atlas.glyph(U'一');
        for (int r = 0; r < 16; ++r) {
            if (r == 7 || r == 8) continue;
            for (int c = 0; c < 16; ++c) CHECK(g.bits[static_cast<std::size_t>(r * 16 + c)] == 0);
        }
    }

    SUBCASE("U+6211 matches its golden bits") {
        check_glyph(atlas, U'我', kGoldenWo);
    }

    SUBCASE("absent codepoint is a detectable miss") {
        CHECK_FALSE(atlas.has(U'语'));
        CHECK_THROWS_AS(atlas.glyph(U'语'), GlyphMissError);
    }
}

TEST_CASE("round-trip: re-encoding decoded BITMAP rows reproduces the source bytes") {
    for (const char* name : {"mini.bdf", "offsets.bdf", "cjk16.bdf"}) {
        const std::string text = slurp(testutil::fixture(name));
        std::istringstream in(text);
        std::string line;
        bool in_bitmap = false;
        std::int64_t width = 0;
        int checked = 0;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.rfind("BBX", 0) == 0) {
                std::istringstream ss(line.substr(3));
                ss >> width;
                continue;
            }
            if (line.rfind("BITMAP", 0) == 0) {
                in_bitmap = true;
                continue;
            }
            if (line.rfind("ENDCHAR", 0) == 0) {
                in_bitmap = false;
                continue;
            }
            if (!in_bitmap) continue;
            const auto bits = decode_bdf_row(line, width, lineno);
            CHECK(encode_bdf_row(bits) == line);
            ++checked;
        }
        CHECK(checked > 0);
    }
}
