#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "glyphcrm/font.hpp"
#include "glyphcrm/glyph.hpp"

namespace glyphcrm {

// document -> sentence -> codepoints. One sentence per line, blank line
// between documents; whitespace codepoints are dropped.
struct Corpus {
    std::vector<std::vector<std::vector<char32_t>>> documents;

    std::size_t sentence_count() const;
};

Corpus parse_corpus(std::string_view text);
Corpus load_corpus_file(const std::filesystem::path& path);

// Character <-> id table. Ids 0..4 are the reserved specials; entries are
// ordered by (frequency desc, codepoint asc) and every non-reserved entry
// is renderable in the font the table was built against.
class Vocabulary {
public:
    static constexpr std::int64_t kPad = 0;
    static constexpr std::int64_t kUnk = 1;
    static constexpr std::int64_t kCls = 2;
    static constexpr std::int64_t kSep = 3;
    static constexpr std::int64_t kMask = 4;
    static constexpr std::int64_t kReserved = 5;

    // Characters with frequency >= min_freq and a glyph in the atlas become
    // entries; everything else maps to kUnk at lookup. An empty corpus
    // produces the 5 reserved tokens and a warning on stderr.
    static Vocabulary build(const Corpus& corpus, const FontAtlas& atlas, std::int64_t min_freq);

    std::int64_t size() const { return static_cast<std::int64_t>(chars_.size()) + kReserved; }
    std::int64_t non_reserved() const { return static_cast<std::int64_t>(chars_.size()); }

    bool contains(char32_t cp) const { return ids_.count(cp) != 0; }
    std::int64_t id_of(char32_t cp) const;  // kUnk for absent characters
    char32_t char_of(std::int64_t id) const;
    std::int64_t freq_of(std::int64_t id) const;
    bool is_reserved(std::int64_t id) const { return id >= 0 && id < kReserved; }

private:
    std::vector<char32_t> chars_;       // index = id - kReserved
    std::vector<std::int64_t> freqs_;
    std::unordered_map<char32_t, std::int64_t> ids_;
};

}  // namespace glyphcrm
