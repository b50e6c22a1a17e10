#include "glyphcrm/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "glyphcrm/utf8.hpp"

namespace glyphcrm {

std::size_t Corpus::sentence_count() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.size();
    return n;
}

Corpus parse_corpus(std::string_view text) {
    Corpus corpus;
    std::vector<std::vector<char32_t>> doc;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;

        std::vector<char32_t> cps = utf8_decode(line);
        std::erase_if(cps, is_whitespace);
        if (cps.empty()) {
            if (!doc.empty()) {
                corpus.documents.push_back(std::move(doc));
                doc.clear();
            }
        } else {
            doc.push_back(std::move(cps));
        }
        if (end == text.size()) break;
    }
    if (!doc.empty()) corpus.documents.push_back(std::move(doc));
    return corpus;
}

Corpus load_corpus_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_corpus(ss.str());
}

Vocabulary Vocabulary::build(const Corpus& corpus, const FontAtlas& atlas, std::int64_t min_freq) {
    std::map<char32_t, std::int64_t> freq;
    for (const auto& doc : corpus.documents) {
        for (const auto& sentence : doc) {
            for (char32_t cp : sentence) ++freq[cp];
        }
    }

    Vocabulary v;
    if (freq.empty()) {
        std::cerr << "warning: empty corpus, vocabulary holds only the reserved tokens\n";
        return v;
    }

    std::vector<std::pair<char32_t, std::int64_t>> entries;
    for (const auto& [cp, n] : freq) {
        if (n >= min_freq && atlas.has(cp)) entries.emplace_back(cp, n);
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [cp, n] : entries) {
        v.ids_[cp] = static_cast<std::int64_t>(v.chars_.size()) + kReserved;
        v.chars_.push_back(cp);
        v.freqs_.push_back(n);
    }
    return v;
}

std::int64_t Vocabulary::id_of(char32_t cp) const {
    auto it = ids_.find(cp);
    return it == ids_.end() ? kUnk : it->second;
}

char32_t Vocabulary::char_of(std::int64_t id) const {
    if (id < kReserved || id >= size()) {
        throw Error("id " + std::to_string(id) + " has no character (vocab size " +
                    std::to_string(size()) + ")");
    }
    return chars_[static_cast<std::size_t>(id - kReserved)];
}

std::int64_t Vocabulary::freq_of(std::int64_t id) const {
    if (id < kReserved || id >= size()) return 0;
    return freqs_[static_cast<std::size_t>(id - kReserved)];
}

}  // namespace glyphcrm
