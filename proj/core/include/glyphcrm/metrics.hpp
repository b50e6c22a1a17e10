#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace glyphcrm {

struct EvalReport {
    double accuracy = 0.0;
    // entity-level scores, tagging tasks only
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t gold_entities = 0;
    std::int64_t pred_entities = 0;
    std::int64_t matched_entities = 0;
    // I-X without a preceding B-X/I-X of the same type, repaired to B-X
    std::int64_t repaired_transitions = 0;
    bool has_span_scores = false;

    std::string to_json() const;
    std::string to_table() const;
};

struct Entity {
    std::string type;
    std::size_t begin = 0;  // token index
    std::size_t end = 0;    // inclusive

    bool operator==(const Entity&) const = default;
};

// Maximal B-X (I-X)* runs under the BIO scheme. Malformed I-X openings are
// treated as B-X; repaired counts them.
std::vector<Entity> extract_entities(const std::vector<std::string>& labels,
                                     std::int64_t* repaired);

// Entity-level precision/recall/F1 over aligned label sequences: a match is
// an exact (type, begin, end) agreement. 0/0 counts as 0.
EvalReport span_f1(const std::vector<std::vector<std::string>>& pred,
                   const std::vector<std::vector<std::string>>& gold);

EvalReport span_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold);

}  // namespace glyphcrm
