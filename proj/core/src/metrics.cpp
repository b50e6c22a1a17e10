#include "glyphcrm/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "glyphcrm/error.hpp"

namespace glyphcrm {

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["accuracy"] = accuracy;
    if (has_span_scores) {
        j["precision"] = precision;
        j["recall"] = recall;
        j["f1"] = f1;
        j["gold_entities"] = gold_entities;
        j["pred_entities"] = pred_entities;
        j["matched_entities"] = matched_entities;
        j["repaired_transitions"] = repaired_transitions;
    }
    return j.dump();
}

std::string EvalReport::to_table() const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-12s %8.4f\n", "accuracy", accuracy);
    out += buf;
    if (has_span_scores) {
        std::snprintf(buf, sizeof(buf), "%-12s %8.4f\n", "precision", precision);
        out += buf;
        std::snprintf(buf, sizeof(buf), "%-12s %8.4f\n", "recall", recall);
        out += buf;
        std::snprintf(buf, sizeof(buf), "%-12s %8.4f\n", "f1", f1);
        out += buf;
        std::snprintf(buf, sizeof(buf), "%-12s %8lld / %lld matched\n", "entities",
                      static_cast<long long>(matched_entities),
                      static_cast<long long>(gold_entities));
        out += buf;
    }
    return out;
}

std::vector<Entity> extract_entities(const std::vector<std::string>& labels,
                                     std::int64_t* repaired) {
    std::vector<Entity> out;
    std::string open_type;
    std::size_t open_begin = 0;
    bool open = false;

    auto close = [&](std::size_t end) {
        if (open) out.push_back({open_type, open_begin, end});
        open = false;
    };

    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::string& l = labels[i];
        if (l == "O" || l.empty()) {
            close(i ? i - 1 : 0);
            continue;
        }
        if (l.size() < 3 || (l[0] != 'B' && l[0] != 'I') || l[1] != '-') {
            throw Error("malformed BIO label '" + l + "'");
        }
        const std::string type = l.substr(2);
        if (l[0] == 'B') {
            close(i ? i - 1 : 0);
            open = true;
            open_type = type;
            open_begin = i;
        } else {  // I-
            if (open && type == open_type) continue;
            // I-X opening a run: repair to B-X
            close(i ? i - 1 : 0);
            if (repaired) ++*repaired;
            open = true;
            open_type = type;
            open_begin = i;
        }
    }
    close(labels.empty() ? 0 : labels.size() - 1);
    return out;
}

EvalReport span_f1(const std::vector<std::vector<std::string>>& pred,
                   const std::vector<std::vector<std::string>>& gold) {
    if (pred.size() != gold.size()) {
        throw Error("span_f1: " + std::to_string(pred.size()) + " predicted sequences vs " +
                    std::to_string(gold.size()) + " gold");
    }
    EvalReport rep;
    rep.has_span_scores = true;
    std::int64_t correct_tokens = 0, total_tokens = 0;
    for (std::size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].size() != gold[s].size()) {
            throw Error("span_f1: sequence " + std::to_string(s) + " has " +
                        std::to_string(pred[s].size()) + " predictions for " +
                        std::to_string(gold[s].size()) + " gold labels");
        }
        for (std::size_t i = 0; i < pred[s].size(); ++i) {
            ++total_tokens;
            if (pred[s][i] == gold[s][i]) ++correct_tokens;
        }
        auto pe = extract_entities(pred[s], &rep.repaired_transitions);
        auto ge = extract_entities(gold[s], nullptr);
        rep.pred_entities += static_cast<std::int64_t>(pe.size());
        rep.gold_entities += static_cast<std::int64_t>(ge.size());
        for (const auto& e : pe) {
            if (std::find(ge.begin(), ge.end(), e) != ge.end()) ++rep.matched_entities;
        }
    }
    rep.accuracy = total_tokens > 0
                       ? static_cast<double>(correct_tokens) / static_cast<double>(total_tokens)
                       : 0.0;
    rep.precision = rep.pred_entities > 0 ? static_cast<double>(rep.matched_entities) /
                                                static_cast<double>(rep.pred_entities)
                                          : 0.0;
    rep.recall = rep.gold_entities > 0 ? static_cast<double>(rep.matched_entities) /
                                             static_cast<double>(rep.gold_entities)
                                       : 0.0;
    rep.f1 = (rep.precision + rep.recall) > 0.0
                 ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
                 : 0.0;
    return rep;
}

EvalReport span_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    return span_f1(std::vector<std::vector<std::string>>{pred},
                   std::vector<std::vector<std::string>>{gold});
}

}  // namespace glyphcrm
