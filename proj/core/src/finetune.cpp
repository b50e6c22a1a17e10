#include "glyphcrm/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "glyphcrm/utf8.hpp"

namespace glyphcrm {

const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::SingleCls: return "single_cls";
        case TaskKind::PairCls: return "pair_cls";
        case TaskKind::Tagging: return "tagging";
    }
    throw Error("unknown task kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "single_cls") return TaskKind::SingleCls;
    if (name == "pair_cls") return TaskKind::PairCls;
    if (name == "tagging") return TaskKind::Tagging;
    throw ConfigError("unknown task kind '" + name + "' (single_cls, pair_cls, tagging)");
}

void TaskSpec::validate() const {
    if (labels.empty()) throw ConfigError("task needs a non-empty label set");
    if (epochs < 1 || batch < 1 || max_len < 4) throw ConfigError("bad task hyperparameters");
    if (lr <= 0) throw ConfigError("task learning rate must be positive");
}

std::int64_t TaskSpec::label_id(const std::string& label, int line) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return static_cast<std::int64_t>(i);
    }
    throw DataError("label '" + label + "' is not in the declared label set", line);
}

std::vector<ClsExample> load_cls_tsv(const std::filesystem::path& path, const TaskSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open task file " + path.string());
    std::vector<ClsExample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        const std::size_t expected = spec.kind == TaskKind::PairCls ? 3 : 2;
        if (cols.size() != expected) {
            throw DataError("expected " + std::to_string(expected) + " tab-separated fields, got " +
                            std::to_string(cols.size()), lineno);
        }
        ClsExample ex;
        ex.label = spec.label_id(cols[0], lineno);
        ex.a = utf8_decode(cols[1]);
        std::erase_if(ex.a, is_whitespace);
        if (spec.kind == TaskKind::PairCls) {
            ex.b = utf8_decode(cols[2]);
            std::erase_if(ex.b, is_whitespace);
        }
        if (ex.a.empty()) throw DataError("empty text", lineno);
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<TagExample> load_tag_file(const std::filesystem::path& path, const TaskSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open task file " + path.string());
    std::vector<TagExample> out;
    TagExample cur;
    std::string line;
    int lineno = 0;
    auto flush = [&] {
        if (!cur.chars.empty()) out.push_back(std::move(cur));
        cur = {};
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            flush();
            continue;
        }
        const std::size_t sp = line.find(' ');
        if (sp == std::string::npos) throw DataError("expected 'char label'", lineno);
        const auto cps = utf8_decode(line.substr(0, sp));
        if (cps.size() != 1) {
            throw DataError("token '" + line.substr(0, sp) + "' is not a single character", lineno);
        }
        cur.chars.push_back(cps[0]);
        cur.labels.push_back(spec.label_id(line.substr(sp + 1), lineno));
    }
    flush();
    return out;
}

std::vector<double> classify(const Tensor& h_cls, const LinearParam& head) {
    const std::int64_t d = head.weight.dim(0), k = head.weight.dim(1);
    if (h_cls.size() != static_cast<std::size_t>(d)) {
        throw ShapeError("classify: state " + shape_str(h_cls.shape()) + " vs head " +
                         shape_str(head.weight.shape()));
    }
    std::vector<double> logits(static_cast<std::size_t>(k));
    for (std::int64_t j = 0; j < k; ++j) {
        double acc = static_cast<double>(head.bias[static_cast<std::size_t>(j)]);
        for (std::int64_t p = 0; p < d; ++p) {
            acc += static_cast<double>(h_cls[static_cast<std::size_t>(p)]) *
                   static_cast<double>(head.weight[static_cast<std::size_t>(p * k + j)]);
        }
        logits[static_cast<std::size_t>(j)] = acc;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double& v : logits) {
        v = std::exp(v - mx);
        denom += v;
    }
    for (double& v : logits) v /= denom;
    return logits;
}

std::int64_t argmax_label(const std::vector<double>& dist) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.size(); ++i) {
        if (dist[i] > dist[best]) best = i;  // strict: ties keep the lowest id
    }
    return static_cast<std::int64_t>(best);
}

std::vector<std::int64_t> tag(const Tensor& hidden, const LinearParam& head) {
    const std::int64_t rows = hidden.dim(0);
    const std::int64_t d = hidden.dim(1);
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
        Tensor row({d});
        std::copy_n(hidden.data() + i * d, static_cast<std::size_t>(d), row.data());
        out.push_back(argmax_label(classify(row, head)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kHeadStream = 0xF7E4D001;
constexpr std::uint64_t kShuffleStream = 0xF7E4D002;

struct TaskItem {
    std::vector<TokenRender> render;
    std::vector<std::int64_t> segments;
    std::int64_t cls_label = kIgnoreLabel;
    std::vector<std::int64_t> tag_labels;  // aligned with render; ignore on frames
    std::vector<std::string> gold_labels;  // tagging, char positions only
};

TaskItem frame_cls(const ClsExample& ex, const TaskSpec& spec) {
    TaskItem item;
    std::vector<char32_t> a = ex.a, b = ex.b;
    if (spec.kind == TaskKind::PairCls) {
        truncate_pair(a, b, spec.max_len);
    } else if (static_cast<std::int64_t>(a.size()) + 2 > spec.max_len) {
        a.resize(static_cast<std::size_t>(spec.max_len - 2));
    }
    item.render.push_back(TokenRender::of(SpecialToken::Cls));
    item.segments.push_back(0);
    for (char32_t cp : a) {
        item.render.push_back(TokenRender::character(cp));
        item.segments.push_back(0);
    }
    item.render.push_back(TokenRender::of(SpecialToken::Sep));
    item.segments.push_back(0);
    if (spec.kind == TaskKind::PairCls) {
        for (char32_t cp : b) {
            item.render.push_back(TokenRender::character(cp));
            item.segments.push_back(1);
        }
        item.render.push_back(TokenRender::of(SpecialToken::Sep));
        item.segments.push_back(1);
    }
    item.cls_label = ex.label;
    return item;
}

TaskItem frame_tag(const TagExample& ex, const TaskSpec& spec) {
    TaskItem item;
    std::vector<char32_t> chars = ex.chars;
    std::vector<std::int64_t> labels = ex.labels;
    if (static_cast<std::int64_t>(chars.size()) + 2 > spec.max_len) {
        chars.resize(static_cast<std::size_t>(spec.max_len - 2));
        labels.resize(chars.size());
    }
    item.render.push_back(TokenRender::of(SpecialToken::Cls));
    item.segments.push_back(0);
    item.tag_labels.push_back(kIgnoreLabel);
    for (std::size_t i = 0; i < chars.size(); ++i) {
        item.render.push_back(TokenRender::character(chars[i]));
        item.segments.push_back(0);
        item.tag_labels.push_back(labels[i]);
        item.gold_labels.push_back(spec.labels[static_cast<std::size_t>(labels[i])]);
    }
    item.render.push_back(TokenRender::of(SpecialToken::Sep));
    item.segments.push_back(0);
    item.tag_labels.push_back(kIgnoreLabel);
    return item;
}

struct TaskBatchOut {
    double loss = 0;
    std::vector<std::int64_t> cls_preds;                 // per sequence
    std::vector<std::vector<std::int64_t>> tag_preds;    // char positions only
};

TaskBatchOut run_task_batch(const Model& model, const LinearParam& head, const TaskSpec& spec,
                            const FontAtlas& atlas, std::span<const TaskItem> items, bool train,
                            std::vector<Tensor>* grads_out) {
    Graph g;
    auto bm = bind_model<float>(g, model, train);
    BoundLinear<float> bh = bind(g, head, train);

    std::int64_t len = 0;
    for (const auto& it : items) len = std::max(len, static_cast<std::int64_t>(it.render.size()));

    std::vector<TokenRender> render;
    std::vector<std::uint8_t> attention;
    std::vector<std::int64_t> segments;
    std::vector<std::int64_t> flat_tags;
    for (const auto& it : items) {
        for (std::int64_t i = 0; i < len; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            if (idx < it.render.size()) {
                render.push_back(it.render[idx]);
                segments.push_back(it.segments[idx]);
                attention.push_back(1);
                flat_tags.push_back(spec.kind == TaskKind::Tagging ? it.tag_labels[idx]
                                                                   : kIgnoreLabel);
            } else {
                render.push_back(TokenRender::of(SpecialToken::Pad));
                segments.push_back(0);
                attention.push_back(0);
                flat_tags.push_back(kIgnoreLabel);
            }
        }
    }

    auto states = hanglyph_forward_deduped(g, render, atlas, bm.hanglyph);

    const auto count = static_cast<std::int64_t>(items.size());
    std::vector<Var> hs, cls_rows;
    for (std::int64_t b = 0; b < count; ++b) {
        GlyphStates s{g.slice_rows(states.r, b * len, len), g.slice_rows(states.g1, b * len, len),
                      g.slice_rows(states.g2, b * len, len)};
        std::vector<std::int64_t> seg(segments.begin() + b * len, segments.begin() + (b + 1) * len);
        AttentionMask mask{std::vector<std::uint8_t>(attention.begin() + b * len,
                                                     attention.begin() + (b + 1) * len)};
        auto h = encoder_forward(g, s, seg, mask, bm.encoder);
        hs.push_back(h);
        cls_rows.push_back(g.slice_rows(h, 0, 1));
    }

    Var loss;
    Var logits;
    if (spec.kind == TaskKind::Tagging) {
        auto all_h = g.concat_rows(std::span<const Var>(hs));
        logits = g.linear(all_h, bh.weight, bh.bias);
        loss = g.cross_entropy(logits, flat_tags, kIgnoreLabel);
    } else {
        auto cls = g.concat_rows(std::span<const Var>(cls_rows));
        logits = g.linear(cls, bh.weight, bh.bias);
        std::vector<std::int64_t> labels;
        for (const auto& it : items) labels.push_back(it.cls_label);
        loss = g.cross_entropy(logits, labels, kIgnoreLabel);
    }

    TaskBatchOut out;
    out.loss = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(out.loss)) throw NumericError("non-finite fine-tuning loss");

    const Tensor& lv = logits.value();
    const std::int64_t k = lv.dim(1);
    auto row_argmax = [&](std::int64_t row) {
        const float* p = lv.data() + row * k;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < k; ++j) {
            if (p[j] > p[best]) best = j;
        }
        return best;
    };
    if (spec.kind == TaskKind::Tagging) {
        for (std::int64_t b = 0; b < count; ++b) {
            std::vector<std::int64_t> preds;
            const auto& it = items[static_cast<std::size_t>(b)];
            for (std::size_t i = 0; i < it.render.size(); ++i) {
                if (it.tag_labels[i] == kIgnoreLabel) continue;
                preds.push_back(row_argmax(b * len + static_cast<std::int64_t>(i)));
            }
            out.tag_preds.push_back(std::move(preds));
        }
    } else {
        for (std::int64_t b = 0; b < count; ++b) out.cls_preds.push_back(row_argmax(b));
    }

    if (train) {
        g.backward(loss);
        auto vars = model_param_vars<float>(bm);
        vars.push_back(bh.weight);
        vars.push_back(bh.bias);
        grads_out->clear();
        for (auto& v : vars) grads_out->push_back(v.grad());
    }
    return out;
}

double evaluate_items(const Model& model, const LinearParam& head, const TaskSpec& spec,
                      const FontAtlas& atlas, std::span<const TaskItem> items,
                      EvalReport* report_out) {
    std::int64_t correct = 0;
    std::vector<std::vector<std::string>> pred_seqs, gold_seqs;
    for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(spec.batch)) {
        const std::size_t n = std::min(items.size() - start, static_cast<std::size_t>(spec.batch));
        auto out = run_task_batch(model, head, spec, atlas, items.subspan(start, n), false,
                                  nullptr);
        if (spec.kind == TaskKind::Tagging) {
            for (std::size_t b = 0; b < n; ++b) {
                const auto& it = items[start + b];
                std::vector<std::string> pl;
                for (std::int64_t id : out.tag_preds[b]) {
                    pl.push_back(spec.labels[static_cast<std::size_t>(id)]);
                }
                pred_seqs.push_back(std::move(pl));
                gold_seqs.push_back(it.gold_labels);
            }
        } else {
            for (std::size_t b = 0; b < n; ++b) {
                if (out.cls_preds[b] == items[start + b].cls_label) ++correct;
            }
        }
    }
    if (spec.kind == TaskKind::Tagging) {
        EvalReport rep = span_f1(pred_seqs, gold_seqs);
        if (report_out) *report_out = rep;
        return rep.f1;
    }
    EvalReport rep;
    rep.accuracy = items.empty() ? 0.0
                                 : static_cast<double>(correct) / static_cast<double>(items.size());
    if (report_out) *report_out = rep;
    return rep.accuracy;
}

std::vector<TaskItem> load_items(const std::filesystem::path& path, const TaskSpec& spec) {
    std::vector<TaskItem> items;
    if (spec.kind == TaskKind::Tagging) {
        for (const auto& ex : load_tag_file(path, spec)) items.push_back(frame_tag(ex, spec));
    } else {
        for (const auto& ex : load_cls_tsv(path, spec)) items.push_back(frame_cls(ex, spec));
    }
    return items;
}

nlohmann::json task_to_json(const TaskSpec& spec) {
    return {{"kind", task_kind_name(spec.kind)}, {"labels", spec.labels}};
}

}  // namespace

FinetuneResult finetune_run(const FinetuneOptions& opt, const FontAtlas& atlas) {
    opt.spec.validate();
    CheckpointData data = load_checkpoint(opt.checkpoint);
    nlohmann::json meta = nlohmann::json::parse(data.meta_json);
    const ModelConfig config = config_from_json(meta.at("config").dump());

    Model model = make_model(config, opt.spec.seed);
    auto core_params = collect_params(model.params);
    restore_params(core_params, data);

    Rng head_rng(opt.spec.seed, kHeadStream);
    LinearParam head = make_linear(config.hidden, static_cast<std::int64_t>(opt.spec.labels.size()),
                                   head_rng);

    auto params = core_params;
    params.push_back({"head.task.weight", head.weight});
    params.push_back({"head.task.bias", head.bias});

    std::vector<TaskItem> train_items = load_items(opt.train_file, opt.spec);
    std::vector<TaskItem> dev_items = load_items(opt.dev_file, opt.spec);
    std::vector<TaskItem> test_items = load_items(opt.test_file, opt.spec);
    if (train_items.empty()) throw DataError("no training examples in " + opt.train_file.string(), 0);

    Adam adam(0.9, 0.999, 1e-8, 0.01);
    std::vector<Tensor> grads;

    FinetuneResult result;
    double best_metric = -1.0;
    std::vector<Tensor> best_snapshot;

    std::vector<std::size_t> order(train_items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::int64_t epoch = 1; epoch <= opt.spec.epochs; ++epoch) {
        Rng shuffle_rng(opt.spec.seed, mix_seed(kShuffleStream, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(
                                        static_cast<std::int64_t>(i)))]);
        }
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(opt.spec.batch)) {
            const std::size_t n =
                std::min(order.size() - start, static_cast<std::size_t>(opt.spec.batch));
            std::vector<TaskItem> batch;
            batch.reserve(n);
            for (std::size_t i = 0; i < n; ++i) batch.push_back(train_items[order[start + i]]);
            run_task_batch(model, head, opt.spec, atlas, batch, true, &grads);
            adam.step(params, grads, opt.spec.lr);
        }

        const double metric = dev_items.empty()
                                  ? 0.0
                                  : evaluate_items(model, head, opt.spec, atlas, dev_items, nullptr);
        result.dev_history.push_back(metric);
        if (metric > best_metric) {
            best_metric = metric;
            result.best_epoch = epoch;
            best_snapshot.clear();
            for (const auto& p : params) best_snapshot.push_back(p.tensor.clone());
        }
    }

    if (!best_snapshot.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            std::copy_n(best_snapshot[i].data(), best_snapshot[i].size(), params[i].tensor.data());
        }
    }

    std::filesystem::create_directories(opt.out_dir);
    const auto ckpt_path = opt.out_dir / "finetuned.ckpt";
    CheckpointData out_data;
    nlohmann::json out_meta;
    out_meta["config"] = nlohmann::json::parse(config_to_json(config));
    out_meta["task"] = task_to_json(opt.spec);
    out_data.meta_json = out_meta.dump();
    out_data.tensors = params;
    save_checkpoint(ckpt_path, out_data);
    result.checkpoint = ckpt_path;

    evaluate_items(model, head, opt.spec, atlas, test_items, &result.test_report);
    return result;
}

FinetunedModel load_finetuned(const std::filesystem::path& path) {
    CheckpointData data = load_checkpoint(path);
    nlohmann::json meta = nlohmann::json::parse(data.meta_json);
    const ModelConfig config = config_from_json(meta.at("config").dump());

    FinetunedModel fm;
    fm.spec.kind = task_kind_from_name(meta.at("task").at("kind").get<std::string>());
    fm.spec.labels = meta.at("task").at("labels").get<std::vector<std::string>>();
    fm.model = make_model(config, 0);
    fm.head = LinearParam{Tensor({config.hidden, static_cast<std::int64_t>(fm.spec.labels.size())}),
                          Tensor({static_cast<std::int64_t>(fm.spec.labels.size())})};
    auto params = collect_params(fm.model.params);
    params.push_back({"head.task.weight", fm.head.weight});
    params.push_back({"head.task.bias", fm.head.bias});
    restore_params(params, data);
    return fm;
}

EvalReport evaluate_file(const FinetunedModel& m, const std::filesystem::path& data,
                         const FontAtlas& atlas) {
    std::vector<TaskItem> items = load_items(data, m.spec);
    EvalReport rep;
    evaluate_items(m.model, m.head, m.spec, atlas, items, &rep);
    return rep;
}

}  // namespace glyphcrm
