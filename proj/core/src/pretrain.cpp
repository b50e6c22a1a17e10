#include "glyphcrm/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace glyphcrm {

void truncate_pair(std::vector<char32_t>& a, std::vector<char32_t>& b, std::int64_t max_len) {
    while (static_cast<std::int64_t>(a.size() + b.size()) + 3 > max_len) {
        if (a.size() > b.size()) {
            a.pop_back();
        } else {
            b.pop_back();
        }
    }
}

std::vector<SentencePair> make_nsp_pairs(const Corpus& corpus, Rng& rng, std::int64_t max_len) {
    const auto& docs = corpus.documents;
    if (docs.size() < 2) {
        throw Error("NotNext sampling needs at least 2 documents, corpus has " +
                    std::to_string(docs.size()));
    }
    // sentence counts per document, for sampling "a sentence from another doc"
    std::vector<std::int64_t> counts(docs.size());
    std::int64_t total = 0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        counts[d] = static_cast<std::int64_t>(docs[d].size());
        total += counts[d];
    }

    std::vector<SentencePair> pairs;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        for (std::size_t i = 0; i + 1 < docs[d].size(); ++i) {
            SentencePair p;
            p.a = docs[d][i];
            if (rng.uniform01() < 0.5) {
                p.label = NspLabel::IsNext;
                p.b = docs[d][i + 1];
            } else {
                p.label = NspLabel::NotNext;
                const std::int64_t other = total - counts[d];
                std::int64_t pick = rng.uniform_int(other);
                for (std::size_t od = 0; od < docs.size(); ++od) {
                    if (od == d) continue;
                    if (pick < counts[od]) {
                        p.b = docs[od][static_cast<std::size_t>(pick)];
                        break;
                    }
                    pick -= counts[od];
                }
            }
            truncate_pair(p.a, p.b, max_len);
            pairs.push_back(std::move(p));
        }
    }
    return pairs;
}

MaskedIds apply_mlm_mask(std::span<const std::int64_t> ids, const Vocabulary& vocab, Rng& rng) {
    MaskedIds out;
    out.ids.assign(ids.begin(), ids.end());
    out.labels.assign(ids.size(), kIgnoreLabel);
    const std::int64_t non_reserved = vocab.non_reserved();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (vocab.is_reserved(ids[i])) continue;
        if (rng.uniform01() >= 0.15) continue;
        out.labels[i] = ids[i];
        const double branch = rng.uniform01();
        if (branch < 0.8) {
            out.ids[i] = Vocabulary::kMask;
        } else if (branch < 0.9 && non_reserved > 0) {
            out.ids[i] = Vocabulary::kReserved + rng.uniform_int(non_reserved);
        }
        // else: unchanged
    }
    return out;
}

PretrainExample build_example(const SentencePair& pair, const Vocabulary& vocab, Rng& rng) {
    PretrainExample ex;
    ex.nsp_label = pair.label;

    std::vector<char32_t> chars;  // 0 marks a frame token
    std::vector<std::int64_t> ids;
    auto push_special = [&](std::int64_t id) {
        ids.push_back(id);
        chars.push_back(0);
    };
    push_special(Vocabulary::kCls);
    for (char32_t cp : pair.a) {
        ids.push_back(vocab.id_of(cp));
        chars.push_back(cp);
    }
    push_special(Vocabulary::kSep);
    const std::size_t seg1_start = ids.size();
    for (char32_t cp : pair.b) {
        ids.push_back(vocab.id_of(cp));
        chars.push_back(cp);
    }
    push_special(Vocabulary::kSep);

    MaskedIds masked = apply_mlm_mask(ids, vocab, rng);
    ex.token_ids = masked.ids;
    ex.mlm_labels = std::move(masked.labels);
    ex.segments.assign(ids.size(), 0);
    for (std::size_t i = seg1_start; i < ids.size(); ++i) ex.segments[i] = 1;
    ex.attention.assign(ids.size(), 1);

    ex.render.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::int64_t mid = ex.token_ids[i];
        if (chars[i] == 0) {
            // frame token: [CLS] or [SEP] (never maskable)
            ex.render.push_back(TokenRender::of(ids[i] == Vocabulary::kCls ? SpecialToken::Cls
                                                                           : SpecialToken::Sep));
        } else if (mid == Vocabulary::kMask) {
            ex.render.push_back(TokenRender::of(SpecialToken::Mask));
        } else if (mid != ids[i]) {
            // random replacement: draw the replacement's glyph
            ex.render.push_back(TokenRender::character(vocab.char_of(mid)));
        } else {
            // untouched (or unchanged-selected) character keeps its own
            // glyph even when its id degraded to [UNK]
            ex.render.push_back(TokenRender::character(chars[i]));
        }
    }
    return ex;
}

PretrainBatch make_batch(std::span<const PretrainExample> examples) {
    PretrainBatch batch;
    batch.size = static_cast<std::int64_t>(examples.size());
    for (const auto& ex : examples) {
        batch.len = std::max(batch.len, static_cast<std::int64_t>(ex.token_ids.size()));
    }
    for (const auto& ex : examples) {
        const std::size_t len = ex.token_ids.size();
        for (std::size_t i = 0; i < static_cast<std::size_t>(batch.len); ++i) {
            if (i < len) {
                batch.render.push_back(ex.render[i]);
                batch.segments.push_back(ex.segments[i]);
                batch.attention.push_back(ex.attention[i]);
                batch.mlm_labels.push_back(ex.mlm_labels[i]);
            } else {
                batch.render.push_back(TokenRender::of(SpecialToken::Pad));
                batch.segments.push_back(0);
                batch.attention.push_back(0);
                batch.mlm_labels.push_back(kIgnoreLabel);
            }
        }
        batch.nsp_labels.push_back(static_cast<std::int64_t>(ex.nsp_label));
    }
    return batch;
}

template <typename T>
VarT<T> mlm_loss(GraphT<T>& g, VarT<T> hidden, const std::vector<std::int64_t>& labels,
                 const BoundLinear<T>& output_proj) {
    auto logits = g.linear(hidden, output_proj.weight, output_proj.bias);
    return g.cross_entropy(logits, labels, kIgnoreLabel);
}

template <typename T>
VarT<T> nsp_loss(GraphT<T>& g, VarT<T> h_cls, const std::vector<std::int64_t>& labels,
                 const BoundLinear<T>& head) {
    auto logits = g.linear(h_cls, head.weight, head.bias);
    return g.cross_entropy(logits, labels, kIgnoreLabel);
}

template VarT<float> mlm_loss<float>(GraphT<float>&, VarT<float>,
                                     const std::vector<std::int64_t>&, const BoundLinear<float>&);
template VarT<double> mlm_loss<double>(GraphT<double>&, VarT<double>,
                                       const std::vector<std::int64_t>&,
                                       const BoundLinear<double>&);
template VarT<float> nsp_loss<float>(GraphT<float>&, VarT<float>, const std::vector<std::int64_t>&,
                                     const BoundLinear<float>&);
template VarT<double> nsp_loss<double>(GraphT<double>&, VarT<double>,
                                       const std::vector<std::int64_t>&,
                                       const BoundLinear<double>&);

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

// rng stream tags; arbitrary fixed constants
constexpr std::uint64_t kEpochStream = 0xDA7A0001;
constexpr std::uint64_t kExampleStream = 0xDA7A0002;
constexpr std::uint64_t kEvalStream = 0xDA7A0E7A;
constexpr std::uint64_t kMasterStream = 0xDA7A00AA;

struct StepOutput {
    double mlm_loss = 0, nsp_loss = 0, mlm_acc = 0;
    std::int64_t masked = 0, masked_correct = 0;
    std::int64_t nsp_correct = 0;
};

// Runs one forward pass (and backward when training) over a batch. Gradient
// collection order matches collect_params(model, heads).
StepOutput run_batch(const Model& model, const PretrainHeads& heads, const FontAtlas& atlas,
                     const PretrainBatch& batch, bool train, std::vector<Tensor>* grads_out) {
    Graph g;
    auto bm = bind_model<float>(g, model, train);
    auto bh = bind_heads<float>(g, heads, train);
    auto states = hanglyph_forward_deduped(g, batch.render, atlas, bm.hanglyph);

    const std::int64_t len = batch.len;
    std::vector<Var> hs, cls_rows;
    hs.reserve(static_cast<std::size_t>(batch.size));
    cls_rows.reserve(static_cast<std::size_t>(batch.size));
    for (std::int64_t b = 0; b < batch.size; ++b) {
        GlyphStates s{g.slice_rows(states.r, b * len, len), g.slice_rows(states.g1, b * len, len),
                      g.slice_rows(states.g2, b * len, len)};
        std::vector<std::int64_t> segments(batch.segments.begin() + b * len,
                                           batch.segments.begin() + (b + 1) * len);
        AttentionMask mask{std::vector<std::uint8_t>(batch.attention.begin() + b * len,
                                                     batch.attention.begin() + (b + 1) * len)};
        auto h = encoder_forward(g, s, segments, mask, bm.encoder);
        hs.push_back(h);
        cls_rows.push_back(g.slice_rows(h, 0, 1));
    }
    auto all_h = g.concat_rows(std::span<const Var>(hs));
    auto mlm_logits = g.linear(all_h, bh.mlm.weight, bh.mlm.bias);
    auto l_mlm = g.cross_entropy(mlm_logits, batch.mlm_labels, kIgnoreLabel);
    auto cls = g.concat_rows(std::span<const Var>(cls_rows));
    auto nsp_logits = g.linear(cls, bh.nsp.weight, bh.nsp.bias);
    auto l_nsp = g.cross_entropy(nsp_logits, batch.nsp_labels, kIgnoreLabel);
    auto loss = g.add(l_mlm, l_nsp);

    StepOutput out;
    out.mlm_loss = static_cast<double>(l_mlm.value()[0]);
    out.nsp_loss = static_cast<double>(l_nsp.value()[0]);
    if (!std::isfinite(out.mlm_loss + out.nsp_loss)) {
        throw NumericError("non-finite loss: mlm=" + std::to_string(out.mlm_loss) +
                           " nsp=" + std::to_string(out.nsp_loss));
    }

    // masked-token and NSP accuracy from the logits of this pass
    const Tensor& ml = mlm_logits.value();
    const std::int64_t vsz = ml.dim(1);
    for (std::size_t i = 0; i < batch.mlm_labels.size(); ++i) {
        const std::int64_t label = batch.mlm_labels[i];
        if (label == kIgnoreLabel) continue;
        const float* row = ml.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(vsz);
        std::int64_t best = 0;
        for (std::int64_t v = 1; v < vsz; ++v) {
            if (row[v] > row[best]) best = v;
        }
        ++out.masked;
        if (best == label) ++out.masked_correct;
    }
    out.mlm_acc = out.masked > 0
                      ? static_cast<double>(out.masked_correct) / static_cast<double>(out.masked)
                      : 0.0;
    const Tensor& nl = nsp_logits.value();
    for (std::int64_t b = 0; b < batch.size; ++b) {
        const float* row = nl.data() + static_cast<std::size_t>(b) * 2;
        const std::int64_t pred = row[1] > row[0] ? 1 : 0;
        if (pred == batch.nsp_labels[static_cast<std::size_t>(b)]) ++out.nsp_correct;
    }

    if (train) {
        g.backward(loss);
        auto vars = model_head_param_vars<float>(bm, bh);
        grads_out->clear();
        grads_out->reserve(vars.size());
        for (auto& v : vars) grads_out->push_back(v.grad());
    }
    return out;
}

nlohmann::json rng_state_json(const Rng& rng) {
    const auto s = rng.state();
    return {{"state", std::to_string(s[0])}, {"inc", std::to_string(s[1])}};
}

void restore_rng(Rng& rng, const nlohmann::json& j) {
    rng.set_state({std::stoull(j.at("state").get<std::string>()),
                   std::stoull(j.at("inc").get<std::string>())});
}

}  // namespace

PretrainResult pretrain_run(const Corpus& corpus, const FontAtlas& atlas, ModelConfig config,
                            const TrainConfig& train, const std::filesystem::path& out_dir,
                            const std::filesystem::path& resume_from) {
    Vocabulary vocab = Vocabulary::build(corpus, atlas, train.min_freq);
    config.vocab_size = vocab.size();
    config.validate();
    if (train.batch < 1) throw ConfigError("batch must be >= 1");
    if (train.total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (train.warmup >= train.total_steps) {
        throw ConfigError("warmup (" + std::to_string(train.warmup) +
                          ") must be below total_steps (" + std::to_string(train.total_steps) +
                          ")");
    }

    std::filesystem::create_directories(out_dir);

    Model model = make_model(config, train.seed);
    PretrainHeads heads = make_pretrain_heads(config, train.seed);
    Adam adam(0.9, 0.999, 1e-8, train.weight_decay);
    LrSchedule schedule{train.lr, train.warmup, train.total_steps};
    Rng master(train.seed, kMasterStream);
    std::int64_t start_step = 0;

    auto params = collect_params(model.params, heads);

    auto snapshot = [&](std::int64_t step) {
        CheckpointData data;
        nlohmann::json meta;
        meta["config"] = nlohmann::json::parse(config_to_json(config));
        meta["step"] = step;
        meta["adam_t"] = adam.steps();
        meta["rng"] = rng_state_json(master);
        data.meta_json = meta.dump();
        data.tensors = params;
        const auto& ms = adam.first_moments();
        const auto& vs = adam.second_moments();
        for (std::size_t i = 0; i < ms.size(); ++i) {
            data.tensors.push_back({"adam.m." + params[i].name, ms[i]});
            data.tensors.push_back({"adam.v." + params[i].name, vs[i]});
        }
        return data;
    };

    if (!resume_from.empty()) {
        CheckpointData data = load_checkpoint(resume_from);
        nlohmann::json meta = nlohmann::json::parse(data.meta_json);
        const ModelConfig stored = config_from_json(meta.at("config").dump());
        if (!(stored == config)) {
            throw ConfigError("checkpoint config " + config_to_json(stored) +
                              " does not match run config " + config_to_json(config));
        }
        restore_params(params, data);
        start_step = meta.at("step").get<std::int64_t>();
        std::vector<Tensor> ms, vs;
        for (const auto& p : params) {
            const Tensor* m = data.find("adam.m." + p.name);
            const Tensor* v = data.find("adam.v." + p.name);
            if (!m || !v) throw IoError("checkpoint lacks optimizer state for " + p.name);
            ms.push_back(m->clone());
            vs.push_back(v->clone());
        }
        adam.restore(std::move(ms), std::move(vs), meta.at("adam_t").get<std::int64_t>());
        restore_rng(master, meta.at("rng"));
    }

    // deterministic fixed evaluation set
    std::vector<PretrainExample> eval_examples;
    if (train.eval_every > 0) {
        Rng eval_rng(train.seed, kEvalStream);
        auto pairs = make_nsp_pairs(corpus, eval_rng, config.max_len);
        for (std::size_t i = pairs.size(); i > 1; --i) {
            std::swap(pairs[i - 1], pairs[static_cast<std::size_t>(eval_rng.uniform_int(
                                        static_cast<std::int64_t>(i)))]);
        }
        const std::size_t n =
            std::min<std::size_t>(pairs.size(), static_cast<std::size_t>(train.eval_examples));
        for (std::size_t i = 0; i < n; ++i) {
            Rng ex_rng(train.seed, mix_seed(kEvalStream, 1, i));
            eval_examples.push_back(build_example(pairs[i], vocab, ex_rng));
        }
    }
    auto run_eval = [&] {
        EvalMetrics em;
        if (eval_examples.empty()) return em;
        PretrainBatch batch = make_batch(eval_examples);
        StepOutput out = run_batch(model, heads, atlas, batch, false, nullptr);
        em.mlm_acc = out.mlm_acc;
        em.masked_positions = out.masked;
        em.nsp_acc = static_cast<double>(out.nsp_correct) / static_cast<double>(batch.size);
        return em;
    };

    std::ofstream log(out_dir / "metrics.jsonl", start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open metrics log in " + out_dir.string());

    PretrainResult result;
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::path last_checkpoint = resume_from;

    // one fixed pair schedule per epoch, derived from (seed, epoch)
    std::vector<SentencePair> epoch_pairs;
    std::int64_t pairs_epoch = -1;
    std::int64_t steps_per_epoch = 0;
    const auto load_epoch = [&](std::int64_t epoch) {
        Rng erng(train.seed, mix_seed(kEpochStream, static_cast<std::uint64_t>(epoch)));
        epoch_pairs = make_nsp_pairs(corpus, erng, config.max_len);
        for (std::size_t i = epoch_pairs.size(); i > 1; --i) {
            std::swap(epoch_pairs[i - 1],
                      epoch_pairs[static_cast<std::size_t>(erng.uniform_int(static_cast<std::int64_t>(i)))]);
        }
        steps_per_epoch = static_cast<std::int64_t>(epoch_pairs.size()) / train.batch;
        if (steps_per_epoch < 1) {
            throw ConfigError("corpus yields " + std::to_string(epoch_pairs.size()) +
                              " pairs, fewer than batch size " + std::to_string(train.batch));
        }
        pairs_epoch = epoch;
    };
    load_epoch(0);

    std::vector<Tensor> grads;
    std::int64_t step = start_step;
    try {
        while (step < train.total_steps) {
            ++step;
            const std::int64_t epoch = (step - 1) / steps_per_epoch;
            if (epoch != pairs_epoch) load_epoch(epoch);
            const std::int64_t offset = ((step - 1) % steps_per_epoch) * train.batch;

            std::vector<PretrainExample> examples;
            examples.reserve(static_cast<std::size_t>(train.batch));
            for (std::int64_t i = 0; i < train.batch; ++i) {
                const auto pair_index = static_cast<std::size_t>(offset + i);
                Rng ex_rng(train.seed, mix_seed(kExampleStream, static_cast<std::uint64_t>(epoch),
                                                pair_index));
                examples.push_back(build_example(epoch_pairs[pair_index], vocab, ex_rng));
            }
            PretrainBatch batch = make_batch(examples);

            StepOutput out = run_batch(model, heads, atlas, batch, true, &grads);
            const double lr = schedule.at(step);
            adam.step(params, grads, lr);

            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            StepMetrics sm{step, lr, out.mlm_loss, out.nsp_loss, out.mlm_acc, wall};
            result.history.push_back(sm);
            if (train.log_every > 0 && step % train.log_every == 0) {
                nlohmann::json line{{"step", sm.step},         {"lr", sm.lr},
                                    {"mlm_loss", sm.mlm_loss}, {"nsp_loss", sm.nsp_loss},
                                    {"mlm_acc", sm.mlm_acc},   {"wallclock", sm.wallclock}};
                log << line.dump() << "\n";
            }

            if (train.save_every > 0 && step % train.save_every == 0) {
                const auto path = out_dir / ("step_" + std::to_string(step) + ".ckpt");
                save_checkpoint(path, snapshot(step));
                last_checkpoint = path;
            }

            if (train.eval_every > 0 && step % train.eval_every == 0) {
                result.final_eval = run_eval();
                if (train.target_mlm_acc > 0 && train.target_nsp_acc > 0 &&
                    step >= train.min_steps &&
                    result.final_eval.mlm_acc > train.target_mlm_acc &&
                    result.final_eval.nsp_acc > train.target_nsp_acc) {
                    result.reached_targets = true;
                    break;
                }
            }
        }
    } catch (const NumericError& e) {
        result.abort_reason = e.what();
        std::cerr << "pretraining aborted at step " << step << ": " << e.what() << "\n";
        if (!last_checkpoint.empty()) {
            std::cerr << "last good checkpoint: " << last_checkpoint.string() << "\n";
        }
        result.steps = step;
        result.final_checkpoint = last_checkpoint;
        return result;
    }

    result.steps = step;
    if (train.eval_every > 0 && !result.reached_targets) result.final_eval = run_eval();
    const auto final_path = out_dir / "final.ckpt";
    save_checkpoint(final_path, snapshot(step));
    result.final_checkpoint = final_path;
    return result;
}

}  // namespace glyphcrm
