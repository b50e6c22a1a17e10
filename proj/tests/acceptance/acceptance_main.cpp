// End-to-end verification suite. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "glyphcrm/finetune.hpp"
#include "glyphcrm/grad_check.hpp"
#include "glyphcrm/metrics.hpp"
#include "glyphcrm/model.hpp"
#include "glyphcrm/pretrain.hpp"
#include "glyphcrm/utf8.hpp"

using namespace glyphcrm;

namespace {

int g_failures = 0;
std::vector<std::string> g_notes;

void report(int criterion, const std::string& name, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

struct Check {
    bool ok = true;
    std::string detail;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

std::filesystem::path fixture(const char* name) {
    return std::filesystem::path(GLYPHCRM_FIXTURE_DIR) / name;
}

std::filesystem::path work_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "glyphcrm_acceptance";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

FontAtlas& atlas() {
    static FontAtlas a = load_bdf_file(fixture("cjk16.bdf"));
    return a;
}

Tensor rand_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

// ---------------------------------------------------------------------------
// 1. gradient integrity
// ---------------------------------------------------------------------------
void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    Check c;

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        Rng wrng(seed * 31 + 7);

        auto weighted = [&](GraphT<double>& g, VarT<double> x, const Tensor& w) {
            return g.sum(g.mul(x, g.leaf(w.cast<double>())));
        };

        {  // linear, tolerance 1e-6
            Tensor x = rand_tensor({3, 4}, rng), w = rand_tensor({4, 5}, rng),
                   b = rand_tensor({5}, rng), cw = rand_tensor({3, 5}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted(g, g.linear(xs[0], xs[1], xs[2]), cw);
                },
                {x, w, b}, 1e-6);
            c.expect(rep.pass, "linear seed " + std::to_string(seed) + " max_rel " +
                                   std::to_string(rep.max_rel_error));
        }
        {  // softmax, tolerance 1e-6
            Tensor x = rand_tensor({3, 6}, rng, -2.0f, 2.0f), cw = rand_tensor({3, 6}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted(g, g.softmax(xs[0]), cw);
                },
                {x}, 1e-6);
            c.expect(rep.pass, "softmax seed " + std::to_string(seed));
        }
        {  // layer_norm, tolerance 1e-6
            Tensor x = rand_tensor({4, 8}, rng, -2.0f, 2.0f), gain = rand_tensor({8}, rng, 0.5f, 1.5f),
                   shift = rand_tensor({8}, rng), cw = rand_tensor({4, 8}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted(g, g.layer_norm(xs[0], xs[1], xs[2]), cw);
                },
                {x, gain, shift}, 1e-6);
            c.expect(rep.pass, "layer_norm seed " + std::to_string(seed));
        }
        {  // conv2d, relu, maxpool2 at 1e-3
            Tensor x = rand_tensor({2, 2, 6, 6}, rng), k = rand_tensor({3, 2, 3, 3}, rng),
                   b = rand_tensor({3}, rng), cw = rand_tensor({2, 3, 3, 3}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return weighted(g, g.maxpool2(g.relu(g.conv2d(xs[0], xs[1], xs[2], 1, 1))), cw);
                },
                {x, k, b}, 1e-3);
            c.expect(rep.pass, "conv/relu/maxpool seed " + std::to_string(seed));
        }
        {  // cross_entropy at 1e-3
            Tensor logits = rand_tensor({5, 7}, rng, -1.5f, 1.5f);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    return g.cross_entropy(xs[0], {1, -1, 6, 0, 3}, -1);
                },
                {logits}, 1e-3);
            c.expect(rep.pass, "cross_entropy seed " + std::to_string(seed));
        }
        {  // matmul/transpose/slice/concat/gather/add/mul/scale at 1e-3
            Tensor a = rand_tensor({3, 4}, rng), b2 = rand_tensor({3, 4}, rng),
                   cw = rand_tensor({3, 3}, wrng);
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    auto prod = g.matmul(xs[0], g.transpose(xs[1]));
                    auto left = g.slice_cols(prod, 0, 2);
                    auto right = g.slice_cols(prod, 2, 1);
                    std::vector<VarT<double>> parts{left, right};
                    auto joined = g.concat_cols(std::span<const VarT<double>>(parts));
                    auto gathered = g.gather_rows(joined, {0, 2, 1});
                    auto scaled = g.scale(g.add(gathered, gathered), 0.5);
                    return weighted(g, scaled, cw);
                },
                {a, b2}, 1e-3);
            c.expect(rep.pass, "structural ops seed " + std::to_string(seed));
        }

        {  // full 2-block, D=16, 2-head encoder with the glyph encoder attached
            ModelConfig mc;
            mc.blocks = 2;
            mc.hidden = 16;
            mc.heads = 2;
            mc.ffn = 32;
            mc.max_len = 4;
            mc.c1 = 2;
            mc.c2 = 4;
            mc.vocab_size = 9;
            Model model = make_model(mc, seed);

            // random input stack: binary glyphs put max-pool windows exactly
            // on ties, where central differences are undefined
            Tensor seq = rand_tensor({3, 3, 48, 48}, rng);
            const std::vector<std::int64_t> segments{0, 0, 1};
            AttentionMask mask{{1, 1, 1}};
            Tensor cw = rand_tensor({3, 16}, wrng);

            // all parameters as grad-checked inputs
            auto named = collect_params(model.params);
            std::vector<Tensor> points;
            for (auto& p : named) points.push_back(p.tensor);

            GradCheckOptions opt;
            opt.max_coords_per_tensor = 4;
            opt.sample_seed = seed;
            opt.step = 1e-5;  // deep relu stacks: keep probes inside one linear piece
            auto rep = grad_check(
                [&](GraphT<double>& g, const std::vector<VarT<double>>& xs) {
                    // rebuild the bound model over the leaf vars, in
                    // collect_params order
                    std::size_t i = 0;
                    auto next_conv = [&] {
                        BoundConv2d<double> r{xs[i], xs[i + 1]};
                        i += 2;
                        return r;
                    };
                    auto next_linear = [&] {
                        BoundLinear<double> r{xs[i], xs[i + 1]};
                        i += 2;
                        return r;
                    };
                    auto next_norm = [&] {
                        BoundNorm<double> r{xs[i], xs[i + 1]};
                        i += 2;
                        return r;
                    };
                    BoundModel<double> bm;
                    bm.hanglyph.block1.entry = next_conv();
                    for (auto& cc : bm.hanglyph.block1.core) cc = next_conv();
                    bm.hanglyph.block1.kernel = 9;
                    bm.hanglyph.block2.entry = next_conv();
                    for (auto& cc : bm.hanglyph.block2.core) cc = next_conv();
                    bm.hanglyph.block2.kernel = 3;
                    bm.hanglyph.proj_g1 = next_linear();
                    bm.hanglyph.proj_g2 = next_linear();
                    bm.hanglyph.proj_r = next_linear();
                    bm.encoder.blocks.resize(2);
                    for (auto& blk : bm.encoder.blocks) {
                        blk.wq = next_linear();
                        blk.wk = next_linear();
                        blk.wv = next_linear();
                        blk.wo = next_linear();
                        blk.ln1 = next_norm();
                        blk.ln2 = next_norm();
                        blk.ffn_in = next_linear();
                        blk.ffn_out = next_linear();
                    }
                    bm.encoder.pos_embed = xs[i++];
                    bm.encoder.seg_embed = xs[i++];
                    bm.encoder.heads = 2;

                    auto inputs = g.leaf(seq.cast<double>());
                    auto h = model_encode(g, bm, inputs, segments, mask);
                    return g.sum(g.mul(h, g.leaf(cw.cast<double>())));
                },
                points, 1e-3, opt);
            c.expect(rep.pass, "full encoder seed " + std::to_string(seed) + " max_rel " +
                                   std::to_string(rep.max_rel_error));
        }
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(secs < 60.0, "runtime " + std::to_string(secs) + "s exceeds 60s");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "runtime %.1fs", secs);
    report(1, "gradient integrity (5 seeds, all primitives + full encoder)", c.ok,
           c.ok ? buf : c.detail);
}

// ---------------------------------------------------------------------------
// 2. masking statistics
// ---------------------------------------------------------------------------
void criterion_masking_stats() {
    Check c;
    Corpus corpus = load_corpus_file(fixture("toy_corpus.txt"));
    Vocabulary vocab = Vocabulary::build(corpus, atlas(), 1);
    c.expect(vocab.size() >= 10, "vocab too small");

    std::vector<std::int64_t> ids;
    const std::int64_t n = 120000;
    for (std::int64_t i = 0; i < n; ++i) {
        ids.push_back(Vocabulary::kReserved + (i % vocab.non_reserved()));
    }
    Rng rng(2024);
    MaskedIds m = apply_mlm_mask(ids, vocab, rng);

    std::int64_t selected = 0, masked = 0, random_repl = 0, unchanged = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (m.labels[i] == kIgnoreLabel) continue;
        ++selected;
        if (m.ids[i] == Vocabulary::kMask) ++masked;
        else if (m.ids[i] == ids[i]) ++unchanged;
        else ++random_repl;
    }
    const double sel = static_cast<double>(selected) / static_cast<double>(n);
    const double pm = static_cast<double>(masked) / static_cast<double>(selected);
    const double pr = static_cast<double>(random_repl) / static_cast<double>(selected);
    const double pu = static_cast<double>(unchanged) / static_cast<double>(selected);

    c.expect(std::fabs(sel - 0.15) <= 0.01, "selection rate " + std::to_string(sel));
    c.expect(std::fabs(pm - 0.80) <= 0.02, "mask split " + std::to_string(pm));
    c.expect(std::fabs(pr - 0.10) <= 0.02, "random split " + std::to_string(pr));
    c.expect(std::fabs(pu - 0.10) <= 0.02, "unchanged split " + std::to_string(pu));

    char buf[128];
    std::snprintf(buf, sizeof(buf), "sel %.4f, mask %.4f, random %.4f, unchanged %.4f over %lld",
                  sel, pm, pr, pu, static_cast<long long>(n));
    report(2, "masking statistics 15% and 80/10/10", c.ok, c.ok ? buf : c.detail);
}

// ---------------------------------------------------------------------------
// 3. attention and normalization invariants
// ---------------------------------------------------------------------------
void criterion_attention_norm() {
    Check c;
    Rng rng(33);
    const std::int64_t d = 16, heads = 4, len = 6;
    TransformerBlockParams p = make_transformer_block(d, 32, rng);
    Tensor h = rand_tensor({len, d}, rng);
    AttentionMask mask{{1, 1, 0, 1, 0, 1}};

    Graph g;
    auto bp = bind(g, p, false);
    std::vector<Var> probs;
    multi_head_attention(g, g.leaf(h), bp, heads, mask, &probs);
    c.expect(static_cast<std::int64_t>(probs.size()) == heads, "missing attention probes");
    for (const auto& w : probs) {
        const Tensor& t = w.value();
        for (std::int64_t q = 0; q < len; ++q) {
            double total = 0;
            for (std::int64_t k = 0; k < len; ++k) {
                const double v = t.at({q, k});
                if (!mask.valid[static_cast<std::size_t>(k)]) {
                    c.expect(v < 1e-6, "masked key weight " + std::to_string(v));
                } else {
                    total += v;
                }
            }
            c.expect(std::fabs(total - 1.0) < 1e-6, "row sum " + std::to_string(total));
        }
    }

    // layer_norm statistics on random inputs
    Graph g2;
    const std::int64_t dn = 64;
    auto y = g2.layer_norm(g2.leaf(rand_tensor({16, dn}, rng, -3.0f, 3.0f)),
                           g2.leaf(Tensor::full({dn}, 1.0f)), g2.leaf(Tensor({dn})));
    for (int r = 0; r < 16; ++r) {
        double mean = 0, var = 0;
        for (int col = 0; col < dn; ++col) mean += y.value().at({r, col});
        mean /= dn;
        for (int col = 0; col < dn; ++col) {
            const double dv = y.value().at({r, col}) - mean;
            var += dv * dv;
        }
        var /= dn;
        c.expect(std::fabs(mean) < 1e-6, "norm mean " + std::to_string(mean));
        c.expect(std::fabs(var - 1.0) < 1e-4, "norm var " + std::to_string(var));
    }
    report(3, "attention rows sum to 1, masked keys ~0, layer_norm standardizes", c.ok, c.detail);
}

// ---------------------------------------------------------------------------
// 4. shape and fusion contract
// ---------------------------------------------------------------------------
void criterion_shape_fusion() {
    Check c;
    Rng rng(44);

    // 48 -> 12 -> 3 chain
    auto b1 = make_resblock(3, 8, 9, rng);
    auto b2 = make_resblock(8, 16, 3, rng);
    {
        Graph g;
        auto x = g.leaf(rand_tensor({2, 3, 48, 48}, rng));
        auto z1 = resblock_forward(g, x, bind(g, b1, false));
        c.expect(z1.value().shape() == Shape{2, 8, 12, 12},
                 "block1 shape " + shape_str(z1.value().shape()));
        auto z2 = resblock_forward(g, z1, bind(g, b2, false));
        c.expect(z2.value().shape() == Shape{2, 16, 3, 3},
                 "block2 shape " + shape_str(z2.value().shape()));
    }

    // zero injection reproduces the plain block bitwise
    {
        TransformerBlockParams p = make_transformer_block(16, 32, rng);
        Tensor h = rand_tensor({4, 16}, rng);
        AttentionMask mask{{1, 1, 1, 0}};
        Graph g;
        auto bp = bind(g, p, false);
        auto hv = g.leaf(h);
        auto with = transformer_block(g, hv, bp, 4, 1, g.leaf(Tensor({4, 16})), mask);
        auto without = transformer_block(g, hv, bp, 4, 3, std::nullopt, mask);
        bool bitwise = true;
        for (std::size_t i = 0; i < with.value().size(); ++i) {
            bitwise = bitwise && with.value()[i] == without.value()[i];
        }
        c.expect(bitwise, "zero injection differs from the plain block");

        // blocks >= 3 reject injection
        bool threw = false;
        try {
            transformer_block(g, hv, bp, 4, 3, g.leaf(Tensor({4, 16})), mask);
        } catch (const Error&) {
            threw = true;
        }
        c.expect(threw, "block 3 accepted an injection");
    }
    report(4, "48->12->3 chain, zero-injection bitwise, blocks >=3 reject injection", c.ok,
           c.detail);
}

// ---------------------------------------------------------------------------
// 5. parameter accounting
// ---------------------------------------------------------------------------
void criterion_param_count() {
    Check c;
    const std::int64_t analytic = 4 * (768 * 768 + 768) + (768 * 3072 + 3072) +
                                  (3072 * 768 + 768) + 4 * 768;
    c.expect(analytic == 7087872, "analytic formula mismatch");
    c.expect(transformer_block_param_count(768, 3072) == analytic, "exported count differs");

    Rng rng(55);
    auto block = make_transformer_block(768, 3072, rng);
    c.expect(param_count(block) == analytic, "actual block tensors differ from the formula");

    ModelConfig full;
    Model m = make_model(full, 1);
    const std::int64_t total = core_param_count(m.params);
    const double reference = 95e6;
    const double rel = std::fabs(static_cast<double>(total) - reference) / reference;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "per-block %lld exact; core total %lld vs 95M reference (%.1f%% off, "
                  "informative; conv channel widths are a documented choice)",
                  static_cast<long long>(analytic), static_cast<long long>(total), rel * 100.0);
    // the analytic equality is the hard gate; the 95M comparison is informative
    g_notes.push_back(buf);
    report(5, "parameter accounting", c.ok, buf);
}

// ---------------------------------------------------------------------------
// 6. toy-corpus learning
// ---------------------------------------------------------------------------
void criterion_toy_learning() {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();

    Corpus corpus = load_corpus_file(fixture("toy_corpus.txt"));
    ModelConfig mc;
    mc.blocks = 2;
    mc.hidden = 64;
    mc.heads = 4;
    mc.ffn = 256;
    mc.max_len = 16;
    mc.c1 = 8;
    mc.c2 = 16;

    TrainConfig tc;
    tc.batch = 24;
    tc.lr = 2e-3;
    tc.warmup = 100;
    tc.total_steps = 2000;
    tc.weight_decay = 0.01;
    tc.seed = 20240811;
    tc.min_freq = 1;
    tc.save_every = 0;
    tc.log_every = 1;
    tc.eval_every = 25;
    tc.eval_examples = 24;
    tc.target_mlm_acc = 0.90;
    tc.target_nsp_acc = 0.95;
    tc.min_steps = 200;

    const auto out = work_dir() / "toy_run";
    std::filesystem::remove_all(out);
    PretrainResult result = pretrain_run(corpus, atlas(), mc, tc, out);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(result.abort_reason.empty(), "aborted: " + result.abort_reason);
    c.expect(result.steps <= 2000, "ran past 2000 steps");
    c.expect(result.final_eval.mlm_acc > 0.90,
             "mlm accuracy " + std::to_string(result.final_eval.mlm_acc));
    c.expect(result.final_eval.nsp_acc > 0.95,
             "nsp accuracy " + std::to_string(result.final_eval.nsp_acc));
    c.expect(secs < 300.0, "runtime " + std::to_string(secs) + "s exceeds 5 minutes");

    // loss strictly decreases over consecutive 100-step windows
    std::vector<double> windows;
    double acc = 0;
    int cnt = 0;
    for (const auto& sm : result.history) {
        acc += sm.mlm_loss + sm.nsp_loss;
        if (++cnt == 100) {
            windows.push_back(acc / 100.0);
            acc = 0;
            cnt = 0;
        }
    }
    c.expect(windows.size() >= 2, "fewer than two full 100-step windows");
    for (std::size_t i = 1; i < windows.size(); ++i) {
        c.expect(windows[i] < windows[i - 1],
                 "window " + std::to_string(i) + " rose: " + std::to_string(windows[i - 1]) +
                     " -> " + std::to_string(windows[i]));
    }

    char buf[192];
    std::snprintf(buf, sizeof(buf), "mlm %.3f, nsp %.3f after %lld steps in %.0fs (%zu windows)",
                  result.final_eval.mlm_acc, result.final_eval.nsp_acc,
                  static_cast<long long>(result.steps), secs, windows.size());
    report(6, "toy-corpus learning (tiny config)", c.ok, c.ok ? buf : c.detail + " | " + buf);
}

// ---------------------------------------------------------------------------
// 7. determinism and persistence
// ---------------------------------------------------------------------------
void criterion_determinism() {
    Check c;
    Corpus corpus = load_corpus_file(fixture("toy_corpus.txt"));
    ModelConfig mc;
    mc.blocks = 2;
    mc.hidden = 32;
    mc.heads = 4;
    mc.ffn = 64;
    mc.max_len = 16;
    mc.c1 = 2;
    mc.c2 = 4;

    TrainConfig tc;
    tc.batch = 4;
    tc.lr = 1e-3;
    tc.warmup = 8;
    tc.total_steps = 24;
    tc.seed = 77;
    tc.min_freq = 1;
    tc.save_every = 8;
    tc.log_every = 0;

    const auto base = work_dir();
    const auto out_a = base / "det_a";
    const auto out_b = base / "det_b";
    const auto out_c = base / "det_resume";
    std::filesystem::remove_all(out_a);
    std::filesystem::remove_all(out_b);
    std::filesystem::remove_all(out_c);

    PretrainResult a = pretrain_run(corpus, atlas(), mc, tc, out_a);
    PretrainResult b = pretrain_run(corpus, atlas(), mc, tc, out_b);
    c.expect(read_bytes(a.final_checkpoint) == read_bytes(b.final_checkpoint),
             "same-seed checkpoints differ");

    // checkpoint round-trip is bitwise
    CheckpointData loaded = load_checkpoint(a.final_checkpoint);
    const auto resaved = base / "resaved.ckpt";
    save_checkpoint(resaved, loaded);
    c.expect(read_bytes(a.final_checkpoint) == read_bytes(resaved), "round-trip bytes differ");

    // resume from step 16 and train to 24: bitwise equal to the one-shot run
    PretrainResult resumed = pretrain_run(corpus, atlas(), mc, tc, out_c, out_a / "step_16.ckpt");
    c.expect(read_bytes(resumed.final_checkpoint) == read_bytes(a.final_checkpoint),
             "resume-at-16 differs from uninterrupted run");

    report(7, "determinism and persistence (same seed, round-trip, resume)", c.ok, c.detail);
}

// ---------------------------------------------------------------------------
// 8. out-of-vocabulary path
// ---------------------------------------------------------------------------
void criterion_oov() {
    Check c;
    const auto dir = work_dir() / "oov";
    std::filesystem::create_directories(dir);

    // toy tagging task over corpus characters: first char of each sentence
    // opens an entity
    ModelConfig mc;
    mc.blocks = 2;
    mc.hidden = 32;
    mc.heads = 4;
    mc.ffn = 64;
    mc.max_len = 8;
    mc.c1 = 2;
    mc.c2 = 4;
    mc.vocab_size = 101;
    Model base = make_model(mc, 5);
    const auto base_path = dir / "base.ckpt";
    {
        CheckpointData data;
        data.meta_json = std::string("{\"config\":") + config_to_json(mc) + "}";
        data.tensors = collect_params(base.params);
        save_checkpoint(base_path, data);
    }

    Corpus corpus = load_corpus_file(fixture("toy_corpus.txt"));
    std::string train_text;
    for (const auto& doc : corpus.documents) {
        for (const auto& sentence : doc) {
            for (std::size_t i = 0; i < sentence.size(); ++i) {
                train_text += utf8_encode(sentence[i]);
                train_text += i == 0 ? " B-X" : (i == 1 ? " I-X" : " O");
                train_text += "\n";
            }
            train_text += "\n";
        }
    }
    const auto train_file = dir / "tag_train.txt";
    {
        std::ofstream out(train_file);
        out << train_text;
    }
    // test sentence containing 我, which never appears in the toy corpus
    const auto test_file = dir / "tag_test.txt";
    {
        std::ofstream out(test_file);
        out << utf8_encode(U'我') << " B-X\n" << utf8_encode(U'一') << " I-X\n";
    }

    FinetuneOptions opt;
    opt.spec.kind = TaskKind::Tagging;
    opt.spec.labels = {"O", "B-X", "I-X"};
    opt.spec.lr = 1e-3;
    opt.spec.epochs = 1;
    opt.spec.batch = 8;
    opt.spec.max_len = 8;
    opt.spec.seed = 3;
    opt.checkpoint = base_path;
    opt.train_file = train_file;
    opt.dev_file = train_file;
    opt.test_file = test_file;
    opt.out_dir = dir / "ft";

    bool processed = false;
    try {
        FinetuneResult result = finetune_run(opt, atlas());
        processed = true;
        (void)result;
    } catch (const std::exception& e) {
        c.expect(false, std::string("fine-tuned tagger failed on OOV input: ") + e.what());
    }
    c.expect(processed, "tagger did not run");

    // r is a pure function of the bitmap: equal bitmaps, equal r
    {
        GlyphBitmap g1 = rasterize(U'乡', atlas());
        GlyphBitmap g2 = rasterize(U'乢', atlas());
        c.expect(g1 == g2, "fixture glyphs expected to share a bitmap");

        std::vector<TokenRender> tokens{TokenRender::of(SpecialToken::Cls),
                                        TokenRender::character(U'乡'),
                                        TokenRender::character(U'乢'),
                                        TokenRender::of(SpecialToken::Sep)};
        const std::vector<std::int64_t> segments{0, 0, 0, 0};
        EncodeOutput out = encode_tokens(base, tokens, segments, AttentionMask::all_valid(4),
                                         atlas());
        bool equal = true;
        for (std::int64_t j = 0; j < mc.hidden; ++j) {
            equal = equal && out.r.at({1, j}) == out.r.at({2, j});
        }
        c.expect(equal, "equal bitmaps produced different r vectors");

        // different bitmaps produce different r (sanity)
        bool differs = false;
        for (std::int64_t j = 0; j < mc.hidden; ++j) {
            differs = differs || out.r.at({0, j}) != out.r.at({1, j});
        }
        c.expect(differs, "distinct glyphs collapsed to one r");
    }
    report(8, "out-of-vocabulary characters flow through the glyph path", c.ok, c.detail);
}

// ---------------------------------------------------------------------------
// 9. font ingestion
// ---------------------------------------------------------------------------
void criterion_font() {
    Check c;

    // byte-exact round trip of every BITMAP row in the crafted fixture
    for (const char* name : {"mini.bdf", "cjk16.bdf"}) {
        std::ifstream in(fixture(name));
        std::string line;
        bool in_bitmap = false;
        std::int64_t width = 0;
        int rows = 0;
        while (std::getline(in, line)) {
            if (line.rfind("BBX", 0) == 0) {
                std::istringstream ss(line.substr(3));
                ss >> width;
            } else if (line.rfind("BITMAP", 0) == 0) {
                in_bitmap = true;
            } else if (line.rfind("ENDCHAR", 0) == 0) {
                in_bitmap = false;
            } else if (in_bitmap) {
                const auto bits = decode_bdf_row(line, width, 0);
                if (encode_bdf_row(bits) != line) {
                    c.expect(false, std::string(name) + ": row '" + line + "' not byte-exact");
                }
                ++rows;
            }
        }
        c.expect(rows > 0, std::string(name) + ": no BITMAP rows seen");
    }

    // golden bitmaps
    const auto& yi = atlas().glyph(U'一');
    bool yi_ok = true;
    for (int r = 0; r < 16; ++r) {
        for (int col = 0; col < 16; ++col) {
            const bool expect = (r == 7 || r == 8) && col >= 1 && col <= 14;
            yi_ok = yi_ok && (yi.bits[static_cast<std::size_t>(r * 16 + col)] == (expect ? 1 : 0));
        }
    }
    c.expect(yi_ok, "golden bits differ for U+4E00");

    const auto& wo = atlas().glyph(U'我');
    std::int64_t wo_count = 0;
    for (auto b : wo.bits) wo_count += b;
    c.expect(wo_count > 0, "U+6211 is empty");
    c.expect(rasterize(U'我', atlas()).pixel_count() == wo_count * 9,
             "U+6211 raster count is not 9x native");

    report(9, "BDF ingestion round-trip and golden bitmaps", c.ok, c.detail);
}

// ---------------------------------------------------------------------------
// 10. metric correctness
// ---------------------------------------------------------------------------
void criterion_metrics() {
    Check c;

    {
        EvalReport r = span_f1(std::vector<std::string>{"B-LOC", "I-LOC", "O"},
                               std::vector<std::string>{"B-LOC", "I-LOC", "O"});
        c.expect(r.precision == 1.0 && r.recall == 1.0 && r.f1 == 1.0, "identical-sequence case");
    }
    {
        EvalReport r = span_f1(std::vector<std::string>{"O", "O", "O"},
                               std::vector<std::string>{"B-PER", "I-PER", "O"});
        c.expect(r.precision == 0.0 && r.recall == 0.0 && r.f1 == 0.0, "empty-prediction case");
    }
    {
        EvalReport r = span_f1(std::vector<std::string>{"B-LOC", "I-LOC", "O", "O"},
                               std::vector<std::string>{"B-LOC", "I-LOC", "O", "B-PER"});
        c.expect(r.precision == 1.0, "two-entity precision");
        c.expect(r.recall == 0.5, "two-entity recall");
        c.expect(std::fabs(r.f1 - 2.0 / 3.0) < 1e-12, "two-entity F1");
    }

    // token loss and accuracy ignore frame/pad positions: perturbing padded
    // rows of H leaves the loss unchanged
    {
        Rng rng(10);
        const std::int64_t len = 6, d = 8, k = 3;
        Tensor h = rand_tensor({len, d}, rng);
        Tensor w = rand_tensor({d, k}, rng);
        Tensor b = rand_tensor({k}, rng);
        const std::vector<std::int64_t> labels{-1, 0, 1, 2, -1, -1};  // frame + 3 chars + pads

        auto loss_of = [&](const Tensor& hidden) {
            Graph g;
            auto logits = g.linear(g.leaf(hidden), g.leaf(w), g.leaf(b));
            return g.cross_entropy(logits, labels, -1).value()[0];
        };
        const float base = loss_of(h);
        Tensor mutated = h.clone();
        for (std::int64_t j = 0; j < d; ++j) {
            mutated.at({0, j}) = 1e3f;
            mutated.at({4, j}) = -1e3f;
            mutated.at({5, j}) = 42.0f;
        }
        c.expect(loss_of(mutated) == base, "perturbing ignored rows changed the loss");
    }
    report(10, "span F1 hand-computed cases and pad-exclusive token loss", c.ok, c.detail);
}

}  // namespace

int main() {
    std::printf("acceptance suite\n================\n");
    criterion_gradients();
    criterion_masking_stats();
    criterion_attention_norm();
    criterion_shape_fusion();
    criterion_param_count();
    criterion_toy_learning();
    criterion_determinism();
    criterion_oov();
    criterion_font();
    criterion_metrics();

    for (const auto& n : g_notes) std::printf("note: %s\n", n.c_str());
    std::printf("%s (%d failure%s)\n", g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES",
                g_failures, g_failures == 1 ? "" : "s");
    return g_failures == 0 ? 0 : 1;
}
