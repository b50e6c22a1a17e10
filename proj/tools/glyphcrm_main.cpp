#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "glyphcrm/finetune.hpp"
#include "glyphcrm/font.hpp"
#include "glyphcrm/glyph.hpp"
#include "glyphcrm/model.hpp"
#include "glyphcrm/pretrain.hpp"
#include "glyphcrm/utf8.hpp"
#include "glyphcrm/vocab.hpp"

using namespace glyphcrm;

namespace {

// Every knob of a pretraining run; serialized as canonical JSON so a run is
// reproducible from its config file alone.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;

    nlohmann::json to_json() const {
        return {{"blocks", model.blocks},
                {"hidden", model.hidden},
                {"heads", model.heads},
                {"ffn", model.ffn},
                {"max_len", model.max_len},
                {"c1", model.c1},
                {"c2", model.c2},
                {"batch", train.batch},
                {"lr", train.lr},
                {"warmup", train.warmup},
                {"total_steps", train.total_steps},
                {"weight_decay", train.weight_decay},
                {"seed", train.seed},
                {"min_freq", train.min_freq},
                {"save_every", train.save_every},
                {"log_every", train.log_every},
                {"eval_every", train.eval_every}};
    }

    void apply_json(const nlohmann::json& j) {
        for (const auto& [key, value] : j.items()) {
            if (key == "blocks") model.blocks = value.get<std::int64_t>();
            else if (key == "hidden") model.hidden = value.get<std::int64_t>();
            else if (key == "heads") model.heads = value.get<std::int64_t>();
            else if (key == "ffn") model.ffn = value.get<std::int64_t>();
            else if (key == "max_len") model.max_len = value.get<std::int64_t>();
            else if (key == "c1") model.c1 = value.get<std::int64_t>();
            else if (key == "c2") model.c2 = value.get<std::int64_t>();
            else if (key == "batch") train.batch = value.get<std::int64_t>();
            else if (key == "lr") train.lr = value.get<double>();
            else if (key == "warmup") train.warmup = value.get<std::int64_t>();
            else if (key == "total_steps") train.total_steps = value.get<std::int64_t>();
            else if (key == "weight_decay") train.weight_decay = value.get<double>();
            else if (key == "seed") train.seed = value.get<std::uint64_t>();
            else if (key == "min_freq") train.min_freq = value.get<std::int64_t>();
            else if (key == "save_every") train.save_every = value.get<std::int64_t>();
            else if (key == "log_every") train.log_every = value.get<std::int64_t>();
            else if (key == "eval_every") train.eval_every = value.get<std::int64_t>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    }
};

std::string sanitize_codepoint_name(char32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "U+%04X", static_cast<unsigned>(cp));
    return buf;
}

int cmd_render(const std::string& font_path, const std::string& text, const std::string& out_dir) {
    if (text.empty()) throw ConfigError("--text must not be empty");
    FontAtlas atlas = load_bdf_file(font_path);
    std::filesystem::create_directories(out_dir);

    const auto cps = utf8_decode(text);
    std::vector<GlyphBitmap> bitmaps;
    int index = 0;
    for (char32_t cp : cps) {
        if (is_whitespace(cp)) continue;
        GlyphBitmap bm;
        if (atlas.has(cp)) {
            bm = rasterize(cp, atlas);
        } else {
            std::cerr << "warning: no glyph for " << sanitize_codepoint_name(cp)
                      << ", rendering [UNK]\n";
            bm = special_glyph(SpecialToken::Unk);
        }
        bitmaps.push_back(bm);
        const auto path = std::filesystem::path(out_dir) /
                          ("char_" + std::to_string(index) + "_" + sanitize_codepoint_name(cp) +
                           ".pgm");
        std::ofstream out(path);
        out << to_pgm(bm);
        ++index;
    }
    if (bitmaps.empty()) throw ConfigError("--text contains no renderable characters");
    std::ofstream strip(std::filesystem::path(out_dir) / "strip.pgm");
    strip << to_pgm_strip(bitmaps);
    std::cout << "wrote " << bitmaps.size() << " glyph(s) to " << out_dir << "\n";
    return 0;
}

int cmd_pretrain(const std::string& corpus_path, const std::string& font_path,
                 const std::string& config_path, const std::string& out_dir, std::int64_t steps,
                 std::int64_t seed, const std::string& resume) {
    RunConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file " + config_path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad config JSON: ") + e.what());
        }
        cfg.apply_json(j);
    }
    if (steps > 0) cfg.train.total_steps = steps;
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
    cfg.model.validate();

    Corpus corpus = load_corpus_file(corpus_path);
    FontAtlas atlas = load_bdf_file(font_path);

    PretrainResult result = pretrain_run(corpus, atlas, cfg.model, cfg.train, out_dir,
                                         resume.empty() ? std::filesystem::path{}
                                                        : std::filesystem::path(resume));
    if (!result.abort_reason.empty()) {
        std::cerr << "aborted: " << result.abort_reason << "\n";
        return 1;
    }
    std::cout << "trained " << result.steps << " steps; final checkpoint "
              << result.final_checkpoint.string() << "\n";
    return 0;
}

TaskSpec build_task_spec(const std::string& kind, const std::vector<std::string>& labels,
                         double lr, std::int64_t epochs, std::int64_t batch, std::int64_t max_len,
                         std::int64_t seed) {
    TaskSpec spec;
    spec.kind = task_kind_from_name(kind);
    spec.labels = labels;
    spec.lr = lr;
    spec.epochs = epochs;
    spec.batch = batch;
    spec.max_len = max_len;
    spec.seed = static_cast<std::uint64_t>(seed);
    spec.validate();
    return spec;
}

int cmd_finetune(const FinetuneOptions& opt, const std::string& font_path) {
    FontAtlas atlas = load_bdf_file(font_path);
    FinetuneResult result = finetune_run(opt, atlas);
    std::cout << "best epoch " << result.best_epoch << "; checkpoint "
              << result.checkpoint.string() << "\n";
    std::cout << result.test_report.to_table();
    std::cout << result.test_report.to_json() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& font_path,
             bool json_only) {
    FontAtlas atlas = load_bdf_file(font_path);
    FinetunedModel fm = load_finetuned(checkpoint);
    EvalReport rep = evaluate_file(fm, data, atlas);
    if (!json_only) std::cout << rep.to_table();
    std::cout << rep.to_json() << "\n";
    return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& font_path, const std::string& text,
              const std::string& out_path) {
    if (text.empty()) throw ConfigError("--text must not be empty");
    FontAtlas atlas = load_bdf_file(font_path);

    CheckpointData data = load_checkpoint(checkpoint);
    nlohmann::json meta = nlohmann::json::parse(data.meta_json);
    ModelConfig config = config_from_json(meta.at("config").dump());
    Model model = make_model(config, 0);
    auto params = collect_params(model.params);
    restore_params(params, data);

    auto cps = utf8_decode(text);
    std::erase_if(cps, is_whitespace);
    if (cps.empty()) throw ConfigError("--text contains no characters");

    std::vector<TokenRender> tokens;
    tokens.push_back(TokenRender::of(SpecialToken::Cls));
    for (char32_t cp : cps) tokens.push_back(TokenRender::character(cp));
    tokens.push_back(TokenRender::of(SpecialToken::Sep));
    std::vector<std::int64_t> segments(tokens.size(), 0);
    AttentionMask mask = AttentionMask::all_valid(static_cast<std::int64_t>(tokens.size()));

    EncodeOutput out = encode_tokens(model, tokens, segments, mask, atlas, true);

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw IoError("cannot write " + out_path);
        os = &file;
    }
    const std::int64_t d = config.hidden;
    for (std::size_t i = 0; i < cps.size(); ++i) {
        const std::int64_t row = static_cast<std::int64_t>(i) + 1;  // skip [CLS]
        nlohmann::json line;
        line["index"] = i;
        line["char"] = utf8_encode(cps[i]);
        std::vector<float> r(out.r.data() + row * d, out.r.data() + (row + 1) * d);
        std::vector<float> h(out.hidden.data() + row * d, out.hidden.data() + (row + 1) * d);
        line["r"] = r;
        line["h"] = h;
        (*os) << line.dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"glyph-based Chinese text representation model"};
    app.require_subcommand(1);

    // render
    auto* render = app.add_subcommand("render", "rasterize characters to PGM images");
    std::string r_font, r_text, r_out;
    render->add_option("--font", r_font, "BDF font file")->required()->check(CLI::ExistingFile);
    render->add_option("--text", r_text, "characters to render")->required();
    render->add_option("--out", r_out, "output directory")->required();

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "MLM + NSP pretraining");
    std::string p_corpus, p_font, p_config, p_out, p_resume;
    std::int64_t p_steps = 0, p_seed = -1;
    pretrain->add_option("--corpus", p_corpus, "corpus file")->required()->check(CLI::ExistingFile);
    pretrain->add_option("--font", p_font, "BDF font file")->required()->check(CLI::ExistingFile);
    pretrain->add_option("--config", p_config, "JSON config overriding defaults")->check(CLI::ExistingFile);
    pretrain->add_option("--out", p_out, "output directory")->required();
    pretrain->add_option("--steps", p_steps, "total training steps");
    pretrain->add_option("--seed", p_seed, "RNG seed");
    pretrain->add_option("--resume", p_resume, "checkpoint to resume from")->check(CLI::ExistingFile);

    // finetune
    auto* finetune = app.add_subcommand("finetune", "task fine-tuning");
    std::string f_task = "single_cls", f_font, f_ckpt, f_train, f_dev, f_test, f_out;
    std::vector<std::string> f_labels;
    double f_lr = 2e-5;
    std::int64_t f_epochs = 3, f_batch = 8, f_maxlen = 128, f_seed = 42;
    finetune->add_option("--task", f_task, "single_cls | pair_cls | tagging")->required();
    finetune->add_option("--labels", f_labels, "label set")->required()->delimiter(',');
    finetune->add_option("--checkpoint", f_ckpt, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
    finetune->add_option("--font", f_font, "BDF font file")->required()->check(CLI::ExistingFile);
    finetune->add_option("--train", f_train, "training file")->required()->check(CLI::ExistingFile);
    finetune->add_option("--dev", f_dev, "validation file")->required()->check(CLI::ExistingFile);
    finetune->add_option("--test", f_test, "test file")->required()->check(CLI::ExistingFile);
    finetune->add_option("--out", f_out, "output directory")->required();
    finetune->add_option("--lr", f_lr, "learning rate");
    finetune->add_option("--epochs", f_epochs, "epochs");
    finetune->add_option("--batch", f_batch, "batch size");
    finetune->add_option("--max-len", f_maxlen, "maximum sequence length");
    finetune->add_option("--seed", f_seed, "RNG seed");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
    std::string e_ckpt, e_data, e_font;
    bool e_json = false;
    eval->add_option("--checkpoint", e_ckpt, "fine-tuned checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", e_data, "task data file")->required()->check(CLI::ExistingFile);
    eval->add_option("--font", e_font, "BDF font file")->required()->check(CLI::ExistingFile);
    eval->add_flag("--json", e_json, "print only the JSON report");

    // embed
    auto* embed = app.add_subcommand("embed", "per-character glyph vectors and hidden states");
    std::string m_ckpt, m_font, m_text, m_out;
    embed->add_option("--checkpoint", m_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    embed->add_option("--font", m_font, "BDF font file")->required()->check(CLI::ExistingFile);
    embed->add_option("--text", m_text, "input text")->required();
    embed->add_option("--out", m_out, "output file (default stdout)");

    // config
    auto* config = app.add_subcommand("config", "configuration utilities");
    bool c_dump = false;
    config->add_flag("--dump", c_dump, "print the default config as canonical JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (render->parsed()) return cmd_render(r_font, r_text, r_out);
        if (pretrain->parsed())
            return cmd_pretrain(p_corpus, p_font, p_config, p_out, p_steps, p_seed, p_resume);
        if (finetune->parsed()) {
            FinetuneOptions opt;
            opt.spec = build_task_spec(f_task, f_labels, f_lr, f_epochs, f_batch, f_maxlen, f_seed);
            opt.checkpoint = f_ckpt;
            opt.train_file = f_train;
            opt.dev_file = f_dev;
            opt.test_file = f_test;
            opt.out_dir = f_out;
            return cmd_finetune(opt, f_font);
        }
        if (eval->parsed()) return cmd_eval(e_ckpt, e_data, e_font, e_json);
        if (embed->parsed()) return cmd_embed(m_ckpt, m_font, m_text, m_out);
        if (config->parsed()) {
            if (c_dump) {
                std::cout << RunConfig{}.to_json().dump() << "\n";
            } else {
                std::cout << config->help();
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
