#include "glyphcrm/model.hpp"

#include <json.hpp>

#include <map>

namespace glyphcrm {

void ModelConfig::validate() const {
    if (blocks < 1) throw ConfigError("blocks must be >= 1");
    if (hidden < 1 || heads < 1 || ffn < 1 || max_len < 1 || c1 < 1 || c2 < 1) {
        throw ConfigError("model dimensions must be positive");
    }
    if (hidden % heads != 0) {
        throw ConfigError("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                          std::to_string(heads) + ")");
    }
    if (vocab_size < 0) throw ConfigError("vocab_size must be >= 0");
}

std::string config_to_json(const ModelConfig& c) {
    nlohmann::json j{{"blocks", c.blocks},   {"hidden", c.hidden},   {"heads", c.heads},
                     {"ffn", c.ffn},         {"max_len", c.max_len}, {"c1", c.c1},
                     {"c2", c.c2},           {"vocab_size", c.vocab_size}};
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig c;
    c.blocks = j.at("blocks").get<std::int64_t>();
    c.hidden = j.at("hidden").get<std::int64_t>();
    c.heads = j.at("heads").get<std::int64_t>();
    c.ffn = j.at("ffn").get<std::int64_t>();
    c.max_len = j.at("max_len").get<std::int64_t>();
    c.c1 = j.at("c1").get<std::int64_t>();
    c.c2 = j.at("c2").get<std::int64_t>();
    c.vocab_size = j.at("vocab_size").get<std::int64_t>();
    c.validate();
    return c;
}

Model make_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed, 0x6D6F64656Cu);  // model init stream
    Model m;
    m.config = config;
    m.params.hanglyph = make_hanglyph(config.c1, config.c2, config.hidden, rng);
    m.params.encoder = make_encoder(config.blocks, config.hidden, config.ffn, config.max_len, rng);
    return m;
}

PretrainHeads make_pretrain_heads(const ModelConfig& config, std::uint64_t seed) {
    if (config.vocab_size < 1) throw ConfigError("pretrain heads need vocab_size >= 1");
    Rng rng(seed, 0x68656164u);  // head init stream
    PretrainHeads h;
    h.mlm = make_linear(config.hidden, config.vocab_size, rng);
    h.nsp = make_linear(config.hidden, 2, rng);
    return h;
}

namespace {

void visit_conv(Conv2dParam& c, const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", c.weight);
    fn(prefix + ".bias", c.bias);
}

void visit_linear(LinearParam& l, const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", l.weight);
    fn(prefix + ".bias", l.bias);
}

void visit_norm(NormParam& n, const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gain", n.gain);
    fn(prefix + ".shift", n.shift);
}

void visit_resblock(ResBlockParams& b, const std::string& prefix, const ParamVisitor& fn) {
    visit_conv(b.entry, prefix + ".entry", fn);
    for (std::size_t i = 0; i < 3; ++i) visit_conv(b.core[i], prefix + ".core" + std::to_string(i + 1), fn);
}

}  // namespace

void visit_params(ModelParams& p, const ParamVisitor& fn) {
    visit_resblock(p.hanglyph.block1, "hanglyph.block1", fn);
    visit_resblock(p.hanglyph.block2, "hanglyph.block2", fn);
    visit_linear(p.hanglyph.proj_g1, "hanglyph.proj_g1", fn);
    visit_linear(p.hanglyph.proj_g2, "hanglyph.proj_g2", fn);
    visit_linear(p.hanglyph.proj_r, "hanglyph.proj_r", fn);
    for (std::size_t l = 0; l < p.encoder.blocks.size(); ++l) {
        auto& b = p.encoder.blocks[l];
        const std::string prefix = "encoder.block" + std::to_string(l + 1);
        visit_linear(b.wq, prefix + ".wq", fn);
        visit_linear(b.wk, prefix + ".wk", fn);
        visit_linear(b.wv, prefix + ".wv", fn);
        visit_linear(b.wo, prefix + ".wo", fn);
        visit_norm(b.ln1, prefix + ".ln1", fn);
        visit_norm(b.ln2, prefix + ".ln2", fn);
        visit_linear(b.ffn_in, prefix + ".ffn_in", fn);
        visit_linear(b.ffn_out, prefix + ".ffn_out", fn);
    }
    fn("encoder.pos_embed", p.encoder.pos_embed);
    fn("encoder.seg_embed", p.encoder.seg_embed);
}

void visit_params(PretrainHeads& p, const ParamVisitor& fn) {
    visit_linear(p.mlm, "head.mlm", fn);
    visit_linear(p.nsp, "head.nsp", fn);
}

std::vector<NamedParam> collect_params(ModelParams& p) {
    std::vector<NamedParam> out;
    visit_params(p, [&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
    return out;
}

std::vector<NamedParam> collect_params(ModelParams& p, PretrainHeads& heads) {
    std::vector<NamedParam> out = collect_params(p);
    visit_params(heads, [&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
    return out;
}

std::int64_t core_param_count(const ModelParams& p) {
    std::int64_t n = 0;
    visit_params(const_cast<ModelParams&>(p),
                 [&](const std::string&, Tensor& t) { n += static_cast<std::int64_t>(t.size()); });
    return n;
}

template <typename T>
BoundModel<T> bind_model(GraphT<T>& g, const Model& m, bool track) {
    BoundModel<T> b;
    b.hanglyph = bind(g, m.params.hanglyph, track);
    b.encoder = bind(g, m.params.encoder, m.config.heads, track);
    return b;
}

template <typename T>
BoundPretrainHeads<T> bind_heads(GraphT<T>& g, const PretrainHeads& h, bool track) {
    return {bind(g, h.mlm, track), bind(g, h.nsp, track)};
}

namespace {

template <typename T>
void push_linear(std::vector<VarT<T>>& out, const BoundLinear<T>& l) {
    out.push_back(l.weight);
    out.push_back(l.bias);
}

template <typename T>
void push_conv(std::vector<VarT<T>>& out, const BoundConv2d<T>& c) {
    out.push_back(c.weight);
    out.push_back(c.bias);
}

template <typename T>
void push_norm(std::vector<VarT<T>>& out, const BoundNorm<T>& n) {
    out.push_back(n.gain);
    out.push_back(n.shift);
}

template <typename T>
void push_resblock(std::vector<VarT<T>>& out, const BoundResBlock<T>& b) {
    push_conv(out, b.entry);
    for (const auto& c : b.core) push_conv(out, c);
}

}  // namespace

// Must mirror visit_params(ModelParams&, ...); test_model checks alignment.
template <typename T>
std::vector<VarT<T>> model_param_vars(const BoundModel<T>& m) {
    std::vector<VarT<T>> out;
    push_resblock(out, m.hanglyph.block1);
    push_resblock(out, m.hanglyph.block2);
    push_linear(out, m.hanglyph.proj_g1);
    push_linear(out, m.hanglyph.proj_g2);
    push_linear(out, m.hanglyph.proj_r);
    for (const auto& b : m.encoder.blocks) {
        push_linear(out, b.wq);
        push_linear(out, b.wk);
        push_linear(out, b.wv);
        push_linear(out, b.wo);
        push_norm(out, b.ln1);
        push_norm(out, b.ln2);
        push_linear(out, b.ffn_in);
        push_linear(out, b.ffn_out);
    }
    out.push_back(m.encoder.pos_embed);
    out.push_back(m.encoder.seg_embed);
    return out;
}

template <typename T>
std::vector<VarT<T>> model_head_param_vars(const BoundModel<T>& m,
                                           const BoundPretrainHeads<T>& heads) {
    std::vector<VarT<T>> out = model_param_vars(m);
    push_linear(out, heads.mlm);
    push_linear(out, heads.nsp);
    return out;
}

template <typename T>
VarT<T> model_encode(GraphT<T>& g, const BoundModel<T>& m, VarT<T> inputs,
                     const std::vector<std::int64_t>& segments, const AttentionMask& mask) {
    auto states = hanglyph_forward(g, inputs, m.hanglyph);
    return encoder_forward(g, states, segments, mask, m.encoder);
}

namespace {

struct DedupedRender {
    std::vector<TokenRender> unique;
    std::vector<std::int64_t> index;  // token -> row in unique
};

DedupedRender dedupe_renders(std::span<const TokenRender> tokens) {
    DedupedRender out;
    std::map<std::pair<std::int64_t, char32_t>, std::int64_t> seen;
    out.index.reserve(tokens.size());
    for (const TokenRender& t : tokens) {
        const std::pair<std::int64_t, char32_t> key =
            t.is_special ? std::make_pair(static_cast<std::int64_t>(t.special) + 1, char32_t{0})
                         : std::make_pair(std::int64_t{0}, t.cp);
        auto [it, inserted] = seen.emplace(key, static_cast<std::int64_t>(out.unique.size()));
        if (inserted) out.unique.push_back(t);
        out.index.push_back(it->second);
    }
    return out;
}

}  // namespace

GlyphStates hanglyph_forward_deduped(Graph& g, std::span<const TokenRender> tokens,
                                     const FontAtlas& atlas, const BoundHanGlyph<float>& p,
                                     bool unk_fallback) {
    DedupedRender dd = dedupe_renders(tokens);
    auto inputs = g.leaf(render_sequence(dd.unique, atlas, unk_fallback));
    GlyphStates unique_states = hanglyph_forward(g, inputs, p);
    return {g.gather_rows(unique_states.r, dd.index), g.gather_rows(unique_states.g1, dd.index),
            g.gather_rows(unique_states.g2, std::move(dd.index))};
}

EncodeOutput encode_tokens(const Model& m, std::span<const TokenRender> tokens,
                           const std::vector<std::int64_t>& segments, const AttentionMask& mask,
                           const FontAtlas& atlas, bool unk_fallback) {
    Graph g;
    auto bound = bind_model<float>(g, m, false);
    auto inputs = g.leaf(render_sequence(tokens, atlas, unk_fallback));
    auto states = hanglyph_forward(g, inputs, bound.hanglyph);
    auto hidden = encoder_forward(g, states, segments, mask, bound.encoder);
    return {hidden.value().clone(), states.r.value().clone()};
}

template BoundModel<float> bind_model<float>(GraphT<float>&, const Model&, bool);
template BoundModel<double> bind_model<double>(GraphT<double>&, const Model&, bool);
template BoundPretrainHeads<float> bind_heads<float>(GraphT<float>&, const PretrainHeads&, bool);
template BoundPretrainHeads<double> bind_heads<double>(GraphT<double>&, const PretrainHeads&, bool);
template std::vector<VarT<float>> model_param_vars<float>(const BoundModel<float>&);
template std::vector<VarT<double>> model_param_vars<double>(const BoundModel<double>&);
template std::vector<VarT<float>> model_head_param_vars<float>(const BoundModel<float>&,
                                                               const BoundPretrainHeads<float>&);
template std::vector<VarT<double>> model_head_param_vars<double>(const BoundModel<double>&,
                                                                 const BoundPretrainHeads<double>&);
template VarT<float> model_encode<float>(GraphT<float>&, const BoundModel<float>&, VarT<float>,
                                         const std::vector<std::int64_t>&, const AttentionMask&);
template VarT<double> model_encode<double>(GraphT<double>&, const BoundModel<double>&, VarT<double>,
                                           const std::vector<std::int64_t>&, const AttentionMask&);

}  // namespace glyphcrm
