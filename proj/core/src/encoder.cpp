#include "glyphcrm/encoder.hpp"

#include <cmath>

namespace glyphcrm {

TransformerBlockParams make_transformer_block(std::int64_t d_model, std::int64_t d_ff, Rng& rng) {
    // attention projections start hot (2/sqrt(D)) so cross-token signal is
    // not buried under the residual path at small widths
    const float attn_std = 2.0f / std::sqrt(static_cast<float>(d_model));
    TransformerBlockParams p;
    p.wq = make_linear(d_model, d_model, rng, attn_std);
    p.wk = make_linear(d_model, d_model, rng, attn_std);
    p.wv = make_linear(d_model, d_model, rng, attn_std);
    p.wo = make_linear(d_model, d_model, rng, attn_std);
    p.ln1 = make_norm(d_model);
    p.ln2 = make_norm(d_model);
    p.ffn_in = make_linear(d_model, d_ff, rng);
    p.ffn_out = make_linear(d_ff, d_model, rng);
    return p;
}

EncoderParams make_encoder(std::int64_t blocks, std::int64_t d_model, std::int64_t d_ff,
                           std::int64_t max_len, Rng& rng) {
    EncoderParams p;
    p.blocks.reserve(static_cast<std::size_t>(blocks));
    for (std::int64_t i = 0; i < blocks; ++i) p.blocks.push_back(make_transformer_block(d_model, d_ff, rng));
    p.pos_embed = Tensor::randn({max_len, d_model}, rng, 0.02f);
    p.seg_embed = Tensor::randn({2, d_model}, rng, 0.02f);
    return p;
}

std::int64_t transformer_block_param_count(std::int64_t d, std::int64_t d_ff) {
    return 4 * (d * d + d) + (d * d_ff + d_ff) + (d_ff * d + d) + 4 * d;
}

std::int64_t param_count(const TransformerBlockParams& p) {
    return param_count(p.wq) + param_count(p.wk) + param_count(p.wv) + param_count(p.wo) +
           param_count(p.ln1) + param_count(p.ln2) + param_count(p.ffn_in) + param_count(p.ffn_out);
}

std::int64_t param_count(const EncoderParams& p) {
    std::int64_t n = static_cast<std::int64_t>(p.pos_embed.size() + p.seg_embed.size());
    for (const auto& b : p.blocks) n += param_count(b);
    return n;
}

template <typename T>
BoundTransformerBlock<T> bind(GraphT<T>& g, const TransformerBlockParams& p, bool track) {
    BoundTransformerBlock<T> b;
    b.wq = bind(g, p.wq, track);
    b.wk = bind(g, p.wk, track);
    b.wv = bind(g, p.wv, track);
    b.wo = bind(g, p.wo, track);
    b.ln1 = bind(g, p.ln1, track);
    b.ln2 = bind(g, p.ln2, track);
    b.ffn_in = bind(g, p.ffn_in, track);
    b.ffn_out = bind(g, p.ffn_out, track);
    return b;
}

template <typename T>
BoundEncoder<T> bind(GraphT<T>& g, const EncoderParams& p, std::int64_t heads, bool track) {
    BoundEncoder<T> b;
    b.blocks.reserve(p.blocks.size());
    for (const auto& blk : p.blocks) b.blocks.push_back(bind(g, blk, track));
    b.pos_embed = bind_tensor<T>(g, p.pos_embed, track, "pos_embed");
    b.seg_embed = bind_tensor<T>(g, p.seg_embed, track, "seg_embed");
    b.heads = heads;
    return b;
}

template <typename T>
VarT<T> compose_input(GraphT<T>& g, VarT<T> r, const std::vector<std::int64_t>& segments,
                      const BoundEncoder<T>& enc) {
    const std::int64_t len = r.value().dim(0);
    const std::int64_t max_len = enc.pos_embed.value().dim(0);
    if (len > max_len) {
        throw ShapeError("sequence length " + std::to_string(len) + " exceeds max_len " +
                         std::to_string(max_len));
    }
    if (static_cast<std::int64_t>(segments.size()) != len) {
        throw ShapeError("compose_input: " + std::to_string(segments.size()) + " segment ids for " +
                         std::to_string(len) + " tokens");
    }
    for (std::int64_t s : segments) {
        if (s != 0 && s != 1) throw ShapeError("segment id must be 0 or 1, got " + std::to_string(s));
    }
    std::vector<std::int64_t> positions(static_cast<std::size_t>(len));
    for (std::int64_t i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;
    auto pos = g.gather_rows(enc.pos_embed, std::move(positions));
    auto seg = g.gather_rows(enc.seg_embed, segments);
    return g.add(g.add(r, pos), seg);
}

namespace {

template <typename T>
VarT<T> mask_addend(GraphT<T>& g, const AttentionMask& mask) {
    const std::int64_t len = mask.length();
    TensorT<T> m({len, len});
    for (std::int64_t q = 0; q < len; ++q) {
        for (std::int64_t k = 0; k < len; ++k) {
            m[static_cast<std::size_t>(q * len + k)] =
                mask.valid[static_cast<std::size_t>(k)] ? T(0) : T(-1e9);
        }
    }
    return g.leaf(std::move(m));
}

}  // namespace

template <typename T>
VarT<T> multi_head_attention(GraphT<T>& g, VarT<T> h, const BoundTransformerBlock<T>& p,
                             std::int64_t heads, const AttentionMask& mask,
                             std::vector<VarT<T>>* attn_probs) {
    const std::int64_t len = h.value().dim(0);
    const std::int64_t d_model = h.value().dim(1);
    if (d_model % heads != 0) {
        throw ShapeError("d_model " + std::to_string(d_model) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    if (mask.length() != len) {
        throw ShapeError("attention mask length " + std::to_string(mask.length()) +
                         " vs sequence " + std::to_string(len));
    }
    const std::int64_t d_h = d_model / heads;

    auto q = g.linear(h, p.wq.weight, p.wq.bias);
    auto k = g.linear(h, p.wk.weight, p.wk.bias);
    auto v = g.linear(h, p.wv.weight, p.wv.bias);
    auto madd = mask_addend(g, mask);

    std::vector<VarT<T>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (std::int64_t i = 0; i < heads; ++i) {
        auto qi = g.slice_cols(q, i * d_h, d_h);
        auto ki = g.slice_cols(k, i * d_h, d_h);
        auto vi = g.slice_cols(v, i * d_h, d_h);
        auto scores = g.scale(g.matmul(qi, g.transpose(ki)), 1.0 / std::sqrt(static_cast<double>(d_h)));
        auto weights = g.softmax(g.add(scores, madd));
        if (attn_probs) attn_probs->push_back(weights);
        outs.push_back(g.matmul(weights, vi));
    }
    auto concat = g.concat_cols(std::span<const VarT<T>>(outs));
    return g.linear(concat, p.wo.weight, p.wo.bias);
}

template <typename T>
VarT<T> transformer_block(GraphT<T>& g, VarT<T> h, const BoundTransformerBlock<T>& p,
                          std::int64_t heads, int block_index,
                          std::type_identity_t<std::optional<VarT<T>>> glyph_inject,
                          const AttentionMask& mask) {
    const bool injecting_block = block_index == 1 || block_index == 2;
    if (glyph_inject.has_value() && !injecting_block) {
        throw Error("glyph injection is only defined for blocks 1 and 2, got block " +
                    std::to_string(block_index));
    }
    if (!glyph_inject.has_value() && injecting_block) {
        throw Error("block " + std::to_string(block_index) + " requires a glyph injection state");
    }

    auto hm = g.layer_norm(g.add(h, multi_head_attention(g, h, p, heads, mask)), p.ln1.gain,
                           p.ln1.shift);
    auto ffn = g.linear(g.relu(g.linear(hm, p.ffn_in.weight, p.ffn_in.bias)), p.ffn_out.weight,
                        p.ffn_out.bias);
    auto sum = g.add(hm, ffn);
    if (glyph_inject.has_value()) sum = g.add(sum, *glyph_inject);
    return g.layer_norm(sum, p.ln2.gain, p.ln2.shift);
}

template <typename T>
VarT<T> encoder_forward(GraphT<T>& g, const GlyphStatesT<T>& states,
                        const std::vector<std::int64_t>& segments, const AttentionMask& mask,
                        const BoundEncoder<T>& enc) {
    auto h = compose_input(g, states.r, segments, enc);
    for (std::size_t l = 0; l < enc.blocks.size(); ++l) {
        std::optional<VarT<T>> inject;
        if (l == 0) inject = states.g1;
        if (l == 1) inject = states.g2;
        h = transformer_block(g, h, enc.blocks[l], enc.heads, static_cast<int>(l + 1), inject,
                              mask);
    }
    return h;
}

template BoundTransformerBlock<float> bind<float>(GraphT<float>&, const TransformerBlockParams&,
                                                  bool);
template BoundTransformerBlock<double> bind<double>(GraphT<double>&, const TransformerBlockParams&,
                                                    bool);
template BoundEncoder<float> bind<float>(GraphT<float>&, const EncoderParams&, std::int64_t, bool);
template BoundEncoder<double> bind<double>(GraphT<double>&, const EncoderParams&, std::int64_t,
                                           bool);
template VarT<float> compose_input<float>(GraphT<float>&, VarT<float>,
                                          const std::vector<std::int64_t>&,
                                          const BoundEncoder<float>&);
template VarT<double> compose_input<double>(GraphT<double>&, VarT<double>,
                                            const std::vector<std::int64_t>&,
                                            const BoundEncoder<double>&);
template VarT<float> multi_head_attention<float>(GraphT<float>&, VarT<float>,
                                                 const BoundTransformerBlock<float>&, std::int64_t,
                                                 const AttentionMask&, std::vector<VarT<float>>*);
template VarT<double> multi_head_attention<double>(GraphT<double>&, VarT<double>,
                                                   const BoundTransformerBlock<double>&,
                                                   std::int64_t, const AttentionMask&,
                                                   std::vector<VarT<double>>*);
template VarT<float> transformer_block<float>(GraphT<float>&, VarT<float>,
                                              const BoundTransformerBlock<float>&, std::int64_t,
                                              int, std::optional<VarT<float>>,
                                              const AttentionMask&);
template VarT<double> transformer_block<double>(GraphT<double>&, VarT<double>,
                                                const BoundTransformerBlock<double>&, std::int64_t,
                                                int, std::optional<VarT<double>>,
                                                const AttentionMask&);
template VarT<float> encoder_forward<float>(GraphT<float>&, const GlyphStatesT<float>&,
                                            const std::vector<std::int64_t>&, const AttentionMask&,
                                            const BoundEncoder<float>&);
template VarT<double> encoder_forward<double>(GraphT<double>&, const GlyphStatesT<double>&,
                                              const std::vector<std::int64_t>&,
                                              const AttentionMask&, const BoundEncoder<double>&);

}  // namespace glyphcrm
