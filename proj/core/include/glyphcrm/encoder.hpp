#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "glyphcrm/hanglyph.hpp"
#include "glyphcrm/layers.hpp"

namespace glyphcrm {

struct TransformerBlockParams {
    LinearParam wq, wk, wv, wo;  // D x D each
    NormParam ln1, ln2;
    LinearParam ffn_in;   // D x D_ff
    LinearParam ffn_out;  // D_ff x D
};

struct EncoderParams {
    std::vector<TransformerBlockParams> blocks;
    Tensor pos_embed;  // max_len x D
    Tensor seg_embed;  // 2 x D
};

TransformerBlockParams make_transformer_block(std::int64_t d_model, std::int64_t d_ff, Rng& rng);
EncoderParams make_encoder(std::int64_t blocks, std::int64_t d_model, std::int64_t d_ff,
                           std::int64_t max_len, Rng& rng);

// Closed form: 4(D^2+D) attention, D*Dff+Dff and Dff*D+D for the FFN, 4D for
// the two norms. 7,087,872 at D=768, Dff=3072.
std::int64_t transformer_block_param_count(std::int64_t d_model, std::int64_t d_ff);

std::int64_t param_count(const TransformerBlockParams& p);
std::int64_t param_count(const EncoderParams& p);

// Per-token validity; padding positions are false and receive no attention.
struct AttentionMask {
    std::vector<std::uint8_t> valid;

    static AttentionMask all_valid(std::int64_t n) { return {std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1)}; }
    std::int64_t length() const { return static_cast<std::int64_t>(valid.size()); }
};

template <typename T>
struct BoundTransformerBlock {
    BoundLinear<T> wq, wk, wv, wo;
    BoundNorm<T> ln1, ln2;
    BoundLinear<T> ffn_in, ffn_out;
};

template <typename T>
struct BoundEncoder {
    std::vector<BoundTransformerBlock<T>> blocks;
    VarT<T> pos_embed, seg_embed;
    std::int64_t heads = 1;
};

template <typename T>
BoundTransformerBlock<T> bind(GraphT<T>& g, const TransformerBlockParams& p, bool track);

template <typename T>
BoundEncoder<T> bind(GraphT<T>& g, const EncoderParams& p, std::int64_t heads, bool track);

// h0_i = r_i + PoE[i] + SegE[segment_i]. Throws on overlength sequences and
// segment ids outside {0, 1}.
template <typename T>
VarT<T> compose_input(GraphT<T>& g, VarT<T> r, const std::vector<std::int64_t>& segments,
                      const BoundEncoder<T>& enc);

// Scaled dot-product attention per head with -1e9 added to masked key
// columns, heads concatenated then projected. attn_probs, when given,
// receives each head's post-softmax L x L weight matrix.
template <typename T>
VarT<T> multi_head_attention(GraphT<T>& g, VarT<T> h, const BoundTransformerBlock<T>& p,
                             std::int64_t heads, const AttentionMask& mask,
                             std::vector<VarT<T>>* attn_probs = nullptr);

// Post-norm residual block. block_index is 1-based; glyph injection joins
// the second residual sum and must be present exactly on blocks 1 and 2.
template <typename T>
VarT<T> transformer_block(GraphT<T>& g, VarT<T> h, const BoundTransformerBlock<T>& p,
                          std::int64_t heads, int block_index,
                          std::type_identity_t<std::optional<VarT<T>>> glyph_inject,
                          const AttentionMask& mask);

// Composes the glyph states and runs every block; g1 feeds block 1, g2 block 2.
template <typename T>
VarT<T> encoder_forward(GraphT<T>& g, const GlyphStatesT<T>& states,
                        const std::vector<std::int64_t>& segments, const AttentionMask& mask,
                        const BoundEncoder<T>& enc);

extern template VarT<float> encoder_forward<float>(GraphT<float>&, const GlyphStatesT<float>&,
                                                   const std::vector<std::int64_t>&,
                                                   const AttentionMask&,
                                                   const BoundEncoder<float>&);
extern template VarT<double> encoder_forward<double>(GraphT<double>&, const GlyphStatesT<double>&,
                                                     const std::vector<std::int64_t>&,
                                                     const AttentionMask&,
                                                     const BoundEncoder<double>&);

}  // namespace glyphcrm
