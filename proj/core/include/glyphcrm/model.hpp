#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glyphcrm/adam.hpp"
#include "glyphcrm/encoder.hpp"
#include "glyphcrm/font.hpp"
#include "glyphcrm/glyph.hpp"
#include "glyphcrm/hanglyph.hpp"

namespace glyphcrm {

struct ModelConfig {
    std::int64_t blocks = 12;
    std::int64_t hidden = 768;
    std::int64_t heads = 12;
    std::int64_t ffn = 3072;
    std::int64_t max_len = 512;
    std::int64_t c1 = 64;
    std::int64_t c2 = 128;
    std::int64_t vocab_size = 0;  // 0 until a vocabulary is attached

    void validate() const;
    std::int64_t head_dim() const { return hidden / heads; }
    bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const std::string& text);

struct ModelParams {
    HanGlyphParams hanglyph;
    EncoderParams encoder;
};

// Classification over the vocabulary plus the 2-way next-sentence head.
struct PretrainHeads {
    LinearParam mlm;  // D x V
    LinearParam nsp;  // D x 2
};

struct Model {
    ModelConfig config;
    ModelParams params;
};

Model make_model(const ModelConfig& config, std::uint64_t seed);
PretrainHeads make_pretrain_heads(const ModelConfig& config, std::uint64_t seed);

// Canonical enumeration of every learnable tensor; the order defines the
// checkpoint layout and the optimizer slot assignment.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
void visit_params(ModelParams& p, const ParamVisitor& fn);
void visit_params(PretrainHeads& p, const ParamVisitor& fn);

std::vector<NamedParam> collect_params(ModelParams& p);
std::vector<NamedParam> collect_params(ModelParams& p, PretrainHeads& heads);

// Everything enumerated by visit_params(ModelParams&, ...): HanGlyph,
// injection projections, transformer blocks, position/segment tables.
std::int64_t core_param_count(const ModelParams& p);

template <typename T>
struct BoundModel {
    BoundHanGlyph<T> hanglyph;
    BoundEncoder<T> encoder;
};

template <typename T>
struct BoundPretrainHeads {
    BoundLinear<T> mlm, nsp;
};

template <typename T>
BoundModel<T> bind_model(GraphT<T>& g, const Model& m, bool track);

template <typename T>
BoundPretrainHeads<T> bind_heads(GraphT<T>& g, const PretrainHeads& h, bool track);

// Bound variables in the exact order of visit_params, for gradient
// collection aligned with collect_params.
template <typename T>
std::vector<VarT<T>> model_param_vars(const BoundModel<T>& m);

template <typename T>
std::vector<VarT<T>> model_head_param_vars(const BoundModel<T>& m,
                                           const BoundPretrainHeads<T>& heads);

// inputs: L x 3 x 48 x 48 -> final hidden states L x D.
template <typename T>
VarT<T> model_encode(GraphT<T>& g, const BoundModel<T>& m, VarT<T> inputs,
                     const std::vector<std::int64_t>& segments, const AttentionMask& mask);

// Tokens with identical bitmaps share one glyph-encoder pass; gather_rows
// scatters gradients back per occurrence, so the math is unchanged. Useful
// whenever a batch repeats characters.
GlyphStates hanglyph_forward_deduped(Graph& g, std::span<const TokenRender> tokens,
                                     const FontAtlas& atlas, const BoundHanGlyph<float>& p,
                                     bool unk_fallback = true);

struct EncodeOutput {
    Tensor hidden;  // L x D
    Tensor r;       // L x D glyph vectors
};

// Grad-free convenience used by inference paths (embed, evaluation).
EncodeOutput encode_tokens(const Model& m, std::span<const TokenRender> tokens,
                           const std::vector<std::int64_t>& segments, const AttentionMask& mask,
                           const FontAtlas& atlas, bool unk_fallback = true);

extern template BoundModel<float> bind_model<float>(GraphT<float>&, const Model&, bool);
extern template BoundModel<double> bind_model<double>(GraphT<double>&, const Model&, bool);
extern template VarT<float> model_encode<float>(GraphT<float>&, const BoundModel<float>&,
                                                VarT<float>, const std::vector<std::int64_t>&,
                                                const AttentionMask&);
extern template VarT<double> model_encode<double>(GraphT<double>&, const BoundModel<double>&,
                                                  VarT<double>, const std::vector<std::int64_t>&,
                                                  const AttentionMask&);

}  // namespace glyphcrm
