#pragma once

#include <array>
#include <cstdint>

#include "glyphcrm/layers.hpp"

namespace glyphcrm {

// One residual convolutional block:
//   z_c = relu(entry(x))                       entry: 3x3, stride 1, pad 1
//   z_r = relu(maxpool2(z_c) + F(z_c))         F: three k x k convs, relu
//   out = maxpool2(z_r)                        between them, middle stride 2
// F's padding is size-preserving ((k-1)/2), so both residual addends share
// the half-resolution grid and the block quarters the spatial extent.
struct ResBlockParams {
    Conv2dParam entry;
    std::array<Conv2dParam, 3> core;
    std::int64_t core_kernel = 3;
};

struct HanGlyphParams {
    ResBlockParams block1;  // 9x9 core against sparse stroke maps
    ResBlockParams block2;  // 3x3 core
    LinearParam proj_g1;    // c1*12*12 -> d_model
    LinearParam proj_g2;    // c2*3*3  -> d_model
    LinearParam proj_r;     // c2*3*3  -> d_model, independent of proj_g2
};

ResBlockParams make_resblock(std::int64_t in_channels, std::int64_t channels,
                             std::int64_t core_kernel, Rng& rng);

HanGlyphParams make_hanglyph(std::int64_t c1, std::int64_t c2, std::int64_t d_model, Rng& rng);

std::int64_t param_count(const ResBlockParams& p);
std::int64_t param_count(const HanGlyphParams& p);

template <typename T>
struct BoundResBlock {
    BoundConv2d<T> entry;
    std::array<BoundConv2d<T>, 3> core;
    std::int64_t kernel = 3;
};

template <typename T>
struct BoundHanGlyph {
    BoundResBlock<T> block1, block2;
    BoundLinear<T> proj_g1, proj_g2, proj_r;
};

template <typename T>
BoundResBlock<T> bind(GraphT<T>& g, const ResBlockParams& p, bool track);

template <typename T>
BoundHanGlyph<T> bind(GraphT<T>& g, const HanGlyphParams& p, bool track);

// N x C_in x H x W -> N x C x H/4 x W/4 (48 -> 12 -> 3 across the two blocks).
template <typename T>
VarT<T> resblock_forward(GraphT<T>& g, VarT<T> x, const BoundResBlock<T>& p);

// Row-major flatten then projection; one vector per token.
template <typename T>
VarT<T> inject_state(GraphT<T>& g, VarT<T> feat, const BoundLinear<T>& proj);

template <typename T>
VarT<T> glyph_vector(GraphT<T>& g, VarT<T> feat2, const BoundLinear<T>& proj_r);

// Per-token glyph representation r plus the per-block injection states.
template <typename T>
struct GlyphStatesT {
    VarT<T> r;
    VarT<T> g1;
    VarT<T> g2;
};

using GlyphStates = GlyphStatesT<float>;

// seq: L x 3 x 48 x 48. Token order is preserved; every output row depends
// only on its own input image.
template <typename T>
GlyphStatesT<T> hanglyph_forward(GraphT<T>& g, VarT<T> seq, const BoundHanGlyph<T>& p);

extern template VarT<float> resblock_forward<float>(GraphT<float>&, VarT<float>,
                                                    const BoundResBlock<float>&);
extern template VarT<double> resblock_forward<double>(GraphT<double>&, VarT<double>,
                                                      const BoundResBlock<double>&);
extern template GlyphStatesT<float> hanglyph_forward<float>(GraphT<float>&, VarT<float>,
                                                            const BoundHanGlyph<float>&);
extern template GlyphStatesT<double> hanglyph_forward<double>(GraphT<double>&, VarT<double>,
                                                              const BoundHanGlyph<double>&);

}  // namespace glyphcrm
