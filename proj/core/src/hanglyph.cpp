#include "glyphcrm/hanglyph.hpp"

namespace glyphcrm {

ResBlockParams make_resblock(std::int64_t in_channels, std::int64_t channels,
                             std::int64_t core_kernel, Rng& rng) {
    ResBlockParams p;
    p.entry = make_conv2d(channels, in_channels, 3, rng);
    for (auto& c : p.core) c = make_conv2d(channels, channels, core_kernel, rng);
    p.core_kernel = core_kernel;
    return p;
}

HanGlyphParams make_hanglyph(std::int64_t c1, std::int64_t c2, std::int64_t d_model, Rng& rng) {
    HanGlyphParams p;
    p.block1 = make_resblock(3, c1, 9, rng);
    p.block2 = make_resblock(c1, c2, 3, rng);
    p.proj_g1 = make_linear(c1 * 12 * 12, d_model, rng);
    p.proj_g2 = make_linear(c2 * 3 * 3, d_model, rng);
    p.proj_r = make_linear(c2 * 3 * 3, d_model, rng);
    return p;
}

std::int64_t param_count(const ResBlockParams& p) {
    std::int64_t n = param_count(p.entry);
    for (const auto& c : p.core) n += param_count(c);
    return n;
}

std::int64_t param_count(const HanGlyphParams& p) {
    return param_count(p.block1) + param_count(p.block2) + param_count(p.proj_g1) +
           param_count(p.proj_g2) + param_count(p.proj_r);
}

template <typename T>
BoundResBlock<T> bind(GraphT<T>& g, const ResBlockParams& p, bool track) {
    BoundResBlock<T> b;
    b.entry = bind(g, p.entry, track);
    for (std::size_t i = 0; i < 3; ++i) b.core[i] = bind(g, p.core[i], track);
    b.kernel = p.core_kernel;
    return b;
}

template <typename T>
BoundHanGlyph<T> bind(GraphT<T>& g, const HanGlyphParams& p, bool track) {
    BoundHanGlyph<T> b;
    b.block1 = bind(g, p.block1, track);
    b.block2 = bind(g, p.block2, track);
    b.proj_g1 = bind(g, p.proj_g1, track);
    b.proj_g2 = bind(g, p.proj_g2, track);
    b.proj_r = bind(g, p.proj_r, track);
    return b;
}

template <typename T>
VarT<T> resblock_forward(GraphT<T>& g, VarT<T> x, const BoundResBlock<T>& p) {
    const int pad = static_cast<int>((p.kernel - 1) / 2);
    auto zc = g.relu(g.conv2d(x, p.entry.weight, p.entry.bias, 1, 1));
    auto f = g.relu(g.conv2d(zc, p.core[0].weight, p.core[0].bias, 1, pad));
    f = g.relu(g.conv2d(f, p.core[1].weight, p.core[1].bias, 2, pad));
    f = g.conv2d(f, p.core[2].weight, p.core[2].bias, 1, pad);
    auto zr = g.relu(g.add(g.maxpool2(zc), f));
    return g.maxpool2(zr);
}

template <typename T>
VarT<T> inject_state(GraphT<T>& g, VarT<T> feat, const BoundLinear<T>& proj) {
    const auto& s = feat.value().shape();
    if (s.size() != 4) {
        throw ShapeError("inject_state: expected N x C x h x w, got " + shape_str(s));
    }
    auto flat = g.reshape(feat, {s[0], s[1] * s[2] * s[3]});
    return g.linear(flat, proj.weight, proj.bias);
}

template <typename T>
VarT<T> glyph_vector(GraphT<T>& g, VarT<T> feat2, const BoundLinear<T>& proj_r) {
    return inject_state(g, feat2, proj_r);
}

template <typename T>
GlyphStatesT<T> hanglyph_forward(GraphT<T>& g, VarT<T> seq, const BoundHanGlyph<T>& p) {
    auto z1 = resblock_forward(g, seq, p.block1);
    auto g1 = inject_state(g, z1, p.proj_g1);
    auto z2 = resblock_forward(g, z1, p.block2);
    auto g2 = inject_state(g, z2, p.proj_g2);
    auto r = glyph_vector(g, z2, p.proj_r);
    return {r, g1, g2};
}

template BoundResBlock<float> bind<float>(GraphT<float>&, const ResBlockParams&, bool);
template BoundResBlock<double> bind<double>(GraphT<double>&, const ResBlockParams&, bool);
template BoundHanGlyph<float> bind<float>(GraphT<float>&, const HanGlyphParams&, bool);
template BoundHanGlyph<double> bind<double>(GraphT<double>&, const HanGlyphParams&, bool);
template VarT<float> resblock_forward<float>(GraphT<float>&, VarT<float>,
                                             const BoundResBlock<float>&);
template VarT<double> resblock_forward<double>(GraphT<double>&, VarT<double>,
                                               const BoundResBlock<double>&);
template VarT<float> inject_state<float>(GraphT<float>&, VarT<float>, const BoundLinear<float>&);
template VarT<double> inject_state<double>(GraphT<double>&, VarT<double>,
                                           const BoundLinear<double>&);
template VarT<float> glyph_vector<float>(GraphT<float>&, VarT<float>, const BoundLinear<float>&);
template VarT<double> glyph_vector<double>(GraphT<double>&, VarT<double>,
                                           const BoundLinear<double>&);
template GlyphStatesT<float> hanglyph_forward<float>(GraphT<float>&, VarT<float>,
                                                     const BoundHanGlyph<float>&);
template GlyphStatesT<double> hanglyph_forward<double>(GraphT<double>&, VarT<double>,
                                                       const BoundHanGlyph<double>&);

}  // namespace glyphcrm
