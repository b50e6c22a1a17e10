#include <doctest.h>

#include "glyphcrm/model.hpp"
#include "testutil.hpp"

using namespace glyphcrm;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.blocks = 2;
    c.hidden = 16;
    c.heads = 2;
    c.ffn = 32;
    c.max_len = 8;
    c.c1 = 2;
    c.c2 = 4;
    c.vocab_size = 9;
    return c;
}

}  // namespace

TEST_CASE("config validation and JSON round-trip") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    CHECK(config_from_json(config_to_json(c)) == c);

    SUBCASE("hidden must divide by heads") {
        ModelConfig bad = c;
        bad.heads = 3;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
    SUBCASE("positive dimensions") {
        ModelConfig bad = c;
        bad.c1 = 0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
}

TEST_CASE("parameter registry is aligned between visitors and bound vars") {
    ModelConfig c = tiny_config();
    Model m = make_model(c, 7);
    PretrainHeads heads = make_pretrain_heads(c, 7);

    auto named = collect_params(m.params, heads);

    Graph g;
    auto bm = bind_model<float>(g, m, true);
    auto bh = bind_heads<float>(g, heads, true);
    auto vars = model_head_param_vars<float>(bm, bh);

    REQUIRE(named.size() == vars.size());
    for (std::size_t i = 0; i < named.size(); ++i) {
        INFO("param ", named[i].name);
        CHECK(same_shape(named[i].tensor.shape(), vars[i].value().shape()));
        // float binding shares storage: same buffer
        CHECK(named[i].tensor.data() == vars[i].value().data());
    }

    SUBCASE("names are unique") {
        std::vector<std::string> names;
        for (const auto& p : named) names.push_back(p.name);
        std::sort(names.begin(), names.end());
        CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
    }
}

TEST_CASE("core parameter count at the default configuration") {
    ModelConfig full;  // defaults: 12 blocks, 768 hidden, 3072 ffn, c1 64, c2 128
    Model m = make_model(full, 1);

    const std::int64_t per_block = transformer_block_param_count(768, 3072);
    CHECK(per_block == 7087872);

    // encoder actual equals 12 analytic blocks + the two embedding tables
    std::int64_t encoder_actual = param_count(m.params.encoder);
    CHECK(encoder_actual == 12 * per_block + 512 * 768 + 2 * 768);

    const std::int64_t total = core_param_count(m.params);
    CHECK(total == encoder_actual + param_count(m.params.hanglyph));

    // the glyph path replaces an embedding table; the whole trunk lands
    // near 95M parameters
    CHECK(total > 90'000'000);
    CHECK(total < 101'000'000);
}

TEST_CASE("make_model is deterministic per seed") {
    ModelConfig c = tiny_config();
    Model a = make_model(c, 5);
    Model b = make_model(c, 5);
    Model other = make_model(c, 6);

    auto pa = collect_params(a.params);
    auto pb = collect_params(b.params);
    auto po = collect_params(other.params);
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t j = 0; j < pa[i].tensor.size(); ++j) {
            CHECK(pa[i].tensor[j] == pb[i].tensor[j]);
            any_diff = any_diff || pa[i].tensor[j] != po[i].tensor[j];
        }
    }
    CHECK(any_diff);
}

TEST_CASE("encode_tokens is deterministic and produces L x D outputs") {
    FontAtlas atlas = load_bdf_file(testutil::fixture("cjk16.bdf"));
    ModelConfig c = tiny_config();
    Model m = make_model(c, 9);

    std::vector<TokenRender> tokens{TokenRender::of(SpecialToken::Cls),
                                    TokenRender::character(U'一'),
                                    TokenRender::character(U'我'),
                                    TokenRender::of(SpecialToken::Sep)};
    const std::vector<std::int64_t> segments{0, 0, 0, 0};
    AttentionMask mask = AttentionMask::all_valid(4);

    EncodeOutput a = encode_tokens(m, tokens, segments, mask, atlas);
    EncodeOutput b = encode_tokens(m, tokens, segments, mask, atlas);
    REQUIRE(a.hidden.shape() == Shape{4, 16});
    REQUIRE(a.r.shape() == Shape{4, 16});
    for (std::size_t i = 0; i < a.hidden.size(); ++i) CHECK(a.hidden[i] == b.hidden[i]);
    for (std::size_t i = 0; i < a.r.size(); ++i) CHECK(a.r[i] == b.r[i]);
}
