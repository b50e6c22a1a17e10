#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "glyphcrm/checkpoint.hpp"
#include "glyphcrm/model.hpp"
#include "testutil.hpp"

using namespace glyphcrm;

namespace {

std::filesystem::path temp_file(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "glyphcrm_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

CheckpointData sample_data(std::uint64_t seed) {
    Rng rng(seed);
    CheckpointData data;
    data.meta_json = R"({"config":{"hidden":16},"step":3})";
    data.tensors.push_back({"a.weight", testutil::rand_tensor({4, 5}, rng)});
    data.tensors.push_back({"a.bias", testutil::rand_tensor({5}, rng)});
    data.tensors.push_back({"b.gain", testutil::rand_tensor({2, 2, 3, 3}, rng)});
    return data;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round-trip is bitwise") {
    const auto path = temp_file("roundtrip.ckpt");
    CheckpointData data = sample_data(1);
    save_checkpoint(path, data);

    CheckpointData loaded = load_checkpoint(path);
    CHECK(loaded.meta_json == data.meta_json);
    REQUIRE(loaded.tensors.size() == data.tensors.size());
    for (std::size_t i = 0; i < data.tensors.size(); ++i) {
        CHECK(loaded.tensors[i].name == data.tensors[i].name);
        REQUIRE(loaded.tensors[i].tensor.shape() == data.tensors[i].tensor.shape());
        const auto& a = loaded.tensors[i].tensor;
        const auto& b = data.tensors[i].tensor;
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    }

    SUBCASE("saving the loaded data reproduces the file bytes") {
        const auto path2 = temp_file("roundtrip2.ckpt");
        save_checkpoint(path2, loaded);
        CHECK(read_bytes(path) == read_bytes(path2));
    }
}

TEST_CASE("corrupting one payload byte is a checksum error") {
    const auto path = temp_file("corrupt.ckpt");
    save_checkpoint(path, sample_data(2));
    std::string bytes = read_bytes(path);
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x01);
    write_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"), IoError);
}

TEST_CASE("bad magic and version are load errors") {
    const auto path = temp_file("magic.ckpt");
    save_checkpoint(path, sample_data(3));
    std::string bytes = read_bytes(path);

    SUBCASE("magic") {
        std::string mutated = bytes;
        mutated[0] = 'X';
        // fix the CRC so only the magic is wrong: easiest is full rewrite
        write_bytes(path, mutated);
        CHECK_THROWS_AS(load_checkpoint(path), IoError);
    }

    SUBCASE("truncation") {
        write_bytes(path, bytes.substr(0, bytes.size() / 3));
        CHECK_THROWS_AS(load_checkpoint(path), IoError);
    }

    SUBCASE("empty file") {
        write_bytes(path, "");
        CHECK_THROWS_AS(load_checkpoint(path), IoError);
    }
}

TEST_CASE("restore_params copies by name and rejects shape mismatches") {
    const auto path = temp_file("restore.ckpt");
    CheckpointData data = sample_data(4);
    save_checkpoint(path, data);
    CheckpointData loaded = load_checkpoint(path);

    SUBCASE("copy succeeds into matching shapes") {
        Tensor a({4, 5}), b({5});
        std::vector<NamedParam> live{{"a.weight", a}, {"a.bias", b}};
        restore_params(live, loaded);
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == data.tensors[0].tensor[j]);
    }

    SUBCASE("wrong extents name both shapes") {
        Tensor wrong({8, 5});
        std::vector<NamedParam> live{{"a.weight", wrong}};
        CHECK_THROWS_WITH_AS(restore_params(live, loaded), doctest::Contains("[4,5]"), IoError);
        CHECK_THROWS_WITH_AS(restore_params(live, loaded), doctest::Contains("[8,5]"), IoError);
    }

    SUBCASE("missing tensor is an error naming it") {
        Tensor t({4, 5});
        std::vector<NamedParam> live{{"missing.weight", t}};
        CHECK_THROWS_WITH_AS(restore_params(live, loaded), doctest::Contains("missing.weight"),
                             IoError);
    }
}

TEST_CASE("cross-config model restore is rejected") {
    ModelConfig small;
    small.blocks = 1;
    small.hidden = 16;
    small.heads = 2;
    small.ffn = 32;
    small.max_len = 8;
    small.c1 = 2;
    small.c2 = 4;
    small.vocab_size = 7;
    Model m16 = make_model(small, 1);

    const auto path = temp_file("d16.ckpt");
    CheckpointData data;
    data.meta_json = config_to_json(small);
    data.tensors = collect_params(m16.params);
    save_checkpoint(path, data);

    ModelConfig wider = small;
    wider.hidden = 32;
    Model m32 = make_model(wider, 1);
    auto live = collect_params(m32.params);
    CheckpointData loaded = load_checkpoint(path);
    CHECK_THROWS_WITH_AS(restore_params(live, loaded), doctest::Contains("in the checkpoint"),
                         IoError);
}
