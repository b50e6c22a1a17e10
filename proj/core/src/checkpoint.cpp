#include "glyphcrm/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "glyphcrm/error.hpp"

namespace glyphcrm {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t.tensor;
    }
    return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    std::string payload;
    payload += "GCRM";
    put_u32(payload, kCheckpointVersion);
    put_u64(payload, data.meta_json.size());
    payload += data.meta_json;
    for (const auto& nt : data.tensors) {
        put_u32(payload, static_cast<std::uint32_t>(nt.name.size()));
        payload += nt.name;
        put_u32(payload, static_cast<std::uint32_t>(nt.tensor.rank()));
        for (std::int64_t e : nt.tensor.shape()) put_u64(payload, static_cast<std::uint64_t>(e));
        payload.reserve(payload.size() + nt.tensor.size() * 4);
        for (float v : nt.tensor.values()) put_f32(payload, v);
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    put_u32(payload, crc);

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 + 4 + 8 + 4) throw IoError("checkpoint truncated");
    const std::string body = buf.substr(0, buf.size() - 4);
    Reader tail{buf, buf.size() - 4};
    const std::uint32_t stored_crc = tail.u32();
    const auto crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    if (crc != stored_crc) {
        throw IoError("checkpoint checksum mismatch in " + path.string());
    }

    Reader rd{body};
    if (rd.bytes(4) != "GCRM") throw IoError("bad checkpoint magic in " + path.string());
    const std::uint32_t version = rd.u32();
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }

    CheckpointData data;
    const std::uint64_t meta_len = rd.u64();
    data.meta_json = rd.bytes(meta_len);

    while (rd.pos < body.size()) {
        const std::uint32_t name_len = rd.u32();
        NamedParam nt;
        nt.name = rd.bytes(name_len);
        const std::uint32_t rank = rd.u32();
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<std::int64_t>(rd.u64());
        Tensor t(shape);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rd.f32();
        nt.tensor = std::move(t);
        data.tensors.push_back(std::move(nt));
    }
    return data;
}

void restore_params(std::span<NamedParam> live, const CheckpointData& data) {
    std::unordered_map<std::string, const Tensor*> index;
    for (const auto& t : data.tensors) index[t.name] = &t.tensor;
    for (auto& p : live) {
        auto it = index.find(p.name);
        if (it == index.end()) {
            throw IoError("checkpoint is missing tensor '" + p.name + "'");
        }
        const Tensor& src = *it->second;
        if (!same_shape(src.shape(), p.tensor.shape())) {
            throw IoError("tensor '" + p.name + "' has shape " + shape_str(src.shape()) +
                          " in the checkpoint but " + shape_str(p.tensor.shape()) +
                          " in the model");
        }
        std::memcpy(p.tensor.data(), src.data(), src.size() * sizeof(float));
    }
}

}  // namespace glyphcrm
