#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <system_error>
#include <vector>

#include "tspformer/error.hpp"
#include "tspformer/model.hpp"

namespace tspformer::train {

/// Everything needed to resume or rerun: configuration, weights, optimizer
/// moments, the step counter and the training seed.
struct Checkpoint {
    model::ModelParams<float> params;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline constexpr char kMagic[8] = {'T', 'S', 'P', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

// Explicit little-endian IO so the file format does not depend on the host.
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}
inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ParseError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline void put_array(std::string& out, const std::string& name, const num::Tensor<float>& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (std::size_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
}

} // namespace detail

inline std::string serialize_checkpoint(Checkpoint& ck) {
    using namespace detail;
    const model::ModelConfig& c = ck.params.config;
    std::string out(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(c.d));
    put_u32(out, static_cast<std::uint32_t>(c.layers));
    put_u32(out, static_cast<std::uint32_t>(c.heads));
    put_u32(out, static_cast<std::uint32_t>(c.ffn_dim));
    put_f64(out, c.dropout);
    put_u32(out, static_cast<std::uint32_t>(c.encoder_pe));
    put_u32(out, static_cast<std::uint32_t>(c.decoder_pe));
    put_u32(out, static_cast<std::uint32_t>(c.decoder_input));
    put_u32(out, static_cast<std::uint32_t>(c.output_head));
    put_f64(out, c.pe_scale);
    put_u32(out, static_cast<std::uint32_t>(c.max_nodes));
    put_u64(out, ck.step);
    put_u64(out, ck.seed);

    auto params = ck.params.all();
    put_u32(out, static_cast<std::uint32_t>(params.size() * 3));
    for (auto* p : params) {
        put_array(out, p->name, p->value);
        put_array(out, p->name + ".m", p->adam_m);
        put_array(out, p->name + ".v", p->adam_v);
    }
    return out;
}

inline void save_checkpoint(const std::string& path, Checkpoint& ck) {
    const std::string bytes = serialize_checkpoint(ck);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write to '" + tmp + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename '" + tmp + "' -> '" + path + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ParseError("checkpoint: bad magic bytes");
    }
    Reader r{buf, sizeof(kMagic)};
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
    }
    model::ModelConfig c;
    c.d = static_cast<int>(r.u32());
    c.layers = static_cast<int>(r.u32());
    c.heads = static_cast<int>(r.u32());
    c.ffn_dim = static_cast<int>(r.u32());
    c.dropout = r.f64();
    c.encoder_pe = static_cast<model::EncoderPe>(r.u32());
    c.decoder_pe = static_cast<model::DecoderPe>(r.u32());
    c.decoder_input = static_cast<model::DecoderInput>(r.u32());
    c.output_head = static_cast<model::OutputHead>(r.u32());
    c.pe_scale = r.f64();
    c.max_nodes = static_cast<int>(r.u32());

    Checkpoint ck{model::ModelParams<float>::init(c, 0), 0, 0};
    ck.step = r.u64();
    ck.seed = r.u64();

    std::map<std::string, num::Tensor<float>*> slots;
    for (auto* p : ck.params.all()) {
        slots[p->name] = &p->value;
        slots[p->name + ".m"] = &p->adam_m;
        slots[p->name + ".v"] = &p->adam_v;
    }
    const std::uint32_t count = r.u32();
    if (count != slots.size()) {
        throw ShapeError("checkpoint: expected " + std::to_string(slots.size()) + " arrays, found " +
                         std::to_string(count));
    }
    for (std::uint32_t a = 0; a < count; ++a) {
        const std::string name = r.str();
        auto it = slots.find(name);
        if (it == slots.end()) throw ShapeError("checkpoint: unknown array '" + name + "'");
        num::Tensor<float>* dst = it->second;
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = r.u32();
        if (dims != dst->shape()) {
            throw ShapeError("checkpoint: array '" + name + "' has shape " +
                             num::Tensor<float>::shape_str(dims) + ", expected " + dst->shape_str());
        }
        for (std::size_t i = 0; i < dst->numel(); ++i) (*dst)[i] = r.f32();
        slots.erase(it);
    }
    if (!slots.empty()) {
        throw ShapeError("checkpoint: array '" + slots.begin()->first + "' missing");
    }
    return ck;
}

} // namespace tspformer::train
