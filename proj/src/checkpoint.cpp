#include "phaselab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace phaselab {
namespace {

using json = nlohmann::json;
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kDigestLen = 32;

json model_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size},
                {"context_len", c.context_len},
                {"d_model", c.d_model},
                {"n_layers", c.n_layers},
                {"n_heads", c.n_heads}};
}

json adapter_json(const AdapterConfig& a) {
    json targets = json::array();
    for (auto t : a.targets) targets.push_back(std::string(target_name(t)));
    return json{{"rank", a.rank}, {"alpha", a.alpha}, {"dropout", a.dropout}, {"targets", targets}};
}

std::vector<const Tensor*> all_tensors(const ParameterSet& params, const AdapterSet* adapters) {
    std::vector<const Tensor*> out;
    for (const auto& t : params.tensors) out.push_back(&t);
    if (adapters) {
        for (const Tensor* t : adapters->tensors()) out.push_back(t);
    }
    return out;
}

std::string header_text(const ParameterSet& params, const AdapterSet* adapters) {
    json dir = json::array();
    std::uint64_t offset = 0;
    for (const Tensor* t : all_tensors(params, adapters)) {
        dir.push_back(json{{"name", t->name}, {"shape", t->shape}, {"offset", offset}});
        offset += t->numel() * sizeof(float);
    }
    json header{{"format_version", kCheckpointVersion}, {"model", model_json(params.config)}, {"tensors", dir}};
    header["adapter"] = adapters ? adapter_json(adapters->config) : json(nullptr);
    if (adapters) {
        json pairs = json::array();
        for (const auto& p : adapters->pairs) {
            pairs.push_back(json{{"layer", p.layer}, {"target", std::string(target_name(p.target))}});
        }
        header["adapter_pairs"] = pairs;
    }
    return header.dump();
}

std::vector<std::uint8_t> payload_bytes(const ParameterSet& params, const AdapterSet* adapters) {
    std::vector<std::uint8_t> out;
    for (const Tensor* t : all_tensors(params, adapters)) {
        if (t->data.size() > 0) out.reserve(out.size() + t->data.size() * 4);
        for (float f : t->data) {
            const auto bits = std::bit_cast<std::uint32_t>(f);
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
        }
    }
    return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& b, std::size_t pos, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    return v;
}

[[noreturn]] void fail(CheckpointError::Kind kind, const std::string& what) {
    throw CheckpointError(kind, "checkpoint: " + what);
}

Tensor read_tensor(const json& entry, const std::vector<std::uint8_t>& bytes, std::size_t payload_start,
                   std::uint64_t payload_len) {
    Tensor t(entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<int>>());
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset + t.numel() * 4 > payload_len) fail(CheckpointError::Kind::kMalformed, "tensor '" + t.name + "' exceeds payload");
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const auto bits = static_cast<std::uint32_t>(get_le(bytes, payload_start + offset + i * 4, 4));
        t.data[i] = std::bit_cast<float>(bits);
    }
    return t;
}

}  // namespace

Sha256 checkpoint_digest(const ParameterSet& params, const AdapterSet* adapters) {
    DigestBuilder b;
    b.add(header_text(params, adapters));
    b.add(payload_bytes(params, adapters));
    return b.finish();
}

std::vector<std::uint8_t> save_checkpoint(const ParameterSet& params, const AdapterSet* adapters) {
    if (!params.all_finite() || (adapters && !adapters->all_finite())) {
        throw std::invalid_argument("save_checkpoint: non-finite tensor");
    }
    const std::string header = header_text(params, adapters);
    const auto payload = payload_bytes(params, adapters);
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicLen);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    put_u64(out, payload.size());
    out.insert(out.end(), payload.begin(), payload.end());
    DigestBuilder b;
    b.add(header);
    b.add(payload);
    const auto digest = b.finish();
    out.insert(out.end(), digest.begin(), digest.end());
    return out;
}

LoadedCheckpoint load_checkpoint(const std::vector<std::uint8_t>& bytes) {
    using Kind = CheckpointError::Kind;
    if (bytes.size() < kMagicLen) fail(Kind::kTruncated, "file shorter than magic");
    if (std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0) fail(Kind::kBadMagic, "bad magic bytes");
    std::size_t pos = kMagicLen;
    if (bytes.size() < pos + 8) fail(Kind::kTruncated, "truncated preamble");
    const auto version = static_cast<std::uint32_t>(get_le(bytes, pos, 4));
    if (version != kCheckpointVersion) fail(Kind::kUnknownVersion, "unknown format version " + std::to_string(version));
    const auto header_len = get_le(bytes, pos + 4, 4);
    pos += 8;
    if (bytes.size() < pos + header_len + 8) fail(Kind::kTruncated, "truncated header");
    const std::string header_str(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
    pos += header_len;
    const auto payload_len = get_le(bytes, pos, 8);
    pos += 8;
    const std::size_t payload_start = pos;
    if (bytes.size() < payload_start + payload_len + kDigestLen) fail(Kind::kTruncated, "truncated payload");
    if (bytes.size() != payload_start + payload_len + kDigestLen) fail(Kind::kMalformed, "trailing bytes after digest");

    DigestBuilder b;
    b.add(header_str);
    b.add(std::span<const std::uint8_t>(bytes.data() + payload_start, payload_len));
    const auto digest = b.finish();
    if (std::memcmp(digest.data(), bytes.data() + payload_start + payload_len, kDigestLen) != 0) {
        fail(Kind::kHashMismatch, "content hash mismatch");
    }

    LoadedCheckpoint out;
    try {
        const json header = json::parse(header_str);
        if (header.at("format_version").get<std::uint32_t>() != kCheckpointVersion) {
            fail(Kind::kUnknownVersion, "header format_version disagrees with preamble");
        }
        const auto& m = header.at("model");
        auto& cfg = out.params.config;
        cfg.vocab_size = m.at("vocab_size").get<int>();
        cfg.context_len = m.at("context_len").get<int>();
        cfg.d_model = m.at("d_model").get<int>();
        cfg.n_layers = m.at("n_layers").get<int>();
        cfg.n_heads = m.at("n_heads").get<int>();
        cfg.validate();
        const ParamLayout layout{cfg.n_layers};
        const auto& dir = header.at("tensors");
        const auto n_base = static_cast<std::size_t>(layout.count());
        if (dir.size() < n_base) fail(Kind::kMalformed, "tensor directory too short");
        for (std::size_t i = 0; i < n_base; ++i) {
            out.params.tensors.push_back(read_tensor(dir[i], bytes, payload_start, payload_len));
        }
        if (!header.at("adapter").is_null()) {
            const auto& a = header.at("adapter");
            AdapterSet s;
            s.config.rank = a.at("rank").get<int>();
            s.config.alpha = a.at("alpha").get<double>();
            s.config.dropout = a.at("dropout").get<double>();
            s.config.targets.clear();
            for (const auto& t : a.at("targets")) s.config.targets.push_back(target_from_name(t.get<std::string>()));
            const auto& pairs = header.at("adapter_pairs");
            if (dir.size() != n_base + 2 * pairs.size()) fail(Kind::kMalformed, "adapter directory size mismatch");
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                AdapterPair p;
                p.layer = pairs[i].at("layer").get<int>();
                p.target = target_from_name(pairs[i].at("target").get<std::string>());
                p.a = read_tensor(dir[n_base + 2 * i], bytes, payload_start, payload_len);
                p.b = read_tensor(dir[n_base + 2 * i + 1], bytes, payload_start, payload_len);
                s.pairs.push_back(std::move(p));
            }
            out.adapters = std::move(s);
        } else if (dir.size() != n_base) {
            fail(Kind::kMalformed, "unexpected extra tensors");
        }
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        fail(Kind::kMalformed, std::string("bad header: ") + e.what());
    }
    out.content_hash = to_hex(digest);
    return out;
}

void write_checkpoint_file(const std::filesystem::path& path, const ParameterSet& params, const AdapterSet* adapters) {
    const auto bytes = save_checkpoint(params, adapters);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: write failed " + path.string());
}

LoadedCheckpoint read_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

}  // namespace phaselab
