// Checkpoint container, layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "PTBTCKPT"
//   offset 8   u32       format version (1)
//   offset 12  u64       header length H in bytes
//   offset 20  H bytes   UTF-8 JSON header:
//                          {"config": {...}, "provenance": {...},
//                           "aliases": {alias: owner},
//                           "tensors": [{"name", "group", "shape", "offset"}]}
//   then       f64 LE    tensor values, row-major, concatenated in header
//                        order; "offset" counts doubles from payload start.

#include <bit>
#include <fstream>
#include <sstream>

#include "ptbt/config_io.hpp"
#include "ptbt/model.hpp"
#include "ptbt/util.hpp"

namespace ptbt {

using nlohmann::json;

void require_known_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view section) {
    if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (auto a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError("unknown config key '" + std::string(section) + "." + it.key() + "'");
    }
}

json to_json(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers},         {"d_model", c.d_model},
                {"num_heads", c.num_heads},           {"d_ff", c.d_ff},
                {"src_vocab_size", c.src_vocab_size}, {"tgt_vocab_size", c.tgt_vocab_size},
                {"dropout_rate", c.dropout_rate},     {"max_positions", c.max_positions},
                {"embedding_tying", std::string(tying_name(c.tying))}};
}

ModelConfig model_config_from_json(const json& j, std::string_view section) {
    require_known_keys(j,
                       {"num_layers", "d_model", "num_heads", "d_ff", "src_vocab_size", "tgt_vocab_size",
                        "dropout_rate", "max_positions", "embedding_tying"},
                       section);
    ModelConfig c;
    read_key(j, "num_layers", c.num_layers, section);
    read_key(j, "d_model", c.d_model, section);
    read_key(j, "num_heads", c.num_heads, section);
    read_key(j, "d_ff", c.d_ff, section);
    read_key(j, "src_vocab_size", c.src_vocab_size, section);
    read_key(j, "tgt_vocab_size", c.tgt_vocab_size, section);
    read_key(j, "dropout_rate", c.dropout_rate, section);
    read_key(j, "max_positions", c.max_positions, section);
    std::string tying(tying_name(c.tying));
    read_key(j, "embedding_tying", tying, section);
    c.tying = parse_tying(tying);
    return c;
}

// ---------------------------------------------------------------------------

Checkpoint to_checkpoint(const Model& model, Provenance provenance) {
    Checkpoint ck;
    ck.config = model.config();
    ck.provenance = std::move(provenance);
    ck.tensors = model.params();
    ck.aliases = model.aliases();
    return ck;
}

Model model_from_checkpoint(const Checkpoint& ckpt, const std::optional<ModelConfig>& expected) {
    if (expected && !(*expected == ckpt.config))
        throw ModelError("checkpoint config " + to_json(ckpt.config).dump() + " does not match model config " +
                         to_json(*expected).dump());
    return model_from_parts(ckpt.config, ckpt.tensors, ckpt.aliases);
}

namespace {

constexpr std::string_view kMagic = "PTBTCKPT";

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
    return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
    json header;
    header["config"] = to_json(ck.config);
    header["provenance"] = {{"stage", ck.provenance.stage}, {"seed", ck.provenance.seed}, {"step", ck.provenance.step}};
    header["aliases"] = ck.aliases;
    json tensors = json::array();
    std::size_t offset = 0;
    const Model layout = model_from_parts(ck.config, ck.tensors, ck.aliases);
    for (const auto& [name, t] : ck.tensors) {
        tensors.push_back({{"name", name},
                           {"group", std::string(group_name(layout.group_of(name)))},
                           {"shape", t.shape()},
                           {"offset", offset}});
        offset += t.size();
    }
    header["tensors"] = tensors;
    const std::string text = header.dump();

    std::string out(kMagic);
    put_u32(out, ck.format_version);
    put_u64(out, text.size());
    out += text;
    out.reserve(out.size() + offset * 8);
    for (const auto& [_, t] : ck.tensors)
        for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    if (bytes.size() < 20 || bytes.substr(0, 8) != kMagic) throw ModelError("not a checkpoint (bad magic)");
    Checkpoint ck;
    ck.format_version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
    if (ck.format_version != Checkpoint::kFormatVersion)
        throw ModelError("unsupported checkpoint format version " + std::to_string(ck.format_version));
    const std::uint64_t header_len = get_le(bytes, 12, 8);
    if (20 + header_len > bytes.size()) throw ModelError("truncated checkpoint header");
    json header;
    try {
        header = json::parse(bytes.substr(20, header_len));
        ck.config = model_config_from_json(header.at("config"), "checkpoint.config");
        const auto& prov = header.at("provenance");
        ck.provenance.stage = prov.at("stage").get<std::string>();
        ck.provenance.seed = prov.at("seed").get<std::uint64_t>();
        ck.provenance.step = prov.at("step").get<std::uint64_t>();
        ck.aliases = header.at("aliases").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw ModelError(std::string("malformed checkpoint header: ") + e.what());
    }
    const std::size_t payload = 20 + header_len;
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::size_t>();
        Tensor t(shape);
        const std::size_t start = payload + offset * 8;
        if (start + t.size() * 8 > bytes.size()) throw ModelError("truncated checkpoint payload at '" + name + "'");
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(get_le(bytes, start + i * 8, 8));
        ck.tensors.emplace(name, std::move(t));
    }
    // Structural validation against the config.
    model_from_parts(ck.config, ck.tensors, ck.aliases);
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::string bytes = serialize_checkpoint(ckpt);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ModelError("cannot write checkpoint " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot read checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

std::string checkpoint_digest(const Checkpoint& ckpt) { return sha256_hex(serialize_checkpoint(ckpt)); }

std::string params_digest(const Model& model, const std::vector<std::string>& names) {
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    Digest d;
    for (const auto& n : sorted) {
        d.update(n);
        d.update(model.param(n).values());
    }
    return d.hex();
}

// ---------------------------------------------------------------------------

Model selective_init(const Model& model, const Checkpoint& ckpt, InitMask mask, std::uint64_t seed) {
    const ModelConfig& c = model.config();
    if (!(c == ckpt.config))
        throw ModelError("checkpoint config " + to_json(ckpt.config).dump() + " does not match model config " +
                         to_json(c).dump());
    const Model pretrained = model_from_checkpoint(ckpt);
    if (mask.encoder != mask.decoder) {
        for (const auto& [alias, owner] : model.aliases()) {
            const bool alias_enc = is_encoder_side(parse_group(std::string_view(alias).substr(0, alias.find('.'))));
            const bool owner_enc = is_encoder_side(model.group_of(owner));
            if (alias_enc != owner_enc)
                throw ModelError("init mask " + mask.label() + " would split tensor '" + owner + "' shared with '" +
                                 alias + "' across encoder and decoder sides (embedding_tying=" +
                                 std::string(tying_name(c.tying)) + ")");
        }
    }
    const Model fresh = build_model(c, seed);
    std::map<std::string, Tensor> params;
    for (const auto& [name, _] : model.params()) {
        const bool from_ckpt = is_encoder_side(model.group_of(name)) ? mask.encoder : mask.decoder;
        params.emplace(name, from_ckpt ? pretrained.param(name) : fresh.param(name));
    }
    return model_from_parts(c, std::move(params), model.aliases());
}

}  // namespace ptbt
