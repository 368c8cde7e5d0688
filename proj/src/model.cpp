#include "ptbt/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ptbt/util.hpp"

namespace ptbt {

std::string_view tying_name(EmbeddingTying tying) {
    switch (tying) {
        case EmbeddingTying::Untied: return "untied";
        case EmbeddingTying::TiedTgtOut: return "tied_tgt_out";
        case EmbeddingTying::TiedAll: return "tied_all";
    }
    return "?";
}

EmbeddingTying parse_tying(std::string_view name) {
    if (name == "untied") return EmbeddingTying::Untied;
    if (name == "tied_tgt_out") return EmbeddingTying::TiedTgtOut;
    if (name == "tied_all") return EmbeddingTying::TiedAll;
    throw ModelError("unknown embedding tying '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
    if (num_layers == 0) throw ModelError("num_layers must be positive");
    if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0)
        throw ModelError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of num_heads (" +
                         std::to_string(num_heads) + ")");
    if (d_ff == 0) throw ModelError("d_ff must be positive");
    const auto reserved = static_cast<std::size_t>(special::kNumReserved);
    if (src_vocab_size < reserved || tgt_vocab_size < reserved)
        throw ModelError("vocabulary sizes must include the " + std::to_string(reserved) + " reserved tokens");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ModelError("dropout_rate must be in [0,1)");
    if (max_positions == 0) throw ModelError("max_positions must be positive");
    if (tying == EmbeddingTying::TiedAll && src_vocab_size != tgt_vocab_size)
        throw ModelError("tied_all needs equal source and target vocabulary sizes");
}

std::string_view group_name(ParamGroup group) {
    switch (group) {
        case ParamGroup::SrcEmbed: return "src_embed";
        case ParamGroup::Encoder: return "encoder";
        case ParamGroup::TgtEmbed: return "tgt_embed";
        case ParamGroup::Decoder: return "decoder";
        case ParamGroup::OutProj: return "out_proj";
    }
    return "?";
}

ParamGroup parse_group(std::string_view name) {
    for (ParamGroup g : kAllGroups)
        if (group_name(g) == name) return g;
    throw ModelError("unknown parameter group '" + std::string(name) + "'");
}

bool is_encoder_side(ParamGroup group) { return group == ParamGroup::SrcEmbed || group == ParamGroup::Encoder; }

std::set<ParamGroup> encoder_side_groups() { return {ParamGroup::SrcEmbed, ParamGroup::Encoder}; }
std::set<ParamGroup> decoder_side_groups() { return {ParamGroup::TgtEmbed, ParamGroup::Decoder, ParamGroup::OutProj}; }

std::string InitMask::label() const { return std::string(encoder ? "Y" : "N") + (decoder ? "Y" : "N"); }

InitMask InitMask::parse(std::string_view label) {
    if (label.size() != 2) throw ModelError("init mask must be one of NN, NY, YN, YY");
    auto side = [&](char c) {
        if (c == 'Y' || c == 'y') return true;
        if (c == 'N' || c == 'n') return false;
        throw ModelError("init mask must be one of NN, NY, YN, YY");
    };
    return {side(label[0]), side(label[1])};
}

// ---------------------------------------------------------------------------
// Model

std::string Model::resolve(std::string_view name) const {
    auto it = aliases_.find(std::string(name));
    return it == aliases_.end() ? std::string(name) : it->second;
}

bool Model::has_param(std::string_view name) const { return params_.count(resolve(name)) > 0; }

const Tensor& Model::param(std::string_view name) const {
    auto it = params_.find(resolve(name));
    if (it == params_.end()) throw ModelError("no parameter '" + std::string(name) + "'");
    return it->second;
}

Tensor& Model::param(std::string_view name) {
    auto it = params_.find(resolve(name));
    if (it == params_.end()) throw ModelError("no parameter '" + std::string(name) + "'");
    return it->second;
}

ParamGroup Model::group_of(std::string_view name) const {
    const std::string owner = resolve(name);
    return parse_group(std::string_view(owner).substr(0, owner.find('.')));
}

std::vector<std::string> Model::group_params(ParamGroup group) const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_)
        if (group_of(name) == group) out.push_back(name);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
}

Bindings Model::bindings() const {
    Bindings b;
    for (const auto& [name, t] : params_) b.bind(name, t);
    return b;
}

// ---------------------------------------------------------------------------
// construction

namespace {

enum class InitKind { Matrix, Embedding, Zeros, Ones };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init;
};

void attention_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
    // no key bias: it shifts every score of a query equally
    for (const char* proj : {"q", "k", "v", "o"}) {
        out.push_back({prefix + "." + proj + ".weight", {d, d}, InitKind::Matrix});
        if (proj[0] != 'k') out.push_back({prefix + "." + proj + ".bias", {d}, InitKind::Zeros});
    }
}

void norm_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
    out.push_back({prefix + ".gain", {d}, InitKind::Ones});
    out.push_back({prefix + ".bias", {d}, InitKind::Zeros});
}

void ffn_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d, std::size_t ff) {
    out.push_back({prefix + ".fc1.weight", {d, ff}, InitKind::Matrix});
    out.push_back({prefix + ".fc1.bias", {ff}, InitKind::Zeros});
    out.push_back({prefix + ".fc2.weight", {ff, d}, InitKind::Matrix});
    out.push_back({prefix + ".fc2.bias", {d}, InitKind::Zeros});
}

std::string layer_prefix(const char* stack, std::size_t i) { return std::string(stack) + ".layer" + std::to_string(i); }

// Owned tensors for a config, plus alias -> owner for tied embeddings.
std::vector<ParamSpec> param_specs(const ModelConfig& c, std::map<std::string, std::string>& aliases) {
    const std::size_t d = c.d_model;
    std::vector<ParamSpec> out;
    out.push_back({"src_embed.table", {c.src_vocab_size, d}, InitKind::Embedding});
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        const std::string p = layer_prefix("encoder", i);
        attention_specs(out, p + ".self_attn", d);
        norm_specs(out, p + ".self_attn_norm", d);
        ffn_specs(out, p + ".ffn", d, c.d_ff);
        norm_specs(out, p + ".ffn_norm", d);
    }
    norm_specs(out, "encoder.final_norm", d);
    if (c.tying == EmbeddingTying::TiedAll) aliases["tgt_embed.table"] = "src_embed.table";
    else out.push_back({"tgt_embed.table", {c.tgt_vocab_size, d}, InitKind::Embedding});
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        const std::string p = layer_prefix("decoder", i);
        attention_specs(out, p + ".self_attn", d);
        norm_specs(out, p + ".self_attn_norm", d);
        attention_specs(out, p + ".cross_attn", d);
        norm_specs(out, p + ".cross_attn_norm", d);
        ffn_specs(out, p + ".ffn", d, c.d_ff);
        norm_specs(out, p + ".ffn_norm", d);
    }
    norm_specs(out, "decoder.final_norm", d);
    switch (c.tying) {
        case EmbeddingTying::Untied: out.push_back({"out_proj.weight", {d, c.tgt_vocab_size}, InitKind::Matrix}); break;
        case EmbeddingTying::TiedTgtOut: aliases["out_proj.weight"] = "tgt_embed.table"; break;
        case EmbeddingTying::TiedAll: aliases["out_proj.weight"] = "src_embed.table"; break;
    }
    out.push_back({"out_proj.bias", {c.tgt_vocab_size}, InitKind::Zeros});
    return out;
}

Tensor init_tensor(const ParamSpec& spec, std::uint64_t seed) {
    Tensor t(spec.shape);
    switch (spec.init) {
        case InitKind::Zeros: return t;
        case InitKind::Ones: t.fill(1.0); return t;
        case InitKind::Matrix:
        case InitKind::Embedding: {
            double bound = 0.0;
            if (spec.init == InitKind::Matrix)
                bound = std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
            else
                bound = std::sqrt(3.0 / static_cast<double>(spec.shape[1]));
            std::mt19937_64 rng(derive_seed(seed, spec.name));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : t.values()) v = u(rng);
            return t;
        }
    }
    return t;
}

}  // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    for (const auto& spec : param_specs(config, m.aliases_)) m.params_.emplace(spec.name, init_tensor(spec, seed));
    return m;
}

Model model_from_parts(ModelConfig config, std::map<std::string, Tensor> params,
                       std::map<std::string, std::string> aliases) {
    config.validate();
    std::map<std::string, std::string> want_aliases;
    const auto specs = param_specs(config, want_aliases);
    if (aliases != want_aliases) throw ModelError("tensor aliases do not match the embedding tying of the config");
    if (params.size() != specs.size())
        throw ModelError("expected " + std::to_string(specs.size()) + " tensors, got " + std::to_string(params.size()));
    for (const auto& spec : specs) {
        auto it = params.find(spec.name);
        if (it == params.end()) throw ModelError("missing tensor '" + spec.name + "'");
        if (it->second.shape() != spec.shape)
            throw ModelError("tensor '" + spec.name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                             shape_str(spec.shape));
    }
    Model m;
    m.config_ = config;
    m.params_ = std::move(params);
    m.aliases_ = std::move(aliases);
    return m;
}

// ---------------------------------------------------------------------------
// forward graph

TokenBatch TokenBatch::from(const std::vector<TokenSeq>& rows, std::size_t min_length) {
    TokenBatch b;
    b.batch = rows.size();
    b.length = min_length;
    for (const auto& r : rows) b.length = std::max(b.length, r.size());
    b.ids.assign(b.batch * b.length, special::kPad);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), b.ids.begin() + i * b.length);
    return b;
}

void sinusoid_row(std::size_t position, std::span<double> out) {
    const std::size_t d = out.size();
    for (std::size_t i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
        const double angle = static_cast<double>(position) * freq;
        out[i] = std::sin(angle);
        if (i + 1 < d) out[i + 1] = std::cos(angle);
    }
}

std::vector<std::size_t> source_positions(const TokenBatch& src) {
    std::vector<std::size_t> pos(src.ids.size());
    for (std::size_t b = 0; b < src.batch; ++b) {
        const bool tagged = src.length > 0 && src.ids[b * src.length] == special::kBtTag;
        for (std::size_t t = 0; t < src.length; ++t) pos[b * src.length + t] = tagged && t > 0 ? t - 1 : t;
    }
    return pos;
}

namespace {

class Builder {
public:
    Builder(Graph& g, const Model& m, const ForwardOptions& o) : g_(g), m_(m), opt_(o) {}

    NodeId param(const std::string& name) {
        const std::string owner = m_.resolve(name);
        auto it = params_.find(owner);
        if (it != params_.end()) return it->second;
        return params_[owner] = g_.param(owner);
    }

    NodeId dropout(NodeId x) {
        const double rate = opt_.dropout_rate.value_or(m_.config().dropout_rate);
        if (!opt_.training || rate == 0.0) return x;
        return g_.dropout(x, rate, derive_seed(opt_.dropout_seed, dropout_count_++));
    }

    NodeId linear(NodeId x, const std::string& prefix) {
        return g_.add_bias(g_.matmul(x, param(prefix + ".weight")), param(prefix + ".bias"));
    }

    NodeId norm(NodeId x, const std::string& prefix) {
        return g_.layer_norm(x, param(prefix + ".gain"), param(prefix + ".bias"));
    }

    NodeId attention(NodeId query_in, NodeId kv_in, const std::string& prefix, AttentionOptions options) {
        NodeId q = linear(query_in, prefix + ".q");
        NodeId k = g_.matmul(kv_in, param(prefix + ".k.weight"));
        NodeId v = linear(kv_in, prefix + ".v");
        options.heads = m_.config().num_heads;
        return linear(g_.attention(q, k, v, std::move(options)), prefix + ".o");
    }

    NodeId ffn(NodeId x, const std::string& prefix) {
        return linear(g_.relu(linear(x, prefix + ".fc1")), prefix + ".fc2");
    }

    NodeId embed(const std::string& table, const TokenBatch& batch, const std::vector<std::size_t>& positions) {
        const std::size_t d = m_.config().d_model;
        NodeId e = g_.scale(g_.embedding(param(table), batch.ids), std::sqrt(static_cast<double>(d)));
        Tensor pos({batch.batch * batch.length, d});
        for (std::size_t i = 0; i < positions.size(); ++i) sinusoid_row(positions[i], {pos.data() + i * d, d});
        return dropout(g_.add(e, g_.constant(std::move(pos))));
    }

private:
    Graph& g_;
    const Model& m_;
    const ForwardOptions& opt_;
    std::map<std::string, NodeId> params_;
    std::uint64_t dropout_count_ = 0;
};

void check_batch(const ModelConfig& c, const TokenBatch& b, std::size_t vocab, const char* what) {
    if (b.batch == 0 || b.length == 0) throw ModelError(std::string(what) + " batch is empty");
    if (b.ids.size() != b.batch * b.length) throw ModelError(std::string(what) + " batch is malformed");
    if (b.length > c.max_positions)
        throw ModelError(std::string(what) + " length " + std::to_string(b.length) + " exceeds max_positions " +
                         std::to_string(c.max_positions));
    for (TokenId t : b.ids)
        if (t < 0 || static_cast<std::size_t>(t) >= vocab)
            throw ModelError(std::string(what) + " token id " + std::to_string(t) + " outside vocabulary of " +
                             std::to_string(vocab));
}

}  // namespace

namespace {

std::vector<std::uint8_t> pad_flags(const TokenBatch& b) {
    std::vector<std::uint8_t> flags(b.ids.size());
    for (std::size_t i = 0; i < b.ids.size(); ++i) flags[i] = b.ids[i] == special::kPad ? 1 : 0;
    return flags;
}

NodeId encoder_stack(Graph& graph, Builder& b, const ModelConfig& c, const TokenBatch& src) {
    const std::vector<std::uint8_t> src_pad = pad_flags(src);
    NodeId x = b.embed("src_embed.table", src, source_positions(src));
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        const std::string p = layer_prefix("encoder", i);
        NodeId h = b.norm(x, p + ".self_attn_norm");
        x = graph.add(x, b.dropout(b.attention(h, h, p + ".self_attn", {src.batch, 0, false, src_pad})));
        h = b.norm(x, p + ".ffn_norm");
        x = graph.add(x, b.dropout(b.ffn(h, p + ".ffn")));
    }
    return b.norm(x, "encoder.final_norm");
}

}  // namespace

NodeId build_encoder_graph(Graph& graph, const Model& model, const TokenBatch& src, const ForwardOptions& options) {
    const ModelConfig& c = model.config();
    check_batch(c, src, c.src_vocab_size, "source");
    graph.set_training(options.training);
    Builder b(graph, model, options);
    return encoder_stack(graph, b, c, src);
}

NodeId build_nmt_graph(Graph& graph, const Model& model, const TokenBatch& src, const TokenBatch& tgt_in,
                       const ForwardOptions& options) {
    const ModelConfig& c = model.config();
    check_batch(c, src, c.src_vocab_size, "source");
    check_batch(c, tgt_in, c.tgt_vocab_size, "target");
    if (src.batch != tgt_in.batch) throw ModelError("source and target batch sizes differ");
    graph.set_training(options.training);
    Builder b(graph, model, options);

    const NodeId memory = encoder_stack(graph, b, c, src);
    const std::vector<std::uint8_t> src_pad = pad_flags(src);

    std::vector<std::size_t> tgt_pos(tgt_in.ids.size());
    for (std::size_t i = 0; i < tgt_pos.size(); ++i) tgt_pos[i] = i % tgt_in.length;
    NodeId y = b.embed("tgt_embed.table", tgt_in, tgt_pos);
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        const std::string p = layer_prefix("decoder", i);
        NodeId h = b.norm(y, p + ".self_attn_norm");
        y = graph.add(y, b.dropout(b.attention(h, h, p + ".self_attn", {tgt_in.batch, 0, true, {}})));
        h = b.norm(y, p + ".cross_attn_norm");
        y = graph.add(y, b.dropout(b.attention(h, memory, p + ".cross_attn", {tgt_in.batch, 0, false, src_pad})));
        h = b.norm(y, p + ".ffn_norm");
        y = graph.add(y, b.dropout(b.ffn(h, p + ".ffn")));
    }
    y = b.norm(y, "decoder.final_norm");
    NodeId logits;
    if (c.tying == EmbeddingTying::Untied)
        logits = graph.matmul(y, b.param("out_proj.weight"));
    else
        logits = graph.matmul(y, b.param("out_proj.weight"), true);
    return graph.add_bias(logits, b.param("out_proj.bias"));
}

Tensor forward_nmt(const Model& model, const TokenBatch& src, const TokenBatch& tgt_in, const ForwardOptions& options) {
    Graph g;
    const NodeId logits = build_nmt_graph(g, model, src, tgt_in, options);
    g.set_output(logits);
    const Bindings bind = model.bindings();
    return g.forward(bind).reshaped({tgt_in.batch, tgt_in.length, model.config().tgt_vocab_size});
}

}  // namespace ptbt
