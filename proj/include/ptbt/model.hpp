#pragma once

// Encoder-decoder transformer with named parameter groups.
//
// Every parameter is named "<group>.<path>", with group one of src_embed,
// encoder, tgt_embed, decoder, out_proj. Layers are pre-norm with a final
// layer norm on each stack; positions are sinusoidal (no parameters).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ptbt/data.hpp"
#include "ptbt/graph.hpp"
#include "ptbt/tensor.hpp"

namespace ptbt {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EmbeddingTying : std::uint8_t { Untied, TiedTgtOut, TiedAll };
std::string_view tying_name(EmbeddingTying tying);
EmbeddingTying parse_tying(std::string_view name);

struct ModelConfig {
    std::size_t num_layers = 2;
    std::size_t d_model = 64;
    std::size_t num_heads = 4;
    std::size_t d_ff = 256;
    std::size_t src_vocab_size = 0;
    std::size_t tgt_vocab_size = 0;
    double dropout_rate = 0.3;
    std::size_t max_positions = 128;
    EmbeddingTying tying = EmbeddingTying::Untied;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup : std::uint8_t { SrcEmbed, Encoder, TgtEmbed, Decoder, OutProj };
inline constexpr ParamGroup kAllGroups[] = {ParamGroup::SrcEmbed, ParamGroup::Encoder, ParamGroup::TgtEmbed,
                                            ParamGroup::Decoder, ParamGroup::OutProj};
std::string_view group_name(ParamGroup group);
ParamGroup parse_group(std::string_view name);
// {src_embed, encoder} are encoder-side; the rest decoder-side.
bool is_encoder_side(ParamGroup group);
std::set<ParamGroup> encoder_side_groups();
std::set<ParamGroup> decoder_side_groups();

// Y = initialise that side from the checkpoint.
struct InitMask {
    bool encoder = false;
    bool decoder = false;

    std::string label() const;  // "NN", "NY", "YN", "YY"
    static InitMask parse(std::string_view label);
    bool operator==(const InitMask&) const = default;
};

class Model {
public:
    const ModelConfig& config() const noexcept { return config_; }

    // Owned tensors only; aliases resolve to their owner.
    const std::map<std::string, Tensor>& params() const noexcept { return params_; }
    // Values may change; the set of names and shapes must not.
    std::map<std::string, Tensor>& mutable_params() noexcept { return params_; }
    const Tensor& param(std::string_view name) const;
    Tensor& param(std::string_view name);
    bool has_param(std::string_view name) const;
    // Owner name for an alias; identity for owned names.
    std::string resolve(std::string_view name) const;
    const std::map<std::string, std::string>& aliases() const noexcept { return aliases_; }

    ParamGroup group_of(std::string_view name) const;
    std::vector<std::string> group_params(ParamGroup group) const;
    std::size_t parameter_count() const;

    Bindings bindings() const;

    friend bool operator==(const Model& a, const Model& b) {
        return a.config_ == b.config_ && a.params_ == b.params_ && a.aliases_ == b.aliases_;
    }

private:
    friend Model build_model(const ModelConfig& config, std::uint64_t seed);
    friend Model model_from_parts(ModelConfig config, std::map<std::string, Tensor> params,
                                  std::map<std::string, std::string> aliases);

    ModelConfig config_;
    std::map<std::string, Tensor> params_;
    std::map<std::string, std::string> aliases_;
};

// Matrices: uniform(+-sqrt(6/(fan_in+fan_out))); embeddings: uniform with
// standard deviation d_model^-1/2; biases and norm offsets 0; norm gains 1.
// Each tensor's stream depends only on (seed, name).
Model build_model(const ModelConfig& config, std::uint64_t seed);
// Validates the parameter set against the config.
Model model_from_parts(ModelConfig config, std::map<std::string, Tensor> params,
                       std::map<std::string, std::string> aliases);

// Row-major [batch, length] token ids, PAD-filled.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<TokenId> ids;

    TokenId at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
    static TokenBatch from(const std::vector<TokenSeq>& rows, std::size_t min_length = 0);
};

struct ForwardOptions {
    bool training = false;
    std::uint64_t dropout_seed = 0;
    // overrides config().dropout_rate when set
    std::optional<double> dropout_rate;
};

// Appends the encoder-decoder computation to `graph`; returns the logits
// node of shape [batch*tgt_len, tgt_vocab]. Parameters are graph params
// named by their owning tensor.
NodeId build_nmt_graph(Graph& graph, const Model& model, const TokenBatch& src, const TokenBatch& tgt_in,
                       const ForwardOptions& options = {});

// Encoder output [batch*src_len, d_model], after the final norm.
NodeId build_encoder_graph(Graph& graph, const Model& model, const TokenBatch& src,
                           const ForwardOptions& options = {});

// Logits [B, T, tgt_vocab]. Logits at t depend only on src and tgt_in[0..t];
// PAD source positions are masked out of attention.
Tensor forward_nmt(const Model& model, const TokenBatch& src, const TokenBatch& tgt_in,
                   const ForwardOptions& options = {});

// Position index of every source token. A leading BT tag shares position 0
// with the first content token, so tagging leaves content positions alone.
std::vector<std::size_t> source_positions(const TokenBatch& src);

// Sinusoidal encoding row for one position.
void sinusoid_row(std::size_t position, std::span<double> out);

// ---------------------------------------------------------------------------
// checkpoints

struct Provenance {
    std::string stage = "initial";  // initial | pretrained | trained
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    bool operator==(const Provenance&) const = default;
};

struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::uint32_t format_version = kFormatVersion;
    ModelConfig config;
    Provenance provenance;
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> aliases;
};

Checkpoint to_checkpoint(const Model& model, Provenance provenance);
// Rejects a checkpoint whose config differs from `expected` when given.
Model model_from_checkpoint(const Checkpoint& ckpt, const std::optional<ModelConfig>& expected = std::nullopt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// SHA-256 of the serialized form.
std::string checkpoint_digest(const Checkpoint& ckpt);
// SHA-256 over the named tensors of a model (names sorted).
std::string params_digest(const Model& model, const std::vector<std::string>& names);

// Y-side groups copied from the checkpoint, N-side groups freshly
// initialised from `seed`. Rejects a config mismatch and any mask that would
// split a tensor shared between the two sides.
Model selective_init(const Model& model, const Checkpoint& ckpt, InitMask mask, std::uint64_t seed);

}  // namespace ptbt
