#pragma once

// Adam with warmup / inverse-sqrt decay, label-smoothed loss, global-norm
// clipping and group-level freezing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptbt/data.hpp"
#include "ptbt/graph.hpp"
#include "ptbt/model.hpp"

namespace ptbt {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double learning_rate = 5e-4;
    std::size_t warmup_steps = 400;
    // Stop after total_steps optimizer steps when nonzero, otherwise after
    // `epochs` passes over the data.
    std::size_t total_steps = 0;
    std::size_t epochs = 10;
    // Padded tokens per batch: rows * max(src_len, tgt_len + 1).
    std::size_t batch_tokens = 2048;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;  // 0 disables clipping
    double label_smoothing = 0.1;
    double dropout_rate = 0.3;
    std::size_t validation_interval = 200;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, std::string_view section = "train");

// Frozen parameter groups. Frozen tensors get no update and no moment
// update.
struct FreezeMask {
    std::set<ParamGroup> frozen;

    static FreezeMask none() { return {}; }
    static FreezeMask sides(bool encoder_frozen, bool decoder_frozen);
    // Names are group names; unknown names are rejected.
    static FreezeMask parse(const std::vector<std::string>& groups);
    // "YN" style: Y = side is updated, N = side is fixed.
    static FreezeMask from_update_label(std::string_view label);
    std::string update_label() const;
    bool is_frozen(ParamGroup group) const { return frozen.count(group) > 0; }
    bool operator==(const FreezeMask&) const = default;
};

struct OptimState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::uint64_t t = 0;
};

// lr(step) for 1-based step: linear warmup to peak at warmup_steps, then
// peak * sqrt(warmup_steps / step).
double learning_rate_at(const TrainConfig& cfg, std::uint64_t step);

// One Adam step with bias correction at learning rate `lr`. Only
// parameters that have an entry in `grads` are touched (moments included).
// A non-finite gradient throws TrainError before anything is modified.
void adam_step(std::map<std::string, Tensor>& params, const Gradients& grads, OptimState& state,
               const TrainConfig& cfg, double lr);

// Zeroes and removes the gradients of frozen groups, so adam_step leaves
// those tensors and their moments alone. Rejects masks that would split a
// tensor shared across a frozen and an unfrozen group.
void apply_freeze(Gradients& grads, const Model& model, const FreezeMask& mask);
void check_freeze_mask(const Model& model, const FreezeMask& mask);

// Scales grads so the global L2 norm is at most max_norm; returns the norm
// before clipping.
double clip_grad_norm(Gradients& grads, double max_norm);
double global_norm(const Gradients& grads);

// logits [B, T, V]; targets [B, T]. Mean over non-pad positions.
double smoothed_cross_entropy(const Tensor& logits, const TokenBatch& targets, double label_smoothing,
                              TokenId pad_id = special::kPad);

// Batches of corpus indices under a padded-token budget, length-bucketed,
// shuffled by (seed, epoch).
std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus, std::size_t batch_tokens,
                                                   std::uint64_t seed, std::uint64_t epoch);

struct PairBatch {
    TokenBatch src;
    TokenBatch tgt_in;   // BOS y
    TokenBatch tgt_out;  // y EOS
};
PairBatch collate(const Corpus& corpus, const std::vector<std::size_t>& rows);

// exp(mean token NLL) with no smoothing, in evaluation mode.
double validation_perplexity(const Model& model, const Corpus& valid, std::size_t batch_tokens = 4096);

struct TrainLogRow {
    std::uint64_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double valid_ppl = 0.0;
    std::string frozen_digest;  // "-" when nothing is frozen
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    std::string to_tsv() const;
};

struct TrainHooks {
    // Replaces the measured validation perplexity (for rigged schedules).
    std::function<double(std::uint64_t step, double measured)> validation_override;
    // Fresh training corpus per epoch (noise resampling); epoch is 0-based.
    std::function<Corpus(std::uint64_t epoch)> epoch_corpus;
    // Called after every optimizer step.
    std::function<void(std::uint64_t step, double loss)> on_step;
};

struct TrainResult {
    Model best;
    std::uint64_t best_step = 0;
    double best_valid_ppl = 0.0;
    Model last;
    std::uint64_t steps = 0;
    TrainLog log;
};

// Validates every validation_interval steps and at the end; returns the
// argmin-perplexity model (earliest on ties).
TrainResult train(const Model& initial, const Corpus& train_corpus, const Corpus& valid_corpus,
                  const TrainConfig& cfg, const FreezeMask& mask = {}, const TrainHooks& hooks = {});

std::string corpus_digest(const Corpus& corpus);

struct RunManifest {
    std::string kind;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::map<std::string, std::string> inputs;   // name -> digest
    std::map<std::string, std::string> outputs;  // name -> digest
    nlohmann::json config;
    nlohmann::json metrics = nlohmann::json::object();

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static RunManifest load(const std::filesystem::path& path);
};

// SHA-256 of the compact JSON dump.
std::string json_hash(const nlohmann::json& j);

}  // namespace ptbt
