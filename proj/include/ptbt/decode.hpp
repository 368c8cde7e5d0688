#pragma once

// Incremental (KV-cached) decoding, beam search and back-translation.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptbt/data.hpp"
#include "ptbt/model.hpp"
#include "ptbt/tensor.hpp"

namespace ptbt {

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BeamConfig {
    std::size_t beam_size = 5;
    double length_penalty = 1.0;
    // 0 = 2 * src_len + 8 output tokens before EOS.
    std::size_t max_len = 0;

    void validate() const;
    std::size_t max_len_for(std::size_t src_len) const;
    bool operator==(const BeamConfig&) const = default;
};

nlohmann::json to_json(const BeamConfig& c);
BeamConfig beam_config_from_json(const nlohmann::json& j, std::string_view section = "beam");

struct Hypothesis {
    TokenSeq tokens;  // BOS stripped, ends with EOS
    double logprob = 0.0;
    double score = 0.0;  // logprob / tokens.size()^alpha
    // No EOS was chosen within max_len; EOS was forced at the limit.
    bool truncated = false;

    // tokens without the trailing EOS
    TokenSeq output() const;
};

double normalized_score(double logprob, std::size_t length, double alpha);

// Never generated: PAD, BOS, MASK, BT_TAG. EOS is also banned as the first
// token so outputs are non-empty.
bool is_banned_output(TokenId token, std::size_t step);

// Decoder state for a batch of source sentences with a per-hypothesis
// self-attention cache. Each sentence is encoded on its own, so results do
// not depend on which sentences share a batch.
class IncrementalDecoder {
public:
    IncrementalDecoder(const Model& model, const std::vector<TokenSeq>& sources);

    struct Cache {
        std::size_t sentence = 0;
        std::size_t length = 0;
        // per layer: keys and values, length x d_model
        std::vector<std::vector<double>> keys;
        std::vector<std::vector<double>> values;
    };

    Cache start(std::size_t sentence) const;

    // Feeds one token per cache (all caches must have the same length) and
    // returns next-token log-probabilities [caches.size(), tgt_vocab].
    Tensor step(std::vector<Cache*>& caches, const std::vector<TokenId>& tokens);

    std::size_t sentences() const { return memory_keys_.size(); }
    const Model& model() const { return model_; }

private:
    const Model& model_;
    // [sentence][layer] cross-attention keys/values, src_len x d_model
    std::vector<std::vector<std::vector<double>>> memory_keys_;
    std::vector<std::vector<std::vector<double>>> memory_values_;
    std::vector<std::size_t> src_len_;
};

// Full-sequence log-probabilities via the incremental path; rows follow
// tgt_in. Used to check the cache against the graph forward.
Tensor incremental_logprobs(const Model& model, const TokenSeq& src, const TokenSeq& tgt_in);

// Length-normalized beam search. Hypotheses that reach max_len are closed
// with a forced EOS and flagged truncated. For beam_size > 1 the greedy
// hypothesis joins the candidate pool, so the returned score is never below
// greedy's.
std::vector<Hypothesis> beam_search(const Model& model, const std::vector<TokenSeq>& sources, const BeamConfig& cfg,
                                    std::size_t batch_sentences = 64);
Hypothesis beam_search(const Model& model, const TokenSeq& source, const BeamConfig& cfg);
Hypothesis greedy_decode(const Model& model, const TokenSeq& source, std::size_t max_len = 0);

std::vector<TokenSeq> translate(const Model& model, const std::vector<TokenSeq>& sources, const BeamConfig& cfg);

struct BackTranslation {
    Corpus pairs;  // origin Synthetic, tgt = input sentence
    std::vector<Hypothesis> hypotheses;
};

// reverse_model translates target-language text into the source language.
BackTranslation back_translate(const Model& reverse_model, const std::vector<TokenSeq>& mono_tgt,
                               const BeamConfig& cfg, bool tagged);

// "<score>\t<truncated 0|1>" per line.
void write_decode_meta(const std::filesystem::path& path, const std::vector<Hypothesis>& hyps);

}  // namespace ptbt
