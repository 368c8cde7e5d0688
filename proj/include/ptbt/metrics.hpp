#pragma once

// Corpus BLEU, TER with block shifts, frequency-bucketed word f-measure and
// origin-split evaluation. All scores work on whitespace tokens.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptbt/data.hpp"

namespace ptbt {

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kBtTagText = "<bt>";

// Drops every BT tag token.
Words strip_bt_tag(const Words& words);

struct BleuConfig {
    enum class Smoothing { None, AddK };
    std::size_t max_n = 4;
    Smoothing smoothing = Smoothing::None;
    // add_k only: added to matches and totals of orders 2..max_n
    double k = 1.0;

    void validate() const;
};

struct BleuStats {
    std::vector<std::uint64_t> matches;  // clipped, per order
    std::vector<std::uint64_t> totals;   // per order
    std::uint64_t hyp_len = 0;
    std::uint64_t ref_len = 0;
};

BleuStats bleu_stats(const std::vector<Words>& hyps, const std::vector<Words>& refs, std::size_t max_n);
double bleu_from_stats(const BleuStats& stats, const BleuConfig& cfg);
// 0..100
double corpus_bleu(const std::vector<Words>& hyps, const std::vector<Words>& refs, const BleuConfig& cfg = {});

struct TerSentence {
    std::size_t edits = 0;   // insertions, deletions, substitutions after shifting
    std::size_t shifts = 0;
    std::size_t ref_len = 0;
};

// Greedy shift search on one sentence pair. Blocks are at most 10 tokens,
// must equal the reference span they are moved next to, and are taken only
// while edits + shifts strictly drops. Ties go to the leftmost, then
// shortest block, then the leftmost reference span.
TerSentence ter_sentence(const Words& hyp, const Words& ref);
// (edits + shifts) / reference tokens * 100
double ter(const std::vector<Words>& hyps, const std::vector<Words>& refs);

// word -> count in the training corpus
using FreqTable = std::map<std::string, std::uint64_t>;

struct FreqBuckets {
    std::uint64_t threshold = 50;
};

enum class Bucket { All, Low, High };
std::string_view bucket_name(Bucket b);

struct FMeasure {
    std::uint64_t matches = 0;
    std::uint64_t hyp_count = 0;
    std::uint64_t ref_count = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Low: train count < threshold (unseen words included); High: the rest.
std::map<Bucket, FMeasure> word_fmeasure(const std::vector<Words>& hyps, const std::vector<Words>& refs,
                                         const FreqTable& train_freqs, const FreqBuckets& buckets = {});

// Empty subsets stay nullopt.
struct OriginBleu {
    std::optional<double> all;
    std::optional<double> src;
    std::optional<double> tgt;
};

// Test pairs must be SrcOriginal or TgtOriginal.
OriginBleu split_eval_by_origin(const std::vector<Origin>& origins, const std::vector<Words>& refs,
                                const std::vector<Words>& hyps, const BleuConfig& cfg = {});

struct EvalReport {
    double bleu = 0.0;
    double ter = 0.0;
    OriginBleu per_origin;
    std::map<Bucket, FMeasure> fmeasure;
    std::size_t sentences = 0;
    std::uint64_t hyp_tokens = 0;
    std::uint64_t ref_tokens = 0;
    // free-form: where the frequencies came from, which system, etc.
    std::map<std::string, std::string> provenance;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    // header + one row, scores at one decimal
    static std::string tsv_header();
    std::string tsv_row(const std::string& system) const;
};

// Strips BT tags from hypotheses, then scores everything.
EvalReport evaluate(const std::vector<Words>& hyps, const std::vector<Words>& refs,
                    const std::vector<Origin>& origins, const FreqTable& train_freqs,
                    const BleuConfig& bleu = {}, const FreqBuckets& buckets = {});

// Target-side word counts of the genuine (non-synthetic) pairs.
FreqTable target_word_frequencies(const Corpus& corpus, const Vocab& vocab);

std::string format_score(double v);  // one decimal

}  // namespace ptbt
