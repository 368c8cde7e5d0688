#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ptbt {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
using Words = std::vector<std::string>;

// Reserved ids, stable across every vocabulary.
namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kBtTag = 5;
inline constexpr TokenId kNumReserved = 6;
}  // namespace special

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Vocab {
public:
    // Reserved tokens only.
    Vocab();

    // Tokens with count >= min_freq get ids in order of decreasing count,
    // ties broken lexicographically. Counts of every token seen are kept.
    static Vocab build(std::span<const Words> corpus, std::uint64_t min_freq);

    std::size_t size() const noexcept { return tokens_.size(); }
    // UNK for unknown tokens and for raw text spelling a reserved token.
    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const;
    bool contains(std::string_view token) const;
    // Count in the building corpus (0 for reserved tokens).
    std::uint64_t count(TokenId id) const;

    TokenSeq encode(const Words& words) const;
    TokenSeq encode_line(std::string_view line) const;
    // Drops PAD/BOS/EOS/BT_TAG; keeps UNK and MASK spelled out.
    Words decode(const TokenSeq& ids) const;
    std::string decode_line(const TokenSeq& ids) const;

    // "token<TAB>id<TAB>count" rows, reserved tokens included.
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    friend bool operator==(const Vocab& a, const Vocab& b) {
        return a.tokens_ == b.tokens_ && a.counts_ == b.counts_;
    }

private:
    void add(std::string token, std::uint64_t count);

    std::vector<std::string> tokens_;
    std::vector<std::uint64_t> counts_;
    std::unordered_map<std::string, TokenId> index_;
};

enum class Origin : std::uint8_t { SrcOriginal, TgtOriginal, Synthetic };

std::string_view origin_name(Origin origin);
Origin parse_origin(std::string_view name);

class SentencePair {
public:
    SentencePair(TokenSeq src, TokenSeq tgt, Origin origin);

    TokenSeq src;
    TokenSeq tgt;
    Origin origin() const noexcept { return origin_; }

private:
    Origin origin_;
};

using Corpus = std::vector<SentencePair>;

struct TextPair {
    Words src;
    Words tgt;
    Origin origin;
};

// Desk-scale stand-in language pair: a fixed substitution cipher followed by
// swapping the tokens at positions (2i, 2i+1).
struct SynthTaskSpec {
    std::size_t vocab_size = 200;
    double zipf_src = 1.1;
    double zipf_tgt = 1.3;
    std::size_t min_len = 3;
    std::size_t max_len = 20;
    std::uint64_t seed = 1;
};

enum class Side : std::uint8_t { Source, Target };

class CipherTask {
public:
    explicit CipherTask(SynthTaskSpec spec);

    const SynthTaskSpec& spec() const noexcept { return spec_; }
    static std::string source_word(std::size_t index);
    static std::string target_word(std::size_t index);
    // Image of source word i under the substitution map.
    std::size_t substitute(std::size_t source_index) const { return tau_.at(source_index); }

    Words translate(const Words& source) const;
    Words invert(const Words& target) const;

    // Sentence length uniform in [min_len, max_len]; words i.i.d. from the
    // side's Zipf law (rank r -> word r-1).
    Words sample_sentence(Side side, std::mt19937_64& rng) const;

    // SrcOriginal: sample source, translate. TgtOriginal: sample target,
    // invert. Deterministic in (spec.seed, stream, n, origin).
    std::vector<TextPair> synth_parallel(std::size_t n, Origin origin, std::uint64_t stream = 0) const;
    std::vector<Words> synth_monolingual(std::size_t n, Side side, std::uint64_t stream = 0) const;

private:
    std::size_t parse_index(std::string_view word, char prefix) const;

    SynthTaskSpec spec_;
    std::vector<std::size_t> tau_;
    std::vector<std::size_t> tau_inverse_;
    std::discrete_distribution<std::size_t> zipf_src_;
    std::discrete_distribution<std::size_t> zipf_tgt_;
};

struct NoiseConfig {
    double mask_ratio = 0.35;
    double poisson_lambda = 3.5;
    std::uint64_t seed = 1;
};

struct DenoiseExample {
    TokenSeq noised;
    TokenSeq target;
};

// Text infilling: masks about mask_ratio of the tokens in Poisson-length
// spans; each maximal masked run becomes a single MASK token.
DenoiseExample apply_denoise_noise(const TokenSeq& sentence, const NoiseConfig& config, std::mt19937_64& rng);

// [BT_TAG] ++ tokens. Rejects input already starting with BT_TAG.
TokenSeq tag_bt_source(const TokenSeq& tokens);

// Concatenation bitext ++ synthetic with origins preserved; when tagged,
// every synthetic source gets the BT tag. Shuffling is left to the trainer.
Corpus mix_corpora(const Corpus& bitext, const Corpus& synthetic, bool tagged);

Corpus encode_pairs(const Vocab& vocab, std::span<const TextPair> pairs);
// Swaps source and target; origin kept.
Corpus reverse_pairs(const Corpus& corpus);

// Line-based corpus files. A parallel corpus at `prefix` is prefix.src,
// prefix.tgt and prefix.origin, one sentence per line, LF newlines.
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);
Words split_words(std::string_view line);
std::string join_words(const Words& words);

void write_parallel(const std::filesystem::path& prefix, const Corpus& corpus, const Vocab& vocab);
Corpus read_parallel(const std::filesystem::path& prefix, const Vocab& vocab);
void write_monolingual(const std::filesystem::path& path, std::span<const Words> sentences);
std::vector<Words> read_monolingual(const std::filesystem::path& path);

std::filesystem::path with_suffix(const std::filesystem::path& prefix, std::string_view suffix);

// Target-side token counts of a corpus (used for frequency buckets).
std::map<TokenId, std::uint64_t> target_frequencies(const Corpus& corpus);

}  // namespace ptbt
