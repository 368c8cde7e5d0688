#include "ptbt/data.hpp"

#include "ptbt/util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ptbt {

namespace {

constexpr std::string_view kReserved[] = {"<pad>", "<s>", "</s>", "<unk>", "<mask>", "<bt>"};

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
    for (auto tok : kReserved) add(std::string(tok), 0);
}

void Vocab::add(std::string token, std::uint64_t count) {
    index_.emplace(token, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(token));
    counts_.push_back(count);
}

Vocab Vocab::build(std::span<const Words> corpus, std::uint64_t min_freq) {
    std::unordered_map<std::string, std::uint64_t> counts;
    for (const auto& sentence : corpus)
        for (const auto& w : sentence) ++counts[w];
    std::vector<std::pair<std::string, std::uint64_t>> ordered;
    for (auto& [w, c] : counts) {
        if (std::find(std::begin(kReserved), std::end(kReserved), w) != std::end(kReserved)) continue;
        if (c >= min_freq) ordered.emplace_back(w, c);
    }
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocab v;
    for (auto& [w, c] : ordered) v.add(w, c);
    return v;
}

TokenId Vocab::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end() || it->second < special::kNumReserved) return special::kUnk;
    return it->second;
}

bool Vocab::contains(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it != index_.end() && it->second >= special::kNumReserved;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::count(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= counts_.size()) return 0;
    return counts_[static_cast<std::size_t>(id)];
}

TokenSeq Vocab::encode(const Words& words) const {
    TokenSeq out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
}

TokenSeq Vocab::encode_line(std::string_view line) const { return encode(split_words(line)); }

Words Vocab::decode(const TokenSeq& ids) const {
    Words out;
    for (TokenId t : ids) {
        if (t == special::kPad || t == special::kBos || t == special::kEos || t == special::kBtTag) continue;
        out.push_back(token(t));
    }
    return out;
}

std::string Vocab::decode_line(const TokenSeq& ids) const { return join_words(decode(ids)); }

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary " + path.string());
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\t' << counts_[i] << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    Vocab v;
    const auto lines = read_lines(path);
    if (lines.size() < static_cast<std::size_t>(special::kNumReserved))
        throw DataError(path.string() + ": vocabulary lacks reserved tokens");
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::istringstream row(lines[i]);
        std::string tok;
        std::size_t id = 0;
        std::uint64_t count = 0;
        if (!std::getline(row, tok, '\t') || !(row >> id >> count) || id != i)
            throw DataError(path.string() + ":" + std::to_string(i + 1) + ": malformed vocabulary row");
        if (i < static_cast<std::size_t>(special::kNumReserved)) {
            if (tok != kReserved[i]) throw DataError(path.string() + ": reserved id " + std::to_string(i) + " is not " + std::string(kReserved[i]));
            continue;
        }
        v.add(tok, count);
    }
    return v;
}

// ---------------------------------------------------------------------------

std::string_view origin_name(Origin origin) {
    switch (origin) {
        case Origin::SrcOriginal: return "src_original";
        case Origin::TgtOriginal: return "tgt_original";
        case Origin::Synthetic: return "synthetic";
    }
    return "?";
}

Origin parse_origin(std::string_view name) {
    if (name == "src_original") return Origin::SrcOriginal;
    if (name == "tgt_original") return Origin::TgtOriginal;
    if (name == "synthetic") return Origin::Synthetic;
    throw DataError("unknown origin label '" + std::string(name) + "'");
}

SentencePair::SentencePair(TokenSeq s, TokenSeq t, Origin origin)
    : src(std::move(s)), tgt(std::move(t)), origin_(origin) {
    if (src.empty() || tgt.empty()) throw DataError("sentence pair with an empty side");
}

// ---------------------------------------------------------------------------
// Cipher task

namespace {

std::discrete_distribution<std::size_t> zipf(std::size_t n, double exponent) {
    std::vector<double> w(n);
    for (std::size_t r = 0; r < n; ++r) w[r] = std::pow(static_cast<double>(r + 1), -exponent);
    return std::discrete_distribution<std::size_t>(w.begin(), w.end());
}

void swap_pairs(Words& w) {
    for (std::size_t i = 0; i + 1 < w.size(); i += 2) std::swap(w[i], w[i + 1]);
}

}  // namespace

CipherTask::CipherTask(SynthTaskSpec spec)
    : spec_(spec), zipf_src_(zipf(spec.vocab_size, spec.zipf_src)), zipf_tgt_(zipf(spec.vocab_size, spec.zipf_tgt)) {
    if (spec_.vocab_size == 0) throw DataError("cipher vocabulary must be non-empty");
    if (spec_.min_len == 0 || spec_.min_len > spec_.max_len) throw DataError("invalid cipher length range");
    tau_.resize(spec_.vocab_size);
    std::iota(tau_.begin(), tau_.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(spec_.seed, 0x7a75, 0));
    std::shuffle(tau_.begin(), tau_.end(), rng);
    tau_inverse_.resize(spec_.vocab_size);
    for (std::size_t i = 0; i < tau_.size(); ++i) tau_inverse_[tau_[i]] = i;
}

std::string CipherTask::source_word(std::size_t index) { return "s" + std::to_string(index); }
std::string CipherTask::target_word(std::size_t index) { return "t" + std::to_string(index); }

std::size_t CipherTask::parse_index(std::string_view word, char prefix) const {
    if (word.size() < 2 || word[0] != prefix) throw DataError("'" + std::string(word) + "' is not a cipher word");
    std::size_t idx = 0;
    for (char c : word.substr(1)) {
        if (c < '0' || c > '9') throw DataError("'" + std::string(word) + "' is not a cipher word");
        idx = idx * 10 + static_cast<std::size_t>(c - '0');
    }
    if (idx >= spec_.vocab_size) throw DataError("'" + std::string(word) + "' outside the cipher vocabulary");
    return idx;
}

Words CipherTask::translate(const Words& source) const {
    Words out;
    out.reserve(source.size());
    for (const auto& w : source) out.push_back(target_word(tau_[parse_index(w, 's')]));
    swap_pairs(out);
    return out;
}

Words CipherTask::invert(const Words& target) const {
    Words swapped = target;
    swap_pairs(swapped);
    Words out;
    out.reserve(target.size());
    for (const auto& w : swapped) out.push_back(source_word(tau_inverse_[parse_index(w, 't')]));
    return out;
}

Words CipherTask::sample_sentence(Side side, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> len(spec_.min_len, spec_.max_len);
    const std::size_t n = len(rng);
    // discrete_distribution::operator() is non-const but keeps no state.
    auto dist = side == Side::Source ? zipf_src_ : zipf_tgt_;
    Words out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = dist(rng);
        out.push_back(side == Side::Source ? source_word(r) : target_word(r));
    }
    return out;
}

std::vector<TextPair> CipherTask::synth_parallel(std::size_t n, Origin origin, std::uint64_t stream) const {
    if (origin == Origin::Synthetic) throw DataError("synth_parallel produces genuine pairs only");
    std::mt19937_64 rng(derive_seed(spec_.seed, stream, 1 + static_cast<std::uint64_t>(origin)));
    std::vector<TextPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (origin == Origin::SrcOriginal) {
            Words s = sample_sentence(Side::Source, rng);
            Words t = translate(s);
            out.push_back({std::move(s), std::move(t), origin});
        } else {
            Words t = sample_sentence(Side::Target, rng);
            Words s = invert(t);
            out.push_back({std::move(s), std::move(t), origin});
        }
    }
    return out;
}

std::vector<Words> CipherTask::synth_monolingual(std::size_t n, Side side, std::uint64_t stream) const {
    std::mt19937_64 rng(derive_seed(spec_.seed, stream, 16 + static_cast<std::uint64_t>(side)));
    std::vector<Words> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_sentence(side, rng));
    return out;
}

// ---------------------------------------------------------------------------

DenoiseExample apply_denoise_noise(const TokenSeq& sentence, const NoiseConfig& config, std::mt19937_64& rng) {
    if (sentence.empty()) throw DataError("cannot noise an empty sentence");
    if (!(config.mask_ratio >= 0.0 && config.mask_ratio <= 1.0)) throw DataError("mask_ratio must be in [0,1]");
    const std::size_t n = sentence.size();
    // Stochastic rounding keeps the expected masked count at ratio * n.
    const double want = config.mask_ratio * static_cast<double>(n);
    std::size_t budget = static_cast<std::size_t>(std::floor(want));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < want - std::floor(want)) ++budget;
    budget = std::min(budget, n);

    std::vector<char> masked(n, 0);
    std::size_t count = 0;
    std::poisson_distribution<int> span_len(config.poisson_lambda);
    std::vector<std::size_t> free;
    while (count < budget) {
        std::size_t len = static_cast<std::size_t>(std::max(1, span_len(rng)));
        len = std::min(len, budget - count);
        free.clear();
        for (std::size_t i = 0; i < n; ++i)
            if (!masked[i]) free.push_back(i);
        std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
        std::size_t pos = free[pick(rng)];
        for (; pos < n && !masked[pos] && len > 0; ++pos, --len) {
            masked[pos] = 1;
            ++count;
        }
    }

    DenoiseExample ex;
    ex.target = sentence;
    for (std::size_t i = 0; i < n; ++i) {
        if (!masked[i]) ex.noised.push_back(sentence[i]);
        else if (i == 0 || !masked[i - 1]) ex.noised.push_back(special::kMask);
    }
    return ex;
}

TokenSeq tag_bt_source(const TokenSeq& tokens) {
    if (!tokens.empty() && tokens.front() == special::kBtTag) throw DataError("source is already tagged");
    TokenSeq out;
    out.reserve(tokens.size() + 1);
    out.push_back(special::kBtTag);
    out.insert(out.end(), tokens.begin(), tokens.end());
    return out;
}

Corpus mix_corpora(const Corpus& bitext, const Corpus& synthetic, bool tagged) {
    Corpus out;
    out.reserve(bitext.size() + synthetic.size());
    for (const auto& p : bitext) {
        if (p.origin() == Origin::Synthetic) throw DataError("bitext contains a synthetic pair");
        out.push_back(p);
    }
    for (const auto& p : synthetic) {
        if (p.origin() != Origin::Synthetic) throw DataError("synthetic corpus contains a pair not labelled synthetic");
        out.emplace_back(tagged ? tag_bt_source(p.src) : p.src, p.tgt, Origin::Synthetic);
    }
    return out;
}

Corpus encode_pairs(const Vocab& vocab, std::span<const TextPair> pairs) {
    Corpus out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.emplace_back(vocab.encode(p.src), vocab.encode(p.tgt), p.origin);
    return out;
}

Corpus reverse_pairs(const Corpus& corpus) {
    Corpus out;
    out.reserve(corpus.size());
    for (const auto& p : corpus) out.emplace_back(p.tgt, p.src, p.origin());
    return out;
}

// ---------------------------------------------------------------------------
// files

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) out.push_back(std::move(line));
    return out;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& l : lines) out << l << '\n';
}

Words split_words(std::string_view line) {
    Words out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ') ++j;
        if (j > i) out.emplace_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

std::string join_words(const Words& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, std::string_view suffix) {
    return std::filesystem::path(prefix.string() + std::string(suffix));
}

void write_parallel(const std::filesystem::path& prefix, const Corpus& corpus, const Vocab& vocab) {
    std::vector<std::string> src, tgt, origin;
    for (const auto& p : corpus) {
        // The BT tag is a real token of the stream, keep it visible.
        Words s;
        for (TokenId t : p.src) s.push_back(vocab.token(t));
        src.push_back(join_words(s));
        tgt.push_back(vocab.decode_line(p.tgt));
        origin.emplace_back(origin_name(p.origin()));
    }
    write_lines(with_suffix(prefix, ".src"), src);
    write_lines(with_suffix(prefix, ".tgt"), tgt);
    write_lines(with_suffix(prefix, ".origin"), origin);
}

Corpus read_parallel(const std::filesystem::path& prefix, const Vocab& vocab) {
    const auto src = read_lines(with_suffix(prefix, ".src"));
    const auto tgt = read_lines(with_suffix(prefix, ".tgt"));
    const auto origin_path = with_suffix(prefix, ".origin");
    std::vector<std::string> origin;
    if (std::filesystem::exists(origin_path)) origin = read_lines(origin_path);
    else origin.assign(src.size(), "src_original");
    if (src.size() != tgt.size() || src.size() != origin.size())
        throw DataError(prefix.string() + ": .src/.tgt/.origin line counts differ");
    Corpus out;
    out.reserve(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        TokenSeq s;
        for (const auto& w : split_words(src[i])) s.push_back(w == "<bt>" ? special::kBtTag : vocab.id(w));
        out.emplace_back(std::move(s), vocab.encode_line(tgt[i]), parse_origin(origin[i]));
    }
    return out;
}

void write_monolingual(const std::filesystem::path& path, std::span<const Words> sentences) {
    std::vector<std::string> lines;
    lines.reserve(sentences.size());
    for (const auto& s : sentences) lines.push_back(join_words(s));
    write_lines(path, lines);
}

std::vector<Words> read_monolingual(const std::filesystem::path& path) {
    std::vector<Words> out;
    for (const auto& l : read_lines(path)) out.push_back(split_words(l));
    return out;
}

std::map<TokenId, std::uint64_t> target_frequencies(const Corpus& corpus) {
    std::map<TokenId, std::uint64_t> freq;
    for (const auto& p : corpus)
        for (TokenId t : p.tgt) ++freq[t];
    return freq;
}

}  // namespace ptbt
