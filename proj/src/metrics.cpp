#include "ptbt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

namespace ptbt {

Words strip_bt_tag(const Words& words) {
    Words out;
    out.reserve(words.size());
    for (const auto& w : words)
        if (w != kBtTagText) out.push_back(w);
    return out;
}

namespace {

void check_sizes(std::size_t hyps, std::size_t refs) {
    if (hyps != refs)
        throw MetricError("hypothesis and reference counts differ (" + std::to_string(hyps) + " vs " +
                          std::to_string(refs) + ")");
    if (hyps == 0) throw MetricError("empty corpus");
}

std::unordered_map<std::string, std::uint64_t> ngram_counts(const Words& s, std::size_t n) {
    std::unordered_map<std::string, std::uint64_t> out;
    if (s.size() < n) return out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
        std::string key = s[i];
        for (std::size_t k = 1; k < n; ++k) {
            key += '\x1f';
            key += s[i + k];
        }
        ++out[key];
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// BLEU

void BleuConfig::validate() const {
    if (max_n < 1) throw MetricError("BLEU max_n must be at least 1");
    if (smoothing == Smoothing::AddK && !(k > 0.0)) throw MetricError("add-k smoothing needs k > 0");
}

BleuStats bleu_stats(const std::vector<Words>& hyps, const std::vector<Words>& refs, std::size_t max_n) {
    check_sizes(hyps.size(), refs.size());
    BleuStats st;
    st.matches.assign(max_n, 0);
    st.totals.assign(max_n, 0);
    for (std::size_t s = 0; s < hyps.size(); ++s) {
        st.hyp_len += hyps[s].size();
        st.ref_len += refs[s].size();
        for (std::size_t n = 1; n <= max_n; ++n) {
            const auto h = ngram_counts(hyps[s], n);
            const auto r = ngram_counts(refs[s], n);
            for (const auto& [g, c] : h) {
                st.totals[n - 1] += c;
                auto it = r.find(g);
                if (it != r.end()) st.matches[n - 1] += std::min(c, it->second);
            }
        }
    }
    return st;
}

double bleu_from_stats(const BleuStats& st, const BleuConfig& cfg) {
    cfg.validate();
    if (st.hyp_len == 0) return 0.0;
    double log_p = 0.0;
    for (std::size_t n = 0; n < cfg.max_n; ++n) {
        double m = static_cast<double>(st.matches[n]);
        double t = static_cast<double>(st.totals[n]);
        if (cfg.smoothing == BleuConfig::Smoothing::AddK && n > 0) {
            m += cfg.k;
            t += cfg.k;
        }
        if (m <= 0.0 || t <= 0.0) return 0.0;
        log_p += std::log(m / t);
    }
    log_p /= static_cast<double>(cfg.max_n);
    const double bp = std::min(0.0, 1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len));
    return 100.0 * std::exp(log_p + bp);
}

double corpus_bleu(const std::vector<Words>& hyps, const std::vector<Words>& refs, const BleuConfig& cfg) {
    cfg.validate();
    return bleu_from_stats(bleu_stats(hyps, refs, cfg.max_n), cfg);
}

// ---------------------------------------------------------------------------
// TER

namespace {

constexpr std::size_t kMaxShift = 10;

std::size_t edit_distance(const Words& h, const Words& r) {
    std::vector<std::size_t> prev(r.size() + 1), cur(r.size() + 1);
    for (std::size_t j = 0; j <= r.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= h.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= r.size(); ++j)
            cur[j] = std::min({prev[j - 1] + (h[i - 1] == r[j - 1] ? 0 : 1), prev[j] + 1, cur[j - 1] + 1});
        std::swap(prev, cur);
    }
    return prev[r.size()];
}

// For each reference position, the hypothesis index it lines up with in one
// minimum-edit alignment (insertions point at the next hypothesis word).
std::vector<std::size_t> align_ref_to_hyp(const Words& h, const Words& r) {
    const std::size_t n = h.size(), m = r.size();
    std::vector<std::size_t> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            at(i, j) = std::min({at(i - 1, j - 1) + (h[i - 1] == r[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});
    std::vector<std::size_t> pos(m, 0);
    std::size_t i = n, j = m;
    while (j > 0) {
        if (i > 0 && at(i, j) == at(i - 1, j - 1) + (h[i - 1] == r[j - 1] ? 0 : 1)) {
            pos[--j] = --i;
        } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            --i;
        } else {
            pos[--j] = i;
        }
    }
    return pos;
}

Words apply_shift(const Words& h, std::size_t start, std::size_t len, std::size_t dest) {
    Words rest;
    rest.reserve(h.size());
    rest.insert(rest.end(), h.begin(), h.begin() + static_cast<std::ptrdiff_t>(start));
    rest.insert(rest.end(), h.begin() + static_cast<std::ptrdiff_t>(start + len), h.end());
    if (dest > start) dest -= len;
    rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(dest), h.begin() + static_cast<std::ptrdiff_t>(start),
                h.begin() + static_cast<std::ptrdiff_t>(start + len));
    return rest;
}

}  // namespace

TerSentence ter_sentence(const Words& hyp, const Words& ref) {
    if (ref.empty()) throw MetricError("TER needs non-empty references");
    TerSentence out;
    out.ref_len = ref.size();
    Words h = hyp;
    std::size_t cur = edit_distance(h, ref);
    while (cur > 0) {
        const auto pos = align_ref_to_hyp(h, ref);
        std::size_t best_gain = 0;
        Words best;
        for (std::size_t i = 0; i < h.size(); ++i) {
            for (std::size_t len = 1; len <= kMaxShift && i + len <= h.size(); ++len) {
                for (std::size_t j = 0; j + len <= ref.size(); ++j) {
                    if (!std::equal(h.begin() + static_cast<std::ptrdiff_t>(i),
                                    h.begin() + static_cast<std::ptrdiff_t>(i + len),
                                    ref.begin() + static_cast<std::ptrdiff_t>(j)))
                        continue;
                    for (std::size_t dest : {pos[j], pos[j] + 1}) {
                        if (dest >= i && dest <= i + len) continue;
                        if (dest > h.size()) continue;
                        Words cand = apply_shift(h, i, len, dest);
                        const std::size_t e = edit_distance(cand, ref);
                        if (e < cur && cur - e > best_gain) {
                            best_gain = cur - e;
                            best = std::move(cand);
                        }
                    }
                }
            }
        }
        // a shift costs one edit itself
        if (best_gain < 2) break;
        h = std::move(best);
        cur -= best_gain;
        ++out.shifts;
    }
    out.edits = cur;
    return out;
}

double ter(const std::vector<Words>& hyps, const std::vector<Words>& refs) {
    check_sizes(hyps.size(), refs.size());
    double num = 0.0, den = 0.0;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
        const TerSentence t = ter_sentence(hyps[s], refs[s]);
        num += static_cast<double>(t.edits + t.shifts);
        den += static_cast<double>(t.ref_len);
    }
    return 100.0 * num / den;
}

// ---------------------------------------------------------------------------
// word f-measure

std::string_view bucket_name(Bucket b) {
    switch (b) {
        case Bucket::All: return "All";
        case Bucket::Low: return "Low";
        case Bucket::High: return "High";
    }
    return "?";
}

std::map<Bucket, FMeasure> word_fmeasure(const std::vector<Words>& hyps, const std::vector<Words>& refs,
                                         const FreqTable& train_freqs, const FreqBuckets& buckets) {
    check_sizes(hyps.size(), refs.size());
    struct Counts {
        std::uint64_t match = 0, hyp = 0, ref = 0;
    };
    std::map<std::string, Counts> per_word;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
        std::map<std::string, std::uint64_t> h, r;
        for (const auto& w : hyps[s]) ++h[w];
        for (const auto& w : refs[s]) ++r[w];
        for (const auto& [w, c] : h) {
            per_word[w].hyp += c;
            auto it = r.find(w);
            if (it != r.end()) per_word[w].match += std::min(c, it->second);
        }
        for (const auto& [w, c] : r) per_word[w].ref += c;
    }
    std::map<Bucket, FMeasure> out{{Bucket::All, {}}, {Bucket::Low, {}}, {Bucket::High, {}}};
    for (const auto& [w, c] : per_word) {
        auto it = train_freqs.find(w);
        const std::uint64_t f = it == train_freqs.end() ? 0 : it->second;
        for (Bucket b : {Bucket::All, f < buckets.threshold ? Bucket::Low : Bucket::High}) {
            out[b].matches += c.match;
            out[b].hyp_count += c.hyp;
            out[b].ref_count += c.ref;
        }
    }
    for (auto& [_, m] : out) {
        m.precision = m.hyp_count ? static_cast<double>(m.matches) / static_cast<double>(m.hyp_count) : 0.0;
        m.recall = m.ref_count ? static_cast<double>(m.matches) / static_cast<double>(m.ref_count) : 0.0;
        m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// origin split

OriginBleu split_eval_by_origin(const std::vector<Origin>& origins, const std::vector<Words>& refs,
                                const std::vector<Words>& hyps, const BleuConfig& cfg) {
    check_sizes(hyps.size(), refs.size());
    if (origins.size() != refs.size()) throw MetricError("every test pair needs an origin label");
    std::vector<Words> sh, sr, th, tr;
    for (std::size_t i = 0; i < origins.size(); ++i) {
        switch (origins[i]) {
            case Origin::SrcOriginal:
                sh.push_back(hyps[i]);
                sr.push_back(refs[i]);
                break;
            case Origin::TgtOriginal:
                th.push_back(hyps[i]);
                tr.push_back(refs[i]);
                break;
            case Origin::Synthetic: throw MetricError("test pairs must be source- or target-original");
        }
    }
    OriginBleu out;
    out.all = corpus_bleu(hyps, refs, cfg);
    if (!sh.empty()) out.src = corpus_bleu(sh, sr, cfg);
    if (!th.empty()) out.tgt = corpus_bleu(th, tr, cfg);
    return out;
}

// ---------------------------------------------------------------------------
// report

std::string format_score(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

std::string opt_cell(const std::optional<double>& v) { return v ? format_score(*v) : "-"; }

}  // namespace

nlohmann::json EvalReport::to_json() const {
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [b, m] : fmeasure)
        f[std::string(bucket_name(b))] = {{"matches", m.matches},     {"hyp_count", m.hyp_count},
                                          {"ref_count", m.ref_count}, {"precision", m.precision},
                                          {"recall", m.recall},       {"f1", m.f1}};
    return {{"bleu", bleu},
            {"ter", ter},
            {"per_origin", {{"All", opt_json(per_origin.all)}, {"Src", opt_json(per_origin.src)}, {"Tgt", opt_json(per_origin.tgt)}}},
            {"fmeasure", f},
            {"sentences", sentences},
            {"hyp_tokens", hyp_tokens},
            {"ref_tokens", ref_tokens},
            {"provenance", provenance}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    r.bleu = j.at("bleu").get<double>();
    r.ter = j.at("ter").get<double>();
    const auto& po = j.at("per_origin");
    r.per_origin.all = opt_from(po.at("All"));
    r.per_origin.src = opt_from(po.at("Src"));
    r.per_origin.tgt = opt_from(po.at("Tgt"));
    for (Bucket b : {Bucket::All, Bucket::Low, Bucket::High}) {
        const std::string name(bucket_name(b));
        if (!j.at("fmeasure").contains(name)) continue;
        const auto& f = j.at("fmeasure").at(name);
        FMeasure m;
        m.matches = f.at("matches").get<std::uint64_t>();
        m.hyp_count = f.at("hyp_count").get<std::uint64_t>();
        m.ref_count = f.at("ref_count").get<std::uint64_t>();
        m.precision = f.at("precision").get<double>();
        m.recall = f.at("recall").get<double>();
        m.f1 = f.at("f1").get<double>();
        r.fmeasure[b] = m;
    }
    r.sentences = j.at("sentences").get<std::size_t>();
    r.hyp_tokens = j.at("hyp_tokens").get<std::uint64_t>();
    r.ref_tokens = j.at("ref_tokens").get<std::uint64_t>();
    r.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
    return r;
}

std::string EvalReport::tsv_header() { return "system\tBLEU\tTER\tAll\tSrc\tTgt\tF_All\tF_Low\tF_High"; }

std::string EvalReport::tsv_row(const std::string& system) const {
    auto f = [&](Bucket b) {
        auto it = fmeasure.find(b);
        return it == fmeasure.end() ? std::string("-") : format_score(100.0 * it->second.f1);
    };
    return system + "\t" + format_score(bleu) + "\t" + format_score(ter) + "\t" + opt_cell(per_origin.all) + "\t" +
           opt_cell(per_origin.src) + "\t" + opt_cell(per_origin.tgt) + "\t" + f(Bucket::All) + "\t" + f(Bucket::Low) +
           "\t" + f(Bucket::High);
}

EvalReport evaluate(const std::vector<Words>& raw_hyps, const std::vector<Words>& refs,
                    const std::vector<Origin>& origins, const FreqTable& train_freqs, const BleuConfig& bleu,
                    const FreqBuckets& buckets) {
    std::vector<Words> hyps;
    hyps.reserve(raw_hyps.size());
    for (const auto& h : raw_hyps) hyps.push_back(strip_bt_tag(h));
    EvalReport r;
    r.per_origin = split_eval_by_origin(origins, refs, hyps, bleu);
    r.bleu = *r.per_origin.all;
    r.ter = ter(hyps, refs);
    r.fmeasure = word_fmeasure(hyps, refs, train_freqs, buckets);
    r.sentences = hyps.size();
    for (const auto& h : hyps) r.hyp_tokens += h.size();
    for (const auto& x : refs) r.ref_tokens += x.size();
    r.provenance["freq_threshold"] = std::to_string(buckets.threshold);
    return r;
}

FreqTable target_word_frequencies(const Corpus& corpus, const Vocab& vocab) {
    FreqTable out;
    for (const auto& p : corpus) {
        if (p.origin() == Origin::Synthetic) continue;
        for (TokenId t : p.tgt) ++out[vocab.token(t)];
    }
    return out;
}

}  // namespace ptbt
