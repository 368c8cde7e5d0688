#include "ptbt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ptbt/config_io.hpp"
#include "ptbt/kernels.hpp"

namespace ptbt {

using nlohmann::json;

void BeamConfig::validate() const {
    if (beam_size == 0) throw DecodeError("beam_size must be at least 1");
    if (!(length_penalty >= 0.0)) throw DecodeError("length_penalty must be non-negative");
}

std::size_t BeamConfig::max_len_for(std::size_t src_len) const { return max_len ? max_len : 2 * src_len + 8; }

json to_json(const BeamConfig& c) {
    return json{{"beam_size", c.beam_size}, {"length_penalty", c.length_penalty}, {"max_len", c.max_len}};
}

BeamConfig beam_config_from_json(const json& j, std::string_view section) {
    require_known_keys(j, {"beam_size", "length_penalty", "max_len"}, section);
    BeamConfig c;
    read_key(j, "beam_size", c.beam_size, section);
    read_key(j, "length_penalty", c.length_penalty, section);
    read_key(j, "max_len", c.max_len, section);
    try {
        c.validate();
    } catch (const DecodeError& e) {
        throw ConfigError(std::string(section) + ": " + e.what());
    }
    return c;
}

TokenSeq Hypothesis::output() const {
    TokenSeq out = tokens;
    if (!out.empty() && out.back() == special::kEos) out.pop_back();
    return out;
}

double normalized_score(double logprob, std::size_t length, double alpha) {
    return logprob / std::pow(static_cast<double>(length), alpha);
}

bool is_banned_output(TokenId token, std::size_t step) {
    switch (token) {
        case special::kPad:
        case special::kBos:
        case special::kMask:
        case special::kBtTag: return true;
        case special::kEos: return step == 0;
        default: return false;
    }
}

// ---------------------------------------------------------------------------
// incremental decoder

namespace {

std::string layer_name(std::size_t i, const char* rest) { return "decoder.layer" + std::to_string(i) + "." + rest; }

// One row at a time: the kernel path (and so the rounding) must not depend on
// how many hypotheses share a step.
void rowwise_gemm(bool trans_b, std::size_t rows, std::size_t n, std::size_t k, const double* x, const double* w,
                  double* y) {
    for (std::size_t r = 0; r < rows; ++r)
        kernels::gemm(false, trans_b, 1, n, k, 1.0, x + r * k, k, w, trans_b ? k : n, 0.0, y + r * n, n);
}

void linear(const Tensor& w, const Tensor* b, const double* x, std::size_t rows, double* y) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    rowwise_gemm(false, rows, out, in, x, w.data(), y);
    if (b)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < out; ++c) y[r * out + c] += (*b)[c];
}

void norm(const Model& m, const std::string& prefix, const double* x, std::size_t rows, double* y) {
    const std::size_t d = m.config().d_model;
    std::vector<double> mean(rows), rstd(rows);
    kernels::layer_norm_forward(x, m.param(prefix + ".gain").data(), m.param(prefix + ".bias").data(), y,
                                mean.data(), rstd.data(), rows, d, 1e-5);
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const Model& model, const std::vector<TokenSeq>& sources) : model_(model) {
    const ModelConfig& c = model.config();
    const std::size_t d = c.d_model;
    const Bindings bind = model.bindings();
    for (const auto& src : sources) {
        Graph g;
        g.set_output(build_encoder_graph(g, model, TokenBatch::from({src})));
        const Tensor& memory = g.forward(bind);
        const std::size_t s = src.size();
        std::vector<std::vector<double>> keys(c.num_layers), values(c.num_layers);
        for (std::size_t i = 0; i < c.num_layers; ++i) {
            keys[i].resize(s * d);
            values[i].resize(s * d);
            linear(model.param(layer_name(i, "cross_attn.k.weight")), nullptr, memory.data(), s, keys[i].data());
            linear(model.param(layer_name(i, "cross_attn.v.weight")), &model.param(layer_name(i, "cross_attn.v.bias")),
                   memory.data(), s, values[i].data());
        }
        memory_keys_.push_back(std::move(keys));
        memory_values_.push_back(std::move(values));
        src_len_.push_back(s);
    }
}

IncrementalDecoder::Cache IncrementalDecoder::start(std::size_t sentence) const {
    if (sentence >= sentences()) throw DecodeError("sentence index out of range");
    Cache c;
    c.sentence = sentence;
    c.keys.resize(model_.config().num_layers);
    c.values.resize(model_.config().num_layers);
    return c;
}

Tensor IncrementalDecoder::step(std::vector<Cache*>& caches, const std::vector<TokenId>& tokens) {
    const ModelConfig& c = model_.config();
    const std::size_t n = caches.size();
    const std::size_t d = c.d_model;
    const std::size_t V = c.tgt_vocab_size;
    if (n == 0 || tokens.size() != n) throw DecodeError("step needs one token per cache");
    const std::size_t t = caches[0]->length;
    for (const Cache* cache : caches)
        if (cache->length != t) throw DecodeError("caches in one step must have equal length");
    if (t >= c.max_positions) throw DecodeError("decoding past max_positions");

    std::vector<double> x(n * d), h(n * d), q(n * d), k(n * d), v(n * d), att(n * d), o(n * d), f(n * c.d_ff);
    const Tensor& table = model_.param("tgt_embed.table");
    const double scale = std::sqrt(static_cast<double>(d));
    std::vector<double> pos(d);
    sinusoid_row(t, pos);
    for (std::size_t r = 0; r < n; ++r) {
        if (tokens[r] < 0 || static_cast<std::size_t>(tokens[r]) >= V) throw DecodeError("token id out of range");
        const double* e = table.data() + static_cast<std::size_t>(tokens[r]) * d;
        for (std::size_t j = 0; j < d; ++j) x[r * d + j] = e[j] * scale + pos[j];
    }

    kernels::AttentionShape self{1, 1, t + 1, d, c.num_heads, t, false};
    std::vector<double> probs(c.num_heads * std::max<std::size_t>(t + 1, 1));
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        auto p = [&](const char* rest) -> const Tensor& { return model_.param(layer_name(i, rest)); };
        norm(model_, layer_name(i, "self_attn_norm"), x.data(), n, h.data());
        linear(p("self_attn.q.weight"), &p("self_attn.q.bias"), h.data(), n, q.data());
        linear(p("self_attn.k.weight"), nullptr, h.data(), n, k.data());
        linear(p("self_attn.v.weight"), &p("self_attn.v.bias"), h.data(), n, v.data());
        for (std::size_t r = 0; r < n; ++r) {
            auto& ck = caches[r]->keys[i];
            auto& cv = caches[r]->values[i];
            ck.insert(ck.end(), k.begin() + r * d, k.begin() + (r + 1) * d);
            cv.insert(cv.end(), v.begin() + r * d, v.begin() + (r + 1) * d);
            kernels::attention_forward(self, q.data() + r * d, ck.data(), cv.data(), {}, probs.data(),
                                       att.data() + r * d);
        }
        linear(p("self_attn.o.weight"), &p("self_attn.o.bias"), att.data(), n, o.data());
        for (std::size_t j = 0; j < n * d; ++j) x[j] += o[j];

        norm(model_, layer_name(i, "cross_attn_norm"), x.data(), n, h.data());
        linear(p("cross_attn.q.weight"), &p("cross_attn.q.bias"), h.data(), n, q.data());
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t s = caches[r]->sentence;
            kernels::AttentionShape cross{1, 1, src_len_[s], d, c.num_heads, 0, false};
            std::vector<double> cprobs(c.num_heads * src_len_[s]);
            kernels::attention_forward(cross, q.data() + r * d, memory_keys_[s][i].data(),
                                       memory_values_[s][i].data(), {}, cprobs.data(), att.data() + r * d);
        }
        linear(p("cross_attn.o.weight"), &p("cross_attn.o.bias"), att.data(), n, o.data());
        for (std::size_t j = 0; j < n * d; ++j) x[j] += o[j];

        norm(model_, layer_name(i, "ffn_norm"), x.data(), n, h.data());
        linear(p("ffn.fc1.weight"), &p("ffn.fc1.bias"), h.data(), n, f.data());
        for (double& z : f) z = z > 0.0 ? z : 0.0;
        linear(p("ffn.fc2.weight"), &p("ffn.fc2.bias"), f.data(), n, o.data());
        for (std::size_t j = 0; j < n * d; ++j) x[j] += o[j];
    }
    norm(model_, "decoder.final_norm", x.data(), n, h.data());

    Tensor logits({n, V});
    const Tensor& w = model_.param("out_proj.weight");
    if (c.tying == EmbeddingTying::Untied)
        rowwise_gemm(false, n, V, d, h.data(), w.data(), logits.data());
    else
        rowwise_gemm(true, n, V, d, h.data(), w.data(), logits.data());
    const Tensor& b = model_.param("out_proj.bias");
    for (std::size_t r = 0; r < n; ++r) {
        double* row = logits.data() + r * V;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < V; ++j) {
            row[j] += b[j];
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < V; ++j) row[j] -= lz;
    }
    for (Cache* cache : caches) ++cache->length;
    return logits;
}

Tensor incremental_logprobs(const Model& model, const TokenSeq& src, const TokenSeq& tgt_in) {
    if (tgt_in.empty()) throw DecodeError("empty decoder input");
    IncrementalDecoder dec(model, {src});
    auto cache = dec.start(0);
    std::vector<IncrementalDecoder::Cache*> caches{&cache};
    const std::size_t V = model.config().tgt_vocab_size;
    Tensor out({tgt_in.size(), V});
    for (std::size_t t = 0; t < tgt_in.size(); ++t) {
        const Tensor lp = dec.step(caches, {tgt_in[t]});
        std::copy(lp.data(), lp.data() + V, out.data() + t * V);
    }
    return out;
}

// ---------------------------------------------------------------------------
// beam search

namespace {

struct Live {
    TokenSeq tokens;
    double logprob = 0.0;
    IncrementalDecoder::Cache cache;
};

struct SentenceSearch {
    std::vector<Live> live;
    std::vector<Hypothesis> finished;
    std::size_t max_len = 0;
    bool done = false;
};

struct Candidate {
    double logprob;
    TokenId token;
    std::size_t beam;
};

bool candidate_before(const Candidate& a, const Candidate& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    if (a.token != b.token) return a.token < b.token;
    return a.beam < b.beam;
}

Hypothesis close(const Live& l, double eos_logprob, double alpha, bool truncated) {
    Hypothesis h;
    h.tokens = l.tokens;
    h.tokens.push_back(special::kEos);
    h.logprob = l.logprob + eos_logprob;
    h.score = normalized_score(h.logprob, h.tokens.size(), alpha);
    h.truncated = truncated;
    return h;
}

// first maximum wins, so earlier completions take ties
const Hypothesis& best_of(const std::vector<Hypothesis>& pool) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i)
        if (pool[i].score > pool[best].score) best = i;
    return pool[best];
}

std::vector<Hypothesis> search_chunk(const Model& model, const std::vector<TokenSeq>& sources, std::size_t k,
                                     double alpha, std::size_t fixed_max_len) {
    IncrementalDecoder dec(model, sources);
    const std::size_t V = model.config().tgt_vocab_size;
    const std::size_t max_pos = model.config().max_positions;
    std::vector<SentenceSearch> ss(sources.size());
    for (std::size_t s = 0; s < sources.size(); ++s) {
        ss[s].max_len = fixed_max_len ? fixed_max_len : 2 * sources[s].size() + 8;
        // the decoder input is BOS + tokens, which must fit the positions
        ss[s].max_len = std::min(ss[s].max_len, max_pos - 1);
        ss[s].live.push_back({{}, 0.0, dec.start(s)});
    }
    std::vector<Candidate> cands;
    for (std::size_t step = 0;; ++step) {
        std::vector<IncrementalDecoder::Cache*> caches;
        std::vector<TokenId> feed;
        for (auto& st : ss) {
            if (st.done) continue;
            for (auto& l : st.live) {
                caches.push_back(&l.cache);
                feed.push_back(l.tokens.empty() ? special::kBos : l.tokens.back());
            }
        }
        if (caches.empty()) break;
        const Tensor lp = dec.step(caches, feed);
        std::size_t row = 0;
        for (auto& st : ss) {
            if (st.done) continue;
            const std::size_t first_row = row;
            row += st.live.size();
            if (step == st.max_len) {
                for (std::size_t b = 0; b < st.live.size(); ++b)
                    st.finished.push_back(close(st.live[b], lp[(first_row + b) * V + special::kEos], alpha, true));
                st.done = true;
                continue;
            }
            cands.clear();
            for (std::size_t b = 0; b < st.live.size(); ++b) {
                const double* r = lp.data() + (first_row + b) * V;
                for (std::size_t tok = 0; tok < V; ++tok) {
                    if (is_banned_output(static_cast<TokenId>(tok), step)) continue;
                    cands.push_back({st.live[b].logprob + r[tok], static_cast<TokenId>(tok), b});
                }
            }
            const std::size_t keep = std::min(cands.size(), 2 * k);
            std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                              candidate_before);
            std::vector<Live> next;
            for (std::size_t rank = 0; rank < keep; ++rank) {
                const Candidate& cand = cands[rank];
                if (cand.token == special::kEos) {
                    if (rank < k) {
                        const Live& parent = st.live[cand.beam];
                        st.finished.push_back(close(parent, cand.logprob - parent.logprob, alpha, false));
                    }
                } else if (next.size() < k) {
                    Live child = st.live[cand.beam];
                    child.tokens.push_back(cand.token);
                    child.logprob = cand.logprob;
                    next.push_back(std::move(child));
                }
            }
            if (st.finished.size() >= k) st.done = true;
            else st.live = std::move(next);
        }
    }
    std::vector<Hypothesis> out;
    out.reserve(ss.size());
    for (const auto& st : ss) out.push_back(best_of(st.finished));
    return out;
}

}  // namespace

std::vector<Hypothesis> beam_search(const Model& model, const std::vector<TokenSeq>& sources, const BeamConfig& cfg,
                                    std::size_t batch_sentences) {
    cfg.validate();
    if (batch_sentences == 0) throw DecodeError("batch_sentences must be positive");
    std::vector<Hypothesis> out;
    out.reserve(sources.size());
    for (std::size_t start = 0; start < sources.size(); start += batch_sentences) {
        const std::size_t end = std::min(sources.size(), start + batch_sentences);
        const std::vector<TokenSeq> chunk(sources.begin() + static_cast<std::ptrdiff_t>(start),
                                          sources.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<Hypothesis> hyps = search_chunk(model, chunk, cfg.beam_size, cfg.length_penalty, cfg.max_len);
        if (cfg.beam_size > 1) {
            const std::vector<Hypothesis> greedy = search_chunk(model, chunk, 1, cfg.length_penalty, cfg.max_len);
            for (std::size_t i = 0; i < hyps.size(); ++i)
                if (greedy[i].score > hyps[i].score) hyps[i] = greedy[i];
        }
        for (auto& h : hyps) out.push_back(std::move(h));
    }
    return out;
}

Hypothesis beam_search(const Model& model, const TokenSeq& source, const BeamConfig& cfg) {
    return beam_search(model, std::vector<TokenSeq>{source}, cfg).front();
}

Hypothesis greedy_decode(const Model& model, const TokenSeq& source, std::size_t max_len) {
    BeamConfig cfg;
    cfg.beam_size = 1;
    cfg.max_len = max_len;
    return beam_search(model, source, cfg);
}

std::vector<TokenSeq> translate(const Model& model, const std::vector<TokenSeq>& sources, const BeamConfig& cfg) {
    std::vector<TokenSeq> out;
    for (const auto& h : beam_search(model, sources, cfg)) out.push_back(h.output());
    return out;
}

BackTranslation back_translate(const Model& reverse_model, const std::vector<TokenSeq>& mono_tgt,
                               const BeamConfig& cfg, bool tagged) {
    BackTranslation bt;
    bt.hypotheses = beam_search(reverse_model, mono_tgt, cfg);
    bt.pairs.reserve(mono_tgt.size());
    for (std::size_t i = 0; i < mono_tgt.size(); ++i) {
        TokenSeq src = bt.hypotheses[i].output();
        if (tagged) src = tag_bt_source(src);
        bt.pairs.emplace_back(std::move(src), mono_tgt[i], Origin::Synthetic);
    }
    return bt;
}

void write_decode_meta(const std::filesystem::path& path, const std::vector<Hypothesis>& hyps) {
    std::vector<std::string> lines;
    lines.reserve(hyps.size());
    char buf[64];
    for (const auto& h : hyps) {
        std::snprintf(buf, sizeof buf, "%.17g\t%d", h.score, h.truncated ? 1 : 0);
        lines.emplace_back(buf);
    }
    write_lines(path, lines);
}

}  // namespace ptbt
