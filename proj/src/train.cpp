#include "ptbt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ptbt/config_io.hpp"
#include "ptbt/util.hpp"

namespace ptbt {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw TrainError("learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw TrainError("betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw TrainError("adam_eps must be positive");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw TrainError("label_smoothing must lie in [0,1)");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw TrainError("dropout_rate must lie in [0,1)");
    if (clip_norm < 0.0) throw TrainError("clip_norm must be non-negative");
    if (batch_tokens == 0) throw TrainError("batch_tokens must be positive");
    if (validation_interval == 0) throw TrainError("validation_interval must be positive");
    if (total_steps == 0 && epochs == 0) throw TrainError("one of total_steps or epochs must be positive");
}

json to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"warmup_steps", c.warmup_steps},
                {"total_steps", c.total_steps},
                {"epochs", c.epochs},
                {"batch_tokens", c.batch_tokens},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"clip_norm", c.clip_norm},
                {"label_smoothing", c.label_smoothing},
                {"dropout_rate", c.dropout_rate},
                {"validation_interval", c.validation_interval},
                {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, std::string_view section) {
    require_known_keys(j,
                       {"learning_rate", "warmup_steps", "total_steps", "epochs", "batch_tokens", "beta1", "beta2",
                        "adam_eps", "clip_norm", "label_smoothing", "dropout_rate", "validation_interval", "seed"},
                       section);
    TrainConfig c;
    read_key(j, "learning_rate", c.learning_rate, section);
    read_key(j, "warmup_steps", c.warmup_steps, section);
    read_key(j, "total_steps", c.total_steps, section);
    read_key(j, "epochs", c.epochs, section);
    read_key(j, "batch_tokens", c.batch_tokens, section);
    read_key(j, "beta1", c.beta1, section);
    read_key(j, "beta2", c.beta2, section);
    read_key(j, "adam_eps", c.adam_eps, section);
    read_key(j, "clip_norm", c.clip_norm, section);
    read_key(j, "label_smoothing", c.label_smoothing, section);
    read_key(j, "dropout_rate", c.dropout_rate, section);
    read_key(j, "validation_interval", c.validation_interval, section);
    read_key(j, "seed", c.seed, section);
    try {
        c.validate();
    } catch (const TrainError& e) {
        throw ConfigError(std::string(section) + ": " + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// freeze masks

FreezeMask FreezeMask::sides(bool encoder_frozen, bool decoder_frozen) {
    FreezeMask m;
    if (encoder_frozen) m.frozen = encoder_side_groups();
    if (decoder_frozen)
        for (ParamGroup g : decoder_side_groups()) m.frozen.insert(g);
    return m;
}

FreezeMask FreezeMask::parse(const std::vector<std::string>& groups) {
    FreezeMask m;
    for (const auto& name : groups) {
        try {
            m.frozen.insert(parse_group(name));
        } catch (const ModelError&) {
            throw TrainError("freeze mask names unknown group '" + name + "'");
        }
    }
    return m;
}

FreezeMask FreezeMask::from_update_label(std::string_view label) {
    if (label.size() != 2 || (label[0] != 'Y' && label[0] != 'N') || (label[1] != 'Y' && label[1] != 'N'))
        throw TrainError("freeze label must be one of NN, NY, YN, YY, got '" + std::string(label) + "'");
    return sides(label[0] == 'N', label[1] == 'N');
}

std::string FreezeMask::update_label() const {
    auto side_updated = [&](const std::set<ParamGroup>& side) {
        for (ParamGroup g : side)
            if (is_frozen(g)) return false;
        return true;
    };
    return std::string(side_updated(encoder_side_groups()) ? "Y" : "N") +
           (side_updated(decoder_side_groups()) ? "Y" : "N");
}

void check_freeze_mask(const Model& model, const FreezeMask& mask) {
    for (const auto& [alias, owner] : model.aliases()) {
        const ParamGroup ga = parse_group(std::string_view(alias).substr(0, alias.find('.')));
        const ParamGroup go = model.group_of(owner);
        if (mask.is_frozen(ga) != mask.is_frozen(go))
            throw TrainError("freeze mask splits tensor '" + owner + "' shared with '" + alias +
                             "' (embedding_tying=" + std::string(tying_name(model.config().tying)) + ")");
    }
}

void apply_freeze(Gradients& grads, const Model& model, const FreezeMask& mask) {
    check_freeze_mask(model, mask);
    for (auto it = grads.begin(); it != grads.end();) {
        if (mask.is_frozen(model.group_of(it->first))) {
            it->second.fill(0.0);
            it = grads.erase(it);
        } else {
            ++it;
        }
    }
}

// ---------------------------------------------------------------------------
// optimizer

double learning_rate_at(const TrainConfig& cfg, std::uint64_t step) {
    if (step == 0) throw TrainError("learning rate steps are 1-based");
    const double s = static_cast<double>(step);
    if (cfg.warmup_steps == 0) return cfg.learning_rate / std::sqrt(s);
    const double w = static_cast<double>(cfg.warmup_steps);
    if (step <= cfg.warmup_steps) return cfg.learning_rate * s / w;
    return cfg.learning_rate * std::sqrt(w / s);
}

void adam_step(std::map<std::string, Tensor>& params, const Gradients& grads, OptimState& state,
               const TrainConfig& cfg, double lr) {
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw TrainError("gradient for unknown parameter '" + name + "'");
        if (it->second.shape() != g.shape())
            throw TrainError("gradient shape " + shape_str(g.shape()) + " does not match parameter '" + name + "' " +
                             shape_str(it->second.shape()));
        if (!g.all_finite()) {
            std::size_t bad = 0;
            while (std::isfinite(g[bad])) ++bad;
            throw TrainError("non-finite gradient at step " + std::to_string(state.t + 1) + " in '" + name + "'[" +
                             std::to_string(bad) + "] = " + std::to_string(g[bad]));
        }
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        auto [mit, m_new] = state.m.try_emplace(name, g.shape());
        auto [vit, v_new] = state.v.try_emplace(name, g.shape());
        double* m = mit->second.data();
        double* v = vit->second.data();
        double* w = p.data();
        const double* gd = g.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

double global_norm(const Gradients& grads) {
    double sq = 0.0;
    for (const auto& [_, g] : grads)
        for (double x : g.values()) sq += x * x;
    return std::sqrt(sq);
}

double clip_grad_norm(Gradients& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (auto& [_, g] : grads)
            for (double& x : g.values()) x *= factor;
    }
    return norm;
}

double smoothed_cross_entropy(const Tensor& logits, const TokenBatch& targets, double label_smoothing,
                              TokenId pad_id) {
    if (logits.rank() != 3 || logits.dim(0) != targets.batch || logits.dim(1) != targets.length)
        throw TrainError("logits " + shape_str(logits.shape()) + " do not match targets [" +
                         std::to_string(targets.batch) + ", " + std::to_string(targets.length) + "]");
    Graph g;
    const NodeId x = g.constant(logits.reshaped({targets.batch * targets.length, logits.dim(2)}));
    g.set_output(g.cross_entropy(x, targets.ids, {label_smoothing, pad_id}));
    try {
        return g.forward(Bindings{}).item();
    } catch (const GraphError& e) {
        throw TrainError(e.what());
    }
}

// ---------------------------------------------------------------------------
// batching

namespace {

std::size_t padded_len(const SentencePair& p) { return std::max(p.src.size(), p.tgt.size() + 1); }

}  // namespace

std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus, std::size_t batch_tokens,
                                                   std::uint64_t seed, std::uint64_t epoch) {
    std::mt19937_64 rng(derive_seed(seed, 0xba7c4, epoch));
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return padded_len(corpus[a]) < padded_len(corpus[b]);
    });
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> cur;
    std::size_t cur_len = 0;
    for (std::size_t i : order) {
        const std::size_t len = std::max(cur_len, padded_len(corpus[i]));
        if (!cur.empty() && (cur.size() + 1) * len > batch_tokens) {
            batches.push_back(std::move(cur));
            cur.clear();
            cur_len = 0;
        }
        cur.push_back(i);
        cur_len = std::max(cur_len, padded_len(corpus[i]));
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
    std::shuffle(batches.begin(), batches.end(), rng);
    return batches;
}

PairBatch collate(const Corpus& corpus, const std::vector<std::size_t>& rows) {
    std::vector<TokenSeq> src, tin, tout;
    src.reserve(rows.size());
    tin.reserve(rows.size());
    tout.reserve(rows.size());
    for (std::size_t r : rows) {
        const SentencePair& p = corpus.at(r);
        src.push_back(p.src);
        TokenSeq in{special::kBos};
        in.insert(in.end(), p.tgt.begin(), p.tgt.end());
        TokenSeq out = p.tgt;
        out.push_back(special::kEos);
        tin.push_back(std::move(in));
        tout.push_back(std::move(out));
    }
    return {TokenBatch::from(src), TokenBatch::from(tin), TokenBatch::from(tout)};
}

double validation_perplexity(const Model& model, const Corpus& valid, std::size_t batch_tokens) {
    if (valid.empty()) throw TrainError("validation corpus is empty");
    double nll = 0.0;
    std::size_t tokens = 0;
    const Bindings bind = model.bindings();
    for (const auto& rows : make_batches(valid, batch_tokens, 0, 0)) {
        const PairBatch b = collate(valid, rows);
        Graph g;
        const NodeId logits = build_nmt_graph(g, model, b.src, b.tgt_in);
        g.set_output(g.cross_entropy(logits, b.tgt_out.ids, {0.0, special::kPad}));
        std::size_t n = 0;
        for (TokenId t : b.tgt_out.ids) n += t != special::kPad;
        nll += g.forward(bind).item() * static_cast<double>(n);
        tokens += n;
    }
    return std::exp(nll / static_cast<double>(tokens));
}

std::string TrainLog::to_tsv() const {
    std::ostringstream out;
    out.precision(17);
    out << "step\tlr\ttrain_loss\tvalid_ppl\tfrozen_digest\n";
    for (const auto& r : rows)
        out << r.step << '\t' << r.lr << '\t' << r.train_loss << '\t' << r.valid_ppl << '\t' << r.frozen_digest
            << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// training loop

namespace {

Corpus fit_positions(const Corpus& corpus, const ModelConfig& mc, const char* what) {
    Corpus kept;
    kept.reserve(corpus.size());
    for (const auto& p : corpus)
        if (p.src.size() <= mc.max_positions && p.tgt.size() + 1 <= mc.max_positions) kept.push_back(p);
    if (kept.size() != corpus.size())
        log_warn(std::string(what) + ": dropped " + std::to_string(corpus.size() - kept.size()) +
                 " pairs longer than max_positions");
    return kept;
}

}  // namespace

TrainResult train(const Model& initial, const Corpus& train_corpus, const Corpus& valid_corpus,
                  const TrainConfig& cfg, const FreezeMask& mask, const TrainHooks& hooks) {
    cfg.validate();
    check_freeze_mask(initial, mask);
    if (train_corpus.empty() && !hooks.epoch_corpus) throw TrainError("training corpus is empty");
    const ModelConfig& mc = initial.config();
    const Corpus valid = fit_positions(valid_corpus, mc, "validation");
    if (valid.empty()) throw TrainError("validation corpus is empty");

    std::vector<std::string> frozen_names;
    for (const auto& [name, _] : initial.params())
        if (mask.is_frozen(initial.group_of(name))) frozen_names.push_back(name);

    Model model = initial;
    OptimState state;
    TrainResult result{initial, 0, 0.0, initial, 0, {}};
    bool have_best = false;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    auto run_validation = [&](std::uint64_t step) {
        double ppl = validation_perplexity(model, valid);
        if (hooks.validation_override) ppl = hooks.validation_override(step, ppl);
        if (!std::isfinite(ppl)) throw TrainError("validation perplexity is not finite at step " + std::to_string(step));
        TrainLogRow row;
        row.step = step;
        row.lr = step == 0 ? 0.0 : learning_rate_at(cfg, step);
        row.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        row.valid_ppl = ppl;
        row.frozen_digest = frozen_names.empty() ? "-" : params_digest(model, frozen_names);
        result.log.rows.push_back(row);
        loss_sum = 0.0;
        loss_count = 0;
        if (!have_best || ppl < result.best_valid_ppl) {
            have_best = true;
            result.best = model;
            result.best_step = step;
            result.best_valid_ppl = ppl;
        }
        log_info("step " + std::to_string(step) + " valid_ppl " + std::to_string(ppl));
    };

    std::uint64_t step = 0;
    bool done = false;
    for (std::uint64_t epoch = 0; !done; ++epoch) {
        if (cfg.total_steps == 0 && epoch >= cfg.epochs) break;
        const Corpus data = fit_positions(hooks.epoch_corpus ? hooks.epoch_corpus(epoch) : train_corpus, mc, "training");
        if (data.empty()) throw TrainError("training corpus is empty after filtering");
        for (const auto& rows : make_batches(data, cfg.batch_tokens, cfg.seed, epoch)) {
            if (rows.empty()) {
                log_warn("skipping empty batch");
                continue;
            }
            const PairBatch b = collate(data, rows);
            Graph g;
            ForwardOptions fo;
            fo.training = true;
            fo.dropout_seed = derive_seed(cfg.seed, 0xd409, step);
            fo.dropout_rate = cfg.dropout_rate;
            const NodeId logits = build_nmt_graph(g, model, b.src, b.tgt_in, fo);
            g.set_output(g.cross_entropy(logits, b.tgt_out.ids, {cfg.label_smoothing, special::kPad}));
            const double loss = g.forward(model.bindings()).item();
            g.backward();
            Gradients grads = g.gradients();
            apply_freeze(grads, model, mask);
            clip_grad_norm(grads, cfg.clip_norm);
            const double lr = learning_rate_at(cfg, state.t + 1);
            adam_step(model.mutable_params(), grads, state, cfg, lr);
            ++step;
            loss_sum += loss;
            ++loss_count;
            if (hooks.on_step) hooks.on_step(step, loss);
            if (step % cfg.validation_interval == 0) run_validation(step);
            if (cfg.total_steps != 0 && step >= cfg.total_steps) {
                done = true;
                break;
            }
        }
    }
    if (result.log.rows.empty() || result.log.rows.back().step != step) run_validation(step);
    result.last = std::move(model);
    result.steps = step;
    return result;
}

// ---------------------------------------------------------------------------
// manifests

std::string corpus_digest(const Corpus& corpus) {
    Digest d;
    d.update(static_cast<std::uint64_t>(corpus.size()));
    for (const auto& p : corpus) {
        d.update(static_cast<std::uint64_t>(p.src.size()));
        for (TokenId t : p.src) d.update(static_cast<std::uint64_t>(t));
        d.update(static_cast<std::uint64_t>(p.tgt.size()));
        for (TokenId t : p.tgt) d.update(static_cast<std::uint64_t>(t));
        d.update(origin_name(p.origin()));
    }
    return d.hex();
}

std::string json_hash(const json& j) { return sha256_hex(j.dump()); }

json RunManifest::to_json() const {
    return json{{"kind", kind},       {"seed", seed},       {"config_hash", config_hash}, {"inputs", inputs},
                {"outputs", outputs}, {"config", config},   {"metrics", metrics}};
}

RunManifest RunManifest::from_json(const json& j) {
    require_known_keys(j, {"kind", "seed", "config_hash", "inputs", "outputs", "config", "metrics"}, "manifest");
    RunManifest m;
    try {
        m.kind = j.at("kind").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.config = j.at("config");
        m.metrics = j.value("metrics", json::object());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

void RunManifest::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write manifest " + path.string());
    out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read manifest " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("manifest " + path.string() + ": " + e.what());
    }
}

}  // namespace ptbt
