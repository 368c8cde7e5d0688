#include "ptbt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#include "ptbt/config_io.hpp"
#include "ptbt/util.hpp"

namespace ptbt {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// config

namespace {

json task_json(const SynthTaskSpec& t) {
    return {{"vocab_size", t.vocab_size}, {"zipf_src", t.zipf_src}, {"zipf_tgt", t.zipf_tgt},
            {"min_len", t.min_len},       {"max_len", t.max_len},   {"seed", t.seed}};
}

SynthTaskSpec task_from(const json& j) {
    require_known_keys(j, {"vocab_size", "zipf_src", "zipf_tgt", "min_len", "max_len", "seed"}, "task");
    SynthTaskSpec t;
    read_key(j, "vocab_size", t.vocab_size, "task");
    read_key(j, "zipf_src", t.zipf_src, "task");
    read_key(j, "zipf_tgt", t.zipf_tgt, "task");
    read_key(j, "min_len", t.min_len, "task");
    read_key(j, "max_len", t.max_len, "task");
    read_key(j, "seed", t.seed, "task");
    return t;
}

json data_json(const DataConfig& d) {
    return {{"bitext", d.bitext},
            {"valid", d.valid},
            {"test_src_original", d.test_src_original},
            {"test_tgt_original", d.test_tgt_original},
            {"mono_pretrain", d.mono_pretrain},
            {"mono_bt", d.mono_bt},
            {"min_freq", d.min_freq}};
}

DataConfig data_from(const json& j) {
    require_known_keys(j,
                       {"bitext", "valid", "test_src_original", "test_tgt_original", "mono_pretrain", "mono_bt",
                        "min_freq"},
                       "data");
    DataConfig d;
    read_key(j, "bitext", d.bitext, "data");
    read_key(j, "valid", d.valid, "data");
    read_key(j, "test_src_original", d.test_src_original, "data");
    read_key(j, "test_tgt_original", d.test_tgt_original, "data");
    read_key(j, "mono_pretrain", d.mono_pretrain, "data");
    read_key(j, "mono_bt", d.mono_bt, "data");
    read_key(j, "min_freq", d.min_freq, "data");
    return d;
}

json noise_json(const NoiseConfig& n) { return {{"mask_ratio", n.mask_ratio}, {"poisson_lambda", n.poisson_lambda}}; }

NoiseConfig noise_from(const json& j) {
    require_known_keys(j, {"mask_ratio", "poisson_lambda"}, "noise");
    NoiseConfig n;
    read_key(j, "mask_ratio", n.mask_ratio, "noise");
    read_key(j, "poisson_lambda", n.poisson_lambda, "noise");
    return n;
}

json eval_json(const EvalConfig& e) { return {{"freq_threshold", e.freq_threshold}, {"bleu_max_n", e.bleu_max_n}}; }

EvalConfig eval_from(const json& j) {
    require_known_keys(j, {"freq_threshold", "bleu_max_n"}, "eval");
    EvalConfig e;
    read_key(j, "freq_threshold", e.freq_threshold, "eval");
    read_key(j, "bleu_max_n", e.bleu_max_n, "eval");
    return e;
}

json model_json(ModelConfig m) {
    json j = to_json(m);
    j.erase("src_vocab_size");
    j.erase("tgt_vocab_size");
    return j;
}

}  // namespace

ExperimentConfig ExperimentConfig::desk_default() {
    ExperimentConfig c;
    c.model.num_layers = 1;
    c.model.d_model = 32;
    c.model.num_heads = 4;
    c.model.d_ff = 64;
    c.model.dropout_rate = 0.1;
    c.model.max_positions = 64;

    c.train.learning_rate = 1e-2;
    c.train.warmup_steps = 100;
    c.train.total_steps = 1000;
    c.train.batch_tokens = 512;
    c.train.dropout_rate = 0.1;
    c.train.validation_interval = 250;

    c.pretrain = c.train;
    c.train.total_steps = 2000;

    c.finetune = c.train;
    c.finetune.total_steps = 500;
    c.finetune.warmup_steps = 50;
    c.finetune.learning_rate = 5e-3;
    return c;
}

void ExperimentConfig::validate() const {
    try {
        CipherTask check(task);
    } catch (const DataError& e) {
        throw ConfigError(std::string("task: ") + e.what());
    }
    if (data.bitext < 2) throw ConfigError("data.bitext must be at least 2");
    if (data.valid < 2) throw ConfigError("data.valid must be at least 2");
    if (data.test_src_original + data.test_tgt_original == 0) throw ConfigError("data: empty test set");
    if (data.mono_pretrain == 0) throw ConfigError("data.mono_pretrain must be positive");
    if (data.mono_bt == 0) throw ConfigError("data.mono_bt must be positive");
    if (!(noise.mask_ratio >= 0.0 && noise.mask_ratio <= 1.0)) throw ConfigError("noise.mask_ratio must be in [0,1]");
    if (!(noise.poisson_lambda > 0.0)) throw ConfigError("noise.poisson_lambda must be positive");
    ModelConfig m = model;
    m.src_vocab_size = m.tgt_vocab_size = 2 * task.vocab_size + static_cast<std::size_t>(special::kNumReserved);
    try {
        m.validate();
        pretrain.validate();
        train.validate();
        finetune.validate();
        beam.validate();
        BleuConfig b;
        b.max_n = eval.bleu_max_n;
        b.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (task.max_len + 2 > model.max_positions)
        throw ConfigError("model.max_positions must exceed task.max_len + 1 (tag) by at least one");
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("seeds must be distinct");
}

json ExperimentConfig::to_json() const {
    return {{"task", task_json(task)},
            {"data", data_json(data)},
            {"model", model_json(model)},
            {"noise", noise_json(noise)},
            {"pretrain", ptbt::to_json(pretrain)},
            {"train", ptbt::to_json(train)},
            {"finetune", ptbt::to_json(finetune)},
            {"beam", ptbt::to_json(beam)},
            {"eval", eval_json(eval)},
            {"seeds", seeds},
            {"references", references}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    require_known_keys(j,
                       {"task", "data", "model", "noise", "pretrain", "train", "finetune", "beam", "eval", "seeds",
                        "references"},
                       "config");
    ExperimentConfig c = desk_default();
    if (j.contains("task")) c.task = task_from(j.at("task"));
    if (j.contains("data")) c.data = data_from(j.at("data"));
    if (j.contains("model")) {
        const json& m = j.at("model");
        for (const char* k : {"src_vocab_size", "tgt_vocab_size"})
            if (m.is_object() && m.contains(k))
                throw ConfigError("config key 'model." + std::string(k) + "' is derived from the data; remove it");
        json merged = model_json(c.model);
        if (!m.is_object()) throw ConfigError("model: expected an object");
        for (auto it = m.begin(); it != m.end(); ++it) {
            if (!merged.contains(it.key())) throw ConfigError("unknown config key 'model." + it.key() + "'");
            merged[it.key()] = it.value();
        }
        c.model = model_config_from_json(merged, "model");
    }
    if (j.contains("noise")) c.noise = noise_from(j.at("noise"));
    // train sections override the desk defaults key by key
    auto train_section = [&](const char* name, TrainConfig& out) {
        if (!j.contains(name)) return;
        const json& s = j.at(name);
        if (!s.is_object()) throw ConfigError(std::string(name) + ": expected an object");
        json merged = ptbt::to_json(out);
        for (auto it = s.begin(); it != s.end(); ++it) {
            if (!merged.contains(it.key())) throw ConfigError("unknown config key '" + std::string(name) + "." + it.key() + "'");
            merged[it.key()] = it.value();
        }
        out = train_config_from_json(merged, name);
    };
    train_section("pretrain", c.pretrain);
    train_section("train", c.train);
    train_section("finetune", c.finetune);
    if (j.contains("beam")) {
        try {
            c.beam = beam_config_from_json(j.at("beam"));
        } catch (const DecodeError& e) {
            throw ConfigError(e.what());
        }
    }
    if (j.contains("eval")) c.eval = eval_from(j.at("eval"));
    read_key(j, "seeds", c.seeds, "config");
    read_key(j, "references", c.references, "config");
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json ExperimentConfig::artifact_json() const {
    json j = to_json();
    j.erase("seeds");
    j.erase("references");
    return j;
}

std::string ExperimentConfig::hash() const { return json_hash(artifact_json()); }

// ---------------------------------------------------------------------------
// data

namespace {

std::string mono_digest(const std::vector<TokenSeq>& mono) {
    Digest d;
    for (const auto& s : mono) {
        d.update(static_cast<std::uint64_t>(s.size()));
        for (TokenId t : s) d.update(static_cast<std::uint64_t>(t));
    }
    return d.hex();
}

std::vector<TextPair> concat(std::vector<TextPair> a, const std::vector<TextPair>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::vector<TextPair> split_origins(const CipherTask& task, std::size_t src_n, std::size_t tgt_n, std::uint64_t stream) {
    std::vector<TextPair> out;
    if (src_n) out = task.synth_parallel(src_n, Origin::SrcOriginal, stream);
    if (tgt_n) out = concat(std::move(out), task.synth_parallel(tgt_n, Origin::TgtOriginal, stream + 1));
    return out;
}

std::vector<TokenSeq> encode_mono(const Vocab& v, const std::vector<Words>& m) {
    std::vector<TokenSeq> out;
    out.reserve(m.size());
    for (const auto& s : m) out.push_back(v.encode(s));
    return out;
}

std::vector<Words> decode_mono(const Vocab& v, const std::vector<TokenSeq>& m) {
    std::vector<Words> out;
    out.reserve(m.size());
    for (const auto& s : m) out.push_back(v.decode(s));
    return out;
}

void fill_digests(DataBundle& d) {
    d.freqs = target_word_frequencies(d.bitext, d.vocab);
    d.digests = {{"bitext", corpus_digest(d.bitext)}, {"valid", corpus_digest(d.valid)},
                 {"test", corpus_digest(d.test)},     {"mono_src", mono_digest(d.mono_src)},
                 {"mono_tgt", mono_digest(d.mono_tgt)}, {"mono_bt", mono_digest(d.mono_bt)}};
}

}  // namespace

DataBundle generate_data(const ExperimentConfig& cfg) {
    const CipherTask task(cfg.task);
    const DataConfig& dc = cfg.data;
    const auto bitext = split_origins(task, dc.bitext / 2, dc.bitext - dc.bitext / 2, 1);
    const auto valid = split_origins(task, dc.valid / 2, dc.valid - dc.valid / 2, 3);
    const auto test = split_origins(task, dc.test_src_original, dc.test_tgt_original, 5);
    const auto mono_src = task.synth_monolingual(dc.mono_pretrain, Side::Source, 7);
    const auto mono_tgt = task.synth_monolingual(dc.mono_pretrain, Side::Target, 8);
    const auto mono_bt = task.synth_monolingual(dc.mono_bt, Side::Target, 9);

    std::vector<Words> all;
    for (const auto& p : bitext) {
        all.push_back(p.src);
        all.push_back(p.tgt);
    }
    for (const auto* m : {&mono_src, &mono_tgt, &mono_bt}) all.insert(all.end(), m->begin(), m->end());

    DataBundle d;
    d.vocab = Vocab::build(all, dc.min_freq);
    d.bitext = encode_pairs(d.vocab, bitext);
    d.valid = encode_pairs(d.vocab, valid);
    d.test = encode_pairs(d.vocab, test);
    d.mono_src = encode_mono(d.vocab, mono_src);
    d.mono_tgt = encode_mono(d.vocab, mono_tgt);
    d.mono_bt = encode_mono(d.vocab, mono_bt);
    fill_digests(d);
    return d;
}

void save_data(const fs::path& dir, const DataBundle& d) {
    fs::create_directories(dir);
    d.vocab.save(dir / "vocab.tsv");
    write_parallel(dir / "bitext", d.bitext, d.vocab);
    write_parallel(dir / "valid", d.valid, d.vocab);
    write_parallel(dir / "test", d.test, d.vocab);
    write_monolingual(dir / "mono_pretrain.src", decode_mono(d.vocab, d.mono_src));
    write_monolingual(dir / "mono_pretrain.tgt", decode_mono(d.vocab, d.mono_tgt));
    write_monolingual(dir / "mono_bt.tgt", decode_mono(d.vocab, d.mono_bt));
    json dg = d.digests;
    write_text_file(dir / "digests.json", dg.dump(2) + "\n");
}

DataBundle load_data(const fs::path& dir) {
    DataBundle d;
    d.vocab = Vocab::load(dir / "vocab.tsv");
    d.bitext = read_parallel(dir / "bitext", d.vocab);
    d.valid = read_parallel(dir / "valid", d.vocab);
    d.test = read_parallel(dir / "test", d.vocab);
    d.mono_src = encode_mono(d.vocab, read_monolingual(dir / "mono_pretrain.src"));
    d.mono_tgt = encode_mono(d.vocab, read_monolingual(dir / "mono_pretrain.tgt"));
    d.mono_bt = encode_mono(d.vocab, read_monolingual(dir / "mono_bt.tgt"));
    fill_digests(d);
    return d;
}

// ---------------------------------------------------------------------------
// jobs

std::string InitSpec::label() const {
    switch (kind) {
        case Kind::Scratch: return "scratch";
        case Kind::Pretrained: return "pretrained:" + mask.label();
        case Kind::Vanilla: return "vanilla";
    }
    return "?";
}

std::string_view train_data_name(TrainData d) {
    switch (d) {
        case TrainData::Bitext: return "bitext";
        case TrainData::BitextBt: return "bitext+bt";
        case TrainData::BitextTaggedBt: return "bitext+tagged_bt";
        case TrainData::Reverse: return "reverse_bitext";
    }
    return "?";
}

JobSpec vanilla_job() { return {"vanilla", {}, TrainData::Bitext, {}, false}; }

JobSpec pt_probe_job(InitMask mask) {
    if (!mask.encoder && !mask.decoder) return vanilla_job();
    return {"pt-" + mask.label(), {InitSpec::Kind::Pretrained, mask}, TrainData::Bitext, {}, false};
}

JobSpec bt_probe_job(std::string_view label) {
    const FreezeMask freeze = FreezeMask::from_update_label(label);
    if (label == "NN") return vanilla_job();
    return {"bt-probe-" + std::string(label), {InitSpec::Kind::Vanilla, {}}, TrainData::BitextBt, freeze, true};
}

const std::vector<std::string>& matrix_systems() {
    static const std::vector<std::string> s{"Vanilla", "+PT", "+BT", "+BT+PT", "+Tagged BT", "+Tagged BT+PT"};
    return s;
}

JobSpec matrix_job(std::string_view system) {
    const InitSpec pt{InitSpec::Kind::Pretrained, {true, true}};
    if (system == "Vanilla") return vanilla_job();
    if (system == "+PT") return pt_probe_job({true, true});
    if (system == "+BT") return {"bt", {}, TrainData::BitextBt, {}, false};
    if (system == "+BT+PT") return {"bt-pt", pt, TrainData::BitextBt, {}, false};
    if (system == "+Tagged BT") return {"tagged-bt", {}, TrainData::BitextTaggedBt, {}, false};
    if (system == "+Tagged BT+PT") return {"tagged-bt-pt", pt, TrainData::BitextTaggedBt, {}, false};
    throw HarnessError("unknown system '" + std::string(system) + "'");
}

namespace {

JobSpec reverse_job() { return {"reverse", {}, TrainData::Reverse, {}, false}; }

std::string freeze_label(const FreezeMask& m) {
    std::string s;
    for (ParamGroup g : m.frozen) s += (s.empty() ? "" : ",") + std::string(group_name(g));
    return s.empty() ? "-" : s;
}

std::vector<std::string> all_param_names(const Model& m) {
    std::vector<std::string> out;
    for (const auto& [k, _] : m.params()) out.push_back(k);
    return out;
}

std::vector<std::string> frozen_param_names(const Model& m, const FreezeMask& mask) {
    std::vector<std::string> out;
    for (ParamGroup g : mask.frozen) {
        auto names = m.group_params(g);
        out.insert(out.end(), names.begin(), names.end());
    }
    return out;
}

// A cached artifact is valid only if its manifest carries the same key.
std::optional<RunManifest> cached_manifest(const fs::path& dir, const std::string& key) {
    const fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) return std::nullopt;
    RunManifest m = RunManifest::load(p);
    if (m.config_hash != key) return std::nullopt;
    return m;
}

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fixed(double v, int digits = 1) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

Corpus noised_corpus(const std::vector<TokenSeq>& a, Origin oa, const std::vector<TokenSeq>& b, Origin ob,
                     const NoiseConfig& noise, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Corpus out;
    out.reserve(a.size() + b.size());
    for (const auto& s : a) {
        DenoiseExample e = apply_denoise_noise(s, noise, rng);
        out.emplace_back(std::move(e.noised), std::move(e.target), oa);
    }
    for (const auto& s : b) {
        DenoiseExample e = apply_denoise_noise(s, noise, rng);
        out.emplace_back(std::move(e.noised), std::move(e.target), ob);
    }
    return out;
}

}  // namespace

Workspace::Workspace(fs::path root, ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    dir_ = root / ("run-" + cfg_.hash().substr(0, 16));
    fs::create_directories(dir_);
    const fs::path cfg_path = dir_ / "config.json";
    const std::string text = cfg_.artifact_json().dump(2) + "\n";
    if (fs::exists(cfg_path)) {
        if (read_text_file(cfg_path) != text)
            throw HarnessError(dir_.string() + " holds a different config; refusing to mix runs");
    } else {
        write_text_file(cfg_path, text);
    }
}

const DataBundle& Workspace::data() {
    if (data_) return *data_;
    const fs::path d = dir_ / "data";
    if (fs::exists(d / "digests.json")) {
        data_ = load_data(d);
        const json want = json::parse(read_text_file(d / "digests.json"));
        if (json(data_->digests) != want) throw HarnessError("data under " + d.string() + " does not match its digests");
    } else {
        log_info("generating synthetic data");
        data_ = generate_data(cfg_);
        save_data(d, *data_);
    }
    return *data_;
}

ModelConfig Workspace::model_config() {
    ModelConfig m = cfg_.model;
    m.src_vocab_size = m.tgt_vocab_size = data().vocab.size();
    return m;
}

fs::path Workspace::job_dir(const std::string& name, std::uint64_t seed) const {
    return dir_ / "jobs" / name / ("seed" + std::to_string(seed));
}

PretrainResult Workspace::pretrained(std::uint64_t seed) {
    const DataBundle& d = data();
    const ModelConfig mc = model_config();
    TrainConfig tc = cfg_.pretrain;
    tc.seed = seed;
    const json job_cfg = {{"kind", "pretrain"},
                          {"model", to_json(mc)},
                          {"noise", noise_json(cfg_.noise)},
                          {"train", to_json(tc)},
                          {"inputs", {{"mono_src", d.digests.at("mono_src")}, {"mono_tgt", d.digests.at("mono_tgt")}, {"valid", d.digests.at("valid")}}}};
    const std::string key = json_hash(job_cfg);
    const fs::path dir = job_dir("pretrain", seed);

    PretrainResult out;
    if (auto m = cached_manifest(dir, key)) {
        out.checkpoint = load_checkpoint(dir / "model.ckpt");
        if (checkpoint_digest(out.checkpoint) != m->outputs.at("model"))
            throw HarnessError("checkpoint under " + dir.string() + " does not match its manifest");
        out.untrained_ppl = m->metrics.at("untrained_ppl").get<double>();
        out.pretrained_ppl = m->metrics.at("pretrained_ppl").get<double>();
        out.manifest = *m;
        return out;
    }

    log_info("pretraining seed " + std::to_string(seed));
    Timer timer;
    const std::uint64_t noise_seed = derive_seed(seed, "noise");
    std::vector<TokenSeq> vsrc, vtgt;
    for (const auto& p : d.valid) {
        vsrc.push_back(p.src);
        vtgt.push_back(p.tgt);
    }
    const Corpus valid = noised_corpus(vsrc, Origin::SrcOriginal, vtgt, Origin::TgtOriginal, cfg_.noise,
                                       derive_seed(noise_seed, "valid"));
    auto epoch_corpus = [&](std::uint64_t epoch) {
        return noised_corpus(d.mono_src, Origin::SrcOriginal, d.mono_tgt, Origin::TgtOriginal, cfg_.noise,
                             derive_seed(noise_seed, epoch + 1));
    };
    const Model init = build_model(mc, derive_seed(seed, "pretrain"));
    out.untrained_ppl = validation_perplexity(init, valid);
    TrainHooks hooks;
    hooks.epoch_corpus = epoch_corpus;
    TrainResult r = train(init, epoch_corpus(0), valid, tc, {}, hooks);
    out.pretrained_ppl = r.best_valid_ppl;
    out.checkpoint = to_checkpoint(r.best, {"pretrained", seed, r.best_step});
    save_checkpoint(dir / "model.ckpt", out.checkpoint);
    write_text_file(dir / "train_log.tsv", r.log.to_tsv());

    RunManifest m;
    m.kind = "pretrain";
    m.seed = seed;
    m.config_hash = key;
    m.config = job_cfg;
    m.inputs = {{"mono_src", d.digests.at("mono_src")}, {"mono_tgt", d.digests.at("mono_tgt")}};
    m.outputs = {{"model", checkpoint_digest(out.checkpoint)}};
    m.metrics = {{"untrained_ppl", out.untrained_ppl},
                 {"pretrained_ppl", out.pretrained_ppl},
                 {"best_step", r.best_step},
                 {"steps", r.steps}};
    m.save(dir / "manifest.json");
    out.manifest = m;
    log_info("pretrained seed " + std::to_string(seed) + ": denoising ppl " + fixed(out.untrained_ppl, 2) + " -> " +
             fixed(out.pretrained_ppl, 2) + " (" + fixed(timer.seconds()) + "s)");
    return out;
}

Corpus Workspace::training_corpus(TrainData which, std::uint64_t seed) {
    const DataBundle& d = data();
    switch (which) {
        case TrainData::Bitext: return d.bitext;
        case TrainData::BitextBt: return mix_corpora(d.bitext, back_translations(seed), false);
        case TrainData::BitextTaggedBt: return mix_corpora(d.bitext, back_translations(seed), true);
        case TrainData::Reverse: return reverse_pairs(d.bitext);
    }
    throw HarnessError("unknown training data");
}

std::string Workspace::job_key(const JobSpec& spec, std::uint64_t seed) {
    TrainConfig tc = spec.finetune ? cfg_.finetune : cfg_.train;
    tc.seed = seed;
    json init = {{"kind", spec.init.label()}};
    if (spec.init.kind == InitSpec::Kind::Pretrained) init["upstream"] = pretrained(seed).manifest.config_hash;
    if (spec.init.kind == InitSpec::Kind::Vanilla) init["upstream"] = job_key(vanilla_job(), seed);
    const Corpus corpus = training_corpus(spec.data, seed);
    return json_hash({{"kind", "train"},
                      {"name", spec.name},
                      {"init", init},
                      {"data", train_data_name(spec.data)},
                      {"corpus", corpus_digest(corpus)},
                      {"valid", data().digests.at("valid")},
                      {"freeze", freeze_label(spec.freeze)},
                      {"model", to_json(model_config())},
                      {"train", to_json(tc)}});
}

TrainedModel Workspace::job(const JobSpec& spec, std::uint64_t seed) {
    const std::string key = job_key(spec, seed);
    const fs::path dir = job_dir(spec.name, seed);
    if (auto m = cached_manifest(dir, key)) {
        const Checkpoint ck = load_checkpoint(dir / "model.ckpt");
        if (checkpoint_digest(ck) != m->outputs.at("model"))
            throw HarnessError("checkpoint under " + dir.string() + " does not match its manifest");
        return {model_from_checkpoint(ck, model_config()), *m};
    }

    const ModelConfig mc = model_config();
    const std::uint64_t model_seed = derive_seed(seed, spec.data == TrainData::Reverse ? "reverse" : "model");
    Model init = [&] {
        switch (spec.init.kind) {
            case InitSpec::Kind::Scratch: return build_model(mc, model_seed);
            case InitSpec::Kind::Pretrained:
                return selective_init(build_model(mc, model_seed), pretrained(seed).checkpoint, spec.init.mask, model_seed);
            case InitSpec::Kind::Vanilla: return job(vanilla_job(), seed).model;
        }
        throw HarnessError("unknown init");
    }();
    const Corpus corpus = training_corpus(spec.data, seed);
    const Corpus valid = spec.data == TrainData::Reverse ? reverse_pairs(data().valid) : data().valid;
    TrainConfig tc = spec.finetune ? cfg_.finetune : cfg_.train;
    tc.seed = seed;

    log_info("training " + spec.name + " seed " + std::to_string(seed) + " on " + std::string(train_data_name(spec.data)) +
             " (" + std::to_string(corpus.size()) + " pairs, init " + spec.init.label() + ", frozen " +
             freeze_label(spec.freeze) + ")");
    Timer timer;
    TrainResult r = train(init, corpus, valid, tc, spec.freeze);
    const Checkpoint ck = to_checkpoint(r.best, {"trained", seed, r.best_step});
    save_checkpoint(dir / "model.ckpt", ck);
    write_text_file(dir / "train_log.tsv", r.log.to_tsv());

    const auto frozen = frozen_param_names(init, spec.freeze);
    const auto all = all_param_names(init);
    RunManifest m;
    m.kind = "train";
    m.seed = seed;
    m.config_hash = key;
    m.config = {{"name", spec.name},
                {"init", spec.init.label()},
                {"data", train_data_name(spec.data)},
                {"freeze", freeze_label(spec.freeze)},
                {"model", to_json(mc)},
                {"train", to_json(tc)}};
    m.inputs = {{"train_corpus", corpus_digest(corpus)},
                {"valid", corpus_digest(valid)},
                {"init_params", params_digest(init, all)}};
    m.outputs = {{"model", checkpoint_digest(ck)}};
    m.metrics = {{"best_valid_ppl", r.best_valid_ppl},
                 {"best_step", r.best_step},
                 {"steps", r.steps},
                 {"initial_valid_ppl", validation_perplexity(init, valid)}};
    if (!frozen.empty()) {
        m.metrics["frozen_params_digest"] = params_digest(r.best, frozen);
        m.metrics["frozen_params_unchanged"] = params_digest(r.best, frozen) == params_digest(init, frozen);
    }
    m.save(dir / "manifest.json");
    log_info("trained " + spec.name + " seed " + std::to_string(seed) + ": valid ppl " + fixed(r.best_valid_ppl, 3) +
             " at step " + std::to_string(r.best_step) + " (" + fixed(timer.seconds()) + "s)");
    return {r.best, m};
}

const Corpus& Workspace::back_translations(std::uint64_t seed) {
    if (auto it = bt_.find(seed); it != bt_.end()) return it->second;
    const DataBundle& d = data();
    const std::string rkey = job_key(reverse_job(), seed);
    const json cfg = {{"kind", "backtranslate"},
                      {"reverse_model", rkey},
                      {"beam", to_json(cfg_.beam)},
                      {"mono_bt", d.digests.at("mono_bt")},
                      {"decoding", "beam"}};
    const std::string key = json_hash(cfg);
    const fs::path dir = job_dir("backtranslate", seed);
    if (auto m = cached_manifest(dir, key)) {
        Corpus c = read_parallel(dir / "bt", d.vocab);
        if (corpus_digest(c) != m->outputs.at("bt_corpus"))
            throw HarnessError("back-translations under " + dir.string() + " do not match their manifest");
        return bt_.emplace(seed, std::move(c)).first->second;
    }
    const TrainedModel reverse = job(reverse_job(), seed);
    log_info("back-translating " + std::to_string(d.mono_bt.size()) + " sentences, seed " + std::to_string(seed));
    Timer timer;
    BackTranslation bt = back_translate(reverse.model, d.mono_bt, cfg_.beam, false);
    write_parallel(dir / "bt", bt.pairs, d.vocab);
    write_decode_meta(dir / "bt.meta", bt.hypotheses);
    std::size_t truncated = 0;
    for (const auto& h : bt.hypotheses) truncated += h.truncated;
    // what the files hold is what later runs will read back
    Corpus c = read_parallel(dir / "bt", d.vocab);
    RunManifest m;
    m.kind = "backtranslate";
    m.seed = seed;
    m.config_hash = key;
    m.config = cfg;
    m.inputs = {{"mono_bt", d.digests.at("mono_bt")}, {"reverse_model", reverse.manifest.outputs.at("model")}};
    m.outputs = {{"bt_corpus", corpus_digest(c)}};
    m.metrics = {{"sentences", c.size()}, {"truncated", truncated}};
    m.save(dir / "manifest.json");
    log_info("back-translated seed " + std::to_string(seed) + " (" + fixed(timer.seconds()) + "s, " +
             std::to_string(truncated) + " truncated)");
    return bt_.emplace(seed, std::move(c)).first->second;
}

EvalReport Workspace::evaluate_job(const JobSpec& spec, std::uint64_t seed) {
    const DataBundle& d = data();
    const json cfg = {{"kind", "evaluate"},
                      {"model", job_key(spec, seed)},
                      {"beam", to_json(cfg_.beam)},
                      {"eval", eval_json(cfg_.eval)},
                      {"test", d.digests.at("test")}};
    const std::string key = json_hash(cfg);
    const fs::path dir = job_dir(spec.name, seed) / "eval";
    if (auto m = cached_manifest(dir, key)) return EvalReport::from_json(json::parse(read_text_file(dir / "report.json")));

    const TrainedModel tm = job(spec, seed);
    std::vector<TokenSeq> sources;
    std::vector<Words> refs;
    std::vector<Origin> origins;
    for (const auto& p : d.test) {
        sources.push_back(p.src);
        refs.push_back(d.vocab.decode(p.tgt));
        origins.push_back(p.origin());
    }
    Timer timer;
    const auto hyps = beam_search(tm.model, sources, cfg_.beam);
    std::vector<Words> hyp_words;
    std::vector<std::string> lines;
    for (const auto& h : hyps) {
        hyp_words.push_back(d.vocab.decode(h.output()));
        lines.push_back(join_words(hyp_words.back()));
    }
    write_lines(dir / "hyps.txt", lines);
    write_decode_meta(dir / "hyps.meta", hyps);
    BleuConfig bc;
    bc.max_n = cfg_.eval.bleu_max_n;
    EvalReport r = evaluate(hyp_words, refs, origins, d.freqs, bc, FreqBuckets{cfg_.eval.freq_threshold});
    r.provenance["system"] = spec.name;
    r.provenance["seed"] = std::to_string(seed);
    r.provenance["frequencies"] = "genuine bitext, target side";
    r.provenance["model"] = tm.manifest.outputs.at("model");
    const std::string text = r.to_json().dump(2) + "\n";
    write_text_file(dir / "report.json", text);

    RunManifest m;
    m.kind = "evaluate";
    m.seed = seed;
    m.config_hash = key;
    m.config = cfg;
    m.inputs = {{"model", tm.manifest.outputs.at("model")}, {"test", d.digests.at("test")}};
    m.outputs = {{"report", sha256_hex(text)}, {"hypotheses", file_digest(dir / "hyps.txt")}};
    m.metrics = r.to_json();
    m.save(dir / "manifest.json");
    log_info("evaluated " + spec.name + " seed " + std::to_string(seed) + ": BLEU " + fixed(r.bleu, 2) + " TER " +
             fixed(r.ter, 2));
    return r;
}

std::vector<Words> Workspace::test_hypotheses(const JobSpec& spec, std::uint64_t seed) {
    evaluate_job(spec, seed);
    std::vector<Words> out;
    for (const auto& l : read_lines(job_dir(spec.name, seed) / "eval" / "hyps.txt")) out.push_back(split_words(l));
    return out;
}

// ---------------------------------------------------------------------------
// reports

namespace {

const std::vector<std::string> kMasks{"NN", "NY", "YN", "YY"};

std::vector<Cell> ref(std::initializer_list<double> v, bool on) {
    std::vector<Cell> out;
    for (double x : v) out.push_back(on ? Cell{x} : Cell{});
    return out;
}

}  // namespace

PretrainResult run_pretrain(Workspace& ws, std::uint64_t seed) { return ws.pretrained(seed); }

ReportTable run_pt_probe(Workspace& ws) {
    const bool on = ws.config().references;
    const std::map<std::string, double> published{{"NN", 33.7}, {"NY", 33.5}, {"YN", 36.9}, {"YY", 37.7}};
    ReportTable t;
    t.title = "PT probe: encoder/decoder initialised from the denoising model (Y) or at random (N), trained on bitext";
    t.columns = {"BLEU"};
    t.baseline = "NN";
    for (const auto& label : kMasks) {
        ReportRow row;
        row.label = label;
        row.reference = ref({published.at(label)}, on);
        t.rows.push_back(row);
    }
    for (std::uint64_t seed : ws.config().seeds) {
        ws.pretrained(seed);
        for (auto& row : t.rows)
            row.per_seed[seed] = {ws.evaluate_job(pt_probe_job(InitMask::parse(row.label)), seed).bleu};
    }
    return t;
}

ReportTable run_bt_probe(Workspace& ws) {
    const bool on = ws.config().references;
    const std::map<std::string, double> published{{"NN", 33.7}, {"NY", 37.8}, {"YN", 35.8}, {"YY", 38.3}};
    ReportTable t;
    t.title = "BT probe: vanilla model fine-tuned on bitext+BT with the encoder/decoder updated (Y) or frozen (N)";
    t.columns = {"BLEU"};
    t.baseline = "NN";
    for (const auto& label : kMasks) {
        ReportRow row;
        row.label = label;
        row.reference = ref({published.at(label)}, on);
        t.rows.push_back(row);
    }
    for (std::uint64_t seed : ws.config().seeds)
        for (auto& row : t.rows) row.per_seed[seed] = {ws.evaluate_job(bt_probe_job(row.label), seed).bleu};
    return t;
}

ReportTable run_main_matrix(Workspace& ws) {
    const bool on = ws.config().references;
    const std::map<std::string, std::pair<double, double>> published{{"Vanilla", {33.7, 48.6}}, {"+PT", {37.7, 45.0}},
                                                                 {"+BT", {38.4, 45.0}},     {"+BT+PT", {41.2, 42.6}},
                                                                 {"+Tagged BT", {38.6, 44.9}},
                                                                 {"+Tagged BT+PT", {41.6, 42.1}}};
    ReportTable t;
    t.title = "Main matrix: PT, BT and tagged BT alone and combined";
    t.columns = {"BLEU", "TER"};
    t.baseline = "Vanilla";
    for (const auto& s : matrix_systems()) {
        ReportRow row;
        row.label = s;
        row.reference = ref({published.at(s).first, published.at(s).second}, on);
        t.rows.push_back(row);
    }
    for (std::uint64_t seed : ws.config().seeds)
        for (auto& row : t.rows) {
            const EvalReport r = ws.evaluate_job(matrix_job(row.label), seed);
            row.per_seed[seed] = {r.bleu, r.ter};
        }
    return t;
}

std::pair<ReportTable, ReportTable> analysis_tables(const std::vector<std::string>& systems,
                                                    const std::map<std::string, std::map<std::uint64_t, EvalReport>>& reports,
                                                    bool on) {
    ReportTable origin;
    origin.title = "BLEU on source-original (Src) and target-original (Tgt) test sentences";
    origin.columns = {"All", "Src", "Tgt"};
    ReportTable freq;
    freq.title = "Word f-measure (x100) by training frequency: Low < threshold <= High";
    freq.columns = {"All", "Low", "High"};
    for (const auto& s : systems) {
        ReportRow o, f;
        o.label = f.label = s;
        if (s == "+Tagged BT+PT") {
            o.reference = ref({41.6, 34.8, 48.7}, on);
            f.reference = ref({68.3, 61.8, 69.1}, on);
        }
        for (const auto& [seed, r] : reports.at(s)) {
            o.per_seed[seed] = {r.per_origin.all, r.per_origin.src, r.per_origin.tgt};
            auto f1 = [&](Bucket b) -> Cell {
                auto it = r.fmeasure.find(b);
                if (it == r.fmeasure.end() || (it->second.hyp_count == 0 && it->second.ref_count == 0)) return {};
                return 100.0 * it->second.f1;
            };
            f.per_seed[seed] = {f1(Bucket::All), f1(Bucket::Low), f1(Bucket::High)};
        }
        origin.rows.push_back(o);
        freq.rows.push_back(f);
    }
    return {origin, freq};
}

std::pair<ReportTable, ReportTable> run_analysis(Workspace& ws) {
    std::map<std::string, std::map<std::uint64_t, EvalReport>> reports;
    for (const auto& s : matrix_systems())
        for (std::uint64_t seed : ws.config().seeds) reports[s][seed] = ws.evaluate_job(matrix_job(s), seed);
    return analysis_tables(matrix_systems(), reports, ws.config().references);
}

}  // namespace ptbt
