#pragma once

// Experiment orchestration: synthetic data, denoising pre-training, the
// initialisation and freezing probes, the six-system matrix and the
// analysis tables. Every trained model and evaluation is cached under a run
// directory named by the config hash, with a manifest next to it.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptbt/data.hpp"
#include "ptbt/decode.hpp"
#include "ptbt/metrics.hpp"
#include "ptbt/model.hpp"
#include "ptbt/report.hpp"
#include "ptbt/train.hpp"

namespace ptbt {

class HarnessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::size_t bitext = 5000;  // half source-original, half target-original
    std::size_t valid = 400;
    std::size_t test_src_original = 250;
    std::size_t test_tgt_original = 250;
    std::size_t mono_pretrain = 20000;  // per side
    std::size_t mono_bt = 10000;        // target side
    std::uint64_t min_freq = 1;

    bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
    std::uint64_t freq_threshold = 50;
    std::size_t bleu_max_n = 4;

    bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
    SynthTaskSpec task;
    DataConfig data;
    // vocabulary sizes come from the data
    ModelConfig model;
    NoiseConfig noise;
    TrainConfig pretrain;
    TrainConfig train;
    TrainConfig finetune;
    BeamConfig beam;
    EvalConfig eval;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    bool references = true;

    static ExperimentConfig desk_default();
    void validate() const;
    nlohmann::json to_json() const;
    // strict: unknown keys anywhere raise ConfigError naming the key
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    // everything that shapes artifacts; seeds and references are left out so
    // one run directory serves any seed subset
    nlohmann::json artifact_json() const;
    std::string hash() const;
};

struct DataBundle {
    Vocab vocab;
    Corpus bitext;
    Corpus valid;
    Corpus test;
    std::vector<TokenSeq> mono_src;  // pre-training, source side
    std::vector<TokenSeq> mono_tgt;  // pre-training, target side
    std::vector<TokenSeq> mono_bt;   // back-translation input
    FreqTable freqs;                 // bitext target side
    std::map<std::string, std::string> digests;
};

// Deterministic in (task, data) config.
DataBundle generate_data(const ExperimentConfig& cfg);
void save_data(const std::filesystem::path& dir, const DataBundle& data);
DataBundle load_data(const std::filesystem::path& dir);

// Where a model's parameters start.
struct InitSpec {
    enum class Kind { Scratch, Pretrained, Vanilla };
    Kind kind = Kind::Scratch;
    InitMask mask;  // Pretrained only

    std::string label() const;
};

// Which corpus a model trains on.
enum class TrainData { Bitext, BitextBt, BitextTaggedBt, Reverse };
std::string_view train_data_name(TrainData d);

struct JobSpec {
    std::string name;
    InitSpec init;
    TrainData data = TrainData::Bitext;
    FreezeMask freeze;
    bool finetune = false;  // use the finetune train config
};

struct TrainedModel {
    Model model;
    RunManifest manifest;
};

struct PretrainResult {
    Checkpoint checkpoint;
    double untrained_ppl = 0.0;
    double pretrained_ppl = 0.0;
    RunManifest manifest;
};

class Workspace {
public:
    Workspace(std::filesystem::path root, ExperimentConfig cfg);

    const ExperimentConfig& config() const { return cfg_; }
    const std::filesystem::path& dir() const { return dir_; }
    const DataBundle& data();
    ModelConfig model_config();

    PretrainResult pretrained(std::uint64_t seed);
    TrainedModel job(const JobSpec& spec, std::uint64_t seed);
    // beam-decoded back-translations of mono_bt (untagged sources)
    const Corpus& back_translations(std::uint64_t seed);
    // decodes the test set and scores it; cached
    EvalReport evaluate_job(const JobSpec& spec, std::uint64_t seed);
    std::vector<Words> test_hypotheses(const JobSpec& spec, std::uint64_t seed);

    std::filesystem::path job_dir(const std::string& name, std::uint64_t seed) const;

private:
    Corpus training_corpus(TrainData d, std::uint64_t seed);
    std::string job_key(const JobSpec& spec, std::uint64_t seed);

    std::filesystem::path dir_;
    ExperimentConfig cfg_;
    std::optional<DataBundle> data_;
    std::map<std::uint64_t, Corpus> bt_;
};

// Standard jobs.
JobSpec vanilla_job();
JobSpec pt_probe_job(InitMask mask);          // NN is the vanilla job
JobSpec bt_probe_job(std::string_view label);  // NN is the vanilla job
JobSpec matrix_job(std::string_view system);
const std::vector<std::string>& matrix_systems();

PretrainResult run_pretrain(Workspace& ws, std::uint64_t seed);
ReportTable run_pt_probe(Workspace& ws);
ReportTable run_bt_probe(Workspace& ws);
ReportTable run_main_matrix(Workspace& ws);
// origin split (All/Src/Tgt BLEU) and word f-measure (All/Low/High)
std::pair<ReportTable, ReportTable> run_analysis(Workspace& ws);

// The same two tables for given hypotheses, one seed, one row per system.
std::pair<ReportTable, ReportTable> analysis_tables(const std::vector<std::string>& systems,
                                                    const std::map<std::string, std::map<std::uint64_t, EvalReport>>& reports,
                                                    bool references);

}  // namespace ptbt
