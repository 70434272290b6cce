#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disbench/confounds.hpp"
#include "disbench/evalkit.hpp"
#include "disbench/trainer.hpp"

namespace disbench {

enum class ConfoundKind { stroke, notch };

struct ExperimentConfig {
    // [dataset]
    size_t train_m = 4000;     // confounded training-set size
    size_t test_count = 1000;  // held-out pool feeding the test distributions
    uint64_t seed = 7;
    ConfoundKind confound = ConfoundKind::stroke;
    double train_p = 0.95;
    // [train]
    int batch = 128;
    double lr = 1e-3;
    double weight_decay = 1e-5;
    int max_epochs = 60;
    int patience = 10;
    int mine_inner = 5;
    int mine_hidden = 64;
    Arch arch = Arch::conv3;
    int latent = 4;
    int d1 = 2;
    // [methods]
    std::vector<std::string> methods = {"erm",  "rebal",      "advcl", "advcl_rebal",
                                        "dcor", "dcor_rebal", "mine",  "mine_rebal",
                                        "mmd",  "mmd_rebal"};
    double lambda_advcl = 1.0;
    double lambda_dcor = 1.0;
    double lambda_mine = 0.1;
    double lambda_mmd = 1.0;
    // [eval]
    int knn_k = 30;
    int folds = 5;
    // [sweep]
    std::vector<double> prevalences = {0.70, 0.85, 0.90, 0.93, 0.95, 0.98};
    // [notch]
    NotchSpec notch{};
    // [output]
    std::string out_dir = "out";
};

// INI-style parser: sections, key=value, '#' comments. Unknown keys and
// out-of-range values raise ConfigError naming the field; `required` keys
// ("section.key") must appear in the text.
ExperimentConfig parse_config(const std::string& text,
                              const std::vector<std::string>& required = {});
ExperimentConfig load_config_file(const std::string& path,
                                  const std::vector<std::string>& required = {});
std::string serialize_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);  // fnv1a-64 hex of the canonical form

// Binary tensor container: magic "DTEN", version byte 1, dtype byte
// (1=float32, 2=uint8), u32-LE dim count, u32-LE dims, row-major
// little-endian payload.
struct TensorData {
    uint8_t dtype = 1;
    std::vector<uint32_t> dims;
    std::vector<float> f32;
    std::vector<uint8_t> u8;

    size_t element_count() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};
void write_tensor(const std::string& path, const TensorData& t);
TensorData read_tensor(const std::string& path);

struct Dataset {
    std::vector<LabeledImage> train_pool;
    std::vector<LabeledImage> test_pool;
};

// <dir>/pixels.dten (N x H x W float32) + <dir>/manifest.csv
// (id,y1,y2,group,split; LF endings, header row).
void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

// Materializes the raw pools for the config (sized for the largest prevalence
// on the grid) and writes them under <out>/data. Byte-identical re-runs.
void gen_data(const ExperimentConfig& cfg);

// Deterministic per-prevalence materialization shared by train and eval.
struct PreparedData {
    std::vector<LabeledImage> train_set;  // confounded at the given prevalence
    SplitPlan folds;
    std::vector<LabeledImage> test_original;
    std::vector<LabeledImage> test_balanced;
    std::vector<LabeledImage> test_inverted;
};
PreparedData prepare_data(const ExperimentConfig& cfg, const Dataset& ds, double prevalence);

struct FoldReport {
    int fold = 0;
    double auroc_original = 0.0, auroc_balanced = 0.0, auroc_inverted = 0.0;  // percent
    ConfusionMatrix2x2 confusion;
    double dominance = 0.5;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double seconds = 0.0;
    bool failed = false;
    std::string error;
};

struct RunRecord {
    std::string config_hash;
    std::string method;
    double prevalence = 0.0;
    std::vector<FoldReport> folds;
    std::string started_at, finished_at;  // wall-clock; excluded from determinism checks
};

std::string run_record_json(const RunRecord& r);
RunRecord run_record_from_json(const std::string& line);
void write_records_jsonl(const std::string& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_records_jsonl(const std::string& path);

// <run_dir>/record.json for one run; collect_records prefers
// <out>/records.jsonl and falls back to scanning runs/*/record.json.
void write_run_record(const ExperimentConfig& cfg, const RunRecord& r);
std::vector<RunRecord> collect_records(const ExperimentConfig& cfg);

// Trains all folds of one method at one prevalence; writes checkpoints and
// per-fold history under <out>/runs/<method>_p<prevalence>/. jobs parallelizes
// across folds only.
void train_method(const ExperimentConfig& cfg, const std::string& method, double prevalence,
                  int jobs);

// Loads the checkpoints back and produces the RunRecord (AUROC per test
// distribution, confusion on balanced, dominance, convergence figures).
RunRecord eval_method(const ExperimentConfig& cfg, const std::string& method, double prevalence);

// Full grid; writes <out>/records.jsonl and the delta-AUROC table.
std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, int jobs);

// CSV tables under <dir>: auroc.csv, confusion.csv, dominance_vs_time.csv,
// delta_auroc.csv (when several prevalences are present). Throws EmptyReport
// on an empty record set.
void render_tables(const ExperimentConfig& cfg, const std::vector<RunRecord>& records,
                   const std::string& dir);

// Tables + latent scatters + summary.json under the output directory.
void render_report(const ExperimentConfig& cfg, const std::vector<RunRecord>& records);

std::string run_dir(const ExperimentConfig& cfg, const std::string& method, double prevalence);

}  // namespace disbench
