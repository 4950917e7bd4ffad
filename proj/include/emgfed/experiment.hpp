#pragma once

#include <map>
#include <string>
#include <vector>

#include "emgfed/analysis.hpp"
#include "emgfed/closedloop.hpp"
#include "emgfed/federation.hpp"
#include "emgfed/privacy.hpp"
#include "emgfed/synth.hpp"

namespace emgfed {

// Flat key=value experiment configuration. One root seed fans out to
// per-stage streams via derive_seed(seed, purpose, ...), so adding a stage
// never perturbs earlier ones. Unknown keys are rejected.
struct ExperimentConfig {
    std::uint64_t seed = 1905;
    std::string out_dir = "out";
    int workers = 1;

    // synthetic cohort
    int subjects = 14;
    int updates = 18;        // generated per subject, before exclusion
    int exclude_first = 2;
    double cm_per_unit = 10.0;  // display scale only

    ReferenceSpec reference;
    SubjectModelParams user;  // holds channels and update_seconds
    CostParams cost;

    // open loop
    FedConfig fed;
    int folds_k = 7;

    // closed loop
    int closed_subjects = 16;
    int closed_updates = 15;
    int closed_batches_per_update = 6;
    int closed_rounds_per_update = 40;
    SmoothBatchRate closed_smoothbatch{0.75};
    double closed_maml_inner_rate = 40.0;
    double closed_maml_outer_rate = 10.0;
    double closed_noise_scale = 0.1;
    double closed_adapt_rate = 5e-5;
    bool closed_save_sessions = false;  // full trial CSVs are large; off by default

    // linkage attack
    int attack_snapshots = 6;
    double attack_reg = 1e-2;
    int attack_epochs = 2000;

    void validate() const;
};

ExperimentConfig load_config(const std::string& path);
void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string config_keys_help();
std::string config_echo(const ExperimentConfig& cfg);

// Synthesizes the trimmed cohort in-process (the `synth` stage plus reload).
std::vector<SubjectSession> synth_cohort(const ExperimentConfig& cfg);

// Per-fold training data: intra-subject drops each subject's held-out
// updates, cross-subject drops the held-out subjects.
std::vector<SubjectSession> build_training_sessions(const std::vector<SubjectSession>& cohort,
                                                    const FoldPlan& plan, int fold);

// Decoder snapshot file: manifest line + header, then 2 rows x C columns.
void save_decoder_snapshot(const std::string& path, const Decoder& d, int subject_id,
                           const std::string& algorithm, int update_index, int round);
struct DecoderSnapshot {
    Decoder decoder;
    int subject_id = 0;
    std::string algorithm;
    int update_index = 0;
    int round = 0;
};
DecoderSnapshot load_decoder_snapshot(const std::string& path);

// Snapshot trees written by the open-/closed-loop stages, reloaded by
// `attack` and `analyze`.
struct LoadedRun {
    std::vector<int> subject_ids;                      // ascending
    std::map<int, std::vector<Decoder>> per_subject;   // snapshot sequences
    std::map<int, std::vector<Decoder>> personalized;  // may be empty
    Decoder global_final;
    bool has_global = false;
    std::vector<Decoder> global_history;  // thinned
};
LoadedRun load_run_snapshots(const std::string& snapshots_dir);

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

// Pipeline stages; each is deterministic and idempotent given (config, seed)
// and re-running overwrites byte-identically.
void cmd_synth(const ExperimentConfig& cfg);
void cmd_open_loop(const ExperimentConfig& cfg);
void cmd_closed_loop(const ExperimentConfig& cfg);
void cmd_attack(const ExperimentConfig& cfg);
void cmd_analyze(const ExperimentConfig& cfg);
void cmd_all(const ExperimentConfig& cfg);

}  // namespace emgfed
