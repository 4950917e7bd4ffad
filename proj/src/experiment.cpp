#include "emgfed/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "emgfed/errors.hpp"
#include "emgfed/textio.hpp"

namespace fs = std::filesystem;

namespace emgfed {

namespace {

struct ConfigKey {
    const char* name;
    const char* doc;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

int to_int(const std::string& v) { return std::stoi(v); }
double to_double(const std::string& v) { return std::stod(v); }
std::uint64_t to_u64(const std::string& v) { return std::stoull(v); }
bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected a boolean, got '" + v + "'");
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"seed", "root seed; all stage streams derive from it",
         [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        {"out", "artifact output directory",
         [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
         [](const ExperimentConfig& c) { return c.out_dir; }},
        {"workers", "worker threads; results are identical for any count",
         [](ExperimentConfig& c, const std::string& v) { c.workers = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.workers); }},
        {"subjects", "synthetic cohort size for the open-loop study",
         [](ExperimentConfig& c, const std::string& v) { c.subjects = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.subjects); }},
        {"channels", "EMG channel count",
         [](ExperimentConfig& c, const std::string& v) { c.user.channels = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.user.channels); }},
        {"updates", "streamed updates generated per subject (before exclusion)",
         [](ExperimentConfig& c, const std::string& v) { c.updates = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.updates); }},
        {"exclude_first", "initial updates dropped from each synthesized session",
         [](ExperimentConfig& c, const std::string& v) { c.exclude_first = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.exclude_first); }},
        {"update_seconds", "seconds of data per streamed update",
         [](ExperimentConfig& c, const std::string& v) { c.user.update_seconds = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.user.update_seconds); }},
        {"rate_hz", "envelope/trajectory sample rate",
         [](ExperimentConfig& c, const std::string& v) { c.reference.rate = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.reference.rate); }},
        {"cm_per_unit", "display scale from screen units to cm",
         [](ExperimentConfig& c, const std::string& v) { c.cm_per_unit = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.cm_per_unit); }},
        {"ref.amplitude", "per-sinusoid reference amplitude (screen units)",
         [](ExperimentConfig& c, const std::string& v) { c.reference.amplitude = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.reference.amplitude); }},
        {"ref.freq_x1", "first horizontal frequency (Hz)",
         [](ExperimentConfig& c, const std::string& v) { c.reference.freqs_x[0] = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.reference.freqs_x[0]); }},
        {"ref.freq_x2", "second horizontal frequency (Hz)",
         [](ExperimentConfig& c, const std::string& v) { c.reference.freqs_x[1] = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.reference.freqs_x[1]); }},
        {"ref.freq_y1", "first vertical frequency (Hz)",
         [](ExperimentConfig& c, const std::string& v) { c.reference.freqs_y[0] = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.reference.freqs_y[0]); }},
        {"ref.freq_y2", "second vertical frequency (Hz)",
         [](ExperimentConfig& c, const std::string& v) { c.reference.freqs_y[1] = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.reference.freqs_y[1]); }},
        {"user.mode", "session generator: replay | static-encoder",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "replay") c.user.mode = GeneratorMode::Replay;
             else if (v == "static-encoder") c.user.mode = GeneratorMode::StaticEncoder;
             else throw ConfigError("user.mode must be 'replay' or 'static-encoder'");
         },
         [](const ExperimentConfig& c) {
             return std::string(c.user.mode == GeneratorMode::Replay ? "replay" : "static-encoder");
         }},
        {"user.encoder_scale", "base intent-to-muscle map scale",
         [](ExperimentConfig& c, const std::string& v) { c.user.encoder_scale = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.user.encoder_scale); }},
        {"user.rotation_spread", "per-subject intent-plane rotation, U(-x, x) radians",
         [](ExperimentConfig& c, const std::string& v) { c.user.rotation_spread = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.user.rotation_spread); }},
        {"user.mask_keep_prob", "per-channel keep probability of the subject mask",
         [](ExperimentConfig& c, const std::string& v) { c.user.mask_keep_prob = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.user.mask_keep_prob); }},
        {"user.baseline_scale", "tonic channel activity scale",
         [](ExperimentConfig& c, const std::string& v) { c.user.baseline_scale = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.user.baseline_scale); }},
        {"user.noise_scale", "gaussian envelope noise (open-loop cohort)",
         [](ExperimentConfig& c, const std::string& v) { c.user.noise_scale = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.user.noise_scale); }},
        {"user.gain", "gap-closing intent gain",
         [](ExperimentConfig& c, const std::string& v) { c.user.gain = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.user.gain); }},
        {"user.adapt_rate", "co-adaptation rate during replay collection",
         [](ExperimentConfig& c, const std::string& v) { c.user.adapt_rate = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.user.adapt_rate); }},
        {"cost.lambda_e", "velocity-error weight of the decoder cost",
         [](ExperimentConfig& c, const std::string& v) { c.cost.lambda_e = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.cost.lambda_e); }},
        {"cost.lambda_w", "L2 weight penalty of the decoder cost",
         [](ExperimentConfig& c, const std::string& v) { c.cost.lambda_w = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.cost.lambda_w); }},
        {"fed.rounds", "global training rounds",
         [](ExperimentConfig& c, const std::string& v) { c.fed.rounds = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.fed.rounds); }},
        {"fed.client_fraction", "fraction of clients sampled per round",
         [](ExperimentConfig& c, const std::string& v) { c.fed.client_fraction = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.fed.client_fraction); }},
        {"fed.local_steps", "gradient steps per selected client per round",
         [](ExperimentConfig& c, const std::string& v) { c.fed.local_steps = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.fed.local_steps); }},
        {"fed.sgd_step_size", "FedAvg client SGD step size",
         [](ExperimentConfig& c, const std::string& v) { c.fed.sgd_step_size = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.fed.sgd_step_size); }},
        {"fed.maml_inner_rate", "Per-FedAvg inner (adaptation) step size",
         [](ExperimentConfig& c, const std::string& v) { c.fed.maml_inner_rate = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.fed.maml_inner_rate); }},
        {"fed.maml_outer_rate", "Per-FedAvg outer (meta) step size",
         [](ExperimentConfig& c, const std::string& v) { c.fed.maml_outer_rate = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.fed.maml_outer_rate); }},
        {"fed.smoothbatch", "SmoothBatch alpha for Local fits and sequential merges",
         [](ExperimentConfig& c, const std::string& v) { c.fed.smoothbatch.alpha = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.fed.smoothbatch.alpha); }},
        {"fed.aggregation", "uniform | data_size",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "uniform") c.fed.aggregation = AggregationWeights::Uniform;
             else if (v == "data_size") c.fed.aggregation = AggregationWeights::DataSize;
             else throw ConfigError("fed.aggregation must be 'uniform' or 'data_size'");
         },
         [](const ExperimentConfig& c) {
             return std::string(c.fed.aggregation == AggregationWeights::Uniform ? "uniform"
                                                                                 : "data_size");
         }},
        {"fed.batches_per_update", "contiguous mini-batches per update (open loop)",
         [](ExperimentConfig& c, const std::string& v) { c.fed.batches_per_update = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.fed.batches_per_update); }},
        {"fed.participations_per_advance",
         "participations before a client's update cursor advances",
         [](ExperimentConfig& c, const std::string& v) {
             c.fed.participations_per_advance = to_int(v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.fed.participations_per_advance); }},
        {"fed.personalize_steps", "post-run personalization gradient steps (Per-FedAvg)",
         [](ExperimentConfig& c, const std::string& v) { c.fed.personalize_steps = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.fed.personalize_steps); }},
        {"folds.k", "cross-validation fold count",
         [](ExperimentConfig& c, const std::string& v) { c.folds_k = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.folds_k); }},
        {"closed.subjects", "simulated users in the closed-loop study",
         [](ExperimentConfig& c, const std::string& v) { c.closed_subjects = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.closed_subjects); }},
        {"closed.updates", "streamed updates per closed-loop trial",
         [](ExperimentConfig& c, const std::string& v) { c.closed_updates = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.closed_updates); }},
        {"closed.batches_per_update", "mini-batches per update in closed-loop training",
         [](ExperimentConfig& c, const std::string& v) { c.closed_batches_per_update = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.closed_batches_per_update); }},
        {"closed.rounds_per_update", "training rounds per streamed update",
         [](ExperimentConfig& c, const std::string& v) { c.closed_rounds_per_update = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.closed_rounds_per_update); }},
        {"closed.smoothbatch", "global<->local merge rate (and Local fit rate) in trials",
         [](ExperimentConfig& c, const std::string& v) { c.closed_smoothbatch.alpha = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.closed_smoothbatch.alpha); }},
        {"closed.maml_inner_rate", "trial Per-FedAvg inner step size",
         [](ExperimentConfig& c, const std::string& v) { c.closed_maml_inner_rate = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.closed_maml_inner_rate); }},
        {"closed.maml_outer_rate", "trial Per-FedAvg outer step size",
         [](ExperimentConfig& c, const std::string& v) { c.closed_maml_outer_rate = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.closed_maml_outer_rate); }},
        {"closed.noise_scale", "closed-loop user envelope noise",
         [](ExperimentConfig& c, const std::string& v) { c.closed_noise_scale = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.closed_noise_scale); }},
        {"closed.adapt_rate", "closed-loop user co-adaptation rate",
         [](ExperimentConfig& c, const std::string& v) { c.closed_adapt_rate = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.closed_adapt_rate); }},
        {"closed.save_sessions", "also write full trial session CSVs (large)",
         [](ExperimentConfig& c, const std::string& v) { c.closed_save_sessions = to_bool(v); },
         [](const ExperimentConfig& c) {
             return std::string(c.closed_save_sessions ? "true" : "false");
         }},
        {"attack.snapshots", "final decoder snapshots per subject fed to the attack",
         [](ExperimentConfig& c, const std::string& v) { c.attack_snapshots = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.attack_snapshots); }},
        {"attack.reg", "hinge classifier L2 regularization",
         [](ExperimentConfig& c, const std::string& v) { c.attack_reg = to_double(v); },
         [](const ExperimentConfig& c) { return fmt17(c.attack_reg); }},
        {"attack.epochs", "full-batch subgradient epochs",
         [](ExperimentConfig& c, const std::string& v) { c.attack_epochs = to_int(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.attack_epochs); }},
    };
    return keys;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

void ensure_dir(const std::string& path) { fs::create_directories(path); }

std::string subject_file(int subject_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "subject_%03d.csv", subject_id);
    return buf;
}

std::string snap_file(const char* prefix, int subject_id, int index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03d_snap_%04d.csv", prefix, subject_id, index);
    return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (subjects < 1) throw ConfigError("subjects must be >= 1");
    if (updates < 1) throw ConfigError("updates must be >= 1");
    if (exclude_first < 0 || exclude_first >= updates)
        throw ConfigError("exclude_first must lie in [0, updates)");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (folds_k < 2) throw ConfigError("folds.k must be >= 2");
    if (closed_subjects < 1 || closed_updates < 1)
        throw ConfigError("closed-loop subject/update counts must be >= 1");
    if (attack_snapshots < 1) throw ConfigError("attack.snapshots must be >= 1");
    if (!(cost.lambda_e >= 0.0) || !(cost.lambda_w >= 0.0) ||
        (cost.lambda_e == 0.0 && cost.lambda_w == 0.0))
        throw ConfigError("cost weights must be nonnegative and not both zero");
    fed.validate();
}

void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : config_keys()) {
        if (key == k.name) {
            try {
                k.set(cfg, value);
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw ConfigError("bad value for '" + key + "': " + e.what());
            }
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    ExperimentConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string config_keys_help() {
    std::ostringstream out;
    ExperimentConfig defaults;
    for (const auto& k : config_keys())
        out << "  " << k.name << " (default " << k.get(defaults) << ")\n      " << k.doc << "\n";
    return out.str();
}

std::string config_echo(const ExperimentConfig& cfg) {
    std::ostringstream out;
    for (const auto& k : config_keys()) out << k.name << " = " << k.get(cfg) << "\n";
    return out.str();
}

std::vector<SubjectSession> synth_cohort(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<SubjectSession> cohort(cfg.subjects);
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (int k = next.fetch_add(1); k < cfg.subjects; k = next.fetch_add(1)) {
            try {
                const SubjectSession full = synthesize_session(
                    k, cfg.user, cfg.reference, cfg.updates, derive_seed(cfg.seed, "cohort"));
                cohort[k] = trim_session(full, cfg.exclude_first);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    if (cfg.workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < std::min(cfg.workers, cfg.subjects); ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    return cohort;
}

std::vector<SubjectSession> build_training_sessions(const std::vector<SubjectSession>& cohort,
                                                    const FoldPlan& plan, int fold) {
    std::vector<SubjectSession> train;
    if (plan.scenario == Scenario::IntraSubject) {
        const auto& held_out = plan.update_folds.at(fold);
        for (const auto& session : cohort) {
            SubjectSession s;
            s.subject_id = session.subject_id;
            s.seed = session.seed;
            s.generator_tag = session.generator_tag;
            for (int j = 0; j < session.n_updates(); ++j)
                if (std::find(held_out.begin(), held_out.end(), j) == held_out.end())
                    s.updates.push_back(session.updates[j]);
            train.push_back(std::move(s));
        }
    } else {
        const auto& held_out = plan.subject_folds.at(fold);
        for (const auto& session : cohort)
            if (std::find(held_out.begin(), held_out.end(), session.subject_id) == held_out.end())
                train.push_back(session);
    }
    return train;
}

void save_decoder_snapshot(const std::string& path, const Decoder& d, int subject_id,
                           const std::string& algorithm, int update_index, int round) {
    std::ofstream out(path);
    if (!out) throw FormatError("save_decoder_snapshot: cannot open '" + path + "'");
    out << "subject_id,algorithm,update_index,round\n";
    out << subject_id << ',' << algorithm << ',' << update_index << ',' << round << "\n";
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < d.channels(); ++c) {
            if (c) out << ',';
            out << fmt17(d.weights(r, c));
        }
        out << "\n";
    }
}

DecoderSnapshot load_decoder_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_decoder_snapshot: cannot open '" + path + "'");
    std::string header, manifest, row0, row1;
    if (!std::getline(in, header) || !std::getline(in, manifest) || !std::getline(in, row0) ||
        !std::getline(in, row1))
        throw FormatError("load_decoder_snapshot: truncated file '" + path + "'");

    DecoderSnapshot snap;
    {
        std::stringstream ss(manifest);
        std::string field;
        std::getline(ss, field, ',');
        snap.subject_id = std::stoi(field);
        std::getline(ss, snap.algorithm, ',');
        std::getline(ss, field, ',');
        snap.update_index = std::stoi(field);
        std::getline(ss, field, ',');
        snap.round = std::stoi(field);
    }
    auto parse_row = [&](const std::string& line) {
        std::vector<double> values;
        std::stringstream ss(line);
        std::string token;
        while (std::getline(ss, token, ',')) values.push_back(std::stod(token));
        return values;
    };
    const auto r0 = parse_row(row0);
    const auto r1 = parse_row(row1);
    if (r0.size() != r1.size() || r0.empty())
        throw FormatError("load_decoder_snapshot: malformed weight rows in '" + path + "'");
    snap.decoder.weights.resize(2, static_cast<Eigen::Index>(r0.size()));
    for (std::size_t c = 0; c < r0.size(); ++c) {
        snap.decoder.weights(0, static_cast<Eigen::Index>(c)) = r0[c];
        snap.decoder.weights(1, static_cast<Eigen::Index>(c)) = r1[c];
    }
    return snap;
}

LoadedRun load_run_snapshots(const std::string& snapshots_dir) {
    if (!fs::is_directory(snapshots_dir))
        throw DataError("missing snapshot directory '" + snapshots_dir + "'");
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(snapshots_dir))
        if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());

    LoadedRun run;
    for (const auto& name : names) {
        const std::string path = snapshots_dir + "/" + name;
        if (name.rfind("client_", 0) == 0) {
            const DecoderSnapshot snap = load_decoder_snapshot(path);
            run.per_subject[snap.subject_id].push_back(snap.decoder);
        } else if (name.rfind("personalized_", 0) == 0) {
            const DecoderSnapshot snap = load_decoder_snapshot(path);
            run.personalized[snap.subject_id].push_back(snap.decoder);
        } else if (name == "global_final.csv") {
            run.global_final = load_decoder_snapshot(path).decoder;
            run.has_global = true;
        } else if (name.rfind("global_", 0) == 0) {
            run.global_history.push_back(load_decoder_snapshot(path).decoder);
        }
    }
    for (const auto& [subject, seq] : run.per_subject) {
        (void)seq;
        run.subject_ids.push_back(subject);
    }
    if (run.per_subject.empty() && !run.has_global)
        throw DataError("no decoder snapshots found under '" + snapshots_dir + "'");
    return run;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_metrics_csv: cannot open '" + path + "'");
    out << "round,client_id,update_idx,cost,vel_err_weighted,vel_err_rms,dist_to_final\n";
    for (const auto& r : rows)
        out << r.round << ',' << r.client_id << ',' << r.update_idx << ',' << fmt17(r.cost) << ','
            << fmt17(r.vel_err_weighted) << ',' << fmt17(r.vel_err_rms) << ','
            << fmt17(r.dist_to_final) << "\n";
}

// ---------------------------------------------------------------------------
// pipeline stages
// ---------------------------------------------------------------------------

void cmd_synth(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<SubjectSession> cohort = synth_cohort(cfg);
    const std::string dir = cfg.out_dir + "/sessions";
    ensure_dir(dir);
    for (const auto& session : cohort)
        save_session(dir + "/" + subject_file(session.subject_id), session);
    std::ofstream manifest(dir + "/manifest.txt");
    manifest << "stage = synth\n" << config_echo(cfg);
    std::cout << "synth: wrote " << cohort.size() << " sessions ("
              << cohort.front().n_updates() << " updates each) to " << dir << "\n";
}

namespace {

std::vector<SubjectSession> load_cohort(const ExperimentConfig& cfg) {
    const std::string dir = cfg.out_dir + "/sessions";
    if (!fs::is_directory(dir))
        throw DataError("missing sessions under '" + dir + "'; run the synth stage first");
    std::vector<SubjectSession> cohort;
    for (int k = 0; k < cfg.subjects; ++k) {
        const std::string path = dir + "/" + subject_file(k);
        if (!fs::exists(path)) throw DataError("missing session file '" + path + "'");
        cohort.push_back(load_session(path));
    }
    return cohort;
}

struct OpenLoopCondition {
    Algorithm algorithm;
    Scenario scenario;
    std::string name;  // e.g. "fedavg_intra"
};

std::vector<OpenLoopCondition> open_loop_conditions() {
    std::vector<OpenLoopCondition> out;
    const std::pair<Algorithm, const char*> algs[] = {{Algorithm::Local, "local"},
                                                      {Algorithm::FedAvg, "fedavg"},
                                                      {Algorithm::PerFedAvg, "perfedavg"}};
    const std::pair<Scenario, const char*> scens[] = {{Scenario::IntraSubject, "intra"},
                                                      {Scenario::CrossSubject, "cross"}};
    for (const auto& [alg, alg_name] : algs)
        for (const auto& [scen, scen_name] : scens)
            out.push_back({alg, scen, std::string(alg_name) + "_" + scen_name});
    return out;
}

void write_run_snapshots(const std::string& dir, const RunArtifacts& art,
                         const std::string& algorithm) {
    ensure_dir(dir);
    for (std::size_t k = 0; k < art.subject_ids.size(); ++k) {
        const int subject = art.subject_ids[k];
        const auto& seq = art.client_snapshots[k];
        for (std::size_t i = 0; i < seq.size(); ++i)
            save_decoder_snapshot(dir + "/" + snap_file("client", subject, static_cast<int>(i)),
                                  seq[i], subject, algorithm, static_cast<int>(i), 0);
        if (k < art.client_personalized.size()) {
            const auto& pers = art.client_personalized[k];
            for (std::size_t i = 0; i < pers.size(); ++i)
                save_decoder_snapshot(
                    dir + "/" + snap_file("personalized", subject, static_cast<int>(i)), pers[i],
                    subject, algorithm + "-personalized", static_cast<int>(i), 0);
        }
    }
    if (!art.global_history.empty()) {
        const int n = static_cast<int>(art.global_history.size());
        const int stride = std::max(1, n / 100);
        for (int i = 0; i < n; i += stride) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "global_%05d.csv", i);
            save_decoder_snapshot(dir + "/" + buf, art.global_history[i], -1, algorithm, 0, i);
        }
        save_decoder_snapshot(dir + "/global_final.csv", art.global_history.back(), -1, algorithm,
                              0, n - 1);
    }
}

}  // namespace

void cmd_open_loop(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<SubjectSession> cohort = load_cohort(cfg);
    const std::string base = cfg.out_dir + "/open_loop";
    ensure_dir(base);

    std::vector<SummaryRow> summary;
    int cond_idx = 0;
    for (const auto& cond : open_loop_conditions()) {
        const FoldPlan plan =
            make_folds(cohort, cond.scenario, cfg.folds_k,
                       derive_seed(cfg.seed, "fold-plan",
                                   cond.scenario == Scenario::IntraSubject ? 0 : 1));
        for (int fold = 0; fold < plan.k; ++fold) {
            FedConfig fed = cfg.fed;
            fed.algorithm = cond.algorithm;
            fed.seed = derive_seed(cfg.seed, "open-loop-run", static_cast<std::uint64_t>(cond_idx),
                                   static_cast<std::uint64_t>(fold));
            const std::vector<SubjectSession> train = build_training_sessions(cohort, plan, fold);
            const RunArtifacts art = run_open_loop(fed, train, cfg.cost, cfg.workers);

            const std::string fold_dir = base + "/" + cond.name + "/fold_" + std::to_string(fold);
            ensure_dir(fold_dir);
            write_metrics_csv(fold_dir + "/metrics.csv", art.metrics);
            std::ofstream manifest(fold_dir + "/run_manifest.txt");
            manifest << "stage = open-loop\ncondition = " << cond.name << "\nfold = " << fold
                     << "\nrun_seed = " << fed.seed << "\n"
                     << config_echo(cfg);
            if (fold == 0) write_run_snapshots(fold_dir + "/snapshots", art, to_string(cond.algorithm));

            const auto rows = summarize(to_string(cond.algorithm), cond.scenario, fold, plan, art,
                                        cohort, cfg.cost);
            summary.insert(summary.end(), rows.begin(), rows.end());
        }
        ++cond_idx;
        std::cout << "open-loop: finished " << cond.name << " (" << plan.k << " folds)\n";
    }

    std::ofstream out(base + "/summary.csv");
    out << "algorithm,scenario,fold,subject,vel_err_weighted,vel_err_rms\n";
    for (const auto& r : summary)
        out << r.algorithm << ',' << to_string(r.scenario) << ',' << r.fold << ',' << r.subject
            << ',' << fmt17(r.vel_err_weighted) << ',' << fmt17(r.vel_err_rms) << "\n";
    std::cout << "open-loop: wrote " << summary.size() << " summary rows to " << base
              << "/summary.csv\n";
}

namespace {

struct ClosedLoopCondition {
    Algorithm algorithm;
    TrialInit init;
    std::string name;
};

std::vector<ClosedLoopCondition> closed_loop_conditions() {
    return {
        {Algorithm::Local, TrialInit::Random01, "local_random01"},
        {Algorithm::Local, TrialInit::OpenLoopGlobal, "local_openloopglobal"},
        {Algorithm::Local, TrialInit::PretrainedLocal, "local_pretrainedlocal"},
        {Algorithm::SequentialPerFedAvg, TrialInit::Random01, "seqperfedavg_random01"},
        {Algorithm::SequentialPerFedAvg, TrialInit::OpenLoopGlobal, "seqperfedavg_openloopglobal"},
        {Algorithm::Static, TrialInit::PretrainedLocal, "static_pretrainedlocal"},
    };
}

TrialConfig make_trial_config(const ExperimentConfig& cfg, Algorithm algorithm, TrialInit init,
                              std::uint64_t trial_seed) {
    TrialConfig trial;
    trial.n_updates = cfg.closed_updates;
    trial.update_seconds = cfg.user.update_seconds;
    trial.batches_per_update = cfg.closed_batches_per_update;
    trial.rounds_per_update = cfg.closed_rounds_per_update;
    trial.algorithm = algorithm;
    trial.initialization = init;
    trial.smoothbatch = cfg.closed_smoothbatch;
    trial.cost = cfg.cost;
    trial.maml_inner_rate = cfg.closed_maml_inner_rate;
    trial.maml_outer_rate = cfg.closed_maml_outer_rate;
    trial.reference = cfg.reference;
    trial.seed = trial_seed;
    return trial;
}

}  // namespace

void cmd_closed_loop(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string base = cfg.out_dir + "/closed_loop";
    ensure_dir(base);

    SubjectModelParams user_params = cfg.user;
    user_params.noise_scale = cfg.closed_noise_scale;
    user_params.adapt_rate = cfg.closed_adapt_rate;
    const std::uint64_t cohort_seed = derive_seed(cfg.seed, "closed-cohort");

    std::vector<SimulatedUser> users;
    for (int k = 0; k < cfg.closed_subjects; ++k)
        users.push_back(make_subject_user(k, user_params, cohort_seed));

    Rng shared_init_rng(derive_seed(cfg.seed, "closed-random-init"));
    const Decoder random_init = Decoder::random01(cfg.user.channels, shared_init_rng);

    Decoder open_loop_global;
    bool have_open_loop_global = false;
    const std::string global_path =
        cfg.out_dir + "/open_loop/perfedavg_intra/fold_0/snapshots/global_final.csv";
    if (fs::exists(global_path)) {
        open_loop_global = load_decoder_snapshot(global_path).decoder;
        have_open_loop_global = true;
    }

    // pretraining pass: one Local trial per subject provides the
    // subject-specific decoders for the Static (and pretrained-Local) runs
    std::vector<Decoder> pretrained(cfg.closed_subjects, random_init);
    {
        std::atomic<int> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        auto work = [&] {
            for (int k = next.fetch_add(1); k < cfg.closed_subjects; k = next.fetch_add(1)) {
                try {
                    const TrialConfig trial =
                        make_trial_config(cfg, Algorithm::Local, TrialInit::Random01,
                                          derive_seed(cfg.seed, "closed-pretrain",
                                                      static_cast<std::uint64_t>(k)));
                    pretrained[k] = run_trial(users[k], trial, random_init).final_decoder;
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        };
        if (cfg.workers <= 1) {
            work();
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < std::min(cfg.workers, cfg.closed_subjects); ++w)
                pool.emplace_back(work);
            for (auto& t : pool) t.join();
        }
        if (error) std::rethrow_exception(error);
    }

    int cond_idx = 0;
    for (const auto& cond : closed_loop_conditions()) {
        if (cond.init == TrialInit::OpenLoopGlobal && !have_open_loop_global)
            throw DataError("closed-loop: initialization OpenLoopGlobal requires '" + global_path +
                            "'; run the open-loop stage first");

        const std::string cond_dir = base + "/" + cond.name;
        ensure_dir(cond_dir + "/snapshots");

        Decoder global = cond.init == TrialInit::OpenLoopGlobal ? open_loop_global : random_init;
        std::vector<MetricRow> rows;
        std::vector<TrialTrace> traces;
        for (int k = 0; k < cfg.closed_subjects; ++k) {
            const TrialConfig trial = make_trial_config(
                cfg, cond.algorithm, cond.init,
                derive_seed(cfg.seed, "closed-trial", static_cast<std::uint64_t>(cond_idx),
                            static_cast<std::uint64_t>(k)));
            Decoder initial = random_init;
            if (cond.init == TrialInit::PretrainedLocal) initial = pretrained[k];
            else if (cond.algorithm == Algorithm::SequentialPerFedAvg) initial = global;
            else if (cond.init == TrialInit::OpenLoopGlobal) initial = open_loop_global;

            TrialTrace trace =
                run_trial(users[k], trial, initial,
                          cond.algorithm == Algorithm::SequentialPerFedAvg ? &global : nullptr);
            if (cond.algorithm == Algorithm::SequentialPerFedAvg) global = trace.final_global;

            for (int j = 0; j < trial.n_updates; ++j) {
                const VelocityError& ve = trace.update_errors[j];
                rows.push_back({j, k, j,
                                cost_only(trace.decoder_snapshots[j], trace.updates[j], cfg.cost),
                                ve.weighted, ve.rms_units_per_s,
                                decoder_distance(trace.decoder_snapshots[j + 1],
                                                 trace.decoder_snapshots.back())});
            }
            for (std::size_t i = 0; i < trace.decoder_snapshots.size(); ++i)
                save_decoder_snapshot(
                    cond_dir + "/snapshots/" + snap_file("client", k, static_cast<int>(i)),
                    trace.decoder_snapshots[i], k, to_string(cond.algorithm),
                    static_cast<int>(i) - 1, 0);
            if (cfg.closed_save_sessions) {
                SubjectSession recorded;
                recorded.subject_id = k;
                recorded.seed = trial.seed;
                recorded.generator_tag = "closed-loop-trace";
                recorded.updates = trace.updates;
                save_session(cond_dir + "/" + subject_file(k), recorded);
            }
            traces.push_back(std::move(trace));
        }
        std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
            return std::tie(a.client_id, a.update_idx) < std::tie(b.client_id, b.update_idx);
        });
        write_metrics_csv(cond_dir + "/metrics.csv", rows);
        std::ofstream manifest(cond_dir + "/run_manifest.txt");
        manifest << "stage = closed-loop\ncondition = " << cond.name << "\n" << config_echo(cfg);
        std::cout << "closed-loop: finished " << cond.name << " (" << cfg.closed_subjects
                  << " subjects)\n";
        ++cond_idx;
    }
}

namespace {

SnapshotDataset dataset_from_sequences(const std::map<int, std::vector<Decoder>>& per_subject,
                                       int n) {
    SnapshotDataset ds;
    ds.per_subject = n;
    std::vector<std::pair<int, const std::vector<Decoder>*>> subjects;
    for (const auto& [subject, seq] : per_subject) subjects.emplace_back(subject, &seq);
    if (subjects.empty()) throw DataError("attack: no subjects in snapshot set");
    const auto dim = static_cast<Eigen::Index>(2 * subjects.front().second->front().channels());
    ds.features.resize(static_cast<Eigen::Index>(subjects.size()) * n, dim);
    Eigen::Index row = 0;
    for (const auto& [subject, seq] : subjects) {
        if (static_cast<int>(seq->size()) < n)
            throw DataError("attack: subject " + std::to_string(subject) + " has only " +
                            std::to_string(seq->size()) + " snapshots, need " + std::to_string(n));
        for (std::size_t i = seq->size() - n; i < seq->size(); ++i) {
            ds.features.row(row++) = flatten_decoder((*seq)[i]).transpose();
            ds.labels.push_back(subject);
        }
    }
    ds.validate();
    return ds;
}

SnapshotDataset global_copy_dataset(const Decoder& global, const std::vector<int>& subjects, int n) {
    SnapshotDataset ds;
    ds.per_subject = n;
    const auto dim = static_cast<Eigen::Index>(2 * global.channels());
    ds.features.resize(static_cast<Eigen::Index>(subjects.size()) * n, dim);
    Eigen::Index row = 0;
    for (int subject : subjects)
        for (int i = 0; i < n; ++i) {
            ds.features.row(row++) = flatten_decoder(global).transpose();
            ds.labels.push_back(subject);
        }
    ds.validate();
    return ds;
}

}  // namespace

void cmd_attack(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string out_dir = cfg.out_dir + "/attack";
    ensure_dir(out_dir);

    struct Job {
        std::string condition;
        SnapshotDataset dataset;
    };
    std::vector<Job> jobs;

    for (const auto& cond : open_loop_conditions()) {
        const std::string snap_dir =
            cfg.out_dir + "/open_loop/" + cond.name + "/fold_0/snapshots";
        if (!fs::is_directory(snap_dir)) continue;
        const LoadedRun run = load_run_snapshots(snap_dir);
        if (cond.algorithm == Algorithm::Local) {
            jobs.push_back({"open_" + cond.name,
                            dataset_from_sequences(run.per_subject, cfg.attack_snapshots)});
        } else {
            jobs.push_back({"open_" + cond.name + "_uploads",
                            dataset_from_sequences(run.per_subject, cfg.attack_snapshots)});
            if (run.has_global)
                jobs.push_back({"open_" + cond.name + "_global",
                                global_copy_dataset(run.global_final, run.subject_ids,
                                                    cfg.attack_snapshots)});
            if (!run.personalized.empty())
                jobs.push_back({"open_" + cond.name + "_personalized",
                                dataset_from_sequences(run.personalized, cfg.attack_snapshots)});
        }
    }
    for (const auto& cond : closed_loop_conditions()) {
        const std::string snap_dir = cfg.out_dir + "/closed_loop/" + cond.name + "/snapshots";
        if (!fs::is_directory(snap_dir)) continue;
        const LoadedRun run = load_run_snapshots(snap_dir);
        jobs.push_back({"closed_" + cond.name,
                        dataset_from_sequences(run.per_subject, cfg.attack_snapshots)});
    }
    if (jobs.empty())
        throw DataError("attack: no snapshot directories found under '" + cfg.out_dir +
                        "'; run open-loop/closed-loop first");

    // shuffled-label control: permuting the label vector keeps per-subject
    // counts intact while destroying any feature-label association
    for (const auto& job : jobs) {
        if (job.condition == "open_local_intra") {
            SnapshotDataset shuffled = job.dataset;
            Rng rng(derive_seed(cfg.seed, "label-shuffle"));
            rng.shuffle(shuffled.labels);
            jobs.push_back({"control_shuffled_labels", std::move(shuffled)});
            break;
        }
    }

    std::ofstream summary(out_dir + "/summary.csv");
    summary << "condition,mean_accuracy,n_subjects,chance\n";
    for (const auto& job : jobs) {
        PrivacyReport report = loocv_attack(job.dataset, cfg.attack_reg, cfg.attack_epochs,
                                            derive_seed(cfg.seed, "attack"), cfg.workers);
        report.condition = job.condition;
        save_privacy_report(out_dir + "/" + job.condition + ".csv", report);
        summary << job.condition << ',' << fmt17(report.mean_accuracy) << ','
                << report.per_subject.size() << ','
                << fmt17(1.0 / static_cast<double>(report.per_subject.size())) << "\n";
        std::cout << "attack: " << job.condition << " mean accuracy " << report.mean_accuracy
                  << "\n";
    }
}

void cmd_analyze(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string out_dir = cfg.out_dir + "/analysis";
    ensure_dir(out_dir);

    struct ConditionRun {
        std::string name;
        LoadedRun run;
    };
    std::vector<ConditionRun> runs;
    for (const auto& cond : open_loop_conditions()) {
        const std::string dir = cfg.out_dir + "/open_loop/" + cond.name + "/fold_0/snapshots";
        if (fs::is_directory(dir)) runs.push_back({"open_" + cond.name, load_run_snapshots(dir)});
    }
    for (const auto& cond : closed_loop_conditions()) {
        const std::string dir = cfg.out_dir + "/closed_loop/" + cond.name + "/snapshots";
        if (fs::is_directory(dir)) runs.push_back({"closed_" + cond.name, load_run_snapshots(dir)});
    }
    if (runs.empty())
        throw DataError("analyze: no snapshot directories found under '" + cfg.out_dir +
                        "'; run open-loop/closed-loop first");

    std::ofstream conv(out_dir + "/convergence.csv");
    conv << "condition,subject,index,dist\n";
    std::ofstream pca(out_dir + "/pca.csv");
    pca << "condition,subject,index,pc1,pc2\n";

    for (const auto& cr : runs) {
        for (const auto& [subject, seq] : cr.run.per_subject) {
            const std::vector<double> dist = distance_to_final(seq);
            for (std::size_t i = 0; i < dist.size(); ++i)
                conv << cr.name << ',' << subject << ',' << i << ',' << fmt17(dist[i]) << "\n";
        }
        if (!cr.run.global_history.empty()) {
            const std::vector<double> dist = distance_to_final(cr.run.global_history);
            for (std::size_t i = 0; i < dist.size(); ++i)
                conv << cr.name << ",-1," << i << ',' << fmt17(dist[i]) << "\n";
        }

        std::vector<Decoder> pooled;
        std::vector<std::pair<int, int>> owner;  // (subject, index within subject)
        for (const auto& [subject, seq] : cr.run.per_subject)
            for (std::size_t i = 0; i < seq.size(); ++i) {
                pooled.push_back(seq[i]);
                owner.emplace_back(subject, static_cast<int>(i));
            }
        if (pooled.size() >= 3) {
            const PcaResult proj = pca_project(pooled, 2);
            for (std::size_t i = 0; i < pooled.size(); ++i)
                pca << cr.name << ',' << owner[i].first << ',' << owner[i].second << ','
                    << fmt17(proj.projections(static_cast<Eigen::Index>(i), 0)) << ','
                    << fmt17(proj.projections(static_cast<Eigen::Index>(i), 1)) << "\n";
        }
    }
    std::cout << "analyze: wrote convergence.csv and pca.csv for " << runs.size()
              << " conditions\n";
}

void cmd_all(const ExperimentConfig& cfg) {
    cmd_synth(cfg);
    cmd_open_loop(cfg);
    cmd_closed_loop(cfg);
    cmd_attack(cfg);
    cmd_analyze(cfg);
}

}  // namespace emgfed
