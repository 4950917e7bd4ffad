#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "emgfed/algorithms.hpp"
#include "emgfed/decoder.hpp"
#include "emgfed/session.hpp"
#include "emgfed/trajectory.hpp"

namespace emgfed {

// Deterministic stand-in for a human subject: an error-driven intent signal
// pushed through a nonnegative intent-to-muscle map. This is the largest
// modelling extrapolation in the artifact, so alternative user models only
// need to replace this struct and user_emit/user_adapt.
struct SimulatedUser {
    Eigen::MatrixXd encoder;   // channels x 2, nonnegative
    Eigen::VectorXd baseline;  // channels, nonnegative tonic activity
    double noise_scale = 0.05;
    double gain = 1.0;        // gap-closing gain: intent = gain * (r - y)
    double adapt_rate = 0.0;  // 0 disables co-adaptation
    std::uint64_t seed = 0;

    void validate() const;
};

// s_t = max(0, encoder * intent + baseline + noise_scale * gaussian), with
// intent = gain * (r_t - y_t).
Eigen::VectorXd user_emit(const SimulatedUser& user, const Eigen::Vector2d& reference,
                          const Eigen::Vector2d& cursor, Rng& rng);

// Mismatch between what the decoder reads back and what the user intended,
// summed over a recent window: sum_t |w (E i_t + baseline) - i_t|^2.
double encoder_mismatch_objective(const Eigen::MatrixXd& encoder, const Eigen::VectorXd& baseline,
                                  const Decoder& decoder, const std::vector<Eigen::Vector2d>& intents);
Eigen::MatrixXd encoder_mismatch_gradient(const Eigen::MatrixXd& encoder,
                                          const Eigen::VectorXd& baseline, const Decoder& decoder,
                                          const std::vector<Eigen::Vector2d>& intents);

struct AdaptWindow {
    const Decoder& decoder;
    const std::vector<Eigen::Vector2d>& intents;
    const Eigen::MatrixXd& emissions;  // kept for interface completeness
};

// One co-adaptation step: encoder <- clip+(encoder - adapt_rate * grad);
// adapt_rate = 0 returns the user unchanged.
SimulatedUser user_adapt(const SimulatedUser& user, const AdaptWindow& window);

enum class TrialInit { Random01, OpenLoopGlobal, PretrainedLocal };

std::string to_string(TrialInit init);
TrialInit parse_trial_init(const std::string& name);

struct TrialConfig {
    int n_updates = 15;
    double update_seconds = 20.0;
    int batches_per_update = 6;
    int rounds_per_update = 40;
    Algorithm algorithm = Algorithm::Local;
    TrialInit initialization = TrialInit::Random01;
    SmoothBatchRate smoothbatch{0.75};
    CostParams cost;
    double maml_inner_rate = 1.0;
    double maml_outer_rate = 0.25;
    ReferenceSpec reference;  // duration is derived from n_updates * update_seconds
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrialTrace {
    std::vector<Decoder> decoder_snapshots;  // initial + one per update
    std::vector<StreamedUpdate> updates;     // recorded envelope + trajectories
    std::vector<VelocityError> update_errors;  // decoder in effect during the update
    std::vector<Eigen::MatrixXd> encoder_snapshots;
    std::vector<Decoder> uploaded_locals;  // pre-merge locals (SequentialPerFedAvg)
    Decoder final_decoder;
    Decoder final_global;  // meaningful for SequentialPerFedAvg
    TrialConfig config;
};

// Simulates one closed-loop trial: per tick emit -> decode -> integrate; per
// update the decoder trains according to cfg.algorithm (Static never touches
// it) and the user co-adapts between updates. `global` is required for
// SequentialPerFedAvg and ignored otherwise.
TrialTrace run_trial(const SimulatedUser& user, const TrialConfig& cfg, const Decoder& initial,
                     const Decoder* global = nullptr);

}  // namespace emgfed
