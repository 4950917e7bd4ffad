#include "emgfed/closedloop.hpp"

#include <cmath>
#include <string>

#include "emgfed/errors.hpp"
#include "emgfed/federation.hpp"

namespace emgfed {

void SimulatedUser::validate() const {
    if (encoder.cols() != 2 || encoder.rows() < 1)
        throw ConfigError("simulated user: encoder must be channels x 2");
    if (baseline.size() != encoder.rows())
        throw ConfigError("simulated user: baseline length must match encoder rows");
    if (!encoder.allFinite() || !baseline.allFinite())
        throw ConfigError("simulated user: non-finite encoder/baseline");
    if ((encoder.array() < 0.0).any() || (baseline.array() < 0.0).any())
        throw ConfigError("simulated user: encoder and baseline must be nonnegative");
    if (!(noise_scale >= 0.0) || !(gain > 0.0) || !(adapt_rate >= 0.0))
        throw ConfigError("simulated user: bad noise/gain/adapt parameters");
}

std::string to_string(TrialInit init) {
    switch (init) {
        case TrialInit::Random01: return "Random01";
        case TrialInit::OpenLoopGlobal: return "OpenLoopGlobal";
        case TrialInit::PretrainedLocal: return "PretrainedLocal";
    }
    throw ConfigError("unknown trial init enum value");
}

TrialInit parse_trial_init(const std::string& name) {
    if (name == "Random01" || name == "random01") return TrialInit::Random01;
    if (name == "OpenLoopGlobal" || name == "open-loop-global") return TrialInit::OpenLoopGlobal;
    if (name == "PretrainedLocal" || name == "pretrained-local") return TrialInit::PretrainedLocal;
    throw ConfigError("unknown trial initialization '" + name + "'");
}

void TrialConfig::validate() const {
    if (n_updates < 1 || !(update_seconds > 0.0) || batches_per_update < 1 || rounds_per_update < 1)
        throw ConfigError("trial: counts must be positive");
    if (algorithm != Algorithm::Local && algorithm != Algorithm::SequentialPerFedAvg &&
        algorithm != Algorithm::Static)
        throw ConfigError("trial: algorithm must be Local, SequentialPerFedAvg or Static");
    if (algorithm == Algorithm::SequentialPerFedAvg && batches_per_update < 2)
        throw ConfigError("trial: SequentialPerFedAvg needs batches_per_update >= 2");
    if (!(reference.rate > 0.0)) throw ConfigError("trial: reference rate must be positive");
}

Eigen::VectorXd user_emit(const SimulatedUser& user, const Eigen::Vector2d& reference,
                          const Eigen::Vector2d& cursor, Rng& rng) {
    if (!reference.allFinite() || !cursor.allFinite())
        throw ConfigError("user_emit: non-finite reference/cursor");
    const Eigen::Vector2d intent = user.gain * (reference - cursor);
    Eigen::VectorXd s = user.encoder * intent + user.baseline;
    if (user.noise_scale > 0.0)
        for (Eigen::Index c = 0; c < s.size(); ++c) s[c] += user.noise_scale * rng.gaussian();
    else
        for (Eigen::Index c = 0; c < s.size(); ++c) rng.gaussian();  // keep the stream aligned
    return s.cwiseMax(0.0);
}

double encoder_mismatch_objective(const Eigen::MatrixXd& encoder, const Eigen::VectorXd& baseline,
                                  const Decoder& decoder, const std::vector<Eigen::Vector2d>& intents) {
    double total = 0.0;
    for (const auto& intent : intents) {
        const Eigen::Vector2d readback = decoder.weights * (encoder * intent + baseline);
        total += (readback - intent).squaredNorm();
    }
    return total;
}

Eigen::MatrixXd encoder_mismatch_gradient(const Eigen::MatrixXd& encoder,
                                          const Eigen::VectorXd& baseline, const Decoder& decoder,
                                          const std::vector<Eigen::Vector2d>& intents) {
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(encoder.rows(), encoder.cols());
    for (const auto& intent : intents) {
        const Eigen::Vector2d err = decoder.weights * (encoder * intent + baseline) - intent;
        grad += 2.0 * (decoder.weights.transpose() * err) * intent.transpose();
    }
    return grad;
}

SimulatedUser user_adapt(const SimulatedUser& user, const AdaptWindow& window) {
    if (user.adapt_rate == 0.0) return user;
    SimulatedUser next = user;
    const Eigen::MatrixXd grad =
        encoder_mismatch_gradient(user.encoder, user.baseline, window.decoder, window.intents);
    next.encoder = (user.encoder - user.adapt_rate * grad).cwiseMax(0.0);
    return next;
}

TrialTrace run_trial(const SimulatedUser& user, const TrialConfig& cfg, const Decoder& initial,
                     const Decoder* global) {
    cfg.validate();
    user.validate();
    if (initial.weights.cols() != user.encoder.rows())
        throw ConfigError("run_trial: decoder channels != user channels");
    if (cfg.algorithm == Algorithm::SequentialPerFedAvg && global == nullptr)
        throw ConfigError("run_trial: SequentialPerFedAvg needs a global decoder");

    const auto update_len = static_cast<int>(std::llround(cfg.update_seconds * cfg.reference.rate));
    if (update_len < 2) throw ConfigError("run_trial: update shorter than 2 ticks");
    const double dt = 1.0 / cfg.reference.rate;
    const int channels = static_cast<int>(user.encoder.rows());

    ReferenceSpec ref_spec = cfg.reference;
    ref_spec.duration_s = cfg.n_updates * cfg.update_seconds;
    Rng phase_rng(derive_seed(cfg.seed, "trial-reference"));
    const Trajectory reference = generate_reference(ref_spec, phase_rng);
    Rng noise_rng(derive_seed(user.seed, "user-noise", cfg.seed));

    TrialTrace trace;
    trace.config = cfg;
    trace.decoder_snapshots.push_back(initial);
    trace.encoder_snapshots.push_back(user.encoder);

    SimulatedUser live_user = user;
    Decoder w = initial;
    Decoder merged_global = global ? *global : Decoder::zeros(channels);
    Eigen::Vector2d cursor(0.0, 0.0);

    for (int j = 0; j < cfg.n_updates; ++j) {
        StreamedUpdate u;
        u.envelope.resize(channels, update_len);
        u.reference.rate = cfg.reference.rate;
        u.cursor.rate = cfg.reference.rate;
        u.dt = dt;
        std::vector<Eigen::Vector2d> intents;
        intents.reserve(update_len);

        for (int t = 0; t < update_len; ++t) {
            const Eigen::Vector2d r = reference.samples[j * update_len + t];
            const Eigen::VectorXd s = user_emit(live_user, r, cursor, noise_rng);
            intents.push_back(live_user.gain * (r - cursor));
            u.envelope.col(t) = s;
            u.reference.samples.push_back(r);
            u.cursor.samples.push_back(cursor);
            cursor += dt * predict_velocity(w, s);
        }
        trace.update_errors.push_back(velocity_error(w, u, cfg.cost));

        switch (cfg.algorithm) {
            case Algorithm::Local:
                w = smooth_batch(w, solve_optimal(u, cfg.cost), cfg.smoothbatch);
                break;
            case Algorithm::SequentialPerFedAvg: {
                const UpdateView view(u);
                Rng step_rng(derive_seed(cfg.seed, "trial-steps", static_cast<std::uint64_t>(j)));
                for (int round = 0; round < cfg.rounds_per_update; ++round)
                    w = perfedavg_client_step(w, view, cfg.cost, cfg.maml_inner_rate,
                                              cfg.maml_outer_rate, cfg.batches_per_update, step_rng);
                trace.uploaded_locals.push_back(w);
                merged_global = smooth_batch(merged_global, w, cfg.smoothbatch);
                w = merged_global;
                break;
            }
            case Algorithm::Static:
                break;
            default:
                throw ConfigError("run_trial: unsupported algorithm");
        }
        if (!w.weights.allFinite())
            throw NumericError("run_trial: decoder diverged to non-finite values at update " +
                               std::to_string(j));

        trace.decoder_snapshots.push_back(w);
        trace.updates.push_back(std::move(u));

        if (j + 1 < cfg.n_updates) {
            live_user = user_adapt(live_user, {w, intents, trace.updates.back().envelope});
            trace.encoder_snapshots.push_back(live_user.encoder);
        }
    }

    trace.final_decoder = w;
    trace.final_global = merged_global;
    return trace;
}

}  // namespace emgfed
