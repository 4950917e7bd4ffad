#include "emgfed/synth.hpp"

#include <cmath>

#include "emgfed/decoder.hpp"
#include "emgfed/errors.hpp"

namespace emgfed {

SimulatedUser make_subject_user(int subject_id, const SubjectModelParams& params,
                                std::uint64_t cohort_seed) {
    if (params.channels < 1) throw ConfigError("make_subject_user: channels must be >= 1");
    if (!(params.mask_keep_prob > 0.0 && params.mask_keep_prob <= 1.0))
        throw ConfigError("make_subject_user: mask_keep_prob must lie in (0, 1]");

    // shared cohort base map, identical for every subject of the cohort
    Rng base_rng(derive_seed(cohort_seed, "encoder-base"));
    Eigen::MatrixXd base(params.channels, 2);
    for (int c = 0; c < params.channels; ++c)
        for (int k = 0; k < 2; ++k)
            base(c, k) = params.encoder_scale * std::abs(base_rng.gaussian());

    Rng subj_rng(derive_seed(cohort_seed, "subject-encoder", static_cast<std::uint64_t>(subject_id)));
    const double angle = subj_rng.uniform(-params.rotation_spread, params.rotation_spread);
    Eigen::Matrix2d rotation;
    rotation << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);

    SimulatedUser user;
    user.encoder = (base * rotation).cwiseMax(0.0);
    for (int c = 0; c < params.channels; ++c)
        if (subj_rng.uniform() >= params.mask_keep_prob) user.encoder.row(c).setZero();
    user.baseline.resize(params.channels);
    for (int c = 0; c < params.channels; ++c)
        user.baseline[c] = params.baseline_scale * std::abs(subj_rng.gaussian());
    user.noise_scale = params.noise_scale;
    user.gain = params.gain;
    user.adapt_rate = params.adapt_rate;
    user.seed = derive_seed(cohort_seed, "subject-noise", static_cast<std::uint64_t>(subject_id));
    user.validate();
    return user;
}

namespace {

SubjectSession synthesize_replay(int subject_id, const SubjectModelParams& params,
                                 const ReferenceSpec& reference_spec, int n_updates,
                                 std::uint64_t seed) {
    const SimulatedUser user = make_subject_user(subject_id, params, seed);

    TrialConfig trial;
    trial.n_updates = n_updates;
    trial.update_seconds = params.update_seconds;
    trial.algorithm = Algorithm::Local;
    trial.smoothbatch = params.smoothbatch;
    trial.cost = params.cost;
    trial.reference = reference_spec;
    trial.seed = derive_seed(seed, "replay-trial", static_cast<std::uint64_t>(subject_id));

    Rng init_rng(derive_seed(seed, "replay-init", static_cast<std::uint64_t>(subject_id)));
    const Decoder initial = Decoder::random01(params.channels, init_rng);

    TrialTrace trace = run_trial(user, trial, initial);

    SubjectSession session;
    session.subject_id = subject_id;
    session.seed = seed;
    session.generator_tag = "replay-v1";
    session.updates = std::move(trace.updates);
    return session;
}

SubjectSession synthesize_static(int subject_id, const SubjectModelParams& params,
                                 const ReferenceSpec& reference_spec, int n_updates,
                                 std::uint64_t seed) {
    const SimulatedUser user = make_subject_user(subject_id, params, seed);

    ReferenceSpec spec = reference_spec;
    spec.duration_s = n_updates * params.update_seconds;
    Rng phase_rng(derive_seed(seed, "static-reference", static_cast<std::uint64_t>(subject_id)));
    const Trajectory reference = generate_reference(spec, phase_rng);
    const int total = reference.size();
    const double dt = 1.0 / spec.rate;

    // feedforward intent: the user expresses the reference velocity directly
    Trajectory cursor;
    cursor.rate = spec.rate;
    cursor.samples.assign(total, Eigen::Vector2d::Zero());
    const std::vector<Eigen::Vector2d> intents = [&] {
        auto v = target_velocity(reference, cursor, dt);
        for (auto& i : v) i *= user.gain;
        return v;
    }();

    Rng noise_rng(derive_seed(user.seed, "static-noise"));
    Eigen::MatrixXd envelope(params.channels, total);
    for (int t = 0; t < total; ++t) {
        Eigen::VectorXd s = user.encoder * intents[t] + user.baseline;
        for (int c = 0; c < params.channels; ++c) s[c] += user.noise_scale * noise_rng.gaussian();
        envelope.col(t) = s.cwiseMax(0.0);
    }

    SubjectSession session;
    session.subject_id = subject_id;
    session.seed = seed;
    session.generator_tag = "static-encoder-v1";
    session.updates = segment_updates(envelope, reference, cursor, params.update_seconds, 0);
    return session;
}

}  // namespace

SubjectSession synthesize_session(int subject_id, const SubjectModelParams& params,
                                  const ReferenceSpec& reference_spec, int n_updates,
                                  std::uint64_t seed) {
    if (n_updates < 1) throw ConfigError("synthesize_session: n_updates must be >= 1");
    return params.mode == GeneratorMode::Replay
               ? synthesize_replay(subject_id, params, reference_spec, n_updates, seed)
               : synthesize_static(subject_id, params, reference_spec, n_updates, seed);
}

SubjectSession trim_session(const SubjectSession& session, int exclude_first) {
    if (exclude_first < 0) throw ConfigError("trim_session: exclude_first must be >= 0");
    if (exclude_first >= session.n_updates())
        throw DataError("trim_session: excluding " + std::to_string(exclude_first) +
                        " updates would empty a session of " + std::to_string(session.n_updates()));
    SubjectSession out = session;
    out.updates.erase(out.updates.begin(), out.updates.begin() + exclude_first);
    return out;
}

}  // namespace emgfed
