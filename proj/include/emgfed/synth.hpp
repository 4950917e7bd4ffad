#pragma once

#include <cstdint>

#include "emgfed/closedloop.hpp"
#include "emgfed/session.hpp"
#include "emgfed/trajectory.hpp"

namespace emgfed {

enum class GeneratorMode {
    Replay,         // run a Local-adapting closed-loop trial and record it
    StaticEncoder,  // fixed per-subject encoder driven by the reference velocity
};

// Knobs for the synthetic cohort. Per-subject encoders share a base
// channels x 2 mixing matrix; heterogeneity comes from a per-subject rotation
// of the intent plane plus a per-channel dropout mask, both drawn
// deterministically from (cohort seed, subject_id).
struct SubjectModelParams {
    GeneratorMode mode = GeneratorMode::Replay;
    int channels = 64;
    double encoder_scale = 1.0;
    double rotation_spread = 0.8;   // radians; per-subject angle ~ U(-spread, spread)
    double mask_keep_prob = 0.8;    // per-channel keep probability
    double baseline_scale = 0.1;
    double noise_scale = 0.1;
    double gain = 1.0;
    double adapt_rate = 0.0;        // co-adaptation during replay collection
    SmoothBatchRate smoothbatch{0.75};  // replay-mode Local adaptation rate
    CostParams cost;
    double update_seconds = 20.0;
};

SimulatedUser make_subject_user(int subject_id, const SubjectModelParams& params,
                                std::uint64_t cohort_seed);

// Deterministic in (subject_id, params, seed); repeated calls are
// bit-identical and subjects can be synthesized in any order or in parallel.
SubjectSession synthesize_session(int subject_id, const SubjectModelParams& params,
                                  const ReferenceSpec& reference_spec, int n_updates,
                                  std::uint64_t seed);

// Drops the first `exclude_first` updates (initial adaptation transient).
SubjectSession trim_session(const SubjectSession& session, int exclude_first);

}  // namespace emgfed
