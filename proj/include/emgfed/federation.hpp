#pragma once

#include <cstdint>
#include <vector>

#include "emgfed/algorithms.hpp"
#include "emgfed/decoder.hpp"
#include "emgfed/session.hpp"

namespace emgfed {

enum class AggregationWeights { Uniform, DataSize };

struct FedConfig {
    Algorithm algorithm = Algorithm::FedAvg;
    int rounds = 500;
    double client_fraction = 0.35;
    int local_steps = 25;
    double sgd_step_size = 40.0;
    double maml_inner_rate = 40.0;
    double maml_outer_rate = 10.0;
    SmoothBatchRate smoothbatch{0.75};  // Local fits and sequential merges
    AggregationWeights aggregation = AggregationWeights::Uniform;
    int batches_per_update = 2;         // contiguous time slices per update
    int participations_per_advance = 1; // blocks of local_steps before the cursor moves
    int rounds_per_update = 40;         // sequential mode only
    int personalize_steps = 25;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ServerState {
    Decoder global;
    int round = 0;
    std::vector<Decoder> history;  // global snapshot per round (index 0 = initial)
};

struct ClientState {
    int id = 0;
    Decoder local;
    int update_cursor = 0;
    int participation_count = 0;
    int n_updates = 0;

    // Clamps at the final update: once there, a client keeps training on it.
    void advance_cursor() { update_cursor = std::min(update_cursor + 1, n_updates - 1); }
};

struct MetricRow {
    int round = 0;
    int client_id = 0;
    int update_idx = 0;
    double cost = 0.0;
    double vel_err_weighted = 0.0;
    double vel_err_rms = 0.0;
    double dist_to_final = 0.0;
};

struct RunArtifacts {
    std::vector<Decoder> global_history;                 // FL runs; empty for Local
    std::vector<std::vector<Decoder>> client_snapshots;  // per client, uploads/fits in order
    std::vector<Decoder> client_finals;                  // last local model per client
    std::vector<std::vector<Decoder>> client_personalized;  // personalization path (FL)
    std::vector<MetricRow> metrics;
    std::vector<int> subject_ids;  // session order -> subject id
    FedConfig config;
};

// Disjoint contiguous mini-batch pair for one gradient step. FedAvg consumes
// the pair identically but only uses `outer`, so Per-FedAvg with
// inner_rate = 0 replays a FedAvg run draw-for-draw.
struct BatchPair {
    int inner = 0;
    int outer = 0;
};
BatchPair draw_batch_pair(Rng& rng, int n_batches);
BatchSpan batch_span(const StreamedUpdate& u, int batch_index, int n_batches);

// Local algorithm: local <- smooth_batch(local, solve_optimal(u), rate), then
// the update cursor advances (clamped at the last update).
void client_local_fit(ClientState& client, const StreamedUpdate& u, const CostParams& p,
                      SmoothBatchRate rate);

// `steps` mini-batch SGD steps on the update starting from `start`.
Decoder client_sgd_steps(const Decoder& start, const StreamedUpdate& u, const CostParams& p,
                         int steps, double step_size, int n_batches, Rng& rng);

// One first-order Per-FedAvg step: w~ = w - inner * grad(w; b1), then
// w - outer * grad(w~; b2) with b1, b2 disjoint mini-batches. The view
// overload lets callers hoist the target computation out of step loops;
// outer_cost (when non-null) receives the cost at w~ on the outer batch.
Decoder perfedavg_client_step(const Decoder& w, const StreamedUpdate& u, const CostParams& p,
                              double inner_rate, double outer_rate, int n_batches, Rng& rng);
Decoder perfedavg_client_step(const Decoder& w, const UpdateView& view, const CostParams& p,
                              double inner_rate, double outer_rate, int n_batches, Rng& rng,
                              double* outer_cost = nullptr);

// Entrywise weighted mean, weights normalized to sum 1; plain scalar loops in
// ascending client order so the reduction is reproducible to the bit.
Decoder aggregate(const std::vector<Decoder>& models, const std::vector<double>& weights);

// Synchronous rounds with seeded client sampling; also runs the Local
// algorithm (independent per-update fits, no server) when cfg.algorithm is
// Local. `workers` threads may train selected clients in parallel; results
// are identical for any worker count. The initial decoder defaults to a
// seeded random positive draw; pass `initial_global` to override.
RunArtifacts run_open_loop(const FedConfig& cfg, const std::vector<SubjectSession>& sessions,
                           const CostParams& p, int workers = 1,
                           const Decoder* initial_global = nullptr);

// Gradient steps on the whole session starting from the global model.
Decoder personalize(const Decoder& global, const SubjectSession& session, const CostParams& p,
                    int steps, double step_size);
std::vector<Decoder> personalize_path(const Decoder& global, const SubjectSession& session,
                                      const CostParams& p, int steps, double step_size);

// Sequential regime: subjects strictly in order, each exactly once; after
// every update the server merges global <- (1-alpha)*global + alpha*local
// and the subject continues from the merged model.
RunArtifacts run_sequential(const FedConfig& cfg, const std::vector<SubjectSession>& sessions_in_order,
                            const CostParams& p, const Decoder* initial_global = nullptr);

}  // namespace emgfed
