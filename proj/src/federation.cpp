#include "emgfed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "emgfed/errors.hpp"

namespace emgfed {

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::Local: return "Local";
        case Algorithm::FedAvg: return "FedAvg";
        case Algorithm::PerFedAvg: return "PerFedAvg";
        case Algorithm::SequentialPerFedAvg: return "SequentialPerFedAvg";
        case Algorithm::Static: return "Static";
    }
    throw ConfigError("unknown algorithm enum value");
}

Algorithm parse_algorithm(const std::string& name) {
    if (name == "Local" || name == "local") return Algorithm::Local;
    if (name == "FedAvg" || name == "fedavg") return Algorithm::FedAvg;
    if (name == "PerFedAvg" || name == "perfedavg") return Algorithm::PerFedAvg;
    if (name == "SequentialPerFedAvg" || name == "sequential-perfedavg")
        return Algorithm::SequentialPerFedAvg;
    if (name == "Static" || name == "static") return Algorithm::Static;
    throw ConfigError("unknown algorithm '" + name + "'");
}

void FedConfig::validate() const {
    if (rounds < 1) throw ConfigError("fed: rounds must be >= 1");
    if (!(client_fraction > 0.0 && client_fraction <= 1.0))
        throw ConfigError("fed: client_fraction must lie in (0, 1]");
    if (local_steps < 1) throw ConfigError("fed: local_steps must be >= 1");
    if (!(sgd_step_size >= 0.0)) throw ConfigError("fed: sgd_step_size must be nonnegative");
    if (maml_inner_rate < 0.0 || maml_outer_rate < 0.0)
        throw ConfigError("fed: maml rates must be nonnegative");
    if (!(smoothbatch.alpha >= 0.0 && smoothbatch.alpha <= 1.0))
        throw ConfigError("fed: smoothbatch alpha must lie in [0, 1]");
    if (batches_per_update < 1) throw ConfigError("fed: batches_per_update must be >= 1");
    if ((algorithm == Algorithm::PerFedAvg || algorithm == Algorithm::SequentialPerFedAvg) &&
        batches_per_update < 2)
        throw ConfigError("fed: Per-FedAvg needs two disjoint mini-batches per update "
                          "(batches_per_update >= 2)");
    if (participations_per_advance < 1)
        throw ConfigError("fed: participations_per_advance must be >= 1");
    if (rounds_per_update < 1) throw ConfigError("fed: rounds_per_update must be >= 1");
    if (personalize_steps < 0) throw ConfigError("fed: personalize_steps must be >= 0");
}

BatchSpan batch_span(const StreamedUpdate& u, int batch_index, int n_batches) {
    if (n_batches < 1 || batch_index < 0 || batch_index >= n_batches)
        throw ConfigError("batch_span: bad batch index");
    const int total = u.samples();
    const int begin = static_cast<int>(static_cast<long>(total) * batch_index / n_batches);
    const int end = static_cast<int>(static_cast<long>(total) * (batch_index + 1) / n_batches);
    return {begin, end - begin};
}

BatchPair draw_batch_pair(Rng& rng, int n_batches) {
    if (n_batches < 1) throw ConfigError("draw_batch_pair: need at least one batch");
    BatchPair pair;
    pair.outer = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_batches)));
    pair.inner = n_batches > 1
                     ? (pair.outer + 1 +
                        static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_batches - 1)))) %
                           n_batches
                     : pair.outer;
    return pair;
}

namespace {

// Flags runaway training: cost growing 10x over 10 consecutive rising steps.
class DivergenceGuard {
  public:
    void observe(double cost) {
        if (cost > prev_) {
            if (rising_ == 0) base_ = prev_;
            if (++rising_ >= 10 && cost > 10.0 * base_)
                throw StepSizeError("training diverged: cost grew 10x over 10 consecutive steps; "
                                    "reduce the step size");
        } else {
            rising_ = 0;
        }
        prev_ = cost;
    }

  private:
    double prev_ = std::numeric_limits<double>::infinity();
    double base_ = 0.0;
    int rising_ = 0;
};

void parallel_for(int n, int workers, const std::function<void(int)>& body) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    const int count = std::min(workers, n);
    for (int w = 0; w < count; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<int> sample_clients(int n_clients, double fraction, Rng& rng) {
    const int m = std::max(1, static_cast<int>(std::ceil(fraction * n_clients)));
    std::vector<int> ids(n_clients);
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < m; ++i) {
        const auto j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_clients - i)));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

void check_sessions(const std::vector<SubjectSession>& sessions, bool federated) {
    if (sessions.empty()) throw ConfigError("run: no sessions (empty order)");
    // a single client is allowed: averaging degenerates to the mean of one
    (void)federated;
    const int channels = sessions.front().channels();
    for (const auto& s : sessions) {
        if (s.updates.empty()) throw ConfigError("run: session for subject " +
                                                 std::to_string(s.subject_id) + " has no updates");
        if (s.channels() != channels)
            throw ConfigError("run: sessions disagree on channel count");
    }
}

}  // namespace

void client_local_fit(ClientState& client, const StreamedUpdate& u, const CostParams& p,
                      SmoothBatchRate rate) {
    client.local = smooth_batch(client.local, solve_optimal(u, p), rate);
    ++client.participation_count;
    client.advance_cursor();
}

Decoder client_sgd_steps(const Decoder& start, const StreamedUpdate& u, const CostParams& p,
                         int steps, double step_size, int n_batches, Rng& rng) {
    if (steps < 1) throw ConfigError("client_sgd_steps: steps must be >= 1");
    if (!(step_size >= 0.0)) throw ConfigError("client_sgd_steps: negative step size");
    const UpdateView view(u);
    Decoder w = start;
    DivergenceGuard guard;
    for (int t = 0; t < steps; ++t) {
        const BatchPair pair = draw_batch_pair(rng, n_batches);
        const CostGrad cg = cost_and_gradient(w, view, p, batch_span(u, pair.outer, n_batches));
        guard.observe(cg.cost);
        w.weights -= step_size * cg.gradient;
    }
    return w;
}

Decoder perfedavg_client_step(const Decoder& w, const StreamedUpdate& u, const CostParams& p,
                              double inner_rate, double outer_rate, int n_batches, Rng& rng) {
    return perfedavg_client_step(w, UpdateView(u), p, inner_rate, outer_rate, n_batches, rng, nullptr);
}

Decoder perfedavg_client_step(const Decoder& w, const UpdateView& view, const CostParams& p,
                              double inner_rate, double outer_rate, int n_batches, Rng& rng,
                              double* outer_cost) {
    const StreamedUpdate& u = *view.update;
    const BatchPair pair = draw_batch_pair(rng, n_batches);
    const CostGrad inner = cost_and_gradient(w, view, p, batch_span(u, pair.inner, n_batches));
    Decoder probe;
    probe.weights = w.weights - inner_rate * inner.gradient;
    const CostGrad outer = cost_and_gradient(probe, view, p, batch_span(u, pair.outer, n_batches));
    if (outer_cost) *outer_cost = outer.cost;
    Decoder next;
    next.weights = w.weights - outer_rate * outer.gradient;
    return next;
}

Decoder aggregate(const std::vector<Decoder>& models, const std::vector<double>& weights) {
    if (models.empty()) throw ConfigError("aggregate: empty model list");
    if (weights.size() != models.size())
        throw ConfigError("aggregate: weight count != model count");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("aggregate: weights must be nonnegative");
        sum += w;
    }
    if (!(sum > 0.0)) throw ConfigError("aggregate: weights sum to zero");

    const auto rows = models.front().weights.rows();
    const auto cols = models.front().weights.cols();
    for (const auto& m : models)
        if (m.weights.rows() != rows || m.weights.cols() != cols)
            throw ConfigError("aggregate: decoder shape mismatch");

    std::vector<double> normalized(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) normalized[i] = weights[i] / sum;

    Decoder out = Decoder::zeros(static_cast<int>(cols));
    for (std::size_t i = 0; i < models.size(); ++i)
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index r = 0; r < rows; ++r)
                out.weights(r, c) += normalized[i] * models[i].weights(r, c);
    return out;
}

namespace {

RunArtifacts run_local(const FedConfig& cfg, const std::vector<SubjectSession>& sessions,
                       const CostParams& p, int workers, const Decoder* initial_global) {
    const int n_clients = static_cast<int>(sessions.size());
    const int channels = sessions.front().channels();
    Rng init_rng(derive_seed(cfg.seed, "decoder-init"));
    const Decoder initial = initial_global ? *initial_global : Decoder::random01(channels, init_rng);

    RunArtifacts art;
    art.config = cfg;
    art.client_snapshots.resize(n_clients);
    art.client_finals.resize(n_clients, initial);
    std::vector<std::vector<MetricRow>> rows(n_clients);

    parallel_for(n_clients, workers, [&](int k) {
        const SubjectSession& session = sessions[k];
        ClientState client{session.subject_id, initial, 0, 0, session.n_updates()};
        for (int j = 0; j < session.n_updates(); ++j) {
            const StreamedUpdate& u = session.updates[j];
            client_local_fit(client, u, p, cfg.smoothbatch);
            art.client_snapshots[k].push_back(client.local);
            const VelocityError ve = velocity_error(client.local, u, p);
            rows[k].push_back({j, session.subject_id, j, cost_only(client.local, u, p), ve.weighted,
                               ve.rms_units_per_s, 0.0});
        }
        art.client_finals[k] = client.local;
    });

    for (int k = 0; k < n_clients; ++k) {
        for (std::size_t j = 0; j < rows[k].size(); ++j)
            rows[k][j].dist_to_final =
                decoder_distance(art.client_snapshots[k][j], art.client_finals[k]);
        art.metrics.insert(art.metrics.end(), rows[k].begin(), rows[k].end());
    }
    for (const auto& s : sessions) art.subject_ids.push_back(s.subject_id);
    return art;
}

}  // namespace

RunArtifacts run_open_loop(const FedConfig& cfg, const std::vector<SubjectSession>& sessions,
                           const CostParams& p, int workers, const Decoder* initial_global) {
    cfg.validate();
    const bool federated =
        cfg.algorithm == Algorithm::FedAvg || cfg.algorithm == Algorithm::PerFedAvg;
    if (!federated && cfg.algorithm != Algorithm::Local)
        throw ConfigError("run_open_loop: algorithm must be Local, FedAvg or PerFedAvg");
    check_sessions(sessions, federated);
    if (cfg.algorithm == Algorithm::Local)
        return run_local(cfg, sessions, p, workers, initial_global);

    const int n_clients = static_cast<int>(sessions.size());
    const int channels = sessions.front().channels();
    Rng init_rng(derive_seed(cfg.seed, "decoder-init"));

    ServerState server;
    server.global = initial_global ? *initial_global : Decoder::random01(channels, init_rng);
    server.history.push_back(server.global);

    std::vector<ClientState> clients;
    clients.reserve(n_clients);
    for (int k = 0; k < n_clients; ++k)
        clients.push_back({sessions[k].subject_id, server.global, 0, 0, sessions[k].n_updates()});

    RunArtifacts art;
    art.config = cfg;
    art.client_snapshots.resize(n_clients);
    art.client_finals.resize(n_clients, server.global);

    std::vector<double> weights(n_clients, 1.0);
    if (cfg.aggregation == AggregationWeights::DataSize)
        for (int k = 0; k < n_clients; ++k)
            weights[k] = static_cast<double>(sessions[k].total_samples());

    for (int round = 0; round < cfg.rounds; ++round) {
        Rng sample_rng(derive_seed(cfg.seed, "client-sampling", static_cast<std::uint64_t>(round)));
        const std::vector<int> selected = sample_clients(n_clients, cfg.client_fraction, sample_rng);

        std::vector<Decoder> uploads(selected.size());
        std::vector<MetricRow> rows(selected.size());
        parallel_for(static_cast<int>(selected.size()), workers, [&](int s) {
            const int k = selected[s];
            ClientState& client = clients[k];
            const StreamedUpdate& u = sessions[k].updates[client.update_cursor];
            Rng rng(derive_seed(cfg.seed, "client-steps", static_cast<std::uint64_t>(round),
                                static_cast<std::uint64_t>(k)));
            Decoder w;
            if (cfg.algorithm == Algorithm::FedAvg) {
                w = client_sgd_steps(server.global, u, p, cfg.local_steps, cfg.sgd_step_size,
                                     cfg.batches_per_update, rng);
            } else {
                const UpdateView view(u);
                w = server.global;
                DivergenceGuard guard;
                for (int t = 0; t < cfg.local_steps; ++t) {
                    double step_cost = 0.0;
                    w = perfedavg_client_step(w, view, p, cfg.maml_inner_rate, cfg.maml_outer_rate,
                                              cfg.batches_per_update, rng, &step_cost);
                    guard.observe(step_cost);
                }
            }
            uploads[s] = w;
            const VelocityError ve = velocity_error(w, u, p);
            rows[s] = {round, sessions[k].subject_id, client.update_cursor, cost_only(w, u, p),
                       ve.weighted, ve.rms_units_per_s, 0.0};
        });

        // serialized bookkeeping in ascending client order
        std::vector<double> round_weights(selected.size());
        for (std::size_t s = 0; s < selected.size(); ++s) {
            const int k = selected[s];
            round_weights[s] = weights[k];
            clients[k].local = uploads[s];
            art.client_snapshots[k].push_back(uploads[s]);
            art.client_finals[k] = uploads[s];
            ++clients[k].participation_count;
            if (clients[k].participation_count % cfg.participations_per_advance == 0)
                clients[k].advance_cursor();
            art.metrics.push_back(rows[s]);
        }
        server.global = aggregate(uploads, round_weights);
        server.round = round + 1;
        server.history.push_back(server.global);
    }

    art.global_history = server.history;
    const Decoder& final_global = server.history.back();
    for (auto& row : art.metrics)
        row.dist_to_final = decoder_distance(art.global_history[row.round + 1], final_global);

    art.client_personalized.resize(n_clients);
    parallel_for(n_clients, workers, [&](int k) {
        art.client_personalized[k] = personalize_path(final_global, sessions[k], p,
                                                      cfg.personalize_steps, cfg.sgd_step_size);
    });
    for (const auto& s : sessions) art.subject_ids.push_back(s.subject_id);
    return art;
}

namespace {

// Session-level gradient averaged over updates, so step sizes stay on the
// same scale as per-update SGD.
CostGrad session_cost_gradient(const Decoder& w, const SubjectSession& session, const CostParams& p) {
    CostGrad total;
    total.gradient = Eigen::Matrix2Xd::Zero(2, w.weights.cols());
    for (const auto& u : session.updates) {
        const CostGrad cg = cost_and_gradient(w, u, p);
        total.cost += cg.cost;
        total.gradient += cg.gradient;
    }
    const auto n = static_cast<double>(session.n_updates());
    total.cost /= n;
    total.gradient /= n;
    return total;
}

}  // namespace

Decoder personalize(const Decoder& global, const SubjectSession& session, const CostParams& p,
                    int steps, double step_size) {
    if (steps < 0) throw ConfigError("personalize: steps must be >= 0");
    Decoder w = global;
    for (int t = 0; t < steps; ++t)
        w.weights -= step_size * session_cost_gradient(w, session, p).gradient;
    return w;
}

std::vector<Decoder> personalize_path(const Decoder& global, const SubjectSession& session,
                                      const CostParams& p, int steps, double step_size) {
    std::vector<Decoder> path;
    path.reserve(steps);
    Decoder w = global;
    for (int t = 0; t < steps; ++t) {
        w.weights -= step_size * session_cost_gradient(w, session, p).gradient;
        path.push_back(w);
    }
    return path;
}

RunArtifacts run_sequential(const FedConfig& cfg, const std::vector<SubjectSession>& sessions,
                            const CostParams& p, const Decoder* initial_global) {
    cfg.validate();
    if (cfg.algorithm != Algorithm::SequentialPerFedAvg)
        throw ConfigError("run_sequential: algorithm must be SequentialPerFedAvg");
    check_sessions(sessions, false);

    const int n_clients = static_cast<int>(sessions.size());
    const int channels = sessions.front().channels();
    Rng init_rng(derive_seed(cfg.seed, "decoder-init"));

    ServerState server;
    server.global = initial_global ? *initial_global : Decoder::random01(channels, init_rng);
    server.history.push_back(server.global);

    RunArtifacts art;
    art.config = cfg;
    art.client_snapshots.resize(n_clients);
    art.client_finals.resize(n_clients, server.global);

    int merge_index = 0;
    for (int k = 0; k < n_clients; ++k) {
        const SubjectSession& session = sessions[k];
        Decoder local = server.global;
        for (int j = 0; j < session.n_updates(); ++j) {
            const StreamedUpdate& u = session.updates[j];
            const UpdateView view(u);
            Rng rng(derive_seed(cfg.seed, "sequential-steps", static_cast<std::uint64_t>(k),
                                static_cast<std::uint64_t>(j)));
            DivergenceGuard guard;
            for (int round = 0; round < cfg.rounds_per_update; ++round) {
                double step_cost = 0.0;
                local = perfedavg_client_step(local, view, p, cfg.maml_inner_rate,
                                              cfg.maml_outer_rate, cfg.batches_per_update, rng,
                                              &step_cost);
                guard.observe(step_cost);
            }
            art.client_snapshots[k].push_back(local);
            art.client_finals[k] = local;
            const VelocityError ve = velocity_error(local, u, p);
            art.metrics.push_back({merge_index, session.subject_id, j, cost_only(local, u, p),
                                   ve.weighted, ve.rms_units_per_s, 0.0});

            server.global = smooth_batch(server.global, local, cfg.smoothbatch);
            server.history.push_back(server.global);
            ++merge_index;
            local = server.global;  // subject continues from the merged model
        }
    }

    art.global_history = server.history;
    const Decoder& final_global = server.history.back();
    for (auto& row : art.metrics)
        row.dist_to_final = decoder_distance(art.global_history[row.round + 1], final_global);
    for (const auto& s : sessions) art.subject_ids.push_back(s.subject_id);
    return art;
}

}  // namespace emgfed
