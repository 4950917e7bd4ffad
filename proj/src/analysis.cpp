#include "emgfed/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emgfed/errors.hpp"
#include "emgfed/privacy.hpp"

namespace emgfed {

std::string to_string(Scenario s) {
    return s == Scenario::IntraSubject ? "intra" : "cross";
}

Scenario parse_scenario(const std::string& name) {
    if (name == "intra" || name == "IntraSubject") return Scenario::IntraSubject;
    if (name == "cross" || name == "CrossSubject") return Scenario::CrossSubject;
    throw ConfigError("unknown scenario '" + name + "'");
}

FoldPlan make_folds(const std::vector<SubjectSession>& sessions, Scenario scenario, int k,
                    std::uint64_t seed) {
    if (k < 2) throw ConfigError("make_folds: k must be >= 2");
    if (sessions.empty()) throw ConfigError("make_folds: no sessions");

    FoldPlan plan;
    plan.scenario = scenario;
    plan.k = k;
    plan.seed = seed;

    if (scenario == Scenario::IntraSubject) {
        const int n_updates = sessions.front().n_updates();
        for (const auto& s : sessions)
            if (s.n_updates() != n_updates)
                throw ConfigError("make_folds: intra-subject folds need a uniform update count");
        if (n_updates < k)
            throw DataError("make_folds: " + std::to_string(n_updates) +
                            " updates per subject < k = " + std::to_string(k));
        const int base = n_updates / k;
        const int rem = n_updates % k;
        int offset = 0;
        for (int f = 0; f < k; ++f) {
            const int size = base + (f < rem ? 1 : 0);
            std::vector<int> fold(size);
            std::iota(fold.begin(), fold.end(), offset);
            offset += size;
            plan.update_folds.push_back(std::move(fold));
        }
    } else {
        const int n_subjects = static_cast<int>(sessions.size());
        if (n_subjects < k)
            throw DataError("make_folds: " + std::to_string(n_subjects) +
                            " subjects < k = " + std::to_string(k));
        std::vector<int> ids;
        for (const auto& s : sessions) ids.push_back(s.subject_id);
        Rng rng(derive_seed(seed, "fold-shuffle"));
        rng.shuffle(ids);
        const int base = n_subjects / k;
        const int rem = n_subjects % k;
        int offset = 0;
        for (int f = 0; f < k; ++f) {
            const int size = base + (f < rem ? 1 : 0);
            std::vector<int> group(ids.begin() + offset, ids.begin() + offset + size);
            std::sort(group.begin(), group.end());
            offset += size;
            plan.subject_folds.push_back(std::move(group));
        }
    }
    return plan;
}

std::vector<double> distance_to_final(const std::vector<Decoder>& snapshots) {
    if (snapshots.empty()) throw DataError("distance_to_final: no snapshots");
    std::vector<double> out(snapshots.size());
    for (std::size_t i = 0; i < snapshots.size(); ++i)
        out[i] = decoder_distance(snapshots[i], snapshots.back());
    return out;
}

namespace {

// Gram-Schmidt against earlier columns, in place; returns the residual norm.
double orthonormalize_column(Eigen::MatrixXd& basis, int col) {
    for (int j = 0; j < col; ++j)
        basis.col(col) -= basis.col(j).dot(basis.col(col)) * basis.col(j);
    const double norm = basis.col(col).norm();
    if (norm > 0.0) basis.col(col) /= norm;
    return norm;
}

void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
    const double tol = 1e-12 * v.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v[i]) > tol) {
            if (v[i] < 0.0) v = -v;
            return;
        }
    }
}

}  // namespace

PcaResult pca_project(const std::vector<Decoder>& decoders, int dims) {
    if (dims < 1) throw ConfigError("pca_project: dims must be >= 1");
    const auto n = static_cast<Eigen::Index>(decoders.size());
    if (n < 3) throw DataError("pca_project: need at least 3 decoders");

    const Eigen::Index dim = 2 * decoders.front().channels();
    Eigen::MatrixXd data(n, dim);
    for (Eigen::Index i = 0; i < n; ++i)
        data.row(i) = flatten_decoder(decoders[i]).transpose();
    const Eigen::RowVectorXd mean = data.colwise().mean();
    data.rowwise() -= mean;

    Eigen::MatrixXd cov = (data.transpose() * data) / static_cast<double>(n - 1);
    const double total_scale = std::max(cov.diagonal().maxCoeff(), 1e-300);

    // deterministic start basis: index ramps, orthonormalized
    Eigen::MatrixXd basis(dim, dims);
    for (int c = 0; c < dims; ++c)
        for (Eigen::Index i = 0; i < dim; ++i)
            basis(i, c) = 1.0 + 1e-3 * static_cast<double>((i + 1) * (c + 1)) +
                          (i % (c + 2) == 0 ? 0.5 : 0.0);
    for (int c = 0; c < dims; ++c) orthonormalize_column(basis, c);

    // orthogonal iteration with per-column degeneracy guards
    const int max_iters = 50000;
    const double tol = 1e-14;
    for (int iter = 0; iter < max_iters; ++iter) {
        Eigen::MatrixXd next = cov * basis;
        double change = 0.0;
        for (int c = 0; c < dims; ++c) {
            const double norm = orthonormalize_column(next, c);
            if (norm <= 1e-14 * total_scale) {
                next.col(c) = basis.col(c);  // direction exhausted; keep the old basis vector
                for (int j = 0; j < c; ++j)
                    next.col(c) -= next.col(j).dot(next.col(c)) * next.col(j);
                const double renorm = next.col(c).norm();
                if (renorm > 0.0) next.col(c) /= renorm;
            }
            change = std::max(change,
                              std::min((next.col(c) - basis.col(c)).norm(),
                                       (next.col(c) + basis.col(c)).norm()));
        }
        basis = next;
        if (change < tol) break;
    }

    // Rayleigh-Ritz rotation inside the converged subspace
    const Eigen::MatrixXd projected = basis.transpose() * cov * basis;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz(projected);
    Eigen::VectorXd eigenvalues = ritz.eigenvalues().reverse();
    Eigen::MatrixXd rotation = ritz.eigenvectors().rowwise().reverse();
    basis = basis * rotation;

    PcaResult result;
    result.explained_variance = eigenvalues.cwiseMax(0.0);
    result.components = dims;
    for (int c = 0; c < dims; ++c) {
        if (result.explained_variance[c] <= 1e-12 * std::max(total_scale, 1.0)) {
            result.components = std::min(result.components, c);
            result.rank_deficient = true;
        }
        fix_sign(basis.col(c));
    }
    result.projections = data * basis;
    // beyond-rank directions are arbitrary; report their projections as zero
    for (int c = result.components; c < dims; ++c) result.projections.col(c).setZero();
    return result;
}

namespace {

const SubjectSession& session_by_id(const std::vector<SubjectSession>& sessions, int subject_id) {
    for (const auto& s : sessions)
        if (s.subject_id == subject_id) return s;
    throw DataError("summarize: no session for subject " + std::to_string(subject_id));
}

std::vector<const StreamedUpdate*> test_updates(const SubjectSession& session,
                                                const std::vector<int>& update_fold) {
    std::vector<const StreamedUpdate*> out;
    for (int idx : update_fold) {
        if (idx < 0 || idx >= session.n_updates())
            throw DataError("summarize: fold update index out of range");
        out.push_back(&session.updates[idx]);
    }
    return out;
}

std::vector<const StreamedUpdate*> all_updates(const SubjectSession& session) {
    std::vector<const StreamedUpdate*> out;
    for (const auto& u : session.updates) out.push_back(&u);
    return out;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::string& algorithm_label, Scenario scenario, int fold,
                                  const FoldPlan& plan, const RunArtifacts& artifacts,
                                  const std::vector<SubjectSession>& all_sessions,
                                  const CostParams& p) {
    std::vector<SummaryRow> rows;
    const Algorithm algorithm = artifacts.config.algorithm;

    auto emit = [&](const std::string& label, int subject, const VelocityError& ve) {
        rows.push_back({label, scenario, fold, subject, ve.weighted, ve.rms_units_per_s});
    };

    if (scenario == Scenario::IntraSubject) {
        const auto& test_fold = plan.update_folds.at(fold);
        for (std::size_t k = 0; k < artifacts.subject_ids.size(); ++k) {
            const int subject = artifacts.subject_ids[k];
            const auto tests = test_updates(session_by_id(all_sessions, subject), test_fold);
            if (algorithm == Algorithm::Local) {
                emit(algorithm_label, subject, velocity_error_over(artifacts.client_finals[k], tests, p));
            } else {
                emit(algorithm_label, subject,
                     velocity_error_over(artifacts.global_history.back(), tests, p));
                if (algorithm == Algorithm::PerFedAvg && !artifacts.client_personalized[k].empty())
                    emit(algorithm_label + "-personalized", subject,
                         velocity_error_over(artifacts.client_personalized[k].back(), tests, p));
            }
        }
    } else {
        for (int subject : plan.subject_folds.at(fold)) {
            const auto tests = all_updates(session_by_id(all_sessions, subject));
            if (algorithm == Algorithm::Local) {
                // mean error of the training subjects' decoders on this held-out subject
                double sum_w = 0.0;
                double sum_rms = 0.0;
                for (const auto& final_decoder : artifacts.client_finals) {
                    const VelocityError ve = velocity_error_over(final_decoder, tests, p);
                    sum_w += ve.weighted;
                    sum_rms += ve.rms_units_per_s;
                }
                const auto n = static_cast<double>(artifacts.client_finals.size());
                emit(algorithm_label, subject, {sum_w / n, sum_rms / n});
            } else {
                emit(algorithm_label, subject,
                     velocity_error_over(artifacts.global_history.back(), tests, p));
            }
        }
    }
    return rows;
}

}  // namespace emgfed
