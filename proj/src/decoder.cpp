#include "emgfed/decoder.hpp"

#include <cmath>
#include <string>

#include "emgfed/errors.hpp"

namespace emgfed {

namespace {

std::pair<int, int> resolve_batch(const StreamedUpdate& u, BatchSpan batch) {
    const int total = u.samples();
    int begin = batch.begin;
    int length = batch.length < 0 ? total - begin : batch.length;
    if (begin < 0 || length < 1 || begin + length > total)
        throw ConfigError("batch span [" + std::to_string(begin) + ", +" + std::to_string(length) +
                          ") out of range for update with " + std::to_string(total) + " samples");
    return {begin, length};
}

}  // namespace

Decoder Decoder::zeros(int channels) {
    Decoder d;
    d.weights = Eigen::Matrix2Xd::Zero(2, channels);
    return d;
}

Decoder Decoder::random01(int channels, Rng& rng) {
    Decoder d;
    d.weights.resize(2, channels);
    for (int c = 0; c < channels; ++c)
        for (int r = 0; r < 2; ++r) d.weights(r, c) = rng.uniform();
    return d;
}

Eigen::Vector2d predict_velocity(const Decoder& d, const Eigen::VectorXd& sample) {
    if (sample.size() != d.weights.cols())
        throw ConfigError("predict_velocity: sample length " + std::to_string(sample.size()) +
                          " != decoder channels " + std::to_string(d.weights.cols()));
    return d.weights * sample;
}

Trajectory integrate_cursor(const std::vector<Eigen::Vector2d>& velocities, double dt,
                            const Eigen::Vector2d& y0, double rate) {
    if (!(dt > 0.0)) throw ConfigError("integrate_cursor: dt must be positive");
    Trajectory out;
    out.rate = rate;
    out.samples.reserve(velocities.size() + 1);
    out.samples.push_back(y0);
    Eigen::Vector2d y = y0;
    for (const auto& v : velocities) {
        y += dt * v;
        out.samples.push_back(y);
    }
    return out;
}

std::vector<Eigen::Vector2d> target_velocity(const Trajectory& reference, const Trajectory& cursor,
                                             double dt) {
    if (reference.size() != cursor.size())
        throw ConfigError("target_velocity: reference/cursor length mismatch");
    if (reference.size() < 2) throw ConfigError("target_velocity: need at least 2 samples");
    if (!(dt > 0.0)) throw ConfigError("target_velocity: dt must be positive");

    const int n = reference.size();
    std::vector<Eigen::Vector2d> out(n);
    for (int t = 0; t + 1 < n; ++t) {
        const Eigen::Vector2d gap_now = reference.samples[t] - cursor.samples[t];
        const Eigen::Vector2d gap_next = reference.samples[t + 1] - cursor.samples[t + 1];
        out[t] = (gap_next - gap_now) / dt;
    }
    out[n - 1] = out[n - 2];
    return out;
}

Eigen::Matrix2Xd target_velocity_matrix(const StreamedUpdate& u) {
    const auto v = target_velocity(u.reference, u.cursor, u.dt);
    Eigen::Matrix2Xd out(2, static_cast<Eigen::Index>(v.size()));
    for (std::size_t t = 0; t < v.size(); ++t) out.col(static_cast<Eigen::Index>(t)) = v[t];
    return out;
}

UpdateView::UpdateView(const StreamedUpdate& u) : update(&u), targets(target_velocity_matrix(u)) {}

CostGrad cost_and_gradient(const Decoder& d, const UpdateView& view, const CostParams& p,
                           BatchSpan batch) {
    const StreamedUpdate& u = *view.update;
    if (d.weights.cols() != u.envelope.rows())
        throw ConfigError("cost_and_gradient: decoder channels != update channels");
    const auto [begin, length] = resolve_batch(u, batch);

    const auto S = u.envelope.middleCols(begin, length);
    const auto V = view.targets.middleCols(begin, length);

    const Eigen::Matrix2Xd residual = d.weights * S - V;
    CostGrad out;
    out.cost = p.lambda_e * residual.squaredNorm() + p.lambda_w * d.weights.squaredNorm();
    out.gradient = 2.0 * p.lambda_e * (residual * S.transpose()) + 2.0 * p.lambda_w * d.weights;
    if (!std::isfinite(out.cost) || !out.gradient.allFinite())
        throw NumericError("cost_and_gradient: non-finite result on update batch at column " +
                           std::to_string(begin));
    return out;
}

CostGrad cost_and_gradient(const Decoder& d, const StreamedUpdate& u, const CostParams& p,
                           BatchSpan batch) {
    return cost_and_gradient(d, UpdateView(u), p, batch);
}

double cost_only(const Decoder& d, const StreamedUpdate& u, const CostParams& p, BatchSpan batch) {
    const auto [begin, length] = resolve_batch(u, batch);
    const Eigen::Matrix2Xd targets = target_velocity_matrix(u);
    const auto S = u.envelope.middleCols(begin, length);
    const auto V = targets.middleCols(begin, length);
    const double cost = p.lambda_e * (d.weights * S - V).squaredNorm() +
                        p.lambda_w * d.weights.squaredNorm();
    if (!std::isfinite(cost))
        throw NumericError("cost: non-finite result on update batch at column " + std::to_string(begin));
    return cost;
}

Decoder solve_optimal(const StreamedUpdate& u, const CostParams& p) {
    const int channels = u.channels();
    const Eigen::Matrix2Xd targets = target_velocity_matrix(u);
    const Eigen::MatrixXd gram = p.lambda_e * (u.envelope * u.envelope.transpose()) +
                                 p.lambda_w * Eigen::MatrixXd::Identity(channels, channels);
    const Eigen::MatrixXd rhs = p.lambda_e * (u.envelope * targets.transpose());  // C x 2

    Decoder d;
    if (p.lambda_w > 0.0) {
        d.weights = gram.ldlt().solve(rhs).transpose();
    } else {
        const Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
        if (!lu.isInvertible())
            throw SingularityError("solve_optimal: singular system with lambda_w = 0; "
                                   "set lambda_w > 0 to regularize");
        d.weights = lu.solve(rhs).transpose();
    }
    if (!d.weights.allFinite()) throw NumericError("solve_optimal: non-finite solution");
    return d;
}

Decoder gradient_descent_solve(const StreamedUpdate& u, const CostParams& p, int steps,
                               double step_size, const Decoder& w0,
                               const std::vector<BatchSpan>* schedule) {
    if (steps < 0) throw ConfigError("gradient_descent_solve: steps must be >= 0");
    if (!(step_size > 0.0)) throw ConfigError("gradient_descent_solve: step size must be positive");
    if (schedule && static_cast<int>(schedule->size()) < steps)
        throw ConfigError("gradient_descent_solve: schedule shorter than step count");

    const UpdateView view(u);
    Decoder w = w0;
    int rising = 0;
    double rise_base = 0.0;
    double prev_cost = std::numeric_limits<double>::infinity();
    for (int t = 0; t < steps; ++t) {
        const BatchSpan batch = schedule ? (*schedule)[t] : BatchSpan{};
        const CostGrad cg = cost_and_gradient(w, view, p, batch);
        if (cg.cost > prev_cost) {
            if (rising == 0) rise_base = prev_cost;
            if (++rising >= 10 && cg.cost > 10.0 * rise_base)
                throw StepSizeError("gradient_descent_solve: cost grew 10x over 10 consecutive "
                                    "steps; reduce step size (step " + std::to_string(t) + ")");
        } else {
            rising = 0;
        }
        prev_cost = cg.cost;
        w.weights -= step_size * cg.gradient;
    }
    return w;
}

double gradient_lipschitz(const StreamedUpdate& u, const CostParams& p) {
    const Eigen::MatrixXd gram = u.envelope * u.envelope.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    return 2.0 * (p.lambda_e * eig.eigenvalues().maxCoeff() + p.lambda_w);
}

double gradient_strong_convexity(const StreamedUpdate& u, const CostParams& p) {
    const Eigen::MatrixXd gram = u.envelope * u.envelope.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    return 2.0 * (p.lambda_e * eig.eigenvalues().minCoeff() + p.lambda_w);
}

Decoder smooth_batch(const Decoder& w_old, const Decoder& w_opt, SmoothBatchRate rate) {
    if (w_old.weights.cols() != w_opt.weights.cols())
        throw ConfigError("smooth_batch: decoder shape mismatch");
    if (!(rate.alpha >= 0.0 && rate.alpha <= 1.0))
        throw ConfigError("smooth_batch: alpha must lie in [0, 1]");
    Decoder d;
    d.weights = (1.0 - rate.alpha) * w_old.weights + rate.alpha * w_opt.weights;
    return d;
}

VelocityError velocity_error(const Decoder& d, const StreamedUpdate& u, const CostParams& p) {
    const Eigen::Matrix2Xd targets = target_velocity_matrix(u);
    const double sq = (d.weights * u.envelope - targets).squaredNorm();
    VelocityError e;
    e.weighted = p.lambda_e * sq;
    e.rms_units_per_s = std::sqrt(sq / static_cast<double>(u.samples()));
    return e;
}

VelocityError velocity_error_over(const Decoder& d, const std::vector<const StreamedUpdate*>& updates,
                                  const CostParams& p) {
    if (updates.empty()) throw DataError("velocity_error_over: no updates to evaluate");
    double sq = 0.0;
    long total = 0;
    for (const StreamedUpdate* u : updates) {
        const Eigen::Matrix2Xd targets = target_velocity_matrix(*u);
        sq += (d.weights * u->envelope - targets).squaredNorm();
        total += u->samples();
    }
    VelocityError e;
    e.weighted = p.lambda_e * sq;
    e.rms_units_per_s = std::sqrt(sq / static_cast<double>(total));
    return e;
}

bool decoders_equal(const Decoder& a, const Decoder& b) {
    return a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
           (a.weights.array() == b.weights.array()).all();
}

double decoder_distance(const Decoder& a, const Decoder& b) {
    return (a.weights - b.weights).norm();
}

}  // namespace emgfed
