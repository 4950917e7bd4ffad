#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "emgfed/rng.hpp"
#include "emgfed/session.hpp"
#include "emgfed/trajectory.hpp"

namespace emgfed {

// Linear EMG-to-velocity decoder: a 2 x C weight matrix mapping one envelope
// sample to planar cursor velocity.
struct Decoder {
    Eigen::Matrix2Xd weights;

    int channels() const { return static_cast<int>(weights.cols()); }

    static Decoder zeros(int channels);
    static Decoder random01(int channels, Rng& rng);  // entries U[0, 1)
};

struct CostParams {
    double lambda_e = 1e-6;  // weight on the velocity-error term
    double lambda_w = 1e-4;  // L2 penalty on the decoder weights
};

struct SmoothBatchRate {
    double alpha = 0.75;  // in [0, 1]; 0 keeps the old decoder, 1 replaces it
};

// Contiguous column range of a streamed update; {0, -1} means the full update.
struct BatchSpan {
    int begin = 0;
    int length = -1;
};

Eigen::Vector2d predict_velocity(const Decoder& d, const Eigen::VectorXd& sample);

// Explicit Euler: y_{t+1} = y_t + dt * v_t; output length = len(v) + 1.
Trajectory integrate_cursor(const std::vector<Eigen::Vector2d>& velocities, double dt,
                            const Eigen::Vector2d& y0, double rate = 60.0);

// Forward finite difference of (r - y); the last sample repeats the previous
// value so the output length equals the input length.
std::vector<Eigen::Vector2d> target_velocity(const Trajectory& reference, const Trajectory& cursor,
                                             double dt);

// 2 x T stack of target_velocity over a whole update.
Eigen::Matrix2Xd target_velocity_matrix(const StreamedUpdate& u);

struct CostGrad {
    double cost = 0.0;
    Eigen::Matrix2Xd gradient;
};

// Training view of an update with the target velocities computed once;
// hoists the finite differencing out of tight gradient loops.
struct UpdateView {
    const StreamedUpdate* update = nullptr;
    Eigen::Matrix2Xd targets;

    explicit UpdateView(const StreamedUpdate& u);
};

// f(w) = lambda_e * |w S - V*|_F^2 + lambda_w * |w|_F^2 over the (batch of
// the) update; gradient = 2 lambda_e (w S - V*) S^T + 2 lambda_w w.
CostGrad cost_and_gradient(const Decoder& d, const StreamedUpdate& u, const CostParams& p,
                           BatchSpan batch = {});
CostGrad cost_and_gradient(const Decoder& d, const UpdateView& view, const CostParams& p,
                           BatchSpan batch = {});
double cost_only(const Decoder& d, const StreamedUpdate& u, const CostParams& p, BatchSpan batch = {});

// Closed-form ridge minimizer: w* = lambda_e V* S^T (lambda_e S S^T + lambda_w I)^-1.
Decoder solve_optimal(const StreamedUpdate& u, const CostParams& p);

// Full-batch gradient descent (or per-step batches when a schedule is given).
// Throws StepSizeError when the cost grows 10x over 10 consecutive steps.
Decoder gradient_descent_solve(const StreamedUpdate& u, const CostParams& p, int steps,
                               double step_size, const Decoder& w0,
                               const std::vector<BatchSpan>* schedule = nullptr);

// 2 * (lambda_e * sigma_max(S S^T) + lambda_w): Lipschitz constant of the
// cost gradient; descent is monotone for step sizes below its reciprocal.
double gradient_lipschitz(const StreamedUpdate& u, const CostParams& p);
double gradient_strong_convexity(const StreamedUpdate& u, const CostParams& p);

// w_new = (1 - alpha) * w_old + alpha * w_opt, entrywise.
Decoder smooth_batch(const Decoder& w_old, const Decoder& w_opt, SmoothBatchRate rate);

struct VelocityError {
    double weighted = 0.0;        // lambda_e * |w S - V*|_F^2
    double rms_units_per_s = 0.0; // sqrt(|w S - V*|_F^2 / T), screen units/s
};

VelocityError velocity_error(const Decoder& d, const StreamedUpdate& u, const CostParams& p);

// Pooled velocity error over several updates (e.g. the test folds of a
// subject): weighted terms add, the RMS pools squared residuals over all
// samples.
VelocityError velocity_error_over(const Decoder& d, const std::vector<const StreamedUpdate*>& updates,
                                  const CostParams& p);

bool decoders_equal(const Decoder& a, const Decoder& b);
double decoder_distance(const Decoder& a, const Decoder& b);  // Frobenius

}  // namespace emgfed
