#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "emgfed/decoder.hpp"
#include "emgfed/errors.hpp"

using namespace emgfed;

namespace {

// Random streamed update; cursor/reference drawn smooth so targets are sane.
StreamedUpdate random_update(int channels, int samples, std::uint64_t seed,
                             double envelope_scale = 1.0) {
    Rng rng(seed);
    StreamedUpdate u;
    u.dt = 1.0 / 60.0;
    u.envelope.resize(channels, samples);
    for (int t = 0; t < samples; ++t)
        for (int c = 0; c < channels; ++c)
            u.envelope(c, t) = envelope_scale * std::abs(rng.gaussian());
    u.reference.rate = 60.0;
    u.cursor.rate = 60.0;
    for (int t = 0; t < samples; ++t) {
        const double s = static_cast<double>(t) * u.dt;
        u.reference.samples.emplace_back(std::sin(0.8 * s) + 0.1 * rng.gaussian(),
                                         std::cos(1.1 * s));
        u.cursor.samples.emplace_back(0.5 * std::sin(0.9 * s), 0.4 * std::cos(0.7 * s));
    }
    return u;
}

Decoder random_decoder(int channels, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Decoder d = Decoder::zeros(channels);
    for (int c = 0; c < channels; ++c)
        for (int r = 0; r < 2; ++r) d.weights(r, c) = scale * rng.gaussian();
    return d;
}

}  // namespace

TEST_SUITE("decoder") {

TEST_CASE("predict_velocity basics and brute-force oracle") {
    Decoder zero = Decoder::zeros(5);
    Eigen::VectorXd s(5);
    s << 1, 2, 3, 4, 5;
    CHECK(predict_velocity(zero, s) == Eigen::Vector2d(0, 0));

    Decoder embed = Decoder::zeros(2);
    embed.weights << 1, 0, 0, 1;
    Eigen::VectorXd s2(2);
    s2 << 3, 5;
    CHECK(predict_velocity(embed, s2) == Eigen::Vector2d(3, 5));

    const Decoder d = random_decoder(7, 11);
    Rng rng(12);
    Eigen::VectorXd s3(7);
    for (int c = 0; c < 7; ++c) s3[c] = rng.gaussian();
    const Eigen::Vector2d v = predict_velocity(d, s3);
    for (int r = 0; r < 2; ++r) {
        double acc = 0.0;
        for (int c = 0; c < 7; ++c) acc += d.weights(r, c) * s3[c];
        CHECK(v[r] == doctest::Approx(acc).epsilon(1e-14));
    }

    CHECK_THROWS_AS(predict_velocity(d, s2), ConfigError);
}

TEST_CASE("integrate_cursor explicit Euler") {
    const std::vector<Eigen::Vector2d> zero_v(10, Eigen::Vector2d::Zero());
    const Trajectory constant = integrate_cursor(zero_v, 1.0 / 60.0, {0.3, -0.2});
    CHECK(constant.size() == 11);
    for (const auto& y : constant.samples) CHECK(y == Eigen::Vector2d(0.3, -0.2));

    const std::vector<Eigen::Vector2d> unit_v(3, Eigen::Vector2d(1, 0));
    const Trajectory ramp = integrate_cursor(unit_v, 1.0, {0, 0});
    REQUIRE(ramp.size() == 4);
    for (int t = 0; t < 4; ++t) CHECK(ramp.samples[t] == Eigen::Vector2d(t, 0));

    // sinusoidal velocity vs analytic antiderivative, O(dt) per step
    const double dt = 1e-3;
    std::vector<Eigen::Vector2d> v;
    for (int t = 0; t < 2000; ++t) v.emplace_back(std::cos(t * dt), -std::sin(t * dt));
    const Trajectory y = integrate_cursor(v, dt, {0, 1});
    for (int t = 0; t <= 2000; t += 100) {
        const double time = t * dt;
        CHECK(y.samples[t].x() == doctest::Approx(std::sin(time)).scale(1).epsilon(5e-3));
        CHECK(y.samples[t].y() == doctest::Approx(std::cos(time)).scale(1).epsilon(5e-3));
    }
}

TEST_CASE("target_velocity finite differences") {
    Trajectory r, y;
    r.rate = y.rate = 60.0;
    const double dt = 1.0 / 60.0;

    for (int t = 0; t < 50; ++t) {
        r.samples.emplace_back(0.1 * t, -0.2 * t);
        y.samples.emplace_back(0.1 * t, -0.2 * t);
    }
    for (const auto& v : target_velocity(r, y, dt)) CHECK(v == Eigen::Vector2d(0, 0));

    // linear gap (r - y)_t = c * t gives the constant c / dt ... c per second
    y.samples.clear();
    for (int t = 0; t < 50; ++t) y.samples.emplace_back(0.1 * t - 0.5 * t * dt, -0.2 * t);
    const auto v_lin = target_velocity(r, y, dt);
    for (const auto& v : v_lin) {
        CHECK(v.x() == doctest::Approx(0.5).epsilon(1e-9));
        CHECK(v.y() == doctest::Approx(0.0).epsilon(1e-9));
    }

    // sinusoidal gap: forward difference matches the analytic derivative O(dt)
    Trajectory rs, ys;
    rs.rate = ys.rate = 60.0;
    for (int t = 0; t < 300; ++t) {
        rs.samples.emplace_back(std::sin(t * dt), 0.0);
        ys.samples.emplace_back(0.0, 0.0);
    }
    const auto v_sin = target_velocity(rs, ys, dt);
    for (int t = 0; t + 1 < 300; t += 13)
        CHECK(v_sin[t].x() == doctest::Approx(std::cos(t * dt)).epsilon(0.02));
    CHECK(v_sin[299] == v_sin[298]);  // last value repeats

    Trajectory tiny;
    tiny.rate = 60.0;
    tiny.samples.emplace_back(0.0, 0.0);
    CHECK_THROWS_AS(target_velocity(tiny, tiny, dt), ConfigError);
}

TEST_CASE("cost_and_gradient plug-in identities") {
    const StreamedUpdate u = random_update(6, 40, 21);
    const CostParams p{0.5, 0.25};
    const Eigen::Matrix2Xd targets = target_velocity_matrix(u);

    const Decoder zero = Decoder::zeros(6);
    const CostGrad at_zero = cost_and_gradient(zero, u, p);
    CHECK(at_zero.cost == doctest::Approx(p.lambda_e * targets.squaredNorm()).epsilon(1e-12));
    const Eigen::Matrix2Xd expected_grad = -2.0 * p.lambda_e * targets * u.envelope.transpose();
    CHECK((at_zero.gradient - expected_grad).norm() < 1e-12 * (1.0 + expected_grad.norm()));

    const Decoder d = random_decoder(6, 22);
    const CostParams only_reg{0.0, 0.7};
    const CostGrad reg = cost_and_gradient(d, u, only_reg);
    CHECK(reg.cost == doctest::Approx(0.7 * d.weights.squaredNorm()).epsilon(1e-12));
    CHECK((reg.gradient - 1.4 * d.weights).norm() < 1e-12);
}

TEST_CASE("gradient matches central finite differences") {
    const CostParams p{1e-6, 1e-4};
    for (int instance = 0; instance < 20; ++instance) {
        const StreamedUpdate u = random_update(5, 30, 100 + instance);
        const Decoder d = random_decoder(5, 200 + instance);
        const CostGrad cg = cost_and_gradient(d, u, p);
        const double h = 1e-6;
        for (int c = 0; c < 5; c += 2) {
            for (int r = 0; r < 2; ++r) {
                Decoder plus = d, minus = d;
                plus.weights(r, c) += h;
                minus.weights(r, c) -= h;
                const double fd =
                    (cost_only(plus, u, p) - cost_only(minus, u, p)) / (2.0 * h);
                const double analytic = cg.gradient(r, c);
                CHECK(std::abs(fd - analytic) <= 1e-4 * (1.0 + std::abs(analytic)));
            }
        }
    }
}

TEST_CASE("solve_optimal exact fit and penalty dominance") {
    // C = T = 1, S = [2], V* = [4]: w = 2 exactly
    StreamedUpdate u;
    u.dt = 1.0;
    u.envelope.resize(1, 2);
    u.envelope << 2.0, 2.0;
    u.reference.rate = u.cursor.rate = 1.0;
    // gap (r - y) moves 4 units per second in x, 4 in y: targets are (4, 4)
    u.reference.samples = {{0.0, 0.0}, {4.0, 4.0}};
    u.cursor.samples = {{0.0, 0.0}, {0.0, 0.0}};
    const Decoder w = solve_optimal(u, {1.0, 0.0});
    CHECK(w.weights(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(w.weights(1, 0) == doctest::Approx(2.0).epsilon(1e-12));

    const StreamedUpdate big = random_update(6, 50, 31);
    const Decoder crushed = solve_optimal(big, {1.0, 1e12});
    CHECK(crushed.weights.norm() <= 1e-6);
}

TEST_CASE("solve_optimal is stationary and errors on singular systems") {
    const CostParams p{1e-6, 1e-4};
    const StreamedUpdate u = random_update(8, 120, 41);
    const Decoder w = solve_optimal(u, p);
    const CostGrad cg = cost_and_gradient(w, u, p);
    CHECK(cg.gradient.norm() <= 1e-8 * (1.0 + w.weights.norm()));

    StreamedUpdate degenerate = random_update(3, 20, 42);
    degenerate.envelope.setZero();
    CHECK_THROWS_AS(solve_optimal(degenerate, {1.0, 0.0}), SingularityError);
}

TEST_CASE("gradient descent: zero steps, one step, and closed-form agreement") {
    const CostParams p{1e-3, 1e-4};
    const StreamedUpdate u = random_update(6, 80, 51);
    const Decoder w0 = random_decoder(6, 52, 0.1);

    CHECK(decoders_equal(gradient_descent_solve(u, p, 0, 0.1, w0), w0));

    const double step = 0.05;
    const Decoder one = gradient_descent_solve(u, p, 1, step, Decoder::zeros(6));
    const Eigen::Matrix2Xd expected =
        2.0 * step * p.lambda_e * target_velocity_matrix(u) * u.envelope.transpose();
    CHECK((one.weights - expected).norm() <= 1e-12 * (1.0 + expected.norm()));

    const double L = gradient_lipschitz(u, p);
    const double mu = gradient_strong_convexity(u, p);
    const Decoder gd = gradient_descent_solve(u, p, 4000, 2.0 / (L + mu), w0);
    const Decoder exact = solve_optimal(u, p);
    CHECK(decoder_distance(gd, exact) <= 1e-6);
}

TEST_CASE("gradient descent is monotone below 1/L and detects divergence") {
    const CostParams p{1e-3, 1e-4};
    const StreamedUpdate u = random_update(5, 60, 61);
    const Decoder w0 = random_decoder(5, 62);
    const double L = gradient_lipschitz(u, p);

    Decoder w = w0;
    double prev = cost_only(w, u, p);
    for (int t = 0; t < 50; ++t) {
        w = gradient_descent_solve(u, p, 1, 0.9 / L, w);
        const double now = cost_only(w, u, p);
        CHECK(now <= prev * (1.0 + 1e-12));
        prev = now;
    }

    CHECK_THROWS_AS(gradient_descent_solve(u, p, 200, 50.0 / L, w0), StepSizeError);
}

TEST_CASE("smooth_batch identities and quadratic segment") {
    const Decoder a = random_decoder(4, 71);
    const Decoder b = random_decoder(4, 72);
    CHECK(decoders_equal(smooth_batch(a, b, {0.0}), a));
    CHECK(decoders_equal(smooth_batch(a, b, {1.0}), b));

    const Decoder mixed = smooth_batch(Decoder::zeros(4),
                                       [] {
                                           Decoder ones = Decoder::zeros(4);
                                           ones.weights.setOnes();
                                           return ones;
                                       }(),
                                       {0.75});
    CHECK((mixed.weights.array() == 0.75).all());

    // literal convex-combination identity, entrywise
    const SmoothBatchRate rate{0.3};
    const Decoder m = smooth_batch(a, b, rate);
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 2; ++r)
            CHECK(m.weights(r, c) == 0.7 * a.weights(r, c) + 0.3 * b.weights(r, c));

    // the cost along the segment is a univariate quadratic: a three-point fit
    // at {0, 1/2, 1} must predict the value at 1/4 exactly
    const StreamedUpdate u = random_update(4, 30, 73);
    const CostParams p{1e-2, 1e-3};
    auto f = [&](double alpha) { return cost_only(smooth_batch(a, b, {alpha}), u, p); };
    const double f0 = f(0.0), fh = f(0.5), f1 = f(1.0);
    const double qa = 2.0 * f0 - 4.0 * fh + 2.0 * f1;
    const double qb = -3.0 * f0 + 4.0 * fh - f1;
    const double predicted = qa * 0.0625 + qb * 0.25 + f0;
    CHECK(f(0.25) == doctest::Approx(predicted).epsilon(1e-9));

    Decoder wide = Decoder::zeros(5);
    CHECK_THROWS_AS(smooth_batch(a, wide, {0.5}), ConfigError);
    CHECK_THROWS_AS(smooth_batch(a, b, {1.5}), ConfigError);
}

TEST_CASE("velocity_error plug-ins and naive-sum oracle") {
    const CostParams p{1e-6, 1e-4};
    const StreamedUpdate u = random_update(6, 90, 81);

    // exact-fit construction: targets are generated by a known decoder
    {
        const Decoder w_true = random_decoder(6, 83, 0.2);
        StreamedUpdate exact = random_update(6, 60, 84);
        exact.envelope.col(59) = exact.envelope.col(58);  // padding-consistent tail
        exact.cursor.samples.assign(60, Eigen::Vector2d::Zero());
        Eigen::Vector2d gap(0.0, 0.0);
        for (int t = 0; t < 60; ++t) {
            exact.reference.samples[t] = gap;
            gap += exact.dt * (w_true.weights * exact.envelope.col(t));
        }
        const VelocityError perfect = velocity_error(w_true, exact, p);
        CHECK(perfect.weighted <= 1e-18);
        CHECK(perfect.rms_units_per_s <= 1e-6);
    }

    const Eigen::Matrix2Xd targets = target_velocity_matrix(u);
    const VelocityError at_zero = velocity_error(Decoder::zeros(6), u, p);
    CHECK(at_zero.weighted == doctest::Approx(p.lambda_e * targets.squaredNorm()).epsilon(1e-12));

    const Decoder d = random_decoder(6, 82);
    const VelocityError ve = velocity_error(d, u, p);
    double acc = 0.0;
    for (int t = 0; t < u.samples(); ++t) {
        const Eigen::Vector2d err = d.weights * u.envelope.col(t) - targets.col(t);
        acc += err.x() * err.x() + err.y() * err.y();
    }
    CHECK(ve.weighted == doctest::Approx(p.lambda_e * acc).epsilon(1e-12));
    CHECK(ve.rms_units_per_s == doctest::Approx(std::sqrt(acc / u.samples())).epsilon(1e-12));
}

}  // TEST_SUITE
