#include "emgfed/trajectory.hpp"

#include <cmath>
#include <numbers>

#include "emgfed/errors.hpp"

namespace emgfed {

Trajectory Trajectory::slice(int begin, int length) const {
    if (begin < 0 || length < 0 || begin + length > size())
        throw ConfigError("trajectory slice out of range");
    Trajectory out;
    out.rate = rate;
    out.samples.assign(samples.begin() + begin, samples.begin() + begin + length);
    return out;
}

Trajectory generate_reference(const ReferenceSpec& spec, Rng& rng) {
    for (double f : {spec.freqs_x[0], spec.freqs_x[1], spec.freqs_y[0], spec.freqs_y[1]})
        if (!(f > 0.0)) throw ConfigError("reference frequencies must be positive");
    if (!(spec.duration_s > 0.0)) throw ConfigError("reference duration must be positive");
    if (!(spec.rate > 0.0)) throw ConfigError("reference rate must be positive");
    if (!std::isfinite(spec.amplitude)) throw ConfigError("reference amplitude must be finite");

    const auto n = static_cast<long>(std::llround(spec.duration_s * spec.rate));
    if (n < 2) throw ConfigError("reference too short: need at least 2 samples");

    std::array<double, 4> phases = spec.phases;
    if (spec.randomize_phases) {
        for (double& p : phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }

    const double two_pi = 2.0 * std::numbers::pi;
    Trajectory out;
    out.rate = spec.rate;
    out.samples.resize(n);
    for (long k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / spec.rate;
        const double x = spec.amplitude * (std::sin(two_pi * spec.freqs_x[0] * t + phases[0]) +
                                           std::sin(two_pi * spec.freqs_x[1] * t + phases[1]));
        const double y = spec.amplitude * (std::sin(two_pi * spec.freqs_y[0] * t + phases[2]) +
                                           std::sin(two_pi * spec.freqs_y[1] * t + phases[3]));
        out.samples[k] = Eigen::Vector2d(x, y);
    }
    return out;
}

}  // namespace emgfed
