#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "emgfed/rng.hpp"

namespace emgfed {

// Planar path sampled at a fixed rate; screen coordinates are normalized to
// [-1, 1] per axis. The cm_per_unit display scale lives in the experiment
// config, not here.
struct Trajectory {
    std::vector<Eigen::Vector2d> samples;
    double rate = 60.0;

    int size() const { return static_cast<int>(samples.size()); }
    Trajectory slice(int begin, int length) const;
};

// Sum-of-two-sinusoids reference per axis. Default frequencies give a common
// period of 20 s, so the reference repeats exactly once per streamed update.
struct ReferenceSpec {
    std::array<double, 2> freqs_x{0.10, 0.25};  // Hz
    std::array<double, 2> freqs_y{0.15, 0.35};  // Hz
    double amplitude = 0.5;                     // screen units per sinusoid
    std::array<double, 4> phases{0.0, 0.0, 0.0, 0.0};  // radians: x1, x2, y1, y2
    bool randomize_phases = true;
    double duration_s = 360.0;
    double rate = 60.0;
};

// r_x(t) = A*(sin(2*pi*f1*t + p1) + sin(2*pi*f2*t + p2)), analogous for y.
// When randomize_phases is set the four phases are drawn U[0, 2*pi) from rng
// (one fresh phase set per trial); otherwise spec.phases are used verbatim.
Trajectory generate_reference(const ReferenceSpec& spec, Rng& rng);

}  // namespace emgfed
