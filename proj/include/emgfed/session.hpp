#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "emgfed/trajectory.hpp"

namespace emgfed {

// One 20-second window of envelope samples plus the reference and cursor
// trajectories covering the same ticks; the atomic decoder-training unit.
struct StreamedUpdate {
    Eigen::MatrixXd envelope;  // channels x samples, nonnegative
    Trajectory reference;      // length == samples
    Trajectory cursor;         // length == samples
    double dt = 1.0 / 60.0;

    int channels() const { return static_cast<int>(envelope.rows()); }
    int samples() const { return static_cast<int>(envelope.cols()); }
    void validate() const;  // throws ConfigError on invariant violations
};

struct SubjectSession {
    int subject_id = 0;
    std::vector<StreamedUpdate> updates;
    std::uint64_t seed = 0;
    std::string generator_tag;

    int n_updates() const { return static_cast<int>(updates.size()); }
    int channels() const { return updates.empty() ? 0 : updates.front().channels(); }
    int total_samples() const;
};

// Rolling mean over window_ms windows, hop chosen so the output rate is
// nominally out_rate. With the defaults (2048 Hz in, 60 Hz out, 250 ms
// window) the hop is round(2048/60) = 34 samples, i.e. 60.24 Hz nominal and
// ~93% window overlap; downstream segmentation counts samples, not wall time.
Eigen::MatrixXd envelope_downsample(const Eigen::MatrixXd& raw, double raw_rate = 2048.0,
                                    double out_rate = 60.0, double window_ms = 250.0);

// Cuts a session-length stream into consecutive, non-overlapping updates of
// update_seconds each, drops the first exclude_first and any trailing partial
// segment.
std::vector<StreamedUpdate> segment_updates(const Eigen::MatrixXd& envelope,
                                            const Trajectory& reference, const Trajectory& cursor,
                                            double update_seconds = 20.0, int exclude_first = 2);

// Plain-text session file: "key: value" manifest lines followed by a CSV
// payload `t,e0..e{C-1},rx,ry,yx,yy`, one row per sample. Numeric payload
// round-trips bit-exactly (17 significant digits).
void save_session(const std::string& path, const SubjectSession& session);
SubjectSession load_session(const std::string& path);

}  // namespace emgfed
