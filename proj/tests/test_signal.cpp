#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "emgfed/errors.hpp"
#include "emgfed/session.hpp"
#include "emgfed/synth.hpp"
#include "emgfed/trajectory.hpp"

using namespace emgfed;

namespace {

ReferenceSpec short_spec(double duration_s = 40.0) {
    ReferenceSpec spec;
    spec.duration_s = duration_s;
    spec.randomize_phases = false;
    return spec;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("signal") {

TEST_CASE("reference starts at the origin with zero phases") {
    Rng rng(1);
    ReferenceSpec spec = short_spec();
    spec.amplitude = 1.0;
    const Trajectory r = generate_reference(spec, rng);
    CHECK(r.samples[0].x() == 0.0);
    CHECK(r.samples[0].y() == 0.0);
    CHECK(r.size() == 2400);
}

TEST_CASE("default frequencies repeat every 20 s at sample resolution") {
    Rng rng(5);
    ReferenceSpec spec;
    spec.duration_s = 60.0;
    const Trajectory r = generate_reference(spec, rng);
    const int period = static_cast<int>(20.0 * spec.rate);
    for (int t = 0; t + period < r.size(); t += 7) {
        CHECK(r.samples[t].x() == doctest::Approx(r.samples[t + period].x()).epsilon(1e-10));
        CHECK(r.samples[t].y() == doctest::Approx(r.samples[t + period].y()).epsilon(1e-10));
    }
}

TEST_CASE("reference generation is deterministic per seed") {
    ReferenceSpec spec;
    spec.duration_s = 20.0;
    Rng a(77), b(77), c(78);
    const Trajectory ra = generate_reference(spec, a);
    const Trajectory rb = generate_reference(spec, b);
    const Trajectory rc = generate_reference(spec, c);
    bool identical = true;
    bool differs = false;
    for (int t = 0; t < ra.size(); ++t) {
        identical &= ra.samples[t] == rb.samples[t];
        differs |= ra.samples[t] != rc.samples[t];
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("reference validation") {
    Rng rng(1);
    ReferenceSpec spec = short_spec();
    spec.duration_s = 0.0;
    CHECK_THROWS_AS(generate_reference(spec, rng), ConfigError);
    spec = short_spec();
    spec.freqs_y[1] = -1.0;
    CHECK_THROWS_AS(generate_reference(spec, rng), ConfigError);
    spec = short_spec();
    spec.rate = 0.0;
    CHECK_THROWS_AS(generate_reference(spec, rng), ConfigError);
}

TEST_CASE("envelope_downsample: constant and zero inputs") {
    const Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(3, 4096, 2.5);
    const Eigen::MatrixXd down = envelope_downsample(constant);
    CHECK(down.rows() == 3);
    for (Eigen::Index f = 0; f < down.cols(); ++f)
        for (int c = 0; c < 3; ++c) CHECK(down(c, f) == doctest::Approx(2.5).epsilon(1e-15));

    const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(2, 1024);
    CHECK(envelope_downsample(zeros).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("envelope_downsample matches a brute-force windowed mean") {
    // impulse plus random payload, checked frame by frame
    Rng rng(13);
    Eigen::MatrixXd raw(2, 2048);
    for (Eigen::Index t = 0; t < raw.cols(); ++t) {
        raw(0, t) = 0.0;
        raw(1, t) = rng.uniform();
    }
    raw(0, 700) = 5.0;  // unit impulse scaled

    const Eigen::MatrixXd down = envelope_downsample(raw);
    const int window = 512;  // 250 ms at 2048 Hz
    const int hop = 34;      // round(2048 / 60)
    CHECK(down.cols() == (2048 - window) / hop + 1);
    for (Eigen::Index f = 0; f < down.cols(); ++f) {
        for (int c = 0; c < 2; ++c) {
            double acc = 0.0;
            for (int i = 0; i < window; ++i) acc += raw(c, f * hop + i);
            CHECK(down(c, f) == doctest::Approx(acc / window).epsilon(1e-12));
        }
        // impulse mass appears exactly where the window overlaps sample 700
        const bool overlaps = f * hop <= 700 && 700 < f * hop + window;
        CHECK(down(0, f) == (overlaps ? doctest::Approx(5.0 / window) : doctest::Approx(0.0)));
    }
}

TEST_CASE("envelope_downsample error paths") {
    CHECK_THROWS_AS(envelope_downsample(Eigen::MatrixXd::Zero(2, 100)), DataError);
    CHECK_THROWS_AS(envelope_downsample(Eigen::MatrixXd::Constant(2, 600, -1.0)), ConfigError);
}

TEST_CASE("segment_updates splits, excludes and floors") {
    Rng rng(2);
    ReferenceSpec spec = short_spec(360.0);
    const Trajectory ref = generate_reference(spec, rng);
    Trajectory cursor = ref;  // any same-length trajectory works
    Eigen::MatrixXd env = Eigen::MatrixXd::Zero(4, ref.size());
    for (Eigen::Index t = 0; t < env.cols(); ++t) env(0, t) = static_cast<double>(t);

    const auto updates = segment_updates(env, ref, cursor, 20.0, 2);
    REQUIRE(updates.size() == 16);
    for (const auto& u : updates) CHECK(u.samples() == 1200);
    // concatenation of excluded prefix + output reconstructs the input
    for (std::size_t k = 0; k < updates.size(); ++k)
        for (int t = 0; t < 1200; ++t)
            CHECK(updates[k].envelope(0, t) == env(0, (k + 2) * 1200 + t));

    const auto one = segment_updates(env.leftCols(1200), ref.slice(0, 1200), cursor.slice(0, 1200),
                                     20.0, 0);
    CHECK(one.size() == 1);

    // 359 s: the partial 18th update is dropped
    const int n359 = 359 * 60;
    const auto seventeen = segment_updates(env.leftCols(n359), ref.slice(0, n359),
                                           cursor.slice(0, n359), 20.0, 0);
    CHECK(seventeen.size() == 17);

    CHECK_THROWS_AS(segment_updates(env.leftCols(1200), ref.slice(0, 1200), cursor.slice(0, 1200),
                                    20.0, 2),
                    DataError);
}

TEST_CASE("session save/load round-trips bit-exactly") {
    SubjectModelParams params;
    params.channels = 6;
    params.mode = GeneratorMode::StaticEncoder;
    ReferenceSpec spec;
    const SubjectSession session = synthesize_session(3, params, spec, 3, 99);

    const std::string path = temp_path("emgfed_session_roundtrip.csv");
    save_session(path, session);
    const SubjectSession loaded = load_session(path);

    CHECK(loaded.subject_id == session.subject_id);
    CHECK(loaded.seed == session.seed);
    CHECK(loaded.generator_tag == session.generator_tag);
    REQUIRE(loaded.n_updates() == session.n_updates());
    for (int k = 0; k < session.n_updates(); ++k) {
        const auto& a = session.updates[k];
        const auto& b = loaded.updates[k];
        CHECK((a.envelope.array() == b.envelope.array()).all());
        for (int t = 0; t < a.samples(); ++t) {
            CHECK(a.reference.samples[t] == b.reference.samples[t]);
            CHECK(a.cursor.samples[t] == b.cursor.samples[t]);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("session load rejects malformed files") {
    const std::string path = temp_path("emgfed_session_bad.csv");
    {
        std::ofstream out(path);
    }
    CHECK_THROWS_AS(load_session(path), FormatError);  // empty file

    {
        std::ofstream out(path);
        out << "subject_id: 1\nseed: 2\nchannels: 3\nrate_hz: 60\ndt: 0.016666666666666666\n"
            << "n_updates: 1\ngenerator_tag: test\n"
            << "t,e0,e1,e2,rx,ry,yx,yy\n"
            << "0,1,2,0.5,0.5,0,0\n";  // 7 fields, channel column missing
    }
    CHECK_THROWS_AS(load_session(path), FormatError);

    {
        std::ofstream out(path);
        out << "subject_id: 1\nseed: 2\nchannels: 3\nrate_hz: 60\ndt: 0.016666666666666666\n"
            << "n_updates: 1\ngenerator_tag: test\n"
            << "t,e0,e1,e2,rx,ry,yx,yy\n"
            << "0,1,2,3,nan,0.5,0,0\n";  // non-finite value
    }
    CHECK_THROWS_AS(load_session(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("synthesize_session is pure in (subject, params, seed)") {
    SubjectModelParams params;
    params.channels = 8;
    ReferenceSpec spec;
    const SubjectSession a = synthesize_session(1, params, spec, 3, 1234);
    const SubjectSession b = synthesize_session(1, params, spec, 3, 1234);
    const SubjectSession c = synthesize_session(2, params, spec, 3, 1234);

    REQUIRE(a.n_updates() == b.n_updates());
    bool identical = true;
    for (int k = 0; k < a.n_updates(); ++k)
        identical &= (a.updates[k].envelope.array() == b.updates[k].envelope.array()).all();
    CHECK(identical);

    // same seed, different subject id: different encoder, different envelopes
    bool differs = false;
    for (int k = 0; k < a.n_updates() && !differs; ++k)
        differs = (a.updates[k].envelope.array() != c.updates[k].envelope.array()).any();
    CHECK(differs);
}

TEST_CASE("static-encoder session with zero intent is the baseline tone") {
    SubjectModelParams params;
    params.channels = 5;
    params.mode = GeneratorMode::StaticEncoder;
    params.noise_scale = 0.0;
    ReferenceSpec spec;
    spec.amplitude = 0.0;  // constant reference: zero intent
    const SubjectSession session = synthesize_session(0, params, spec, 2, 7);
    const SimulatedUser user = make_subject_user(0, params, 7);
    for (const auto& u : session.updates)
        for (int t = 0; t < u.samples(); ++t)
            for (int c = 0; c < 5; ++c) CHECK(u.envelope(c, t) == user.baseline[c]);
}

TEST_CASE("default replay cohort matches the expected session size") {
    SubjectModelParams params;
    params.channels = 8;  // small for speed; counts are what matter here
    ReferenceSpec spec;
    const SubjectSession full = synthesize_session(0, params, spec, 18, 5);
    CHECK(full.total_samples() == 18 * 1200);
    const SubjectSession trimmed = trim_session(full, 2);
    CHECK(trimmed.n_updates() == 16);
    CHECK(trimmed.total_samples() == 19200);
    for (const auto& u : trimmed.updates) {
        CHECK((u.envelope.array() >= 0.0).all());
        CHECK(u.envelope.allFinite());
    }
}

}  // TEST_SUITE
