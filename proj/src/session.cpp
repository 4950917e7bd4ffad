#include "emgfed/session.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "emgfed/errors.hpp"

namespace emgfed {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double_at(const std::string& token, std::size_t line_no, std::size_t field_no) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(token, &pos);
    } catch (const std::exception&) {
        throw FormatError("line " + std::to_string(line_no) + ", field " + std::to_string(field_no) +
                          ": not a number: '" + token + "'");
    }
    if (pos != token.size())
        throw FormatError("line " + std::to_string(line_no) + ", field " + std::to_string(field_no) +
                          ": trailing junk in '" + token + "'");
    if (!std::isfinite(v))
        throw FormatError("line " + std::to_string(line_no) + ", field " + std::to_string(field_no) +
                          ": non-finite value");
    return v;
}

}  // namespace

void StreamedUpdate::validate() const {
    if (envelope.rows() < 1 || envelope.cols() < 2)
        throw ConfigError("streamed update: envelope must be at least 1x2");
    if (!envelope.allFinite()) throw ConfigError("streamed update: non-finite envelope entries");
    if ((envelope.array() < 0.0).any())
        throw ConfigError("streamed update: negative envelope entries");
    if (reference.size() != samples() || cursor.size() != samples())
        throw ConfigError("streamed update: trajectory lengths must match envelope columns");
    if (!(dt > 0.0)) throw ConfigError("streamed update: dt must be positive");
}

int SubjectSession::total_samples() const {
    int n = 0;
    for (const auto& u : updates) n += u.samples();
    return n;
}

Eigen::MatrixXd envelope_downsample(const Eigen::MatrixXd& raw, double raw_rate, double out_rate,
                                    double window_ms) {
    if (!(raw_rate > 0.0) || !(out_rate > 0.0) || !(window_ms > 0.0))
        throw ConfigError("envelope_downsample: rates and window must be positive");
    if ((raw.array() < 0.0).any())
        throw ConfigError("envelope_downsample: input must be rectified (nonnegative)");

    const auto window = static_cast<Eigen::Index>(std::llround(window_ms / 1000.0 * raw_rate));
    const auto hop = static_cast<Eigen::Index>(std::llround(raw_rate / out_rate));
    if (window < 1 || hop < 1) throw ConfigError("envelope_downsample: degenerate window/hop");
    if (raw.cols() < window)
        throw DataError("envelope_downsample: input shorter than one window (" +
                        std::to_string(raw.cols()) + " < " + std::to_string(window) + " samples)");

    const Eigen::Index frames = (raw.cols() - window) / hop + 1;
    Eigen::MatrixXd out(raw.rows(), frames);
    for (Eigen::Index f = 0; f < frames; ++f)
        out.col(f) = raw.middleCols(f * hop, window).rowwise().mean();
    return out;
}

std::vector<StreamedUpdate> segment_updates(const Eigen::MatrixXd& envelope,
                                            const Trajectory& reference, const Trajectory& cursor,
                                            double update_seconds, int exclude_first) {
    if (exclude_first < 0) throw ConfigError("segment_updates: exclude_first must be >= 0");
    if (reference.size() != envelope.cols() || cursor.size() != envelope.cols())
        throw ConfigError("segment_updates: trajectory lengths must match envelope columns");
    if (!(reference.rate > 0.0)) throw ConfigError("segment_updates: rate must be positive");

    const auto update_len = static_cast<Eigen::Index>(std::llround(update_seconds * reference.rate));
    if (update_len < 2) throw ConfigError("segment_updates: update length below 2 samples");
    const Eigen::Index required = static_cast<Eigen::Index>(exclude_first + 1) * update_len;
    if (envelope.cols() < required)
        throw DataError("segment_updates: need at least " + std::to_string(required) +
                        " samples (" + std::to_string(exclude_first) + " excluded + 1 kept update), got " +
                        std::to_string(envelope.cols()));

    const Eigen::Index total = envelope.cols() / update_len;  // trailing partial dropped
    std::vector<StreamedUpdate> out;
    out.reserve(total - exclude_first);
    for (Eigen::Index k = exclude_first; k < total; ++k) {
        StreamedUpdate u;
        u.envelope = envelope.middleCols(k * update_len, update_len);
        u.reference = reference.slice(static_cast<int>(k * update_len), static_cast<int>(update_len));
        u.cursor = cursor.slice(static_cast<int>(k * update_len), static_cast<int>(update_len));
        u.dt = 1.0 / reference.rate;
        out.push_back(std::move(u));
    }
    return out;
}

void save_session(const std::string& path, const SubjectSession& session) {
    if (session.updates.empty()) throw ConfigError("save_session: session has no updates");
    const int channels = session.channels();
    const double rate = session.updates.front().reference.rate;
    const double dt = session.updates.front().dt;
    for (const auto& u : session.updates) {
        u.validate();
        if (u.channels() != channels || u.dt != dt)
            throw ConfigError("save_session: updates must share channel count and dt");
    }

    std::ofstream out(path);
    if (!out) throw FormatError("save_session: cannot open '" + path + "' for writing");

    out << "subject_id: " << session.subject_id << "\n";
    out << "seed: " << session.seed << "\n";
    out << "channels: " << channels << "\n";
    out << "rate_hz: " << fmt17(rate) << "\n";
    out << "dt: " << fmt17(dt) << "\n";
    out << "n_updates: " << session.n_updates() << "\n";
    out << "generator_tag: " << session.generator_tag << "\n";

    out << "t";
    for (int c = 0; c < channels; ++c) out << ",e" << c;
    out << ",rx,ry,yx,yy\n";

    long row = 0;
    for (const auto& u : session.updates) {
        for (int t = 0; t < u.samples(); ++t, ++row) {
            out << fmt17(static_cast<double>(row) / rate);
            for (int c = 0; c < channels; ++c) out << ',' << fmt17(u.envelope(c, t));
            out << ',' << fmt17(u.reference.samples[t].x()) << ',' << fmt17(u.reference.samples[t].y())
                << ',' << fmt17(u.cursor.samples[t].x()) << ',' << fmt17(u.cursor.samples[t].y());
            out << '\n';
        }
    }
    if (!out) throw FormatError("save_session: write failed for '" + path + "'");
}

SubjectSession load_session(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_session: cannot open '" + path + "'");

    SubjectSession session;
    int channels = -1;
    int n_updates = -1;
    double rate = 0.0;
    double dt = 0.0;
    std::string line;
    std::size_t line_no = 0;

    // manifest: "key: value" until the CSV header line
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.rfind("t,", 0) == 0) {
            header_seen = true;
            break;
        }
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            throw FormatError("line " + std::to_string(line_no) + ": expected 'key: value' manifest entry");
        const std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 1);
        if (!value.empty() && value.front() == ' ') value.erase(value.begin());
        if (key == "subject_id") session.subject_id = std::stoi(value);
        else if (key == "seed") session.seed = std::stoull(value);
        else if (key == "channels") channels = std::stoi(value);
        else if (key == "rate_hz") rate = parse_double_at(value, line_no, 2);
        else if (key == "dt") dt = parse_double_at(value, line_no, 2);
        else if (key == "n_updates") n_updates = std::stoi(value);
        else if (key == "generator_tag") session.generator_tag = value;
        else throw FormatError("line " + std::to_string(line_no) + ": unknown manifest key '" + key + "'");
    }
    if (!header_seen) throw FormatError("missing CSV header (file empty or truncated manifest)");
    if (channels < 1 || n_updates < 1 || !(rate > 0.0) || !(dt > 0.0))
        throw FormatError("manifest incomplete: need channels >= 1, n_updates >= 1, rate_hz > 0, dt > 0");

    const std::size_t expected_fields = static_cast<std::size_t>(channels) + 5;
    std::vector<Eigen::VectorXd> env_rows;
    std::vector<Eigen::Vector2d> ref, cur;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> fields;
        fields.reserve(expected_fields);
        std::size_t start = 0;
        std::size_t field_no = 0;
        while (true) {
            const auto comma = line.find(',', start);
            const std::string token = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                                    : comma - start);
            fields.push_back(parse_double_at(token, line_no, ++field_no));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != expected_fields)
            throw FormatError("line " + std::to_string(line_no) + ": expected " +
                              std::to_string(expected_fields) + " fields (channels: " +
                              std::to_string(channels) + "), got " + std::to_string(fields.size()));
        Eigen::VectorXd env(channels);
        for (int c = 0; c < channels; ++c) env[c] = fields[1 + c];
        env_rows.push_back(std::move(env));
        ref.emplace_back(fields[channels + 1], fields[channels + 2]);
        cur.emplace_back(fields[channels + 3], fields[channels + 4]);
    }
    if (env_rows.empty()) throw FormatError("no data rows after header");
    if (env_rows.size() % static_cast<std::size_t>(n_updates) != 0)
        throw FormatError("row count " + std::to_string(env_rows.size()) +
                          " not divisible by n_updates " + std::to_string(n_updates));

    const auto update_len = static_cast<int>(env_rows.size() / n_updates);
    for (int k = 0; k < n_updates; ++k) {
        StreamedUpdate u;
        u.envelope.resize(channels, update_len);
        u.reference.rate = rate;
        u.cursor.rate = rate;
        u.dt = dt;
        for (int t = 0; t < update_len; ++t) {
            const auto row = static_cast<std::size_t>(k) * update_len + t;
            u.envelope.col(t) = env_rows[row];
            u.reference.samples.push_back(ref[row]);
            u.cursor.samples.push_back(cur[row]);
        }
        u.validate();
        session.updates.push_back(std::move(u));
    }
    return session;
}

}  // namespace emgfed
