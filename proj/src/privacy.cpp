#include "emgfed/privacy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "emgfed/errors.hpp"

namespace emgfed {

void SnapshotDataset::validate() const {
    if (features.rows() != size()) throw ConfigError("snapshot dataset: feature/label count mismatch");
    std::map<int, int> counts;
    for (int label : labels) ++counts[label];
    for (const auto& [subject, count] : counts)
        if (count != per_subject)
            throw ConfigError("snapshot dataset: subject " + std::to_string(subject) + " has " +
                              std::to_string(count) + " snapshots, expected " +
                              std::to_string(per_subject));
}

Eigen::VectorXd flatten_decoder(const Decoder& d) {
    Eigen::VectorXd out(2 * d.channels());
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < d.channels(); ++c) out[r * d.channels() + c] = d.weights(r, c);
    return out;
}

namespace {

SnapshotDataset assemble(const std::vector<std::pair<int, std::vector<const Decoder*>>>& per_subject,
                         int n) {
    SnapshotDataset ds;
    ds.per_subject = n;
    const auto dim = static_cast<Eigen::Index>(2 * per_subject.front().second.front()->channels());
    ds.features.resize(static_cast<Eigen::Index>(per_subject.size()) * n, dim);
    Eigen::Index row = 0;
    for (const auto& [subject, snaps] : per_subject) {
        for (const Decoder* d : snaps) {
            ds.features.row(row) = flatten_decoder(*d).transpose();
            ds.labels.push_back(subject);
            ++row;
        }
    }
    ds.validate();
    return ds;
}

std::vector<const Decoder*> last_n(const std::vector<Decoder>& seq, int n, int subject) {
    if (static_cast<int>(seq.size()) < n)
        throw DataError("collect_snapshots: subject " + std::to_string(subject) + " has only " +
                        std::to_string(seq.size()) + " snapshots, need " + std::to_string(n));
    std::vector<const Decoder*> out;
    for (std::size_t i = seq.size() - n; i < seq.size(); ++i) out.push_back(&seq[i]);
    return out;
}

}  // namespace

SnapshotDataset collect_snapshots(const RunArtifacts& artifacts, int n, SnapshotSource source) {
    if (n < 1) throw ConfigError("collect_snapshots: n must be >= 1");
    if (artifacts.subject_ids.empty()) throw DataError("collect_snapshots: artifacts have no clients");

    std::vector<std::pair<int, std::vector<const Decoder*>>> per_subject;
    for (std::size_t k = 0; k < artifacts.subject_ids.size(); ++k) {
        const int subject = artifacts.subject_ids[k];
        switch (source) {
            case SnapshotSource::Local:
                per_subject.emplace_back(subject, last_n(artifacts.client_snapshots[k], n, subject));
                break;
            case SnapshotSource::Personalized:
                per_subject.emplace_back(subject, last_n(artifacts.client_personalized[k], n, subject));
                break;
            case SnapshotSource::GlobalCopy: {
                if (artifacts.global_history.empty())
                    throw DataError("collect_snapshots: run has no global history");
                std::vector<const Decoder*> copies(n, &artifacts.global_history.back());
                per_subject.emplace_back(subject, std::move(copies));
                break;
            }
        }
    }
    return assemble(per_subject, n);
}

SnapshotDataset collect_trial_snapshots(const std::vector<TrialTrace>& traces,
                                        const std::vector<int>& subject_ids, int n) {
    if (traces.size() != subject_ids.size())
        throw ConfigError("collect_trial_snapshots: trace/subject count mismatch");
    if (traces.empty()) throw DataError("collect_trial_snapshots: no traces");
    std::vector<std::pair<int, std::vector<const Decoder*>>> per_subject;
    for (std::size_t k = 0; k < traces.size(); ++k)
        per_subject.emplace_back(subject_ids[k],
                                 last_n(traces[k].decoder_snapshots, n, subject_ids[k]));
    return assemble(per_subject, n);
}

int LinearClassifier::predict(const Eigen::VectorXd& features) const {
    const Eigen::VectorXd x = (features - feature_mean).cwiseQuotient(feature_scale);
    int best = 0;
    double best_score = weights.row(0).dot(x) + bias[0];
    for (int k = 1; k < static_cast<int>(classes.size()); ++k) {
        const double score = weights.row(k).dot(x) + bias[k];
        if (score > best_score) {  // strict: ties keep the lowest class id
            best_score = score;
            best = k;
        }
    }
    return classes[best];
}

LinearClassifier train_classifier(const SnapshotDataset& train, double reg, int epochs,
                                  std::uint64_t seed) {
    (void)seed;  // zero-init full-batch training is already deterministic
    if (train.size() < 2) throw ConfigError("train_classifier: need at least 2 samples");
    if (!(reg > 0.0)) throw ConfigError("train_classifier: reg must be positive");

    // canonical sample order: by label, then lexicographically by feature
    // values, so training is independent of input row order
    std::vector<int> order(train.size());
    for (int i = 0; i < train.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (train.labels[a] != train.labels[b]) return train.labels[a] < train.labels[b];
        for (Eigen::Index j = 0; j < train.features.cols(); ++j) {
            if (train.features(a, j) != train.features(b, j))
                return train.features(a, j) < train.features(b, j);
        }
        return false;
    });

    LinearClassifier clf;
    for (int i : order)
        if (clf.classes.empty() || clf.classes.back() != train.labels[i])
            clf.classes.push_back(train.labels[i]);
    if (clf.classes.size() < 2) throw ConfigError("train_classifier: single-class training set");

    const auto n = static_cast<Eigen::Index>(train.size());
    const Eigen::Index dim = train.features.cols();

    clf.feature_mean = train.features.colwise().mean();
    Eigen::VectorXd variance = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd centered = train.features.row(i).transpose() - clf.feature_mean;
        variance += centered.cwiseProduct(centered);
    }
    variance /= static_cast<double>(n);
    clf.feature_scale = variance.cwiseSqrt().cwiseMax(1e-12);

    Eigen::MatrixXd x(n, dim);
    for (Eigen::Index i = 0; i < n; ++i)
        x.row(static_cast<Eigen::Index>(i)) =
            ((train.features.row(order[i]).transpose() - clf.feature_mean)
                 .cwiseQuotient(clf.feature_scale))
                .transpose();

    const auto n_classes = static_cast<int>(clf.classes.size());
    clf.weights = Eigen::MatrixXd::Zero(n_classes, dim);
    clf.bias = Eigen::VectorXd::Zero(n_classes);

    // J(v, b) = reg/2 |v|^2 + mean_i max(0, 1 - y_i (v x_i + b)), minimized by
    // full-batch subgradient steps with 1/t decay.
    for (int k = 0; k < n_classes; ++k) {
        Eigen::VectorXd sign(n);
        for (Eigen::Index i = 0; i < n; ++i)
            sign[i] = train.labels[order[i]] == clf.classes[k] ? 1.0 : -1.0;

        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
        double b = 0.0;
        for (int epoch = 1; epoch <= epochs; ++epoch) {
            const Eigen::VectorXd scores =
                (x * v) + Eigen::VectorXd::Constant(n, b);
            const Eigen::VectorXd margins = sign.cwiseProduct(scores);
            Eigen::VectorXd grad_v = reg * v;
            double grad_b = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (margins[i] < 1.0) {
                    grad_v -= (sign[i] / static_cast<double>(n)) * x.row(i).transpose();
                    grad_b -= sign[i] / static_cast<double>(n);
                }
            }
            const double step = 1.0 / (reg * static_cast<double>(epoch));
            v -= step * grad_v;
            b -= step * grad_b;
        }
        clf.weights.row(k) = v.transpose();
        clf.bias[k] = b;
    }
    return clf;
}

PrivacyReport loocv_attack(const SnapshotDataset& dataset, double reg, int epochs,
                           std::uint64_t seed, int workers) {
    dataset.validate();
    std::map<int, int> subject_count;
    for (int label : dataset.labels) ++subject_count[label];
    if (subject_count.size() < 2) throw ConfigError("loocv_attack: need at least 2 subjects");

    const int n = dataset.size();
    const Eigen::Index dim = dataset.features.cols();
    std::vector<int> predicted(n, 0);

    auto fold = [&](int held_out) {
        SnapshotDataset train;
        train.per_subject = dataset.per_subject;  // not validated per-fold
        train.features.resize(n - 1, dim);
        Eigen::Index row = 0;
        for (int i = 0; i < n; ++i) {
            if (i == held_out) continue;
            train.features.row(row++) = dataset.features.row(i);
            train.labels.push_back(dataset.labels[i]);
        }
        const LinearClassifier clf = train_classifier(train, reg, epochs, seed);
        predicted[held_out] = clf.predict(dataset.features.row(held_out).transpose());
    };

    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fold(i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr error;
        std::mutex error_mutex;
        for (int w = 0; w < std::min(workers, n); ++w) {
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                    try {
                        fold(i);
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

    PrivacyReport report;
    std::map<int, int> correct;
    for (int i = 0; i < n; ++i)
        if (predicted[i] == dataset.labels[i]) ++correct[dataset.labels[i]];
    double sum = 0.0;
    for (const auto& [subject, count] : subject_count) {
        SubjectAttackResult r;
        r.n_correct = correct[subject];
        r.n_total = count;
        r.accuracy = static_cast<double>(r.n_correct) / r.n_total;
        report.per_subject[subject] = r;
        sum += r.accuracy;
    }
    report.mean_accuracy = sum / static_cast<double>(subject_count.size());
    return report;
}

void save_privacy_report(const std::string& path, const PrivacyReport& report) {
    std::ofstream out(path);
    if (!out) throw FormatError("save_privacy_report: cannot open '" + path + "'");
    out << "subject_id,n_correct,n_total,accuracy\n";
    for (const auto& [subject, r] : report.per_subject) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", r.accuracy);
        out << subject << ',' << r.n_correct << ',' << r.n_total << ',' << buf << "\n";
    }
    char mean_buf[64];
    std::snprintf(mean_buf, sizeof(mean_buf), "%.17g", report.mean_accuracy);
    out << "# condition=" << report.condition << " mean_accuracy=" << mean_buf << "\n";
}

}  // namespace emgfed
