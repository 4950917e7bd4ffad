#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "emgfed/closedloop.hpp"
#include "emgfed/decoder.hpp"
#include "emgfed/federation.hpp"

namespace emgfed {

// Flattened decoder snapshots (row-major 2*C features) labeled by subject.
struct SnapshotDataset {
    Eigen::MatrixXd features;  // N x (2*C)
    std::vector<int> labels;   // N subject ids
    int per_subject = 6;

    int size() const { return static_cast<int>(labels.size()); }
    void validate() const;  // equal snapshot count per subject
};

enum class SnapshotSource { Local, Personalized, GlobalCopy };

Eigen::VectorXd flatten_decoder(const Decoder& d);

// Last n snapshots per subject from an open-loop/sequential run.
//   Local        -> the client's own uploaded/fit decoder sequence
//   Personalized -> tail of the post-hoc personalization path
//   GlobalCopy   -> n copies of the final global model per subject
SnapshotDataset collect_snapshots(const RunArtifacts& artifacts, int n, SnapshotSource source);

// Last n per-update decoders per closed-loop trial (one trial per subject).
SnapshotDataset collect_trial_snapshots(const std::vector<TrialTrace>& traces,
                                        const std::vector<int>& subject_ids, int n);

// One-vs-rest L2-regularized hinge-loss linear classifiers trained by
// deterministic full-batch subgradient descent on standardized features.
// Ties at prediction break to the lowest class id.
struct LinearClassifier {
    std::vector<int> classes;
    Eigen::MatrixXd weights;  // classes x D
    Eigen::VectorXd bias;     // classes
    Eigen::VectorXd feature_mean;   // standardization, from the training set only
    Eigen::VectorXd feature_scale;

    int predict(const Eigen::VectorXd& features) const;
};

LinearClassifier train_classifier(const SnapshotDataset& train, double reg = 1e-2,
                                  int epochs = 2000, std::uint64_t seed = 0);

struct SubjectAttackResult {
    int n_correct = 0;
    int n_total = 0;
    double accuracy = 0.0;
};

struct PrivacyReport {
    std::map<int, SubjectAttackResult> per_subject;
    double mean_accuracy = 0.0;  // average of the per-subject accuracies
    std::string condition;
};

// Leave-one-out: train on N-1 samples, predict the held-out label; reports
// per-subject identification accuracy. Folds are independent and may run in
// parallel without changing the report.
PrivacyReport loocv_attack(const SnapshotDataset& dataset, double reg = 1e-2, int epochs = 2000,
                           std::uint64_t seed = 0, int workers = 1);

void save_privacy_report(const std::string& path, const PrivacyReport& report);

}  // namespace emgfed
