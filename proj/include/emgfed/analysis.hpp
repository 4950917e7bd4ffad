#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "emgfed/decoder.hpp"
#include "emgfed/federation.hpp"
#include "emgfed/session.hpp"

namespace emgfed {

enum class Scenario { IntraSubject, CrossSubject };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& name);

// Evaluation split. Intra-subject folds are contiguous within-subject update
// blocks (time-series respecting); cross-subject folds partition the subject
// set into k seeded groups.
struct FoldPlan {
    Scenario scenario = Scenario::IntraSubject;
    int k = 7;
    std::vector<std::vector<int>> update_folds;   // intra: fold -> update indices
    std::vector<std::vector<int>> subject_folds;  // cross: fold -> subject ids
    std::uint64_t seed = 0;
};

FoldPlan make_folds(const std::vector<SubjectSession>& sessions, Scenario scenario, int k,
                    std::uint64_t seed);

// d_t = |flatten(w_t) - flatten(w_final)|_2; last element is 0.
std::vector<double> distance_to_final(const std::vector<Decoder>& snapshots);

struct PcaResult {
    Eigen::MatrixXd projections;        // N x components
    Eigen::VectorXd explained_variance; // nonincreasing
    int components = 0;
    bool rank_deficient = false;
};

// Mean-subtracted PCA of flattened decoders onto the top `dims` directions.
// Deterministic: power iteration with deflation, fixed start vector, and the
// sign convention that each component's first nonzero entry is positive.
PcaResult pca_project(const std::vector<Decoder>& decoders, int dims = 2);

struct SummaryRow {
    std::string algorithm;  // e.g. "Local", "FedAvg", "PerFedAvg", "PerFedAvg-personalized"
    Scenario scenario = Scenario::IntraSubject;
    int fold = 0;
    int subject = 0;
    double vel_err_weighted = 0.0;
    double vel_err_rms = 0.0;
};

// Final-decoder velocity error on the held-out data of one fold.
//   Local  intra: each subject's own final decoder on their held-out updates.
//   Local  cross: mean error of the training subjects' decoders on each test
//                 subject's session.
//   FedAvg:       final global on the held-out data.
//   PerFedAvg:    global plus (intra only) the personalized decoders.
std::vector<SummaryRow> summarize(const std::string& algorithm_label, Scenario scenario, int fold,
                                  const FoldPlan& plan, const RunArtifacts& artifacts,
                                  const std::vector<SubjectSession>& all_sessions,
                                  const CostParams& p);

}  // namespace emgfed
