#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nichemap/smap.hpp"
#include "nichemap/vectorize.hpp"

namespace nichemap {

// Directed dyad-week rows: (target, source, week) carries the interaction
// entry c(target, source) plus the unordered pair's overlap values. The
// unordered dyad id groups the two directions for clustering.
struct DyadPanel {
    std::vector<std::string> communities;          // node universe, panel order
    std::vector<std::pair<int, int>> dyad_nodes;   // dyad id -> (lo, hi) node
    std::vector<int> dyad;                         // per row
    std::vector<int> target;                       // affected community
    std::vector<int> source;                       // driving community
    std::vector<int> week;
    std::vector<double> c_value;
    std::vector<double> topic;
    std::vector<double> user;
    long long dropped_rows = 0;  // rows lost to missing overlap during the join

    std::size_t rows() const { return week.size(); }
};

// Joins per-cluster interaction sequences with the overlap series on week
// index. Pairs are within-cluster only; rows lacking either overlap value
// are dropped and tallied. An empty result is an error.
DyadPanel build_dyad_panel(const std::vector<JacobianSequence>& sequences,
                           const OverlapTable& overlap);

void write_panel_csv(const std::string& path, const DyadPanel& panel);
DyadPanel read_dyad_panel_csv(const std::string& path);

// Demeaned regression inputs; rows keep their dyad tag for the vcov.
struct WithinDesign {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<int> dyad;                        // per row
    std::vector<std::pair<int, int>> dyad_nodes;  // dyad id -> nodes
    std::vector<std::string> regressors;
    int n_dyads = 0;
    int n_nodes = 0;
    long long dropped_rows = 0;  // single-row dyads

    std::size_t rows() const { return dyad.size(); }
};

// Subtracts dyad means from the outcome and every regressor; dyads with a
// single row drop out. A regressor left identically zero is an error.
WithinDesign within_transform(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              const std::vector<int>& row_dyad,
                              const std::vector<std::pair<int, int>>& dyad_nodes,
                              const std::vector<std::string>& regressors);

struct OlsFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd residuals;
};

// Rank-revealing least squares; rank deficiency is an error naming the
// trailing (collinear) columns of the pivot order.
OlsFit ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
               const std::vector<std::string>& names);

struct RobustVcov {
    Eigen::MatrixXd v;
    Eigen::VectorXd se;
    bool floored = false;  // meat had negative eigenvalues, clipped to 0
};

// Sandwich (X'X)^-1 M (X'X)^-1 with M summing x_r e_r e_s x_s' over ordered
// observation pairs whose dyads share at least one node (r = s included).
// Computed as sum_g S_g S_g' - sum_d S_d S_d' over node and dyad score sums.
RobustVcov dyadic_robust_vcov(const Eigen::MatrixXd& x, const Eigen::VectorXd& residuals,
                              const std::vector<int>& row_dyad,
                              const std::vector<std::pair<int, int>>& dyad_nodes,
                              int threads = 1);

// One-way clustering by dyad only (sharing relation = same dyad); used to
// cross-check the dyadic estimator's degenerate case.
RobustVcov cluster_robust_vcov(const Eigen::MatrixXd& x, const Eigen::VectorXd& residuals,
                               const std::vector<int>& row_dyad);

struct PanelFit {
    std::string model;
    std::vector<std::string> regressors;
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
    Eigen::VectorXd ci_low;   // coef - 1.96 se
    Eigen::VectorXd ci_high;  // coef + 1.96 se
    long long n_obs = 0;
    int n_dyads = 0;
    int n_nodes = 0;
    long long dropped_rows = 0;  // panel rows unusable for this model
    bool meat_floored = false;
};

struct PanelModelOptions {
    bool include_level_variants = false;
    int threads = 1;
};

// Dyad fixed effects, z-scored variables, dyadic-robust 95% intervals.
// Difference models (primary):
//   topic_change_on_interaction:  T(t+1) - T(t) ~ C(t)
//   user_change_on_interaction:   U(t+1) - U(t) ~ C(t)
//   interaction_on_topic_change:  C(t+1) ~ T(t) - T(t-1)
//   interaction_on_user_change:   C(t+1) ~ U(t) - U(t-1)
// Level variants replace the differenced side with its level: outcomes use
// the level at t+1, regressors the level at t.
std::vector<PanelFit> fit_panel_models(const DyadPanel& panel,
                                       const PanelModelOptions& options = {});

void write_fit_json(const std::string& path, const std::vector<PanelFit>& fits);

}  // namespace nichemap
