#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nichemap/corpus.hpp"
#include "nichemap/rng.hpp"
#include "nichemap/smap.hpp"

namespace nichemap {

enum class MapFamily { linear_var, ricker_lv, coupled_logistic, regime_switch };

MapFamily family_from_string(const std::string& name);
std::string family_to_string(MapFamily f);

// Discrete-time ecosystem with closed-form Jacobians.
//   linear_var:       x(t+1) = A x(t) + c + noise
//   ricker_lv:        x_i(t+1) = x_i(t) exp(r_i + sum_j A_ij x_j(t) + noise)
//   coupled_logistic: x_i(t+1) = x_i(t) (r_i + sum_j A_ij x_j(t)) exp(noise)
//   regime_switch:    ricker_lv whose A becomes a_post from switch_time on
struct SyntheticModel {
    MapFamily family = MapFamily::linear_var;
    int n = 0;
    Eigen::MatrixXd a;       // interaction matrix
    Eigen::MatrixXd a_post;  // regime_switch only
    int switch_time = 0;     // first transition index governed by a_post
    Eigen::VectorXd r;       // growth rates (LV/logistic) or intercept c (VAR)
    Eigen::VectorXd x0;
    double noise_sd = 0.0;
    std::uint64_t seed = 0;
};

struct GroundTruth {
    Eigen::MatrixXd trajectory;             // T x n, visited states
    Eigen::MatrixXd images;                 // (T-1) x n, noise-free one-step images
    std::vector<Eigen::MatrixXd> jacobians; // T-1 matrices, jacobians[t] = DF at x(t)
    std::vector<Eigen::MatrixXi> signs;     // sign(jacobians)
};

GroundTruth simulate(const SyntheticModel& model, int T);

// The map's deterministic part at one state (noise at zero). step_index
// selects the active regime for regime_switch models.
Eigen::VectorXd deterministic_step(const SyntheticModel& model, const Eigen::VectorXd& state,
                                   int step_index = 0);
Eigen::MatrixXd analytic_jacobian(const SyntheticModel& model, const Eigen::VectorXd& state,
                                  int step_index = 0);
Eigen::MatrixXd finite_difference_jacobian(const SyntheticModel& model,
                                           const Eigen::VectorXd& state, int step_index = 0,
                                           double h = 1e-6);

// Chain rule through the fitting transform: jacobians of the raw map
// re-expressed for the transformed coordinates the S-Map sees. Entry k
// covers the transition x(k) -> x(k+1).
std::vector<Eigen::MatrixXd> transform_truth_jacobians(const GroundTruth& truth,
                                                       const TransformRecord& rec);

struct RecoveryScore {
    double sign_accuracy = 0.0;  // off-diagonal cells with |truth| >= floor
    double correlation = 0.0;    // pooled over the same cells
    double scale_ratio = 0.0;    // through-origin slope of estimate on truth
    int cells = 0;
};

RecoveryScore recovery_score(const std::vector<Eigen::MatrixXd>& estimated,
                             const std::vector<Eigen::MatrixXd>& truth,
                             double noise_floor = 1e-3);

// Index s in [0, len] maximizing pre-sign agreement before s and post-sign
// agreement from s on; used to locate a planted regime switch.
int best_sign_change_point(const std::vector<double>& series, double pre_sign,
                           double post_sign);

// Index s in [1, len-1] minimizing the residual sum of squares of the two
// segment means (single least-squares change point); ties take the smaller s.
int least_squares_change_point(const std::vector<double>& series);

// Weekly author/token sharing rates for one community pair.
struct PairSchedule {
    int i = 0;
    int j = 0;
    std::vector<double> author_share;  // per week, in [0, 1]
    std::vector<double> token_share;   // per week, in [0, 1]
};

struct CorpusSchedule {
    int communities = 0;
    int weeks = 0;
    int authors_per_community = 40;   // base pool size
    int tokens_per_community = 60;
    int active_authors_per_week = 20;
    int messages_per_author = 3;      // mean, Poisson-like
    std::vector<PairSchedule> pairs;
    Eigen::MatrixXd group_size;       // optional (communities x weeks); scales rosters
    std::uint64_t seed = 0;
    std::string window_start = "2020-01-06";
};

// Generates contribution records realizing the scheduled weekly overlaps:
// shared authors/tokens are drawn from per-pair pools, each author writes
// with a per-(author, week) verbosity reused across communities so a share
// of 1 yields identical count vectors.
std::vector<ContributionRecord> synthetic_corpus(const CorpusSchedule& schedule);

}  // namespace nichemap
