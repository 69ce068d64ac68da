#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nichemap {

enum class StateTransform { identity, standardize, log1p_standardize };

StateTransform transform_from_string(const std::string& name);
std::string transform_to_string(StateTransform t);

struct TransformRecord {
    StateTransform kind = StateTransform::log1p_standardize;
    Eigen::VectorXd mean;  // per community, over the transformed-but-uncentered series
    Eigen::VectorXd sd;    // per community, ddof = 1
};

// One cluster's fitting input: rows are consecutive observed weeks, columns
// communities. week_of keeps the original week index so transitions that
// span a gap can be excluded from the fit.
struct StateTrajectory {
    std::string cluster_id;
    std::vector<std::string> communities;
    std::vector<int> week_of;  // strictly increasing
    Eigen::MatrixXd x;         // T x n
    TransformRecord transform;

    int times() const { return static_cast<int>(x.rows()); }
    int dims() const { return static_cast<int>(x.cols()); }
    // Rows t whose transition x(t-1) -> x(t) does not span a gap.
    std::vector<int> transition_targets() const;
};

// min_length < 0 selects the default n + 8.
StateTrajectory preprocess(const std::string& cluster_id,
                           const std::vector<std::string>& communities,
                           const Eigen::MatrixXd& raw, const std::vector<int>& week_of,
                           StateTransform kind = StateTransform::log1p_standardize,
                           int min_length = -1);

struct SmapHyperparameters {
    double theta = 0.0;   // locality
    double alpha = 0.5;   // l1 ratio
    double lambda = 0.0;  // total penalty
};

// Exponential kernel over transition targets other than t_star. The mean
// distance d_bar normalizes the bandwidth; the target itself re-enters the
// full-sequence fit separately with weight exp(0) = 1.
struct KernelWeights {
    std::vector<int> t;  // transition targets, t != t_star
    std::vector<double> w;
    double d_bar = 0.0;
};
KernelWeights kernel_weights(const StateTrajectory& traj, int t_star, double theta);

struct LocalFit {
    Eigen::VectorXd intercept;  // n
    Eigen::MatrixXd coef;       // n x n, coef(a, b) = effect of b on next-step a
    int sweeps = 0;
};

// Elastic-net weighted regression for one target time, solved per output
// coordinate by cyclic coordinate descent with soft-thresholding.
// include_target keeps the target's own transition in the fitting set
// (weight 1); leave-one-out prediction passes false.
LocalFit fit_local_regression(const StateTrajectory& traj, int t_star,
                              const SmapHyperparameters& hp, bool include_target = true);

struct JacobianSequence {
    std::string cluster_id;
    std::vector<std::string> communities;
    std::vector<int> target;              // trajectory row index per matrix
    std::vector<int> week;                // predicted week per matrix
    std::vector<Eigen::MatrixXd> c;       // n x n each
    std::vector<Eigen::VectorXd> intercept;
};

JacobianSequence jacobian_sequence(const StateTrajectory& traj,
                                   const SmapHyperparameters& hp, int threads = 1);

struct CvEntry {
    SmapHyperparameters hp;
    double rmse = 0.0;
};

struct CvReport {
    std::vector<CvEntry> grid;
    SmapHyperparameters selected;
    double selected_rmse = 0.0;
    Eigen::VectorXd coordinate_rmse;  // per community at the selected triple
};

std::vector<SmapHyperparameters> default_grid();

// Leave-one-out CV over the grid; score is forecast RMSE pooled over all
// target times and coordinates. Ties prefer smaller theta, then larger
// lambda, then smaller alpha.
CvReport loocv_grid_search(const StateTrajectory& traj,
                           const std::vector<SmapHyperparameters>& grid, int threads = 1);

void write_jacobians_csv(const std::vector<JacobianSequence>& sequences,
                         const std::string& path);
std::vector<JacobianSequence> read_jacobians_csv(const std::string& path);

}  // namespace nichemap
