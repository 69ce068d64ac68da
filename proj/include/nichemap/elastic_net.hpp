#pragma once

#include <vector>

#include <Eigen/Dense>

namespace nichemap {

struct ElasticNetResult {
    Eigen::VectorXd coef;
    double intercept = 0.0;
    int sweeps = 0;
    std::vector<double> objective;  // per sweep when recording is on
};

// Weighted elastic net
//   min_c  sum_t w_t (y_t - c0 - x_t . c)^2 / (2 sum w)
//          + lambda (alpha ||c||_1 + (1 - alpha) ||c||_2^2 / 2)
// solved by cyclic coordinate descent with soft-thresholding on weighted
// centered moments. The intercept is unpenalized and recovered from the
// weighted means. Throws numerical_error when max_sweeps is exhausted.
ElasticNetResult elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w, double alpha, double lambda,
                             double tol = 1e-7, int max_sweeps = 10000,
                             bool record_objective = false);

}  // namespace nichemap
