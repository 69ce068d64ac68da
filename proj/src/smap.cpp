#include "nichemap/smap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "nichemap/csv.hpp"
#include "nichemap/elastic_net.hpp"
#include "nichemap/errors.hpp"
#include "nichemap/parallel.hpp"

namespace nichemap {

StateTransform transform_from_string(const std::string& name) {
    if (name == "identity") return StateTransform::identity;
    if (name == "standardize") return StateTransform::standardize;
    if (name == "log1p_standardize") return StateTransform::log1p_standardize;
    throw config_error("unknown state transform: " + name);
}

std::string transform_to_string(StateTransform t) {
    switch (t) {
        case StateTransform::identity: return "identity";
        case StateTransform::standardize: return "standardize";
        case StateTransform::log1p_standardize: return "log1p_standardize";
    }
    return "?";
}

std::vector<int> StateTrajectory::transition_targets() const {
    std::vector<int> targets;
    for (int t = 1; t < times(); ++t)
        if (week_of[t] == week_of[t - 1] + 1) targets.push_back(t);
    return targets;
}

StateTrajectory preprocess(const std::string& cluster_id,
                           const std::vector<std::string>& communities,
                           const Eigen::MatrixXd& raw, const std::vector<int>& week_of,
                           StateTransform kind, int min_length) {
    const int T = static_cast<int>(raw.rows());
    const int n = static_cast<int>(raw.cols());
    if (static_cast<int>(communities.size()) != n)
        throw std::invalid_argument("community list does not match series width");
    if (static_cast<int>(week_of.size()) != T)
        throw std::invalid_argument("week index list does not match series length");
    for (int t = 1; t < T; ++t)
        if (week_of[t] <= week_of[t - 1])
            throw std::invalid_argument("week indices must be strictly increasing");
    if (min_length < 0) min_length = n + 8;
    if (T < min_length)
        throw std::invalid_argument("series too short: " + std::to_string(T) + " < " +
                                    std::to_string(min_length) + " observations");

    StateTrajectory traj;
    traj.cluster_id = cluster_id;
    traj.communities = communities;
    traj.week_of = week_of;
    traj.transform.kind = kind;
    traj.transform.mean = Eigen::VectorXd::Zero(n);
    traj.transform.sd = Eigen::VectorXd::Ones(n);
    traj.x.resize(T, n);

    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd y = raw.col(i);
        if (kind == StateTransform::log1p_standardize) {
            if ((y.array() <= -1.0).any())
                throw std::invalid_argument("log1p undefined for series " + communities[i]);
            y = (y.array() + 1.0).log();
        }
        if (kind == StateTransform::identity) {
            traj.x.col(i) = y;
            continue;
        }
        if (y.maxCoeff() == y.minCoeff())
            throw numerical_error("constant activity cannot be standardized: " +
                                  communities[i]);
        const double mu = y.mean();
        const double ss = (y.array() - mu).square().sum();
        const double sd = std::sqrt(ss / (T - 1));
        traj.transform.mean(i) = mu;
        traj.transform.sd(i) = sd;
        traj.x.col(i) = (y.array() - mu) / sd;
    }
    return traj;
}

KernelWeights kernel_weights(const StateTrajectory& traj, int t_star, double theta) {
    if (theta < 0.0) throw std::invalid_argument("theta must be >= 0");
    if (traj.times() < 3) throw std::invalid_argument("kernel needs T >= 3");
    const std::vector<int> targets = traj.transition_targets();
    if (std::find(targets.begin(), targets.end(), t_star) == targets.end())
        throw std::invalid_argument("t_star is not a valid transition target");

    KernelWeights kw;
    const Eigen::VectorXd ref = traj.x.row(t_star - 1).transpose();
    std::vector<double> dist;
    for (int t : targets) {
        if (t == t_star) continue;
        kw.t.push_back(t);
        dist.push_back((traj.x.row(t - 1).transpose() - ref).norm());
    }
    if (kw.t.empty()) throw std::invalid_argument("no transitions besides the target");
    double sum = 0.0;
    for (double d : dist) sum += d;
    kw.d_bar = sum / static_cast<double>(dist.size());
    if (kw.d_bar == 0.0)
        throw numerical_error("all states identical: kernel bandwidth is undefined");
    kw.w.reserve(dist.size());
    for (double d : dist) kw.w.push_back(std::exp(-theta * d / kw.d_bar));
    return kw;
}

namespace {

// Weighted centered moments shared by every response and every (alpha,
// lambda) pair at a fixed theta: the Gram depends on the weights only.
struct Moments {
    Eigen::MatrixXd g;     // n x n predictor covariance
    Eigen::VectorXd xbar;  // weighted predictor means
    Eigen::MatrixXd q;     // n_resp x n cross-covariances
    Eigen::VectorXd ybar;  // weighted response means
    Eigen::VectorXd syy;   // weighted response variances
};

Moments compute_moments(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                        const Eigen::VectorXd& w) {
    const double wsum = w.sum();
    Moments m;
    m.xbar = (x.transpose() * w) / wsum;
    m.ybar = (y.transpose() * w) / wsum;
    const Eigen::MatrixXd xc = x.rowwise() - m.xbar.transpose();
    const Eigen::MatrixXd yc = y.rowwise() - m.ybar.transpose();
    const Eigen::MatrixXd xw = (xc.array().colwise() * w.array()).matrix();
    m.g = (xc.transpose() * xw) / wsum;
    m.q = (yc.transpose() * xw) / wsum;
    m.syy.resize(yc.cols());
    for (int j = 0; j < yc.cols(); ++j)
        m.syy(j) = (yc.col(j).array().square() * w.array()).sum() / wsum;
    return m;
}

double soft_threshold(double v, double k) {
    if (v > k) return v - k;
    if (v < -k) return v + k;
    return 0.0;
}

struct CdOutcome {
    Eigen::VectorXd c;
    int sweeps = 0;
    bool converged = false;
    std::vector<double> objective;
};

double cd_objective(const Eigen::MatrixXd& g, const Eigen::VectorXd& q, double syy,
                    double alpha, double lambda, const Eigen::VectorXd& c) {
    const double quad = 0.5 * (syy - 2.0 * q.dot(c) + c.dot(g * c));
    return quad + lambda * (alpha * c.lpNorm<1>() + 0.5 * (1.0 - alpha) * c.squaredNorm());
}

CdOutcome cd_solve(const Eigen::MatrixXd& g, const Eigen::VectorXd& q, double syy,
                   double alpha, double lambda, Eigen::VectorXd c, double tol,
                   int max_sweeps, bool record_objective) {
    const int n = static_cast<int>(q.size());
    CdOutcome out;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_delta = 0.0;
        for (int i = 0; i < n; ++i) {
            const double rho = q(i) - g.row(i).dot(c) + g(i, i) * c(i);
            const double denom = g(i, i) + lambda * (1.0 - alpha);
            const double updated =
                denom <= 0.0 ? 0.0 : soft_threshold(rho, lambda * alpha) / denom;
            max_delta = std::max(max_delta, std::abs(updated - c(i)));
            c(i) = updated;
        }
        if (record_objective)
            out.objective.push_back(cd_objective(g, q, syy, alpha, lambda, c));
        if (max_delta < tol) {
            out.c = std::move(c);
            out.sweeps = sweep + 1;
            out.converged = true;
            return out;
        }
    }
    out.c = std::move(c);
    out.sweeps = max_sweeps;
    out.converged = false;
    return out;
}

void check_hyper(double alpha, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0, 1]");
}

}  // namespace

ElasticNetResult elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w, double alpha, double lambda,
                             double tol, int max_sweeps, bool record_objective) {
    check_hyper(alpha, lambda);
    if (x.rows() != y.size() || x.rows() != w.size() || x.rows() == 0)
        throw std::invalid_argument("elastic_net needs matching nonempty rows");
    if ((w.array() < 0.0).any() || w.sum() <= 0.0)
        throw std::invalid_argument("weights must be nonnegative with positive sum");
    const Moments m = compute_moments(x, y, w);
    const CdOutcome out =
        cd_solve(m.g, m.q.row(0), m.syy(0), alpha, lambda,
                 Eigen::VectorXd::Zero(x.cols()), tol, max_sweeps, record_objective);
    if (!out.converged)
        throw numerical_error("elastic net did not converge after " +
                              std::to_string(max_sweeps) + " sweeps (lambda=" +
                              std::to_string(lambda) + ", alpha=" + std::to_string(alpha) +
                              ")");
    ElasticNetResult res;
    res.coef = out.c;
    res.intercept = m.ybar(0) - out.c.dot(m.xbar);
    res.sweeps = out.sweeps;
    res.objective = out.objective;
    return res;
}

namespace {

struct FitProblem {
    Eigen::MatrixXd x;  // m x n lagged states
    Eigen::MatrixXd y;  // m x n responses
    Eigen::VectorXd w;  // m weights
};

FitProblem assemble(const StateTrajectory& traj, const KernelWeights& kw, int t_star,
                    bool include_target) {
    const int n = traj.dims();
    const int m = static_cast<int>(kw.t.size()) + (include_target ? 1 : 0);
    FitProblem p;
    p.x.resize(m, n);
    p.y.resize(m, n);
    p.w.resize(m);
    for (size_t k = 0; k < kw.t.size(); ++k) {
        const int t = kw.t[k];
        p.x.row(static_cast<int>(k)) = traj.x.row(t - 1);
        p.y.row(static_cast<int>(k)) = traj.x.row(t);
        p.w(static_cast<int>(k)) = kw.w[k];
    }
    if (include_target) {
        p.x.row(m - 1) = traj.x.row(t_star - 1);
        p.y.row(m - 1) = traj.x.row(t_star);
        p.w(m - 1) = 1.0;  // exp(0): the target sits at zero distance
    }
    return p;
}

void require_fittable(const StateTrajectory& traj) {
    if (traj.times() <= traj.dims() + 2)
        throw std::invalid_argument("trajectory too short to fit: T must exceed n + 2");
}

LocalFit solve_all_responses(const Moments& m, int n, const SmapHyperparameters& hp,
                             const std::string& context) {
    LocalFit fit;
    fit.coef.resize(n, n);
    fit.intercept.resize(n);
    for (int j = 0; j < n; ++j) {
        const CdOutcome out =
            cd_solve(m.g, m.q.row(j), m.syy(j), hp.alpha, hp.lambda,
                     Eigen::VectorXd::Zero(n), 1e-7, 10000, false);
        if (!out.converged)
            throw numerical_error("elastic net did not converge for " + context +
                                  " coordinate " + std::to_string(j));
        fit.coef.row(j) = out.c.transpose();
        fit.intercept(j) = m.ybar(j) - out.c.dot(m.xbar);
        fit.sweeps = std::max(fit.sweeps, out.sweeps);
    }
    return fit;
}

}  // namespace

LocalFit fit_local_regression(const StateTrajectory& traj, int t_star,
                              const SmapHyperparameters& hp, bool include_target) {
    check_hyper(hp.alpha, hp.lambda);
    require_fittable(traj);
    const KernelWeights kw = kernel_weights(traj, t_star, hp.theta);
    const FitProblem p = assemble(traj, kw, t_star, include_target);
    const Moments m = compute_moments(p.x, p.y, p.w);
    return solve_all_responses(m, traj.dims(), hp,
                               "t*=" + std::to_string(t_star) + " of cluster " +
                                   traj.cluster_id);
}

JacobianSequence jacobian_sequence(const StateTrajectory& traj,
                                   const SmapHyperparameters& hp, int threads) {
    check_hyper(hp.alpha, hp.lambda);
    require_fittable(traj);
    const std::vector<int> targets = traj.transition_targets();
    if (targets.empty()) throw std::invalid_argument("trajectory has no usable transitions");

    JacobianSequence seq;
    seq.cluster_id = traj.cluster_id;
    seq.communities = traj.communities;
    seq.target.resize(targets.size());
    seq.week.resize(targets.size());
    seq.c.resize(targets.size());
    seq.intercept.resize(targets.size());

    parallel_for(targets.size(), threads, [&](std::size_t k) {
        const int t_star = targets[k];
        const LocalFit fit = fit_local_regression(traj, t_star, hp, true);
        seq.target[k] = t_star;
        seq.week[k] = traj.week_of[t_star];
        seq.c[k] = fit.coef;
        seq.intercept[k] = fit.intercept;
    });
    return seq;
}

std::vector<SmapHyperparameters> default_grid() {
    const std::vector<double> thetas{0.0, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0};
    const std::vector<double> alphas{0.05, 0.5, 0.95};
    std::vector<double> lambdas;
    for (int k = 0; k < 7; ++k) lambdas.push_back(std::pow(10.0, -4.0 + 5.0 * k / 6.0));
    std::vector<SmapHyperparameters> grid;
    for (double th : thetas)
        for (double al : alphas)
            for (double la : lambdas) grid.push_back({th, al, la});
    return grid;
}

CvReport loocv_grid_search(const StateTrajectory& traj,
                           const std::vector<SmapHyperparameters>& grid, int threads) {
    if (grid.empty()) throw std::invalid_argument("hyperparameter grid is empty");
    for (const auto& hp : grid) {
        check_hyper(hp.alpha, hp.lambda);
        if (hp.theta < 0.0) throw std::invalid_argument("theta must be >= 0");
    }
    require_fittable(traj);
    const std::vector<int> targets = traj.transition_targets();
    if (targets.size() < 3)
        throw std::invalid_argument("leave-one-out needs at least 3 transitions");
    const int n = traj.dims();
    const int ntriples = static_cast<int>(grid.size());
    const int ntargets = static_cast<int>(targets.size());

    // triple indices grouped by theta so each target computes a given
    // weight set and Gram only once
    std::map<double, std::vector<int>> by_theta;
    for (int gidx = 0; gidx < ntriples; ++gidx) by_theta[grid[gidx].theta].push_back(gidx);

    constexpr double kFail = std::numeric_limits<double>::infinity();
    // per (target, triple, coordinate) squared error; fixed slots keep the
    // reduction deterministic under any thread count
    std::vector<double> sq(static_cast<size_t>(ntargets) * ntriples * n, kFail);

    parallel_for(static_cast<size_t>(ntargets), threads, [&](std::size_t k) {
        const int t_star = targets[k];
        const Eigen::VectorXd state = traj.x.row(t_star - 1).transpose();
        const Eigen::VectorXd observed = traj.x.row(t_star).transpose();
        for (const auto& [theta, members] : by_theta) {
            Moments m;
            try {
                const KernelWeights kw = kernel_weights(traj, t_star, theta);
                const FitProblem p = assemble(traj, kw, t_star, false);
                m = compute_moments(p.x, p.y, p.w);
            } catch (const std::exception&) {
                continue;  // slots stay failed for this theta
            }
            for (int j = 0; j < n; ++j) {
                // warm start along the grid for one (theta, coordinate)
                Eigen::VectorXd warm = Eigen::VectorXd::Zero(n);
                for (int gidx : members) {
                    const auto& hp = grid[gidx];
                    const CdOutcome out = cd_solve(m.g, m.q.row(j), m.syy(j), hp.alpha,
                                                   hp.lambda, warm, 1e-7, 10000, false);
                    if (!out.converged) continue;
                    warm = out.c;
                    const double intercept = m.ybar(j) - out.c.dot(m.xbar);
                    const double pred = intercept + out.c.dot(state);
                    const double err = pred - observed(j);
                    sq[(k * ntriples + gidx) * n + j] = err * err;
                }
            }
        }
    });

    CvReport report;
    report.grid.resize(ntriples);
    std::vector<Eigen::VectorXd> coord_sse(ntriples, Eigen::VectorXd::Zero(n));
    for (int gidx = 0; gidx < ntriples; ++gidx) {
        report.grid[gidx].hp = grid[gidx];
        double total = 0.0;
        bool ok = true;
        for (int k = 0; k < ntargets && ok; ++k)
            for (int j = 0; j < n; ++j) {
                const double v = sq[(static_cast<size_t>(k) * ntriples + gidx) * n + j];
                if (!std::isfinite(v)) {
                    ok = false;
                    break;
                }
                total += v;
                coord_sse[gidx](j) += v;
            }
        report.grid[gidx].rmse =
            ok ? std::sqrt(total / (static_cast<double>(ntargets) * n)) : kFail;
    }

    int best = -1;
    for (int gidx = 0; gidx < ntriples; ++gidx) {
        const auto& e = report.grid[gidx];
        if (!std::isfinite(e.rmse)) continue;
        if (best < 0) {
            best = gidx;
            continue;
        }
        const auto& b = report.grid[best];
        if (e.rmse < b.rmse ||
            (e.rmse == b.rmse &&
             (e.hp.theta < b.hp.theta ||
              (e.hp.theta == b.hp.theta &&
               (e.hp.lambda > b.hp.lambda ||
                (e.hp.lambda == b.hp.lambda && e.hp.alpha < b.hp.alpha))))))
            best = gidx;
    }
    if (best < 0) throw numerical_error("every hyperparameter triple failed to fit");
    report.selected = report.grid[best].hp;
    report.selected_rmse = report.grid[best].rmse;
    report.coordinate_rmse =
        (coord_sse[best] / static_cast<double>(ntargets)).array().sqrt();
    return report;
}

void write_jacobians_csv(const std::vector<JacobianSequence>& sequences,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write jacobians: " + path);
    out << "cluster,week,source,target,c_value\n";
    for (const auto& seq : sequences) {
        const int n = static_cast<int>(seq.communities.size());
        for (size_t k = 0; k < seq.c.size(); ++k)
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b)
                    out << seq.cluster_id << ',' << seq.week[k] << ','
                        << seq.communities[b] << ',' << seq.communities[a] << ','
                        << csv::num(seq.c[k](a, b)) << '\n';
    }
}

std::vector<JacobianSequence> read_jacobians_csv(const std::string& path) {
    const csv::Table t = csv::read_table_file(path);
    const int ci = t.column("cluster");
    const int wi = t.column("week");
    const int si = t.column("source");
    const int ti = t.column("target");
    const int vi = t.column("c_value");

    struct Cell {
        int week;
        std::string source, target;
        double v;
    };
    std::map<std::string, std::vector<Cell>> cells;  // keyed by cluster, ordered
    for (const auto& row : t.rows)
        cells[row[ci]].push_back(
            {std::stoi(row[wi]), row[si], row[ti], std::stod(row[vi])});

    std::vector<JacobianSequence> out;
    for (auto& [cluster, list] : cells) {
        JacobianSequence seq;
        seq.cluster_id = cluster;
        std::map<std::string, int> index;
        for (const auto& c : list)
            if (index.emplace(c.target, 0).second) seq.communities.push_back(c.target);
        std::sort(seq.communities.begin(), seq.communities.end());
        for (size_t i = 0; i < seq.communities.size(); ++i) index[seq.communities[i]] =
            static_cast<int>(i);
        const int n = static_cast<int>(seq.communities.size());

        std::map<int, Eigen::MatrixXd> by_week;
        for (const auto& c : list) {
            auto it = by_week.find(c.week);
            if (it == by_week.end())
                it = by_week.emplace(c.week, Eigen::MatrixXd::Zero(n, n)).first;
            it->second(index.at(c.target), index.at(c.source)) = c.v;
        }
        for (auto& [week, mat] : by_week) {
            seq.week.push_back(week);
            seq.target.push_back(-1);
            seq.c.push_back(std::move(mat));
            seq.intercept.push_back(Eigen::VectorXd::Zero(n));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace nichemap
