#include "nichemap/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "nichemap/errors.hpp"
#include "nichemap/manifest.hpp"
#include "nichemap/stats.hpp"

namespace nichemap {

MapFamily family_from_string(const std::string& name) {
    if (name == "linear_var") return MapFamily::linear_var;
    if (name == "ricker_lv") return MapFamily::ricker_lv;
    if (name == "coupled_logistic") return MapFamily::coupled_logistic;
    if (name == "regime_switch") return MapFamily::regime_switch;
    throw config_error("unknown model family: " + name);
}

std::string family_to_string(MapFamily f) {
    switch (f) {
        case MapFamily::linear_var: return "linear_var";
        case MapFamily::ricker_lv: return "ricker_lv";
        case MapFamily::coupled_logistic: return "coupled_logistic";
        case MapFamily::regime_switch: return "regime_switch";
    }
    return "?";
}

namespace {

const Eigen::MatrixXd& active_matrix(const SyntheticModel& m, int step_index) {
    if (m.family == MapFamily::regime_switch && step_index >= m.switch_time)
        return m.a_post;
    return m.a;
}

void validate_model(const SyntheticModel& m) {
    if (m.n < 1) throw std::invalid_argument("model needs n >= 1");
    if (m.a.rows() != m.n || m.a.cols() != m.n)
        throw std::invalid_argument("interaction matrix must be n x n");
    if (m.r.size() != m.n) throw std::invalid_argument("rate vector must have length n");
    if (m.x0.size() != m.n) throw std::invalid_argument("initial state must have length n");
    if (m.noise_sd < 0.0) throw std::invalid_argument("noise_sd must be >= 0");
    if (m.family == MapFamily::regime_switch &&
        (m.a_post.rows() != m.n || m.a_post.cols() != m.n))
        throw std::invalid_argument("regime_switch needs an n x n post matrix");
    if (m.family == MapFamily::linear_var) {
        const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>(m.a).eigenvalues();
        if (eig.array().abs().maxCoeff() >= 1.0)
            throw std::invalid_argument("linear model is not stationary (spectral radius >= 1)");
    }
}

std::string param_report(const SyntheticModel& m, int t) {
    std::ostringstream ss;
    ss << "family=" << family_to_string(m.family) << " n=" << m.n << " seed=" << m.seed
       << " noise_sd=" << m.noise_sd << " step=" << t;
    return ss.str();
}

}  // namespace

Eigen::VectorXd deterministic_step(const SyntheticModel& model, const Eigen::VectorXd& state,
                                   int step_index) {
    const Eigen::MatrixXd& a = active_matrix(model, step_index);
    switch (model.family) {
        case MapFamily::linear_var:
            return a * state + model.r;
        case MapFamily::ricker_lv:
        case MapFamily::regime_switch: {
            const Eigen::VectorXd expo = model.r + a * state;
            return state.array() * expo.array().exp();
        }
        case MapFamily::coupled_logistic: {
            const Eigen::VectorXd factor = model.r + a * state;
            return state.array() * factor.array();
        }
    }
    throw std::logic_error("unreachable");
}

Eigen::MatrixXd analytic_jacobian(const SyntheticModel& model, const Eigen::VectorXd& state,
                                  int step_index) {
    const Eigen::MatrixXd& a = active_matrix(model, step_index);
    switch (model.family) {
        case MapFamily::linear_var:
            return a;
        case MapFamily::ricker_lv:
        case MapFamily::regime_switch: {
            const Eigen::VectorXd img = deterministic_step(model, state, step_index);
            Eigen::MatrixXd j = img.asDiagonal() * a;
            for (int i = 0; i < model.n; ++i) {
                if (state(i) == 0.0)
                    throw numerical_error("jacobian undefined at zero abundance");
                j(i, i) += img(i) / state(i);
            }
            return j;
        }
        case MapFamily::coupled_logistic: {
            const Eigen::VectorXd factor = model.r + a * state;
            Eigen::MatrixXd j = state.asDiagonal() * a;
            j.diagonal() += factor;
            return j;
        }
    }
    throw std::logic_error("unreachable");
}

Eigen::MatrixXd finite_difference_jacobian(const SyntheticModel& model,
                                           const Eigen::VectorXd& state, int step_index,
                                           double h) {
    Eigen::MatrixXd j(model.n, model.n);
    Eigen::VectorXd probe = state;
    for (int col = 0; col < model.n; ++col) {
        probe(col) = state(col) + h;
        const Eigen::VectorXd up = deterministic_step(model, probe, step_index);
        probe(col) = state(col) - h;
        const Eigen::VectorXd dn = deterministic_step(model, probe, step_index);
        probe(col) = state(col);
        j.col(col) = (up - dn) / (2.0 * h);
    }
    return j;
}

GroundTruth simulate(const SyntheticModel& model, int T) {
    if (T < 20) throw std::invalid_argument("simulate needs T >= 20");
    validate_model(model);
    const bool multiplicative = model.family != MapFamily::linear_var;
    if (multiplicative && (model.x0.array() <= 0.0).any())
        throw std::invalid_argument("LV/logistic models need a positive initial state");

    GaussianStream noise(model.seed);
    GroundTruth gt;
    gt.trajectory.resize(T, model.n);
    gt.images.resize(T - 1, model.n);
    gt.jacobians.reserve(T - 1);
    gt.signs.reserve(T - 1);
    gt.trajectory.row(0) = model.x0.transpose();

    Eigen::VectorXd x = model.x0;
    for (int t = 0; t < T - 1; ++t) {
        const Eigen::VectorXd img = deterministic_step(model, x, t);
        gt.images.row(t) = img.transpose();
        const Eigen::MatrixXd j = analytic_jacobian(model, x, t);
        gt.jacobians.push_back(j);
        Eigen::MatrixXi s(model.n, model.n);
        for (int a = 0; a < model.n; ++a)
            for (int b = 0; b < model.n; ++b)
                s(a, b) = j(a, b) > 0.0 ? 1 : (j(a, b) < 0.0 ? -1 : 0);
        gt.signs.push_back(std::move(s));

        Eigen::VectorXd eps(model.n);
        for (int i = 0; i < model.n; ++i) eps(i) = model.noise_sd * noise.next();
        if (multiplicative)
            x = img.array() * eps.array().exp();
        else
            x = img + eps;

        if (!x.allFinite() || x.array().abs().maxCoeff() > 1e6 ||
            (multiplicative && (x.array() <= 0.0).any()))
            throw numerical_error("divergent trajectory: " + param_report(model, t + 1));
        gt.trajectory.row(t + 1) = x.transpose();
    }
    return gt;
}

std::vector<Eigen::MatrixXd> transform_truth_jacobians(const GroundTruth& truth,
                                                       const TransformRecord& rec) {
    const int n = static_cast<int>(truth.trajectory.cols());
    if (rec.kind != StateTransform::identity &&
        (rec.mean.size() != n || rec.sd.size() != n))
        throw std::invalid_argument("transform record does not match trajectory width");
    std::vector<Eigen::MatrixXd> out;
    out.reserve(truth.jacobians.size());
    for (size_t k = 0; k < truth.jacobians.size(); ++k) {
        Eigen::MatrixXd j = truth.jacobians[k];
        if (rec.kind == StateTransform::identity) {
            out.push_back(std::move(j));
            continue;
        }
        for (int i = 0; i < n; ++i)
            for (int b = 0; b < n; ++b) {
                double f = rec.sd(b) / rec.sd(i);
                if (rec.kind == StateTransform::log1p_standardize) {
                    const double denom = 1.0 + truth.images(static_cast<int>(k), i);
                    f *= (1.0 + truth.trajectory(static_cast<int>(k), b)) / denom;
                }
                j(i, b) *= f;
            }
        out.push_back(std::move(j));
    }
    return out;
}

RecoveryScore recovery_score(const std::vector<Eigen::MatrixXd>& estimated,
                             const std::vector<Eigen::MatrixXd>& truth,
                             double noise_floor) {
    if (estimated.size() != truth.size() || estimated.empty())
        throw std::invalid_argument("recovery_score needs matching nonempty sequences");
    std::vector<double> e, tr;
    int agree = 0;
    for (size_t k = 0; k < truth.size(); ++k) {
        if (estimated[k].rows() != truth[k].rows() || estimated[k].cols() != truth[k].cols())
            throw std::invalid_argument("recovery_score shape mismatch at step " +
                                        std::to_string(k));
        const int n = static_cast<int>(truth[k].rows());
        for (int i = 0; i < n; ++i)
            for (int b = 0; b < n; ++b) {
                if (i == b) continue;
                const double tv = truth[k](i, b);
                if (std::abs(tv) < noise_floor) continue;
                const double ev = estimated[k](i, b);
                e.push_back(ev);
                tr.push_back(tv);
                if (ev * tv > 0.0) agree++;
            }
    }
    if (e.empty())
        throw std::invalid_argument("recovery_score: every off-diagonal truth cell is below the noise floor");

    RecoveryScore score;
    score.cells = static_cast<int>(e.size());
    score.sign_accuracy = static_cast<double>(agree) / static_cast<double>(e.size());

    double st2 = 0.0, set = 0.0;
    for (size_t k = 0; k < e.size(); ++k) {
        st2 += tr[k] * tr[k];
        set += e[k] * tr[k];
    }
    score.scale_ratio = st2 == 0.0 ? 0.0 : set / st2;

    if (e.size() < 2) {
        score.correlation = e[0] == tr[0] ? 1.0 : 0.0;
        return score;
    }
    const double me = stats::mean(e), mt = stats::mean(tr);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (size_t k = 0; k < e.size(); ++k) {
        sab += (e[k] - me) * (tr[k] - mt);
        saa += (e[k] - me) * (e[k] - me);
        sbb += (tr[k] - mt) * (tr[k] - mt);
    }
    if (saa == 0.0 || sbb == 0.0) {
        bool same = true;
        for (size_t k = 0; k < e.size(); ++k) same = same && e[k] == tr[k];
        score.correlation = same ? 1.0 : 0.0;
    } else {
        score.correlation = sab / std::sqrt(saa * sbb);
    }
    return score;
}

int best_sign_change_point(const std::vector<double>& series, double pre_sign,
                           double post_sign) {
    if (series.empty()) throw std::invalid_argument("empty series");
    const auto sgn = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };
    const int pre = sgn(pre_sign);
    const int post = sgn(post_sign);
    const int len = static_cast<int>(series.size());
    // prefix[s] = matches of pre among series[0, s)
    std::vector<int> prefix(len + 1, 0);
    std::vector<int> suffix(len + 1, 0);  // matches of post among series[s, len)
    for (int t = 0; t < len; ++t) prefix[t + 1] = prefix[t] + (sgn(series[t]) == pre ? 1 : 0);
    for (int t = len - 1; t >= 0; --t)
        suffix[t] = suffix[t + 1] + (sgn(series[t]) == post ? 1 : 0);
    int best = 0, best_score = -1;
    for (int s = 0; s <= len; ++s) {
        const int sc = prefix[s] + suffix[s];
        if (sc > best_score) {
            best_score = sc;
            best = s;
        }
    }
    return best;
}

int least_squares_change_point(const std::vector<double>& series) {
    const int len = static_cast<int>(series.size());
    if (len < 2) throw std::invalid_argument("change point needs at least 2 values");
    std::vector<double> sum(len + 1, 0.0), sq(len + 1, 0.0);
    for (int t = 0; t < len; ++t) {
        sum[t + 1] = sum[t] + series[t];
        sq[t + 1] = sq[t] + series[t] * series[t];
    }
    int best = 1;
    double best_sse = std::numeric_limits<double>::infinity();
    for (int s = 1; s < len; ++s) {
        const double s1 = sum[s], s2 = sum[len] - sum[s];
        const double sse = (sq[s] - s1 * s1 / s) + (sq[len] - sq[s] - s2 * s2 / (len - s));
        if (sse < best_sse) {
            best_sse = sse;
            best = s;
        }
    }
    return best;
}

namespace {

struct CorpusRng {
    std::mt19937_64 eng;
    explicit CorpusRng(std::uint64_t seed) : eng(seed) {}
    // [0, n)
    int below(int n) {
        return static_cast<int>(eng() % static_cast<std::uint64_t>(n));
    }
    // First k of a shuffled [0, n) without materializing the tail.
    std::vector<int> sample(int n, int k) {
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + below(n - i)]);
        idx.resize(k);
        return idx;
    }
};

}  // namespace

std::vector<ContributionRecord> synthetic_corpus(const CorpusSchedule& sch) {
    if (sch.communities < 1 || sch.weeks < 1)
        throw std::invalid_argument("corpus schedule needs communities >= 1 and weeks >= 1");
    for (const auto& p : sch.pairs) {
        if (p.i < 0 || p.j < 0 || p.i >= sch.communities || p.j >= sch.communities || p.i == p.j)
            throw std::invalid_argument("pair references an unknown community");
        if (static_cast<int>(p.author_share.size()) != sch.weeks ||
            static_cast<int>(p.token_share.size()) != sch.weeks)
            throw std::invalid_argument("pair schedule length must equal weeks");
        for (double v : p.author_share)
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("infeasible schedule: author share outside [0,1]");
        for (double v : p.token_share)
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("infeasible schedule: token share outside [0,1]");
    }
    const bool sized = sch.group_size.size() > 0;
    if (sized && (sch.group_size.rows() != sch.communities ||
                  sch.group_size.cols() != sch.weeks))
        throw std::invalid_argument("group_size must be communities x weeks");

    const StudyWindow window(sch.window_start, "2100-01-01");
    const std::int64_t t0 = window.start_epoch();

    const auto author_name = [](int c, int k) {
        return "c" + std::to_string(c) + "_a" + std::to_string(k);
    };
    const auto shared_author = [](int i, int j, int k) {
        return "p" + std::to_string(i) + "_" + std::to_string(j) + "_a" + std::to_string(k);
    };
    const auto token_name = [](int c, int k) {
        return "tok" + std::to_string(c) + "x" + std::to_string(k);
    };
    const auto shared_token = [](int i, int j, int k) {
        return "ptok" + std::to_string(i) + "_" + std::to_string(j) + "x" + std::to_string(k);
    };

    // Verbosity depends only on (author, week, seed) so both members of a
    // fully shared roster produce identical count vectors.
    const auto verbosity = [&](const std::string& author, int w) {
        const std::uint64_t h =
            fnv1a64(author + "#" + std::to_string(w) + "#" + std::to_string(sch.seed));
        const int spread = std::max(1, 2 * sch.messages_per_author - 1);
        return 1 + static_cast<int>(h % static_cast<std::uint64_t>(spread));
    };

    CorpusRng rng(sch.seed);
    std::vector<ContributionRecord> out;
    std::int64_t tick = 0;

    for (int w = 0; w < sch.weeks; ++w) {
        // roster[c] filled with author names; shared draws happen once per pair
        std::vector<std::vector<std::string>> roster(sch.communities);
        std::vector<int> m(sch.communities);
        std::vector<double> share_used(sch.communities, 0.0);
        for (int c = 0; c < sch.communities; ++c) {
            double want = sized ? sch.group_size(c, w) : sch.active_authors_per_week;
            m[c] = std::max(2, static_cast<int>(std::lround(want)));
        }
        for (const auto& p : sch.pairs) {
            share_used[p.i] += p.author_share[w];
            share_used[p.j] += p.author_share[w];
        }
        for (int c = 0; c < sch.communities; ++c)
            if (share_used[c] > 1.0 + 1e-12)
                throw std::invalid_argument("infeasible schedule: community " +
                                            std::to_string(c) +
                                            " has summed author share > 1 in week " +
                                            std::to_string(w));

        for (const auto& p : sch.pairs) {
            const int ki = static_cast<int>(std::lround(p.author_share[w] * m[p.i]));
            const int kj = static_cast<int>(std::lround(p.author_share[w] * m[p.j]));
            const int need = std::max(ki, kj);
            if (need > sch.authors_per_community)
                throw std::invalid_argument("shared roster larger than the pair author pool");
            const std::vector<int> draw = rng.sample(sch.authors_per_community, need);
            for (int k = 0; k < ki; ++k)
                roster[p.i].push_back(shared_author(p.i, p.j, draw[k]));
            for (int k = 0; k < kj; ++k)
                roster[p.j].push_back(shared_author(p.i, p.j, draw[k]));
        }
        for (int c = 0; c < sch.communities; ++c) {
            const int own = m[c] - static_cast<int>(roster[c].size());
            if (own > sch.authors_per_community)
                throw std::invalid_argument("roster larger than the community author pool");
            if (own > 0)
                for (int k : rng.sample(sch.authors_per_community, own))
                    roster[c].push_back(author_name(c, k));
        }

        // token mixing rate per community from its scheduled pairs
        for (int c = 0; c < sch.communities; ++c) {
            const std::string community = "community" + std::to_string(c);
            for (const auto& author : roster[c]) {
                const int msgs = verbosity(author, w);
                for (int msg = 0; msg < msgs; ++msg) {
                    std::string body;
                    for (int tok = 0; tok < 8; ++tok) {
                        bool taken = false;
                        for (const auto& p : sch.pairs) {
                            if (p.i != c && p.j != c) continue;
                            const double u =
                                static_cast<double>(rng.eng() >> 11) / 9007199254740992.0;
                            if (u < p.token_share[w]) {
                                if (!body.empty()) body += ' ';
                                body += shared_token(p.i, p.j,
                                                     rng.below(sch.tokens_per_community));
                                taken = true;
                                break;
                            }
                        }
                        if (!taken) {
                            if (!body.empty()) body += ' ';
                            body += token_name(c, rng.below(sch.tokens_per_community));
                        }
                    }
                    ContributionRecord rec;
                    rec.community_id = community;
                    rec.author_id = author;
                    rec.timestamp = t0 + static_cast<std::int64_t>(w) * 7 * 86400 +
                                    (tick++ % (7 * 86400));
                    rec.kind = RecordKind::comment;
                    rec.text = std::move(body);
                    out.push_back(std::move(rec));
                }
            }
        }
    }
    return out;
}

}  // namespace nichemap
