#include "nichemap/panel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "nichemap/csv.hpp"
#include "nichemap/errors.hpp"
#include "nichemap/parallel.hpp"
#include "nichemap/stats.hpp"

namespace nichemap {

namespace {

struct PairSeries {
    const MetricSeries* user = nullptr;
    const MetricSeries* topic = nullptr;
};

std::string pair_key(const std::string& a, const std::string& b) {
    return a < b ? a + "\x1f" + b : b + "\x1f" + a;
}

}  // namespace

DyadPanel build_dyad_panel(const std::vector<JacobianSequence>& sequences,
                           const OverlapTable& overlap) {
    std::unordered_map<std::string, PairSeries> series;
    for (std::size_t p = 0; p < overlap.user.size(); ++p) {
        const std::string key = pair_key(overlap.communities[overlap.user[p].i],
                                         overlap.communities[overlap.user[p].j]);
        series[key].user = &overlap.user[p];
    }
    for (std::size_t p = 0; p < overlap.topic.size(); ++p) {
        const std::string key = pair_key(overlap.communities[overlap.topic[p].i],
                                         overlap.communities[overlap.topic[p].j]);
        series[key].topic = &overlap.topic[p];
    }

    DyadPanel panel;
    std::unordered_map<std::string, int> node_index;
    std::map<std::pair<int, int>, int> dyad_index;
    std::unordered_set<std::string> seen_rows;
    const auto intern_node = [&](const std::string& name) {
        const auto it = node_index.find(name);
        if (it != node_index.end()) return it->second;
        const int idx = static_cast<int>(panel.communities.size());
        node_index.emplace(name, idx);
        panel.communities.push_back(name);
        return idx;
    };

    for (const JacobianSequence& seq : sequences) {
        const int n = static_cast<int>(seq.communities.size());
        std::vector<int> node(n);
        for (int i = 0; i < n; ++i) node[i] = intern_node(seq.communities[i]);
        for (std::size_t k = 0; k < seq.c.size(); ++k) {
            const int w = seq.week[k];
            for (int ti = 0; ti < n; ++ti) {
                for (int si = 0; si < n; ++si) {
                    if (ti == si) continue;
                    const PairSeries* ps = nullptr;
                    const auto it = series.find(pair_key(seq.communities[ti], seq.communities[si]));
                    if (it != series.end()) ps = &it->second;
                    std::optional<double> u, t;
                    if (ps && ps->user && w >= 0 &&
                        w < static_cast<int>(ps->user->weekly.size()))
                        u = ps->user->weekly[w];
                    if (ps && ps->topic && w >= 0 &&
                        w < static_cast<int>(ps->topic->weekly.size()))
                        t = ps->topic->weekly[w];
                    if (!u || !t) {
                        panel.dropped_rows++;
                        continue;
                    }
                    const std::string row_key = seq.communities[ti] + "\x1f" +
                                                seq.communities[si] + "\x1f" + std::to_string(w);
                    if (!seen_rows.insert(row_key).second)
                        throw stage_error("duplicate panel row for (" + seq.communities[ti] +
                                          ", " + seq.communities[si] + ") at week " +
                                          std::to_string(w));
                    const std::pair<int, int> nodes{std::min(node[ti], node[si]),
                                                    std::max(node[ti], node[si])};
                    auto dit = dyad_index.find(nodes);
                    if (dit == dyad_index.end()) {
                        dit = dyad_index.emplace(nodes, static_cast<int>(panel.dyad_nodes.size()))
                                  .first;
                        panel.dyad_nodes.push_back(nodes);
                    }
                    panel.dyad.push_back(dit->second);
                    panel.target.push_back(node[ti]);
                    panel.source.push_back(node[si]);
                    panel.week.push_back(w);
                    panel.c_value.push_back(seq.c[k](ti, si));
                    panel.topic.push_back(*t);
                    panel.user.push_back(*u);
                }
            }
        }
    }
    if (panel.rows() == 0) throw stage_error("dyad panel is empty after joining overlaps");
    return panel;
}

void write_panel_csv(const std::string& path, const DyadPanel& panel) {
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write panel: " + path);
    out << "dyad_id,i,j,week,c_value,topic_overlap,user_overlap\n";
    for (std::size_t r = 0; r < panel.rows(); ++r) {
        out << panel.dyad[r] << ',' << panel.communities[panel.target[r]] << ','
            << panel.communities[panel.source[r]] << ',' << panel.week[r] << ','
            << csv::num(panel.c_value[r]) << ',' << csv::num(panel.topic[r]) << ','
            << csv::num(panel.user[r]) << '\n';
    }
}

DyadPanel read_dyad_panel_csv(const std::string& path) {
    const csv::Table table = csv::read_table_file(path);
    const int cd = table.column("dyad_id"), ci = table.column("i"), cj = table.column("j");
    const int cw = table.column("week"), cc = table.column("c_value");
    const int ct = table.column("topic_overlap"), cu = table.column("user_overlap");
    DyadPanel panel;
    std::unordered_map<std::string, int> node_index;
    const auto intern = [&](const std::string& name) {
        const auto it = node_index.find(name);
        if (it != node_index.end()) return it->second;
        const int idx = static_cast<int>(panel.communities.size());
        node_index.emplace(name, idx);
        panel.communities.push_back(name);
        return idx;
    };
    for (const auto& row : table.rows) {
        const int dyad = std::stoi(row[cd]);
        const int ti = intern(row[ci]);
        const int si = intern(row[cj]);
        if (dyad < 0) throw stage_error("negative dyad_id in " + path);
        if (static_cast<int>(panel.dyad_nodes.size()) <= dyad)
            panel.dyad_nodes.resize(dyad + 1, {-1, -1});
        const std::pair<int, int> nodes{std::min(ti, si), std::max(ti, si)};
        if (panel.dyad_nodes[dyad].first < 0)
            panel.dyad_nodes[dyad] = nodes;
        else if (panel.dyad_nodes[dyad] != nodes)
            throw stage_error("dyad_id " + row[cd] + " maps to two node pairs in " + path);
        panel.dyad.push_back(dyad);
        panel.target.push_back(ti);
        panel.source.push_back(si);
        panel.week.push_back(std::stoi(row[cw]));
        panel.c_value.push_back(std::stod(row[cc]));
        panel.topic.push_back(std::stod(row[ct]));
        panel.user.push_back(std::stod(row[cu]));
    }
    return panel;
}

WithinDesign within_transform(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              const std::vector<int>& row_dyad,
                              const std::vector<std::pair<int, int>>& dyad_nodes,
                              const std::vector<std::string>& regressors) {
    const Eigen::Index n = x.rows();
    if (y.size() != n || static_cast<Eigen::Index>(row_dyad.size()) != n)
        throw std::invalid_argument("within transform inputs are misaligned");
    if (x.cols() != static_cast<Eigen::Index>(regressors.size()))
        throw std::invalid_argument("regressor names do not match the design");

    std::map<int, std::vector<Eigen::Index>> groups;
    for (Eigen::Index r = 0; r < n; ++r) groups[row_dyad[r]].push_back(r);

    WithinDesign out;
    out.regressors = regressors;
    out.dyad_nodes = dyad_nodes;
    std::vector<Eigen::Index> kept;
    for (const auto& [dyad, rows] : groups) {
        if (rows.size() < 2) {
            out.dropped_rows += static_cast<long long>(rows.size());
            continue;
        }
        kept.insert(kept.end(), rows.begin(), rows.end());
    }
    std::sort(kept.begin(), kept.end());  // original row order

    out.x.resize(static_cast<Eigen::Index>(kept.size()), x.cols());
    out.y.resize(static_cast<Eigen::Index>(kept.size()));
    std::set<int> nodes;
    std::map<int, std::pair<Eigen::VectorXd, double>> means;  // dyad -> (x mean, y mean)
    for (const auto& [dyad, rows] : groups) {
        if (rows.size() < 2) continue;
        Eigen::VectorXd xm = Eigen::VectorXd::Zero(x.cols());
        double ym = 0.0;
        for (Eigen::Index r : rows) {
            xm += x.row(r).transpose();
            ym += y[r];
        }
        means[dyad] = {xm / static_cast<double>(rows.size()),
                       ym / static_cast<double>(rows.size())};
        out.n_dyads++;
        nodes.insert(dyad_nodes.at(dyad).first);
        nodes.insert(dyad_nodes.at(dyad).second);
    }
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const Eigen::Index r = kept[i];
        const auto& [xm, ym] = means.at(row_dyad[r]);
        out.x.row(i) = x.row(r) - xm.transpose();
        out.y[i] = y[r] - ym;
        out.dyad.push_back(row_dyad[r]);
    }
    out.n_nodes = static_cast<int>(nodes.size());
    if (out.x.rows() == 0) throw stage_error("no dyad has two or more usable rows");

    for (Eigen::Index c = 0; c < out.x.cols(); ++c) {
        const double scale = std::max(1.0, x.col(c).cwiseAbs().maxCoeff());
        if (out.x.col(c).cwiseAbs().maxCoeff() <= 1e-12 * scale)
            throw numerical_error("regressor has no within-dyad variation: " + regressors[c]);
    }
    return out;
}

OlsFit ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
               const std::vector<std::string>& names) {
    if (x.rows() != y.size()) throw std::invalid_argument("design and outcome misaligned");
    if (x.rows() < x.cols()) throw numerical_error("fewer rows than regressors");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < x.cols()) {
        const auto perm = qr.colsPermutation().indices();
        std::ostringstream msg;
        msg << "design is rank deficient; collinear columns:";
        for (Eigen::Index k = qr.rank(); k < x.cols(); ++k) {
            const Eigen::Index col = perm[k];
            msg << ' '
                << (col < static_cast<Eigen::Index>(names.size()) ? names[col]
                                                                  : std::to_string(col));
        }
        throw numerical_error(msg.str());
    }
    OlsFit fit;
    fit.beta = qr.solve(y);
    fit.residuals = y - x * fit.beta;
    return fit;
}

namespace {

RobustVcov sandwich(const Eigen::MatrixXd& x, Eigen::MatrixXd meat) {
    const Eigen::Index k = x.cols();
    const Eigen::MatrixXd bread =
        (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    meat = 0.5 * (meat + meat.transpose()).eval();

    RobustVcov out;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(meat);
    const double top = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    if (eig.eigenvalues().minCoeff() < -1e-10 * top) out.floored = true;
    if (eig.eigenvalues().minCoeff() < 0.0) {
        meat = eig.eigenvectors() *
               eig.eigenvalues().cwiseMax(0.0).asDiagonal() *
               eig.eigenvectors().transpose();
    }
    out.v = bread * meat * bread;
    out.se = out.v.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

}  // namespace

RobustVcov dyadic_robust_vcov(const Eigen::MatrixXd& x, const Eigen::VectorXd& residuals,
                              const std::vector<int>& row_dyad,
                              const std::vector<std::pair<int, int>>& dyad_nodes,
                              int threads) {
    const Eigen::Index n = x.rows(), k = x.cols();
    if (residuals.size() != n || static_cast<Eigen::Index>(row_dyad.size()) != n)
        throw std::invalid_argument("vcov inputs are misaligned");

    // per-dyad score sums over rows present
    std::map<int, Eigen::VectorXd> dyad_sum;
    for (Eigen::Index r = 0; r < n; ++r) {
        auto it = dyad_sum.find(row_dyad[r]);
        if (it == dyad_sum.end())
            it = dyad_sum.emplace(row_dyad[r], Eigen::VectorXd::Zero(k)).first;
        it->second += x.row(r).transpose() * residuals[r];
    }
    // node -> dyads touching it
    std::map<int, std::vector<int>> node_dyads;
    for (const auto& [dyad, sum] : dyad_sum) {
        node_dyads[dyad_nodes.at(dyad).first].push_back(dyad);
        node_dyads[dyad_nodes.at(dyad).second].push_back(dyad);
    }
    std::vector<const std::vector<int>*> groups;
    for (const auto& [node, dyads] : node_dyads) groups.push_back(&dyads);

    std::vector<Eigen::MatrixXd> slots(groups.size());
    parallel_for(groups.size(), threads, [&](std::size_t g) {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(k);
        for (int dyad : *groups[g]) s += dyad_sum.at(dyad);
        slots[g] = s * s.transpose();
    });
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    for (const Eigen::MatrixXd& m : slots) meat += m;
    for (const auto& [dyad, s] : dyad_sum) meat -= s * s.transpose();
    return sandwich(x, std::move(meat));
}

RobustVcov cluster_robust_vcov(const Eigen::MatrixXd& x, const Eigen::VectorXd& residuals,
                               const std::vector<int>& row_dyad) {
    const Eigen::Index n = x.rows(), k = x.cols();
    if (residuals.size() != n || static_cast<Eigen::Index>(row_dyad.size()) != n)
        throw std::invalid_argument("vcov inputs are misaligned");
    std::map<int, Eigen::VectorXd> dyad_sum;
    for (Eigen::Index r = 0; r < n; ++r) {
        auto it = dyad_sum.find(row_dyad[r]);
        if (it == dyad_sum.end())
            it = dyad_sum.emplace(row_dyad[r], Eigen::VectorXd::Zero(k)).first;
        it->second += x.row(r).transpose() * residuals[r];
    }
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    for (const auto& [dyad, s] : dyad_sum) meat += s * s.transpose();
    return sandwich(x, std::move(meat));
}

namespace {

struct ModelRows {
    std::vector<double> y, x;
    std::vector<int> dyad;
};

double zscore_inplace(std::vector<double>& v, const std::string& name) {
    const double m = stats::mean(v);
    const double sd = stats::sample_sd(v);
    if (!(sd > 0.0)) throw numerical_error("zero variance in " + name);
    for (double& e : v) e = (e - m) / sd;
    return sd;
}

PanelFit fit_one(const DyadPanel& panel, const std::string& model_name,
                 const std::string& regressor_name, ModelRows rows,
                 const PanelModelOptions& options) {
    // dyads contributing a single row cannot be demeaned; drop them first so
    // the z-scores describe the true estimation sample
    std::map<int, int> per_dyad;
    for (int d : rows.dyad) per_dyad[d]++;
    ModelRows kept;
    for (std::size_t r = 0; r < rows.y.size(); ++r) {
        if (per_dyad[rows.dyad[r]] < 2) continue;
        kept.y.push_back(rows.y[r]);
        kept.x.push_back(rows.x[r]);
        kept.dyad.push_back(rows.dyad[r]);
    }
    if (kept.y.size() < 3)
        throw stage_error("model " + model_name + " has too few usable rows (" +
                          std::to_string(kept.y.size()) + ")");
    zscore_inplace(kept.y, model_name + " outcome");
    zscore_inplace(kept.x, regressor_name);

    const Eigen::Index n = static_cast<Eigen::Index>(kept.y.size());
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        x(r, 0) = kept.x[r];
        y[r] = kept.y[r];
    }
    const WithinDesign design =
        within_transform(x, y, kept.dyad, panel.dyad_nodes, {regressor_name});
    const OlsFit ols = ols_fit(design.x, design.y, design.regressors);
    const RobustVcov vcov = dyadic_robust_vcov(design.x, ols.residuals, design.dyad,
                                               design.dyad_nodes, options.threads);

    PanelFit fit;
    fit.model = model_name;
    fit.regressors = {regressor_name};
    fit.coef = ols.beta;
    fit.se = vcov.se;
    fit.ci_low = fit.coef - 1.96 * fit.se;
    fit.ci_high = fit.coef + 1.96 * fit.se;
    fit.n_obs = static_cast<long long>(design.rows());
    fit.n_dyads = design.n_dyads;
    fit.n_nodes = design.n_nodes;
    fit.dropped_rows = static_cast<long long>(panel.rows()) - fit.n_obs;
    fit.meat_floored = vcov.floored;
    return fit;
}

}  // namespace

std::vector<PanelFit> fit_panel_models(const DyadPanel& panel,
                                       const PanelModelOptions& options) {
    // rows per directed pair, indexed by week
    std::map<std::pair<int, int>, std::map<int, std::size_t>> by_pair;
    for (std::size_t r = 0; r < panel.rows(); ++r)
        by_pair[{panel.target[r], panel.source[r]}][panel.week[r]] = r;

    const auto& topic = panel.topic;
    const auto& user = panel.user;
    const auto& c = panel.c_value;

    // assemble (y, x) rows for a lead/lag pattern; `need_prev` adds week t-1
    const auto assemble = [&](bool need_prev, auto&& make_y, auto&& make_x) {
        ModelRows rows;
        for (const auto& [pair, weeks] : by_pair) {
            for (const auto& [w, r] : weeks) {
                const auto next = weeks.find(w + 1);
                if (next == weeks.end()) continue;
                std::size_t prev_row = r;
                if (need_prev) {
                    const auto prev = weeks.find(w - 1);
                    if (prev == weeks.end()) continue;
                    prev_row = prev->second;
                }
                rows.y.push_back(make_y(r, next->second));
                rows.x.push_back(make_x(prev_row, r));
                rows.dyad.push_back(panel.dyad[r]);
            }
        }
        return rows;
    };

    std::vector<PanelFit> fits;
    fits.push_back(fit_one(
        panel, "topic_change_on_interaction", "interaction",
        assemble(
            false, [&](std::size_t r, std::size_t nx) { return topic[nx] - topic[r]; },
            [&](std::size_t, std::size_t r) { return c[r]; }),
        options));
    fits.push_back(fit_one(
        panel, "user_change_on_interaction", "interaction",
        assemble(
            false, [&](std::size_t r, std::size_t nx) { return user[nx] - user[r]; },
            [&](std::size_t, std::size_t r) { return c[r]; }),
        options));
    fits.push_back(fit_one(
        panel, "interaction_on_topic_change", "topic_change",
        assemble(
            true, [&](std::size_t, std::size_t nx) { return c[nx]; },
            [&](std::size_t pv, std::size_t r) { return topic[r] - topic[pv]; }),
        options));
    fits.push_back(fit_one(
        panel, "interaction_on_user_change", "user_change",
        assemble(
            true, [&](std::size_t, std::size_t nx) { return c[nx]; },
            [&](std::size_t pv, std::size_t r) { return user[r] - user[pv]; }),
        options));
    if (options.include_level_variants) {
        fits.push_back(fit_one(
            panel, "topic_level_on_interaction", "interaction",
            assemble(
                false, [&](std::size_t, std::size_t nx) { return topic[nx]; },
                [&](std::size_t, std::size_t r) { return c[r]; }),
            options));
        fits.push_back(fit_one(
            panel, "user_level_on_interaction", "interaction",
            assemble(
                false, [&](std::size_t, std::size_t nx) { return user[nx]; },
                [&](std::size_t, std::size_t r) { return c[r]; }),
            options));
        fits.push_back(fit_one(
            panel, "interaction_on_topic_level", "topic_level",
            assemble(
                false, [&](std::size_t, std::size_t nx) { return c[nx]; },
                [&](std::size_t, std::size_t r) { return topic[r]; }),
            options));
        fits.push_back(fit_one(
            panel, "interaction_on_user_level", "user_level",
            assemble(
                false, [&](std::size_t, std::size_t nx) { return c[nx]; },
                [&](std::size_t, std::size_t r) { return user[r]; }),
            options));
    }
    return fits;
}

void write_fit_json(const std::string& path, const std::vector<PanelFit>& fits) {
    nlohmann::json arr = nlohmann::json::array();
    for (const PanelFit& f : fits) {
        nlohmann::json coef = nlohmann::json::array(), se = nlohmann::json::array();
        nlohmann::json lo = nlohmann::json::array(), hi = nlohmann::json::array();
        for (Eigen::Index i = 0; i < f.coef.size(); ++i) {
            coef.push_back(f.coef[i]);
            se.push_back(f.se[i]);
            lo.push_back(f.ci_low[i]);
            hi.push_back(f.ci_high[i]);
        }
        arr.push_back({{"model", f.model},
                       {"regressors", f.regressors},
                       {"coef", coef},
                       {"se", se},
                       {"ci_low", lo},
                       {"ci_high", hi},
                       {"n_obs", f.n_obs},
                       {"n_dyads", f.n_dyads},
                       {"n_nodes", f.n_nodes},
                       {"dropped_rows", f.dropped_rows},
                       {"meat_floored", f.meat_floored}});
    }
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write fit report: " + path);
    out << arr.dump(2) << '\n';
}

}  // namespace nichemap
