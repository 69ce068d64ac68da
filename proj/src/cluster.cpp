#include "nichemap/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nichemap/csv.hpp"
#include "nichemap/errors.hpp"
#include "nichemap/parallel.hpp"

namespace nichemap {

std::vector<std::vector<int>> ClusterAssignment::members() const {
    std::vector<std::vector<int>> out(n_clusters);
    for (std::size_t i = 0; i < label.size(); ++i)
        if (label[i] >= 0) out[label[i]].push_back(static_cast<int>(i));
    return out;
}

Eigen::MatrixXd cosine_distances(const Eigen::MatrixXd& points) {
    const Eigen::Index n = points.rows();
    Eigen::VectorXd norm(n);
    for (Eigen::Index i = 0; i < n; ++i) norm[i] = points.row(i).norm();
    Eigen::MatrixXd d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double v;
            if (norm[i] == 0.0 && norm[j] == 0.0) {
                v = 0.0;
            } else if (norm[i] == 0.0 || norm[j] == 0.0) {
                v = 1.0;
            } else {
                v = 1.0 - points.row(i).dot(points.row(j)) / (norm[i] * norm[j]);
                v = std::min(2.0, std::max(0.0, v));
            }
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

namespace {

struct MstEdge {
    int u = 0;
    int v = 0;
    double w = 0.0;
};

// Prim over the complete mutual-reachability graph; ties pick the lower
// vertex index so the tree is reproducible.
std::vector<MstEdge> prim_mst(const Eigen::MatrixXd& mreach) {
    const int n = static_cast<int>(mreach.rows());
    std::vector<bool> in_tree(n, false);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<int> parent(n, 0);
    in_tree[0] = true;
    for (int j = 1; j < n; ++j) best[j] = mreach(0, j);

    std::vector<MstEdge> edges;
    edges.reserve(n - 1);
    for (int round = 1; round < n; ++round) {
        int pick = -1;
        for (int j = 0; j < n; ++j)
            if (!in_tree[j] && (pick < 0 || best[j] < best[pick])) pick = j;
        in_tree[pick] = true;
        edges.push_back({parent[pick], pick, best[pick]});
        for (int j = 0; j < n; ++j) {
            if (in_tree[j]) continue;
            if (mreach(pick, j) < best[j]) {
                best[j] = mreach(pick, j);
                parent[j] = pick;
            }
        }
    }
    return edges;
}

struct Dendrogram {
    // merge m joins node ids left/right (< n: leaf, >= n: merge id - n)
    std::vector<int> left, right;
    std::vector<double> weight;
    std::vector<int> size;  // leaves under the merge
};

Dendrogram single_linkage(std::vector<MstEdge> edges, int n) {
    std::sort(edges.begin(), edges.end(), [](const MstEdge& a, const MstEdge& b) {
        if (a.w != b.w) return a.w < b.w;
        const int amin = std::min(a.u, a.v), bmin = std::min(b.u, b.v);
        if (amin != bmin) return amin < bmin;
        return std::max(a.u, a.v) < std::max(b.u, b.v);
    });
    std::vector<int> uf_parent(n);
    std::vector<int> node_of(n);  // union-find root -> dendrogram node id
    for (int i = 0; i < n; ++i) {
        uf_parent[i] = i;
        node_of[i] = i;
    }
    const auto find = [&](int x) {
        while (uf_parent[x] != x) {
            uf_parent[x] = uf_parent[uf_parent[x]];
            x = uf_parent[x];
        }
        return x;
    };

    Dendrogram d;
    for (const MstEdge& e : edges) {
        const int ru = find(e.u), rv = find(e.v);
        const int m = static_cast<int>(d.left.size());
        d.left.push_back(node_of[ru]);
        d.right.push_back(node_of[rv]);
        d.weight.push_back(e.w);
        const auto leaves = [&](int node) { return node < n ? 1 : d.size[node - n]; };
        d.size.push_back(leaves(node_of[ru]) + leaves(node_of[rv]));
        uf_parent[ru] = rv;
        node_of[find(rv)] = n + m;
    }
    return d;
}

struct CondensedTree {
    // per condensed cluster
    std::vector<double> birth;                     // lambda at creation
    std::vector<std::vector<int>> child_clusters;  // cluster ids
    std::vector<std::vector<std::pair<int, double>>> points;  // (point, exit lambda)
    std::vector<double> stability;
};

void collect_leaves(const Dendrogram& d, int n, int node, std::vector<int>& out) {
    if (node < n) {
        out.push_back(node);
        return;
    }
    collect_leaves(d, n, d.left[node - n], out);
    collect_leaves(d, n, d.right[node - n], out);
}

CondensedTree condense(const Dendrogram& d, int n, int min_cluster_size) {
    CondensedTree t;
    t.birth.push_back(0.0);  // root cluster 0 holds all points at lambda 0
    t.child_clusters.emplace_back();
    t.points.emplace_back();

    struct Frame {
        int node;     // dendrogram node id
        int cluster;  // condensed cluster the node's points belong to
    };
    std::vector<Frame> stack{{2 * n - 2, 0}};
    const auto leaves_of = [&](int node) { return node < n ? 1 : d.size[node - n]; };
    const auto drop_leaves = [&](int node, int cluster, double lam) {
        std::vector<int> leaves;
        collect_leaves(d, n, node, leaves);
        for (int p : leaves) t.points[cluster].emplace_back(p, lam);
    };

    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        const int m = f.node - n;
        const double w = d.weight[m];
        const double lam =
            w > 0.0 ? 1.0 / w : std::numeric_limits<double>::infinity();
        const int l = d.left[m], r = d.right[m];
        const int szl = leaves_of(l), szr = leaves_of(r);
        const bool big_l = szl >= min_cluster_size, big_r = szr >= min_cluster_size;
        if (big_l && big_r) {
            for (int node : {l, r}) {
                const int c = static_cast<int>(t.birth.size());
                t.birth.push_back(lam);
                t.child_clusters.emplace_back();
                t.points.emplace_back();
                t.child_clusters[f.cluster].push_back(c);
                stack.push_back({node, c});
            }
        } else if (big_l) {
            drop_leaves(r, f.cluster, lam);
            stack.push_back({l, f.cluster});
        } else if (big_r) {
            drop_leaves(l, f.cluster, lam);
            stack.push_back({r, f.cluster});
        } else {
            drop_leaves(l, f.cluster, lam);
            drop_leaves(r, f.cluster, lam);
        }
    }

    // S(C) = sum over members of (exit lambda - birth); a child split counts
    // its points as exiting at the split lambda.
    t.stability.assign(t.birth.size(), 0.0);
    std::vector<int> subtree_points(t.birth.size(), 0);
    for (int c = static_cast<int>(t.birth.size()) - 1; c >= 0; --c) {
        subtree_points[c] = static_cast<int>(t.points[c].size());
        for (int child : t.child_clusters[c]) subtree_points[c] += subtree_points[child];
        for (const auto& [p, lam] : t.points[c]) t.stability[c] += lam - t.birth[c];
        for (int child : t.child_clusters[c])
            t.stability[c] += (t.birth[child] - t.birth[c]) * subtree_points[child];
    }
    return t;
}

}  // namespace

ClusterAssignment hdbscan_distances(const Eigen::MatrixXd& distances,
                                    const std::vector<std::string>& ids, int min_cluster_size,
                                    int min_samples) {
    const int n = static_cast<int>(distances.rows());
    if (distances.cols() != n) throw std::invalid_argument("distance matrix must be square");
    if (static_cast<int>(ids.size()) != n)
        throw std::invalid_argument("ids length does not match the distance matrix");
    if (min_cluster_size < 2) throw std::invalid_argument("min_cluster_size must be >= 2");
    if (min_samples < 1) throw std::invalid_argument("min_samples must be >= 1");

    ClusterAssignment out;
    out.communities = ids;
    out.label.assign(n, kNoiseLabel);
    if (n < min_cluster_size) {
        out.n_noise = n;
        out.underpopulated = true;
        return out;
    }

    // core distance: min_samples-th smallest distance counting the point
    const int k = std::min(min_samples, n);
    std::vector<double> core(n);
    std::vector<double> row(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) row[j] = distances(i, j);
        std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
        core[i] = row[k - 1];
    }
    Eigen::MatrixXd mreach(n, n);
    for (int i = 0; i < n; ++i) {
        mreach(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j) {
            const double v = std::max({core[i], core[j], distances(i, j)});
            mreach(i, j) = v;
            mreach(j, i) = v;
        }
    }

    const Dendrogram dendro = single_linkage(prim_mst(mreach), n);
    const CondensedTree tree = condense(dendro, n, min_cluster_size);
    const int n_condensed = static_cast<int>(tree.birth.size());

    // excess of mass, root never selectable; ties keep the ancestor
    std::vector<double> score(n_condensed, 0.0);
    std::vector<bool> selected(n_condensed, false);
    for (int c = n_condensed - 1; c >= 1; --c) {
        double child_sum = 0.0;
        for (int child : tree.child_clusters[c]) child_sum += score[child];
        if (tree.child_clusters[c].empty() || tree.stability[c] >= child_sum) {
            selected[c] = true;
            score[c] = tree.stability[c];
        } else {
            score[c] = child_sum;
        }
    }

    // top-down: the highest selected cluster on each path claims its subtree
    std::vector<std::vector<int>> cluster_points;
    struct Walk {
        int cluster;
        int claim;  // index into cluster_points, -1 = noise
    };
    std::vector<Walk> stack{{0, -1}};
    while (!stack.empty()) {
        const Walk w = stack.back();
        stack.pop_back();
        int claim = w.claim;
        if (claim < 0 && w.cluster != 0 && selected[w.cluster]) {
            claim = static_cast<int>(cluster_points.size());
            cluster_points.emplace_back();
        }
        if (claim >= 0)
            for (const auto& [p, lam] : tree.points[w.cluster]) cluster_points[claim].push_back(p);
        for (int child : tree.child_clusters[w.cluster]) stack.push_back({child, claim});
    }

    std::sort(cluster_points.begin(), cluster_points.end(),
              [](const std::vector<int>& a, const std::vector<int>& b) {
                  return *std::min_element(a.begin(), a.end()) <
                         *std::min_element(b.begin(), b.end());
              });
    out.n_clusters = static_cast<int>(cluster_points.size());
    for (int c = 0; c < out.n_clusters; ++c)
        for (int p : cluster_points[c]) out.label[p] = c;
    out.n_noise = static_cast<int>(std::count(out.label.begin(), out.label.end(), kNoiseLabel));
    return out;
}

ClusterAssignment hdbscan(const Eigen::MatrixXd& points, const std::vector<std::string>& ids,
                          int min_cluster_size, int min_samples) {
    return hdbscan_distances(cosine_distances(points), ids, min_cluster_size, min_samples);
}

SilhouetteReport silhouette(const ClusterAssignment& assignment,
                            const Eigen::MatrixXd& distances) {
    const int n = static_cast<int>(assignment.label.size());
    if (distances.rows() != n || distances.cols() != n)
        throw std::invalid_argument("distance matrix does not match the assignment");
    if (assignment.n_clusters < 2)
        throw std::invalid_argument("silhouette needs at least two clusters");

    const auto members = assignment.members();
    int occupied = 0;
    for (const auto& m : members)
        if (!m.empty()) occupied++;
    if (occupied < 2) throw std::invalid_argument("silhouette needs at least two clusters");
    SilhouetteReport report;
    std::map<int, std::pair<double, int>> acc;  // label -> (sum, count)
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int li = assignment.label[i];
        if (li < 0) continue;
        double s = 0.0;
        if (members[li].size() > 1) {
            double a = 0.0;
            for (int p : members[li])
                if (p != i) a += distances(i, p);
            a /= static_cast<double>(members[li].size() - 1);
            double b = std::numeric_limits<double>::infinity();
            for (int c = 0; c < assignment.n_clusters; ++c) {
                if (c == li || members[c].empty()) continue;
                double m = 0.0;
                for (int p : members[c]) m += distances(i, p);
                b = std::min(b, m / static_cast<double>(members[c].size()));
            }
            const double denom = std::max(a, b);
            s = denom > 0.0 ? (b - a) / denom : 0.0;
        }
        total += s;
        auto& slot = acc[li];
        slot.first += s;
        slot.second++;
        report.sample_size++;
    }
    report.mean = report.sample_size > 0 ? total / report.sample_size : 0.0;
    for (const auto& [label, sum_count] : acc)
        report.per_cluster[label] = sum_count.first / sum_count.second;
    return report;
}

SilhouetteReport silhouette_sampled(const ClusterAssignment& assignment,
                                    const Eigen::MatrixXd& distances, int max_points,
                                    std::uint64_t seed) {
    std::vector<int> scored;
    for (std::size_t i = 0; i < assignment.label.size(); ++i)
        if (assignment.label[i] >= 0) scored.push_back(static_cast<int>(i));
    if (static_cast<int>(scored.size()) <= max_points) return silhouette(assignment, distances);

    std::mt19937_64 eng(seed);
    for (std::size_t i = scored.size() - 1; i > 0; --i) {
        const std::size_t j = eng() % (i + 1);
        std::swap(scored[i], scored[j]);
    }
    scored.resize(max_points);
    std::sort(scored.begin(), scored.end());

    ClusterAssignment sub;
    sub.n_noise = 0;
    Eigen::MatrixXd d(max_points, max_points);
    std::map<int, int> relabel;
    for (int a = 0; a < max_points; ++a) {
        sub.communities.push_back(assignment.communities[scored[a]]);
        const int orig = assignment.label[scored[a]];
        auto it = relabel.find(orig);
        if (it == relabel.end()) it = relabel.emplace(orig, static_cast<int>(relabel.size())).first;
        sub.label.push_back(it->second);
        for (int b = 0; b < max_points; ++b) d(a, b) = distances(scored[a], scored[b]);
    }
    sub.n_clusters = static_cast<int>(relabel.size());
    SilhouetteReport report = silhouette(sub, d);
    // report per-cluster means under the original labels
    std::map<int, double> renamed;
    for (const auto& [orig, compact] : relabel) {
        const auto it = report.per_cluster.find(compact);
        if (it != report.per_cluster.end()) renamed[orig] = it->second;
    }
    report.per_cluster = std::move(renamed);
    return report;
}

GridSearchResult grid_search(const GridSearchSpec& spec,
                             const std::map<int, Eigen::MatrixXd>& points_by_dim,
                             const std::vector<std::string>& ids) {
    if (spec.dims.empty() || spec.min_cluster_sizes.empty() || spec.min_samples.empty())
        throw config_error("cluster grid must not be empty");
    if (spec.noise_ceiling <= 0) throw config_error("noise ceiling must be > 0");
    for (int dim : spec.dims)
        if (!points_by_dim.count(dim))
            throw config_error("no point matrix for dimension " + std::to_string(dim));

    std::map<int, Eigen::MatrixXd> dist_by_dim;
    for (int dim : spec.dims) dist_by_dim.emplace(dim, cosine_distances(points_by_dim.at(dim)));

    std::vector<GridCell> cells;
    for (int dim : spec.dims)
        for (int mcs : spec.min_cluster_sizes)
            for (int ms : spec.min_samples) {
                GridCell cell;
                cell.dim = dim;
                cell.min_cluster_size = mcs;
                cell.min_samples = ms;
                cells.push_back(cell);
            }

    parallel_for(cells.size(), spec.threads, [&](std::size_t idx) {
        GridCell& cell = cells[idx];
        const ClusterAssignment a =
            hdbscan_distances(dist_by_dim.at(cell.dim), ids, cell.min_cluster_size,
                              cell.min_samples);
        cell.n_clusters = a.n_clusters;
        cell.n_noise = a.n_noise;
        if (a.n_clusters >= 2) {
            cell.silhouette =
                silhouette_sampled(a, dist_by_dim.at(cell.dim), spec.silhouette_cap, spec.seed)
                    .mean;
            cell.feasible = cell.n_noise < spec.noise_ceiling;
        }
    });

    const GridCell* best = nullptr;
    for (const GridCell& cell : cells) {
        if (!cell.feasible) continue;
        if (!best || cell.silhouette > best->silhouette ||
            (cell.silhouette == best->silhouette &&
             (cell.n_noise < best->n_noise ||
              (cell.n_noise == best->n_noise && cell.dim < best->dim))))
            best = &cell;
    }
    if (!best) {
        std::vector<GridCell> near = cells;
        std::sort(near.begin(), near.end(),
                  [](const GridCell& a, const GridCell& b) { return a.n_noise < b.n_noise; });
        std::ostringstream msg;
        msg << "no grid cell satisfies the noise ceiling " << spec.noise_ceiling
            << "; nearest misses:";
        for (std::size_t i = 0; i < near.size() && i < 3; ++i)
            msg << " (dim=" << near[i].dim << ", size=" << near[i].min_cluster_size
                << ", samples=" << near[i].min_samples << ", noise=" << near[i].n_noise
                << ", clusters=" << near[i].n_clusters << ")";
        throw stage_error(msg.str());
    }

    GridSearchResult result;
    result.best = *best;
    result.report = std::move(cells);
    result.assignment = hdbscan_distances(dist_by_dim.at(best->dim), ids,
                                          best->min_cluster_size, best->min_samples);
    result.score = silhouette_sampled(result.assignment, dist_by_dim.at(best->dim),
                                      spec.silhouette_cap, spec.seed);
    return result;
}

CapResult cap_cluster_size(const ClusterAssignment& assignment, int max_size) {
    if (max_size < 1) throw std::invalid_argument("max_size must be >= 1");
    std::map<int, int> size;
    for (int l : assignment.label)
        if (l >= 0) size[l]++;
    CapResult out;
    out.assignment = assignment;
    for (const auto& [label, count] : size) {
        if (count <= max_size) continue;
        out.removed_clusters++;
        out.removed_points += count;
        for (std::size_t i = 0; i < out.assignment.label.size(); ++i)
            if (out.assignment.label[i] == label) out.assignment.label[i] = kNoiseLabel;
    }
    out.assignment.n_clusters = assignment.n_clusters - out.removed_clusters;
    out.assignment.n_noise = assignment.n_noise + out.removed_points;
    return out;
}

void write_assignment_csv(const std::string& path, const ClusterAssignment& assignment) {
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write assignment: " + path);
    out << "community,cluster\n";
    for (std::size_t i = 0; i < assignment.communities.size(); ++i)
        out << assignment.communities[i] << ',' << assignment.label[i] << '\n';
}

ClusterAssignment read_assignment_csv(const std::string& path) {
    const csv::Table table = csv::read_table_file(path);
    const int cc = table.column("community"), cl = table.column("cluster");
    ClusterAssignment out;
    std::map<int, int> seen;
    for (const auto& row : table.rows) {
        out.communities.push_back(row[cc]);
        const int label = std::stoi(row[cl]);
        out.label.push_back(label);
        if (label >= 0)
            seen[label]++;
        else
            out.n_noise++;
    }
    out.n_clusters = static_cast<int>(seen.size());
    return out;
}

void write_grid_report(const std::string& path, const std::vector<GridCell>& report) {
    nlohmann::json arr = nlohmann::json::array();
    for (const GridCell& cell : report) {
        arr.push_back({{"params",
                        {{"dim", cell.dim},
                         {"min_cluster_size", cell.min_cluster_size},
                         {"min_samples", cell.min_samples}}},
                       {"silhouette", cell.silhouette},
                       {"n_clusters", cell.n_clusters},
                       {"n_noise", cell.n_noise},
                       {"feasible", cell.feasible}});
    }
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write grid report: " + path);
    out << arr.dump(2) << '\n';
}

}  // namespace nichemap
