#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nichemap {

inline constexpr int kNoiseLabel = -1;

struct ClusterAssignment {
    std::vector<std::string> communities;
    std::vector<int> label;  // parallel to communities; kNoiseLabel for noise
    int n_clusters = 0;
    int n_noise = 0;
    bool underpopulated = false;  // fewer points than min_cluster_size

    std::vector<std::vector<int>> members() const;  // point indices per label
};

// Symmetric cosine-distance matrix 1 - cos(x_i, x_j); zero rows sit at
// distance 1 from everything (and 0 from each other).
Eigen::MatrixXd cosine_distances(const Eigen::MatrixXd& points);

// Density hierarchy over a precomputed distance matrix: mutual-reachability
// distances with core(p) = min_samples-th smallest distance from p counting
// p itself, Prim minimum spanning tree, condensed tree at min_cluster_size,
// excess-of-mass extraction with the root never selectable. Distance ties
// break toward the lower point index, so the labeling is permutation-stable.
// Labels are ordered by each cluster's smallest point index.
ClusterAssignment hdbscan_distances(const Eigen::MatrixXd& distances,
                                    const std::vector<std::string>& ids, int min_cluster_size,
                                    int min_samples);

// Rows of `points` are community vectors; clustering runs on cosine distance.
ClusterAssignment hdbscan(const Eigen::MatrixXd& points, const std::vector<std::string>& ids,
                          int min_cluster_size, int min_samples);

struct SilhouetteReport {
    double mean = 0.0;
    std::map<int, double> per_cluster;  // label -> mean score
    int sample_size = 0;                // scored (non-noise) points
};

// Per-point s = (b-a)/max(a,b) over non-noise points; singleton-cluster
// points score 0, as does a = b = 0. Fewer than two clusters is an error.
SilhouetteReport silhouette(const ClusterAssignment& assignment,
                            const Eigen::MatrixXd& distances);

// Exact up to max_points scored points; beyond that a seeded uniform
// subsample of the non-noise points is scored instead.
SilhouetteReport silhouette_sampled(const ClusterAssignment& assignment,
                                    const Eigen::MatrixXd& distances, int max_points,
                                    std::uint64_t seed);

struct GridSearchSpec {
    std::vector<int> dims;                                // candidate LSA dimensions
    std::vector<int> min_cluster_sizes{2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<int> min_samples{1, 2, 3, 4, 5};
    int noise_ceiling = 0;      // feasible cells keep n_noise strictly below
    int silhouette_cap = 5000;  // subsample threshold
    std::uint64_t seed = 0;
    int threads = 1;
};

struct GridCell {
    int dim = 0;
    int min_cluster_size = 0;
    int min_samples = 0;
    double silhouette = 0.0;  // 0 when not scorable
    int n_clusters = 0;
    int n_noise = 0;
    bool feasible = false;  // >= 2 clusters and n_noise < ceiling
};

struct GridSearchResult {
    GridCell best;
    ClusterAssignment assignment;
    SilhouetteReport score;
    std::vector<GridCell> report;  // grid order: dim, then size, then samples
};

// Maximizes mean silhouette over feasible cells; ties prefer fewer noise
// points, then the smaller dimension, then smaller min_cluster_size, then
// smaller min_samples. No feasible cell is an error naming near misses.
GridSearchResult grid_search(const GridSearchSpec& spec,
                             const std::map<int, Eigen::MatrixXd>& points_by_dim,
                             const std::vector<std::string>& ids);

struct CapResult {
    ClusterAssignment assignment;  // surviving members keep their labels
    int removed_clusters = 0;
    int removed_points = 0;
};

// Clusters with more than max_size members are dissolved into noise.
CapResult cap_cluster_size(const ClusterAssignment& assignment, int max_size = 28);

// CSV `community,cluster` with -1 for noise.
void write_assignment_csv(const std::string& path, const ClusterAssignment& assignment);
ClusterAssignment read_assignment_csv(const std::string& path);

// JSON array of {params, silhouette, n_clusters, n_noise, feasible}.
void write_grid_report(const std::string& path, const std::vector<GridCell>& report);

}  // namespace nichemap
