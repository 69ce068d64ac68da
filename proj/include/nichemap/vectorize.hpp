#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nichemap/corpus.hpp"

namespace nichemap {

// Community-by-feature counts in CSR form. No explicit zeros are stored.
struct SparseCountMatrix {
    enum class Tag { raw, max_normalized, tfidf };

    std::vector<std::string> row_ids;      // communities
    std::vector<std::string> feature_ids;  // authors or vocabulary entries
    std::vector<std::size_t> row_ptr;      // rows()+1 offsets into col/value
    std::vector<int> col;
    std::vector<double> value;
    Tag tag = Tag::raw;

    int rows() const { return static_cast<int>(row_ids.size()); }
    int cols() const { return static_cast<int>(feature_ids.size()); }
    bool row_empty(int r) const { return row_ptr[r] == row_ptr[r + 1]; }
    Eigen::VectorXd row_dense(int r) const;
};

// Rows whose community recorded nothing; permitted, surfaced for logging.
std::vector<int> empty_rows(const SparseCountMatrix& m);

// Lowercased alphanumeric runs; URLs (http://, https://, www.) are removed
// before splitting.
std::vector<std::string> tokenize(const std::string& text);

struct TokenizedDoc {
    int community = -1;
    int week = -1;
    std::vector<std::string> tokens;
};

// One doc per contribution; records from communities outside `communities`
// or timestamps outside the window are dropped.
std::vector<TokenizedDoc> tokenize_records(const std::vector<ContributionRecord>& records,
                                           const std::vector<std::string>& communities,
                                           const StudyWindow& window);

struct PhraseEntry {
    std::vector<std::string> tokens;  // length 1..max_len
    std::string joined;               // tokens joined by spaces
    long long count = 0;              // occurrences in the detection sample
    int df = 0;                       // communities containing the phrase
    double pmi = 0.0;                 // natural log; 0 for single tokens
};

struct PhraseVocabulary {
    std::vector<PhraseEntry> entries;
    int index_of(const std::string& joined) const;  // -1 when absent
};

struct PhraseOptions {
    int max_len = 4;
    double pmi_min = 3.0;      // retained when pmi >= pmi_min
    long long min_count = 2;   // phrases only
    int min_df = 2;            // phrases and single tokens
    double sample_rate = 1.0;  // Bernoulli per doc
    std::uint64_t seed = 0;
};

// Probabilities use one shared normalizer (total sampled tokens), so a
// phrase occurring 20x more often than its tokens' product scores ln 20.
PhraseVocabulary detect_phrases(const std::vector<TokenizedDoc>& docs, int n_communities,
                                const PhraseOptions& options = {});

void write_vocabulary_tsv(const std::string& path, const PhraseVocabulary& vocab);
PhraseVocabulary read_vocabulary_tsv(const std::string& path);

// Contribution counts per (community, author), rows divided by their max.
SparseCountMatrix build_author_matrix(const std::vector<ContributionRecord>& records,
                                      const std::vector<std::string>& communities);

// Weekly author counts restricted to a frozen feature list, max-normalized.
std::vector<SparseCountMatrix> weekly_author_matrices(
    const std::vector<ContributionRecord>& records, const std::vector<std::string>& communities,
    const StudyWindow& window, const std::vector<std::string>& author_features);

// Vocabulary counts with greedy longest-match left-to-right phrase matching.
// week >= 0 restricts to that week's docs.
SparseCountMatrix count_vocabulary(const std::vector<TokenizedDoc>& docs,
                                   const PhraseVocabulary& vocab,
                                   const std::vector<std::string>& communities, int week = -1);

// Communities with a nonzero count per feature.
std::vector<int> document_frequency(const SparseCountMatrix& counts);

// entry = (count / row max) / ln(df). Any counted feature with df < 2 is an
// invariant violation and fatal.
SparseCountMatrix apply_tfidf(const SparseCountMatrix& counts, const std::vector<int>& df);

SparseCountMatrix build_tfidf(const std::vector<TokenizedDoc>& docs,
                              const PhraseVocabulary& vocab,
                              const std::vector<std::string>& communities);

struct LsaModel {
    int k = 0;
    Eigen::MatrixXd basis;            // features x k, orthonormal columns
    Eigen::VectorXd singular_values;  // nonincreasing
    std::string fitted_on;            // "authors" | "topics"
    std::uint64_t seed = 0;
    std::uint64_t feature_hash = 0;   // over the training feature ids
    bool rank_reduced = false;        // k clipped to the numerical rank

    Eigen::VectorXd project(const SparseCountMatrix& m, int row) const;
};

// Seeded randomized truncated SVD: 10 power iterations, oversampling 15.
LsaModel fit_lsa(const SparseCountMatrix& m, int k, std::uint64_t seed,
                 const std::string& fitted_on);

void write_lsa_model(const std::string& path, const LsaModel& model);
LsaModel read_lsa_model(const std::string& path);

// Cosine of the projected rows, in [-1, 1]. Identical stored rows give
// exactly 1. A row projecting to zero (or storing nothing) yields missing.
std::optional<double> cosine_overlap(const LsaModel& model, const SparseCountMatrix& m,
                                     int row_i, int row_j);

struct MetricSeries {
    int i = 0;
    int j = 0;
    std::optional<double> full;            // whole-period overlap, clamped [0,1]
    std::vector<std::optional<double>> weekly;
};

// Weekly rows projected through the frozen full-period model; negatives are
// clamped to 0 per the declared [0, 1] range.
std::vector<MetricSeries> weekly_overlap_series(const LsaModel& model,
                                                const SparseCountMatrix& full,
                                                const std::vector<SparseCountMatrix>& weekly,
                                                const std::vector<std::pair<int, int>>& pairs);

// CSV `i,j,week,user_overlap,topic_overlap`; missing values are empty fields.
// `user` and `topic` must cover the same pairs in the same order.
void write_overlap_csv(const std::string& path, const std::vector<std::string>& communities,
                       const std::vector<MetricSeries>& user,
                       const std::vector<MetricSeries>& topic);

struct OverlapTable {
    std::vector<std::string> communities;  // encountered order
    std::vector<MetricSeries> user;
    std::vector<MetricSeries> topic;
    int weeks = 0;
};

OverlapTable read_overlap_csv(const std::string& path);

}  // namespace nichemap
