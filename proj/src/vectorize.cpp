#include "nichemap/vectorize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "nichemap/csv.hpp"
#include "nichemap/errors.hpp"
#include "nichemap/manifest.hpp"
#include "nichemap/rng.hpp"

namespace nichemap {

Eigen::VectorXd SparseCountMatrix::row_dense(int r) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(cols());
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) out[col[k]] = value[k];
    return out;
}

std::vector<int> empty_rows(const SparseCountMatrix& m) {
    std::vector<int> out;
    for (int r = 0; r < m.rows(); ++r)
        if (m.row_empty(r)) out.push_back(r);
    return out;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    std::size_t i = 0;
    const auto starts_with = [&](const char* prefix) {
        const std::size_t len = std::strlen(prefix);
        if (i + len > text.size()) return false;
        for (std::size_t k = 0; k < len; ++k)
            if (std::tolower(static_cast<unsigned char>(text[i + k])) != prefix[k]) return false;
        return true;
    };
    while (i < text.size()) {
        if (starts_with("http://") || starts_with("https://") || starts_with("www.")) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            continue;
        }
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
        ++i;
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<TokenizedDoc> tokenize_records(const std::vector<ContributionRecord>& records,
                                           const std::vector<std::string>& communities,
                                           const StudyWindow& window) {
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < communities.size(); ++i)
        index.emplace(communities[i], static_cast<int>(i));
    std::vector<TokenizedDoc> docs;
    for (const ContributionRecord& rec : records) {
        const auto it = index.find(rec.community_id);
        if (it == index.end() || !window.contains(rec.timestamp)) continue;
        TokenizedDoc doc;
        doc.community = it->second;
        doc.week = window.week_index_of(rec.timestamp);
        doc.tokens = tokenize(rec.text);
        if (!doc.tokens.empty()) docs.push_back(std::move(doc));
    }
    return docs;
}

int PhraseVocabulary::index_of(const std::string& joined) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].joined == joined) return static_cast<int>(i);
    return -1;
}

namespace {

std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin,
                        std::size_t len) {
    std::string out = tokens[begin];
    for (std::size_t k = 1; k < len; ++k) {
        out.push_back(' ');
        out += tokens[begin + k];
    }
    return out;
}

struct GramTally {
    long long count = 0;
    int df = 0;
    int last_community = -1;
};

}  // namespace

PhraseVocabulary detect_phrases(const std::vector<TokenizedDoc>& docs, int n_communities,
                                const PhraseOptions& options) {
    if (options.max_len < 1 || options.max_len > 4)
        throw config_error("phrase length must be 1..4");
    if (options.sample_rate <= 0.0 || options.sample_rate > 1.0)
        throw config_error("phrase sample rate must be in (0, 1]");
    if (options.min_df < 1 || options.min_count < 1)
        throw config_error("phrase floors must be >= 1");

    // Bernoulli doc sample in input order, then group by community so each
    // tally's df advances at most once per community.
    GaussianStream rng(options.seed);
    std::vector<const TokenizedDoc*> sample;
    for (const TokenizedDoc& doc : docs) {
        if (doc.community < 0 || doc.community >= n_communities)
            throw std::invalid_argument("doc community out of range");
        if (options.sample_rate >= 1.0 || rng.uniform() < options.sample_rate)
            sample.push_back(&doc);
    }
    std::stable_sort(sample.begin(), sample.end(),
                     [](const TokenizedDoc* a, const TokenizedDoc* b) {
                         return a->community < b->community;
                     });

    std::unordered_map<std::string, GramTally> grams[5];  // by length 1..max_len
    double total_tokens = 0.0;
    for (const TokenizedDoc* doc : sample) {
        total_tokens += static_cast<double>(doc->tokens.size());
        for (int n = 1; n <= options.max_len; ++n) {
            if (doc->tokens.size() < static_cast<std::size_t>(n)) break;
            for (std::size_t b = 0; b + n <= doc->tokens.size(); ++b) {
                GramTally& t = grams[n][join_tokens(doc->tokens, b, n)];
                t.count++;
                if (t.last_community != doc->community) {
                    t.last_community = doc->community;
                    t.df++;
                }
            }
        }
    }

    PhraseVocabulary vocab;
    if (total_tokens == 0.0) return vocab;

    for (int n = 1; n <= options.max_len; ++n) {
        for (const auto& [joined, tally] : grams[n]) {
            if (tally.df < options.min_df) continue;
            PhraseEntry e;
            e.joined = joined;
            std::istringstream split(joined);
            for (std::string tok; split >> tok;) e.tokens.push_back(tok);
            e.count = tally.count;
            e.df = tally.df;
            if (n >= 2) {
                if (tally.count < options.min_count) continue;
                // ratio = (c_p / N) * prod_t (N / c_t)
                double ratio = static_cast<double>(tally.count) / total_tokens;
                for (const std::string& tok : e.tokens)
                    ratio *= total_tokens / static_cast<double>(grams[1].at(tok).count);
                e.pmi = std::log(ratio);
                if (!(e.pmi >= options.pmi_min)) continue;
            }
            vocab.entries.push_back(std::move(e));
        }
    }
    std::sort(vocab.entries.begin(), vocab.entries.end(),
              [](const PhraseEntry& a, const PhraseEntry& b) {
                  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
                  return a.joined < b.joined;
              });
    return vocab;
}

void write_vocabulary_tsv(const std::string& path, const PhraseVocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write vocabulary: " + path);
    out << "phrase\tcount\tdf\tpmi\n";
    for (const PhraseEntry& e : vocab.entries)
        out << e.joined << '\t' << e.count << '\t' << e.df << '\t' << csv::num(e.pmi) << '\n';
}

PhraseVocabulary read_vocabulary_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw stage_error("cannot open vocabulary: " + path);
    PhraseVocabulary vocab;
    std::string line;
    if (!std::getline(in, line)) return vocab;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = csv::split_line(line, '\t');
        if (fields.size() != 4) throw stage_error("malformed vocabulary line: " + line);
        PhraseEntry e;
        e.joined = fields[0];
        std::istringstream split(e.joined);
        for (std::string tok; split >> tok;) e.tokens.push_back(tok);
        e.count = std::stoll(fields[1]);
        e.df = std::stoi(fields[2]);
        e.pmi = std::stod(fields[3]);
        vocab.entries.push_back(std::move(e));
    }
    return vocab;
}

namespace {

// Rows assembled from per-row accumulators, normalized by the row max.
SparseCountMatrix from_counts(const std::vector<std::map<int, double>>& rows,
                              std::vector<std::string> row_ids,
                              std::vector<std::string> feature_ids,
                              SparseCountMatrix::Tag tag) {
    SparseCountMatrix m;
    m.row_ids = std::move(row_ids);
    m.feature_ids = std::move(feature_ids);
    m.tag = tag;
    m.row_ptr.assign(m.row_ids.size() + 1, 0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double row_max = 0.0;
        if (tag == SparseCountMatrix::Tag::max_normalized)
            for (const auto& [c, v] : rows[r]) row_max = std::max(row_max, v);
        for (const auto& [c, v] : rows[r]) {
            if (v == 0.0) continue;
            m.col.push_back(c);
            m.value.push_back(tag == SparseCountMatrix::Tag::max_normalized ? v / row_max : v);
        }
        m.row_ptr[r + 1] = m.col.size();
    }
    return m;
}

}  // namespace

SparseCountMatrix build_author_matrix(const std::vector<ContributionRecord>& records,
                                      const std::vector<std::string>& communities) {
    std::unordered_map<std::string, int> community_index;
    for (std::size_t i = 0; i < communities.size(); ++i)
        community_index.emplace(communities[i], static_cast<int>(i));

    std::map<std::string, int> author_index;  // ordered: deterministic feature ids
    for (const ContributionRecord& rec : records)
        if (community_index.count(rec.community_id)) author_index.emplace(rec.author_id, 0);
    std::vector<std::string> authors;
    authors.reserve(author_index.size());
    for (auto& [name, idx] : author_index) {
        idx = static_cast<int>(authors.size());
        authors.push_back(name);
    }

    std::vector<std::map<int, double>> rows(communities.size());
    for (const ContributionRecord& rec : records) {
        const auto it = community_index.find(rec.community_id);
        if (it == community_index.end()) continue;
        rows[it->second][author_index.at(rec.author_id)] += 1.0;
    }
    return from_counts(rows, communities, authors, SparseCountMatrix::Tag::max_normalized);
}

std::vector<SparseCountMatrix> weekly_author_matrices(
    const std::vector<ContributionRecord>& records, const std::vector<std::string>& communities,
    const StudyWindow& window, const std::vector<std::string>& author_features) {
    std::unordered_map<std::string, int> community_index, author_index;
    for (std::size_t i = 0; i < communities.size(); ++i)
        community_index.emplace(communities[i], static_cast<int>(i));
    for (std::size_t i = 0; i < author_features.size(); ++i)
        author_index.emplace(author_features[i], static_cast<int>(i));

    std::vector<std::vector<std::map<int, double>>> weekly(
        window.weeks(), std::vector<std::map<int, double>>(communities.size()));
    for (const ContributionRecord& rec : records) {
        const auto cit = community_index.find(rec.community_id);
        if (cit == community_index.end() || !window.contains(rec.timestamp)) continue;
        const auto ait = author_index.find(rec.author_id);
        if (ait == author_index.end()) continue;  // unseen weekly features dropped
        weekly[window.week_index_of(rec.timestamp)][cit->second][ait->second] += 1.0;
    }
    std::vector<SparseCountMatrix> out;
    out.reserve(weekly.size());
    for (const auto& rows : weekly)
        out.push_back(from_counts(rows, communities, author_features,
                                  SparseCountMatrix::Tag::max_normalized));
    return out;
}

SparseCountMatrix count_vocabulary(const std::vector<TokenizedDoc>& docs,
                                   const PhraseVocabulary& vocab,
                                   const std::vector<std::string>& communities, int week) {
    std::unordered_map<std::string, int> feature_index;
    std::size_t longest = 1;
    std::vector<std::string> features;
    features.reserve(vocab.entries.size());
    for (std::size_t i = 0; i < vocab.entries.size(); ++i) {
        feature_index.emplace(vocab.entries[i].joined, static_cast<int>(i));
        features.push_back(vocab.entries[i].joined);
        longest = std::max(longest, vocab.entries[i].tokens.size());
    }

    std::vector<std::map<int, double>> rows(communities.size());
    for (const TokenizedDoc& doc : docs) {
        if (week >= 0 && doc.week != week) continue;
        if (doc.community < 0 || doc.community >= static_cast<int>(communities.size()))
            throw std::invalid_argument("doc community out of range");
        std::size_t i = 0;
        while (i < doc.tokens.size()) {
            std::size_t matched = 1;
            int feature = -1;
            const std::size_t cap = std::min(longest, doc.tokens.size() - i);
            for (std::size_t n = cap; n >= 1; --n) {  // greedy longest match
                const auto it = feature_index.find(join_tokens(doc.tokens, i, n));
                if (it != feature_index.end()) {
                    matched = n;
                    feature = it->second;
                    break;
                }
            }
            if (feature >= 0) rows[doc.community][feature] += 1.0;
            i += matched;
        }
    }
    return from_counts(rows, communities, features, SparseCountMatrix::Tag::raw);
}

std::vector<int> document_frequency(const SparseCountMatrix& counts) {
    std::vector<int> df(counts.cols(), 0);
    for (std::size_t k = 0; k < counts.col.size(); ++k) df[counts.col[k]]++;
    return df;
}

SparseCountMatrix apply_tfidf(const SparseCountMatrix& counts, const std::vector<int>& df) {
    if (static_cast<int>(df.size()) != counts.cols())
        throw std::invalid_argument("df length does not match feature count");
    SparseCountMatrix m = counts;
    m.tag = SparseCountMatrix::Tag::tfidf;
    for (int r = 0; r < m.rows(); ++r) {
        double row_max = 0.0;
        for (std::size_t k = m.row_ptr[r]; k < m.row_ptr[r + 1]; ++k)
            row_max = std::max(row_max, counts.value[k]);
        for (std::size_t k = m.row_ptr[r]; k < m.row_ptr[r + 1]; ++k) {
            if (df[m.col[k]] < 2)
                throw numerical_error("tfidf feature below the df floor: " +
                                      m.feature_ids[m.col[k]]);
            m.value[k] = (counts.value[k] / row_max) / std::log(static_cast<double>(df[m.col[k]]));
        }
    }
    return m;
}

SparseCountMatrix build_tfidf(const std::vector<TokenizedDoc>& docs,
                              const PhraseVocabulary& vocab,
                              const std::vector<std::string>& communities) {
    const SparseCountMatrix counts = count_vocabulary(docs, vocab, communities);
    return apply_tfidf(counts, document_frequency(counts));
}

namespace {

// y = A x for CSR A.
Eigen::MatrixXd sparse_times_dense(const SparseCountMatrix& a, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(a.rows(), x.cols());
    for (int r = 0; r < a.rows(); ++r)
        for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k)
            y.row(r) += a.value[k] * x.row(a.col[k]);
    return y;
}

// y = A^T x.
Eigen::MatrixXd sparse_transpose_times_dense(const SparseCountMatrix& a,
                                             const Eigen::MatrixXd& x) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(a.cols(), x.cols());
    for (int r = 0; r < a.rows(); ++r)
        for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k)
            y.row(a.col[k]) += a.value[k] * x.row(r);
    return y;
}

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& y) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

std::uint64_t feature_ids_hash(const std::vector<std::string>& ids) {
    std::string joined;
    for (const std::string& id : ids) {
        joined += id;
        joined.push_back('\n');
    }
    return fnv1a64(joined);
}

std::string u64_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

}  // namespace

LsaModel fit_lsa(const SparseCountMatrix& m, int k, std::uint64_t seed,
                 const std::string& fitted_on) {
    const int rows = m.rows(), cols = m.cols();
    if (k < 1) throw std::invalid_argument("lsa dimension must be >= 1");
    if (k > std::min(rows, cols))
        throw std::invalid_argument("lsa dimension exceeds matrix size: k=" + std::to_string(k) +
                                    " vs " + std::to_string(rows) + "x" + std::to_string(cols));

    const int l = std::min(k + 15, std::min(rows, cols));
    GaussianStream rng(seed);
    Eigen::MatrixXd omega(cols, l);
    for (int c = 0; c < cols; ++c)
        for (int j = 0; j < l; ++j) omega(c, j) = rng.next();

    Eigen::MatrixXd y = orthonormalize(sparse_times_dense(m, omega));
    for (int iter = 0; iter < 10; ++iter) {
        const Eigen::MatrixXd z = orthonormalize(sparse_transpose_times_dense(m, y));
        y = orthonormalize(sparse_times_dense(m, z));
    }
    // b = y^T A, svd(b) gives A's leading right-singular directions
    const Eigen::MatrixXd b = sparse_transpose_times_dense(m, y).transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);

    LsaModel model;
    model.seed = seed;
    model.fitted_on = fitted_on;
    model.feature_hash = feature_ids_hash(m.feature_ids);
    const Eigen::VectorXd& s = svd.singularValues();
    const double floor = std::max(rows, cols) * std::numeric_limits<double>::epsilon() *
                         (s.size() > 0 ? s[0] : 0.0);
    int rank = 0;
    while (rank < s.size() && s[rank] > floor) ++rank;
    model.k = std::min(k, rank);
    model.rank_reduced = model.k < k;
    model.singular_values = s.head(model.k);
    model.basis = svd.matrixV().leftCols(model.k);
    return model;
}

Eigen::VectorXd LsaModel::project(const SparseCountMatrix& m, int row) const {
    if (m.cols() != basis.rows())
        throw std::invalid_argument("matrix feature space does not match the model");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(k);
    for (std::size_t p = m.row_ptr[row]; p < m.row_ptr[row + 1]; ++p)
        out += m.value[p] * basis.row(m.col[p]).transpose();
    return out;
}

void write_lsa_model(const std::string& path, const LsaModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw stage_error("cannot write lsa model: " + path);
    nlohmann::json header{{"k", model.k},
                          {"features", model.basis.rows()},
                          {"fitted_on", model.fitted_on},
                          {"seed", model.seed},
                          {"feature_hash", u64_hex(model.feature_hash)},
                          {"rank_reduced", model.rank_reduced}};
    out << "nichemap-lsa-v1\n" << header.dump() << '\n';
    out.write(reinterpret_cast<const char*>(model.singular_values.data()),
              static_cast<std::streamsize>(sizeof(double)) * model.k);
    out.write(reinterpret_cast<const char*>(model.basis.data()),
              static_cast<std::streamsize>(sizeof(double)) * model.basis.size());
    if (!out) throw stage_error("short write on lsa model: " + path);
}

LsaModel read_lsa_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw stage_error("cannot open lsa model: " + path);
    std::string magic, header_line;
    if (!std::getline(in, magic) || magic != "nichemap-lsa-v1")
        throw stage_error("not an lsa model file: " + path);
    if (!std::getline(in, header_line)) throw stage_error("truncated lsa model: " + path);
    const nlohmann::json header = nlohmann::json::parse(header_line);
    LsaModel model;
    model.k = header.at("k").get<int>();
    const auto features = header.at("features").get<Eigen::Index>();
    model.fitted_on = header.at("fitted_on").get<std::string>();
    model.seed = header.at("seed").get<std::uint64_t>();
    model.feature_hash = std::stoull(header.at("feature_hash").get<std::string>(), nullptr, 16);
    model.rank_reduced = header.at("rank_reduced").get<bool>();
    model.singular_values.resize(model.k);
    model.basis.resize(features, model.k);
    in.read(reinterpret_cast<char*>(model.singular_values.data()),
            static_cast<std::streamsize>(sizeof(double)) * model.k);
    in.read(reinterpret_cast<char*>(model.basis.data()),
            static_cast<std::streamsize>(sizeof(double)) * model.basis.size());
    if (!in) throw stage_error("truncated lsa model: " + path);
    return model;
}

namespace {

bool stored_rows_equal(const SparseCountMatrix& m, int i, int j) {
    const std::size_t len_i = m.row_ptr[i + 1] - m.row_ptr[i];
    if (len_i != m.row_ptr[j + 1] - m.row_ptr[j]) return false;
    for (std::size_t k = 0; k < len_i; ++k) {
        if (m.col[m.row_ptr[i] + k] != m.col[m.row_ptr[j] + k]) return false;
        if (m.value[m.row_ptr[i] + k] != m.value[m.row_ptr[j] + k]) return false;
    }
    return true;
}

}  // namespace

std::optional<double> cosine_overlap(const LsaModel& model, const SparseCountMatrix& m,
                                     int row_i, int row_j) {
    if (m.row_empty(row_i) || m.row_empty(row_j)) return std::nullopt;
    if (stored_rows_equal(m, row_i, row_j)) return 1.0;
    const Eigen::VectorXd a = model.project(m, row_i);
    const Eigen::VectorXd b = model.project(m, row_j);
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return std::nullopt;
    return std::min(1.0, std::max(-1.0, a.dot(b) / (na * nb)));
}

namespace {

std::optional<double> clamp_unit(std::optional<double> v) {
    if (!v) return v;
    return std::min(1.0, std::max(0.0, *v));
}

}  // namespace

std::vector<MetricSeries> weekly_overlap_series(const LsaModel& model,
                                                const SparseCountMatrix& full,
                                                const std::vector<SparseCountMatrix>& weekly,
                                                const std::vector<std::pair<int, int>>& pairs) {
    std::vector<MetricSeries> out;
    out.reserve(pairs.size());
    for (const auto& [i, j] : pairs) {
        if (i < 0 || j < 0 || i >= full.rows() || j >= full.rows() || i == j)
            throw std::invalid_argument("overlap pair outside the community list");
        MetricSeries s;
        s.i = i;
        s.j = j;
        s.full = clamp_unit(cosine_overlap(model, full, i, j));
        s.weekly.reserve(weekly.size());
        for (const SparseCountMatrix& wk : weekly)
            s.weekly.push_back(clamp_unit(cosine_overlap(model, wk, i, j)));
        out.push_back(std::move(s));
    }
    return out;
}

void write_overlap_csv(const std::string& path, const std::vector<std::string>& communities,
                       const std::vector<MetricSeries>& user,
                       const std::vector<MetricSeries>& topic) {
    if (user.size() != topic.size()) throw std::invalid_argument("overlap series length mismatch");
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write overlap series: " + path);
    out << "i,j,week,user_overlap,topic_overlap\n";
    for (std::size_t p = 0; p < user.size(); ++p) {
        const MetricSeries& u = user[p];
        const MetricSeries& t = topic[p];
        if (u.i != t.i || u.j != t.j || u.weekly.size() != t.weekly.size())
            throw std::invalid_argument("overlap series pair mismatch");
        for (std::size_t w = 0; w < u.weekly.size(); ++w) {
            out << communities.at(u.i) << ',' << communities.at(u.j) << ',' << w << ',';
            if (u.weekly[w]) out << csv::num(*u.weekly[w]);
            out << ',';
            if (t.weekly[w]) out << csv::num(*t.weekly[w]);
            out << '\n';
        }
    }
}

OverlapTable read_overlap_csv(const std::string& path) {
    const csv::Table table = csv::read_table_file(path);
    const int ci = table.column("i"), cj = table.column("j"), cw = table.column("week");
    const int cu = table.column("user_overlap"), ct = table.column("topic_overlap");
    OverlapTable out;
    std::unordered_map<std::string, int> community_index;
    std::map<std::pair<int, int>, int> pair_index;
    const auto intern = [&](const std::string& name) {
        const auto it = community_index.find(name);
        if (it != community_index.end()) return it->second;
        const int idx = static_cast<int>(out.communities.size());
        community_index.emplace(name, idx);
        out.communities.push_back(name);
        return idx;
    };
    int max_week = -1;
    for (const auto& row : table.rows) max_week = std::max(max_week, std::stoi(row[cw]));
    out.weeks = max_week + 1;
    for (const auto& row : table.rows) {
        const int i = intern(row[ci]);
        const int j = intern(row[cj]);
        const int w = std::stoi(row[cw]);
        const auto key = std::make_pair(i, j);
        auto it = pair_index.find(key);
        if (it == pair_index.end()) {
            it = pair_index.emplace(key, static_cast<int>(out.user.size())).first;
            MetricSeries blank;
            blank.i = i;
            blank.j = j;
            blank.weekly.resize(out.weeks);
            out.user.push_back(blank);
            out.topic.push_back(blank);
        }
        if (!row[cu].empty()) out.user[it->second].weekly[w] = std::stod(row[cu]);
        if (!row[ct].empty()) out.topic[it->second].weekly[w] = std::stod(row[ct]);
    }
    return out;
}

}  // namespace nichemap
