#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "nichemap/episodes.hpp"
#include "nichemap/stats.hpp"

using namespace nichemap;

namespace {

// Two-community sequence whose (0,1) entry follows `values` at `weeks`.
JacobianSequence make_sequence(const std::vector<double>& values, const std::vector<int>& weeks) {
    REQUIRE(values.size() == weeks.size());
    JacobianSequence seq;
    seq.cluster_id = "fixture";
    seq.communities = {"a", "b"};
    for (std::size_t k = 0; k < values.size(); ++k) {
        seq.target.push_back(static_cast<int>(k) + 1);
        seq.week.push_back(weeks[k]);
        Eigen::MatrixXd c(2, 2);
        c << 0.0, values[k], -values[k], 0.0;
        seq.c.push_back(c);
        seq.intercept.push_back(Eigen::VectorXd::Zero(2));
    }
    return seq;
}

JacobianSequence make_sequence(const std::vector<double>& values) {
    std::vector<int> weeks(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) weeks[k] = static_cast<int>(k);
    return make_sequence(values, weeks);
}

// Independent run finder: for every index, test whether it starts a maximal
// run by re-scanning, then average by direct summation.
std::vector<Episode> rle_oracle(const std::vector<double>& values, const std::vector<int>& weeks) {
    const auto sgn = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };
    std::vector<Episode> out;
    const int n = static_cast<int>(values.size());
    for (int k = 0; k < n; ++k) {
        if (sgn(values[k]) == 0) continue;
        const bool contiguous_prev = k > 0 && weeks[k - 1] + 1 == weeks[k];
        if (contiguous_prev && sgn(values[k - 1]) == sgn(values[k])) continue;  // not a start
        int j = k;
        while (j + 1 < n && weeks[j] + 1 == weeks[j + 1] && sgn(values[j + 1]) == sgn(values[k]))
            ++j;
        Episode e;
        e.cluster_id = "fixture";
        e.source = "b";
        e.target = "a";
        e.start_week = weeks[k];
        e.duration = j - k + 1;
        e.sign = sgn(values[k]) > 0 ? EpisodeSign::mutualism : EpisodeSign::competition;
        double sum = 0.0, abs_sum = 0.0;
        for (int t = k; t <= j; ++t) {
            sum += values[t];
            abs_sum += std::abs(values[t]);
        }
        e.mean_value = sum / e.duration;
        e.mean_strength = abs_sum / e.duration;
        out.push_back(e);
    }
    return out;
}

void check_equal(const std::vector<Episode>& got, const std::vector<Episode>& want) {
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
        CHECK(got[k].start_week == want[k].start_week);
        CHECK(got[k].duration == want[k].duration);
        CHECK(got[k].sign == want[k].sign);
        CHECK(got[k].mean_value == doctest::Approx(want[k].mean_value).epsilon(1e-12));
        CHECK(got[k].mean_strength == doctest::Approx(want[k].mean_strength).epsilon(1e-12));
    }
}

}  // namespace

TEST_CASE("single positive run is one mutualism episode") {
    const auto eps = extract_episodes(make_sequence({0.5, 0.2, 0.9}), "a", "b");
    REQUIRE(eps.size() == 1);
    CHECK(eps[0].sign == EpisodeSign::mutualism);
    CHECK(eps[0].start_week == 0);
    CHECK(eps[0].duration == 3);
    CHECK(eps[0].mean_value == doctest::Approx((0.5 + 0.2 + 0.9) / 3));
    CHECK(eps[0].mean_strength == doctest::Approx((0.5 + 0.2 + 0.9) / 3));
}

TEST_CASE("alternating signs produce unit-length episodes") {
    const auto eps = extract_episodes(make_sequence({0.5, -0.2, 0.9}), "a", "b");
    REQUIRE(eps.size() == 3);
    for (const Episode& e : eps) CHECK(e.duration == 1);
    CHECK(eps[0].sign == EpisodeSign::mutualism);
    CHECK(eps[1].sign == EpisodeSign::competition);
    CHECK(eps[2].sign == EpisodeSign::mutualism);
}

TEST_CASE("zeros belong to no episode and split runs") {
    const auto eps = extract_episodes(make_sequence({0.5, 0.0, 0.3, -0.2, -0.4}), "a", "b");
    REQUIRE(eps.size() == 3);
    CHECK(eps[0].sign == EpisodeSign::mutualism);
    CHECK(eps[0].duration == 1);
    CHECK(eps[1].sign == EpisodeSign::mutualism);
    CHECK(eps[1].duration == 1);
    CHECK(eps[1].start_week == 2);
    CHECK(eps[2].sign == EpisodeSign::competition);
    CHECK(eps[2].duration == 2);
    CHECK(eps[2].mean_value == doctest::Approx(-0.3));
    CHECK(eps[2].mean_strength == doctest::Approx(0.3));
}

TEST_CASE("missing weeks terminate runs") {
    const auto eps = extract_episodes(make_sequence({0.5, 0.4, 0.3}, {3, 4, 9}), "a", "b");
    REQUIRE(eps.size() == 2);
    CHECK(eps[0].start_week == 3);
    CHECK(eps[0].duration == 2);
    CHECK(eps[1].start_week == 9);
    CHECK(eps[1].duration == 1);
}

TEST_CASE("unknown community raises") {
    const auto seq = make_sequence({0.5});
    CHECK_THROWS_AS(extract_episodes(seq, "a", "zz"), std::invalid_argument);
    CHECK_THROWS_AS(extract_episodes(seq, "a", "a"), std::invalid_argument);
}

TEST_CASE("direction uses distinct matrix entries") {
    const auto seq = make_sequence({0.5, 0.25});
    const auto fwd = extract_episodes(seq, "a", "b");
    const auto rev = extract_episodes(seq, "b", "a");
    REQUIRE(fwd.size() == 1);
    REQUIRE(rev.size() == 1);
    CHECK(fwd[0].sign == EpisodeSign::mutualism);
    CHECK(rev[0].sign == EpisodeSign::competition);
    CHECK(fwd[0].source == "b");
    CHECK(rev[0].source == "a");
}

TEST_CASE("episodes match brute-force run-length oracle on random sequences") {
    std::mt19937 eng(991);
    std::uniform_int_distribution<int> len_dist(1, 40);
    std::uniform_real_distribution<double> val_dist(-1.0, 1.0);
    std::uniform_int_distribution<int> zero_dist(0, 4);
    std::uniform_int_distribution<int> gap_dist(0, 9);
    for (int rep = 0; rep < 2000; ++rep) {
        const int len = len_dist(eng);
        std::vector<double> values(len);
        std::vector<int> weeks(len);
        int week = 0;
        for (int k = 0; k < len; ++k) {
            values[k] = zero_dist(eng) == 0 ? 0.0 : val_dist(eng);
            if (k > 0) week += gap_dist(eng) == 0 ? 2 : 1;  // occasional gap
            weeks[k] = week;
        }
        const auto seq = make_sequence(values, weeks);
        check_equal(extract_episodes(seq, "a", "b"), rle_oracle(values, weeks));
    }
}

TEST_CASE("episode durations plus breaks cover the observed weeks") {
    std::mt19937 eng(992);
    std::uniform_real_distribution<double> val_dist(-1.0, 1.0);
    std::uniform_int_distribution<int> zero_dist(0, 3);
    std::vector<double> values(200);
    int zeros = 0;
    for (double& v : values) {
        v = zero_dist(eng) == 0 ? 0.0 : val_dist(eng);
        if (v == 0.0) ++zeros;
    }
    const auto eps = extract_episodes(make_sequence(values), "a", "b");
    long long covered = 0;
    for (const Episode& e : eps) covered += e.duration;
    CHECK(covered + zeros == static_cast<long long>(values.size()));
}

TEST_CASE("negating the series swaps episode labels exactly") {
    std::mt19937 eng(993);
    std::uniform_real_distribution<double> val_dist(-1.0, 1.0);
    std::vector<double> values(120);
    for (double& v : values) v = val_dist(eng);
    std::vector<double> negated(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) negated[k] = -values[k];
    const auto eps = extract_episodes(make_sequence(values), "a", "b");
    const auto swapped = extract_episodes(make_sequence(negated), "a", "b");
    REQUIRE(eps.size() == swapped.size());
    for (std::size_t k = 0; k < eps.size(); ++k) {
        CHECK(eps[k].sign != swapped[k].sign);
        CHECK(eps[k].duration == swapped[k].duration);
        CHECK(eps[k].start_week == swapped[k].start_week);
        CHECK(eps[k].mean_value == doctest::Approx(-swapped[k].mean_value));
        CHECK(eps[k].mean_strength == doctest::Approx(swapped[k].mean_strength));
    }
}

TEST_CASE("extract_all_episodes covers every ordered pair") {
    JacobianSequence seq;
    seq.cluster_id = "c";
    seq.communities = {"a", "b", "c"};
    for (int k = 0; k < 4; ++k) {
        seq.target.push_back(k + 1);
        seq.week.push_back(k);
        Eigen::MatrixXd c(3, 3);
        c.setConstant(0.2);
        seq.c.push_back(c);
        seq.intercept.push_back(Eigen::VectorXd::Zero(3));
    }
    const auto eps = extract_all_episodes(seq);
    CHECK(eps.size() == 6);  // one run per ordered pair
    for (const Episode& e : eps) CHECK(e.duration == 4);
}

TEST_CASE("single-episode summary is degenerate") {
    const auto eps = extract_episodes(make_sequence({0.4, 0.4, 0.4, 0.4, 0.4}), "a", "b");
    const EpisodeStats st = summarize(eps);
    CHECK(st.total == 1);
    CHECK(st.mutualism_share == 1.0);
    CHECK(st.mutualism.mean_duration == 5.0);
    CHECK(st.mutualism.p80_duration == 5.0);
    CHECK(st.mutualism.p95_duration == 5.0);
    CHECK(st.mutualism.p99_duration == 5.0);
    CHECK(st.mean_duration == 5.0);
    CHECK(st.grand_mean_value == doctest::Approx(0.4));
    CHECK(st.grand_mean_value_weekly == doctest::Approx(0.4));
    CHECK(st.competition.count == 0);
}

TEST_CASE("summary statistics match direct recomputation") {
    std::mt19937 eng(994);
    std::uniform_real_distribution<double> val_dist(0.01, 0.8);
    std::uniform_int_distribution<int> dur_dist(1, 12);
    std::uniform_int_distribution<int> sign_dist(0, 1);
    std::vector<Episode> eps(1000);
    for (Episode& e : eps) {
        e.sign = sign_dist(eng) ? EpisodeSign::mutualism : EpisodeSign::competition;
        e.duration = dur_dist(eng);
        e.mean_strength = val_dist(eng);
        e.mean_value = e.sign == EpisodeSign::mutualism ? e.mean_strength : -e.mean_strength;
    }
    const EpisodeStats st = summarize(eps);

    std::vector<double> mut_dur, comp_dur, mut_str, comp_str;
    double value_sum = 0.0, weekly_sum = 0.0, weeks = 0.0, dur_sum = 0.0;
    for (const Episode& e : eps) {
        if (e.sign == EpisodeSign::mutualism) {
            mut_dur.push_back(e.duration);
            mut_str.push_back(e.mean_strength);
        } else {
            comp_dur.push_back(e.duration);
            comp_str.push_back(e.mean_strength);
        }
        value_sum += e.mean_value;
        weekly_sum += e.mean_value * e.duration;
        weeks += e.duration;
        dur_sum += e.duration;
    }
    CHECK(st.mutualism.count == static_cast<long long>(mut_dur.size()));
    CHECK(st.mutualism_share == doctest::Approx(mut_dur.size() / 1000.0));
    CHECK(st.mutualism.mean_duration == doctest::Approx(stats::mean(mut_dur)));
    CHECK(st.competition.mean_duration == doctest::Approx(stats::mean(comp_dur)));
    CHECK(st.mutualism.p95_duration == doctest::Approx(stats::percentile(mut_dur, 0.95)));
    CHECK(st.competition.p99_duration == doctest::Approx(stats::percentile(comp_dur, 0.99)));
    CHECK(st.mutualism.p50_strength == doctest::Approx(stats::percentile(mut_str, 0.50)));
    CHECK(st.competition.p95_strength == doctest::Approx(stats::percentile(comp_str, 0.95)));
    CHECK(st.mean_duration == doctest::Approx(dur_sum / 1000.0));
    CHECK(st.grand_mean_value == doctest::Approx(value_sum / 1000.0));
    CHECK(st.grand_mean_value_weekly == doctest::Approx(weekly_sum / weeks));
    CHECK(st.mutualism.p80_duration <= st.mutualism.p95_duration);
    CHECK(st.mutualism.p95_duration <= st.mutualism.p99_duration);
}

TEST_CASE("summarize rejects empty input") {
    CHECK_THROWS_AS(summarize({}), std::invalid_argument);
}

TEST_CASE("all-mutualism input leaves competition histogram empty") {
    const auto eps = extract_episodes(make_sequence({0.4, 0.1, 0.2, 0.7}), "a", "b");
    const DistributionTables t = emit_distribution_tables(eps);
    for (const DurationRow& r : t.duration) CHECK(r.competition == 0);
    long long mut = 0;
    for (const DurationRow& r : t.duration) mut += r.mutualism;
    CHECK(mut == 1);
}

TEST_CASE("six-episode histogram equals hand count") {
    std::vector<Episode> eps(6);
    const int durations[6] = {1, 1, 2, 3, 3, 7};
    const double strengths[6] = {0.02, 0.08, 0.12, 0.02, 0.33, 0.49};
    for (int k = 0; k < 6; ++k) {
        eps[k].duration = durations[k];
        eps[k].mean_strength = strengths[k];
        eps[k].sign = k % 2 ? EpisodeSign::competition : EpisodeSign::mutualism;
        eps[k].mean_value = eps[k].sign == EpisodeSign::mutualism ? strengths[k] : -strengths[k];
    }
    HistogramOptions opt;
    opt.duration_cap = 5;  // the duration-7 episode falls off the table
    opt.strength_bin_width = 0.1;
    opt.strength_cap = 0.4;  // the 0.49 strength falls off the table
    const DistributionTables t = emit_distribution_tables(eps, opt);

    REQUIRE(t.duration.size() == 5);
    CHECK(t.duration[0].mutualism == 1);
    CHECK(t.duration[0].competition == 1);
    CHECK(t.duration[1].mutualism == 1);
    CHECK(t.duration[1].competition == 0);
    CHECK(t.duration[2].mutualism == 1);
    CHECK(t.duration[2].competition == 1);
    CHECK(t.duration[3].mutualism == 0);
    CHECK(t.duration[3].competition == 0);

    REQUIRE(t.strength.size() == 4);
    CHECK(t.strength[0].mutualism + t.strength[0].competition == 3);  // 0.02, 0.08, 0.02
    CHECK(t.strength[1].mutualism + t.strength[1].competition == 1);  // 0.12
    CHECK(t.strength[2].mutualism + t.strength[2].competition == 0);
    CHECK(t.strength[3].mutualism + t.strength[3].competition == 1);  // 0.33

    long long joint_total = 0;
    for (const JointRow& r : t.joint) joint_total += r.count;
    CHECK(joint_total == 5);  // rows within both caps
}

TEST_CASE("episode csv round-trips") {
    const auto eps = extract_episodes(make_sequence({0.5, -0.2, 0.0, 0.9, 0.3}), "a", "b");
    const std::string path = std::string(TEST_DATA_DIR) + "/tmp_episodes.csv";
    write_episodes_csv(path, eps);
    const auto back = read_episodes_csv(path);
    REQUIRE(back.size() == eps.size());
    for (std::size_t k = 0; k < eps.size(); ++k) {
        CHECK(back[k].cluster_id == eps[k].cluster_id);
        CHECK(back[k].source == eps[k].source);
        CHECK(back[k].target == eps[k].target);
        CHECK(back[k].start_week == eps[k].start_week);
        CHECK(back[k].duration == eps[k].duration);
        CHECK(back[k].sign == eps[k].sign);
        CHECK(back[k].mean_value == doctest::Approx(eps[k].mean_value).epsilon(1e-10));
    }
    std::remove(path.c_str());
}
