#include "nichemap/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>
#include <zlib.h>

#include "nichemap/csv.hpp"
#include "nichemap/errors.hpp"

namespace nichemap {

std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

CivilDate parse_date(const std::string& iso) {
    CivilDate c;
    char tail = '\0';
    if (std::sscanf(iso.c_str(), "%d-%u-%u%c", &c.year, &c.month, &c.day, &tail) != 3)
        throw config_error("date must be YYYY-MM-DD: '" + iso + "'");
    if (c.month < 1 || c.month > 12 || c.day < 1 || c.day > 31)
        throw config_error("date out of range: '" + iso + "'");
    return c;
}

StudyWindow::StudyWindow(const std::string& start_date, const std::string& end_date)
    : start_date_(start_date), end_date_(end_date) {
    const CivilDate s = parse_date(start_date);
    const CivilDate e = parse_date(end_date);
    start_epoch_ = days_from_civil(s.year, s.month, s.day) * 86400;
    end_epoch_ = days_from_civil(e.year, e.month, e.day) * 86400;
    if (end_epoch_ <= start_epoch_)
        throw config_error("study window end must be after start");
    const std::int64_t span_days = (end_epoch_ - start_epoch_) / 86400;
    weeks_ = static_cast<int>((span_days + 6) / 7);
}

int StudyWindow::week_index_of(std::int64_t ts) const {
    if (!contains(ts))
        throw std::invalid_argument("timestamp outside study window");
    return static_cast<int>((ts - start_epoch_) / (7 * 86400));
}

namespace {

// Returns false when the line cannot yield a record for structural reasons
// (bad JSON, missing/ill-typed required fields).
bool parse_line(const std::string& line, ContributionRecord& rec) {
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return false;

    const auto sub = j.find("subreddit");
    const auto auth = j.find("author");
    const auto ts = j.find("created_utc");
    if (sub == j.end() || !sub->is_string()) return false;
    if (auth == j.end() || !auth->is_string()) return false;
    rec.community_id = sub->get<std::string>();
    if (rec.community_id.empty()) return false;
    rec.author_id = auth->get<std::string>();

    if (ts == j.end()) return false;
    if (ts->is_number_integer()) {
        rec.timestamp = ts->get<std::int64_t>();
    } else if (ts->is_number_float()) {
        rec.timestamp = static_cast<std::int64_t>(ts->get<double>());
    } else if (ts->is_string()) {
        try {
            size_t used = 0;
            rec.timestamp = std::stoll(ts->get<std::string>(), &used);
            if (used != ts->get<std::string>().size()) return false;
        } catch (const std::exception&) {
            return false;
        }
    } else {
        return false;
    }

    const auto body = j.find("body");
    if (body != j.end() && body->is_string()) {
        rec.kind = RecordKind::comment;
        rec.text = body->get<std::string>();
        rec.nsfw_flag = false;
    } else {
        rec.kind = RecordKind::submission;
        rec.text.clear();
        const auto title = j.find("title");
        if (title != j.end() && title->is_string()) rec.text = title->get<std::string>();
        const auto self = j.find("selftext");
        if (self != j.end() && self->is_string() && !self->get<std::string>().empty()) {
            if (!rec.text.empty()) rec.text += ' ';
            rec.text += self->get<std::string>();
        }
        const auto nsfw = j.find("over_18");
        rec.nsfw_flag = nsfw != j.end() && nsfw->is_boolean() && nsfw->get<bool>();
    }
    return true;
}

void ingest_line(const std::string& line, const StudyWindow& window,
                 IngestTally& tally, std::vector<ContributionRecord>& out) {
    tally.lines++;
    ContributionRecord rec;
    if (!parse_line(line, rec)) {
        tally.malformed++;
        return;
    }
    if (!window.contains(rec.timestamp)) {
        tally.out_of_window++;
        return;
    }
    if (rec.author_id.empty() || rec.author_id == "[deleted]") {
        tally.dropped_author++;
        return;
    }
    tally.parsed++;
    out.push_back(std::move(rec));
}

bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

std::vector<ContributionRecord> ingest_ndjson_text(const std::string& text,
                                                   const StudyWindow& window,
                                                   IngestTally& tally) {
    std::vector<ContributionRecord> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (!blank(line)) ingest_line(line, window, tally, out);
    }
    return out;
}

std::vector<ContributionRecord> ingest_ndjson_file(const std::string& path,
                                                   const StudyWindow& window,
                                                   IngestTally& tally) {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (gz == nullptr) throw stage_error("cannot open input stream: " + path);
    std::vector<ContributionRecord> out;
    std::string line;
    char buf[1 << 16];
    bool pending = false;
    while (gzgets(gz, buf, sizeof(buf)) != nullptr) {
        line.append(buf);
        pending = true;
        if (!line.empty() && line.back() == '\n') {
            line.pop_back();
            if (!blank(line)) ingest_line(line, window, tally, out);
            line.clear();
            pending = false;
        }
    }
    int errnum = 0;
    const char* msg = gzerror(gz, &errnum);
    if (errnum != Z_OK && errnum != Z_STREAM_END) {
        std::string detail = msg != nullptr ? msg : "unknown";
        gzclose(gz);
        throw stage_error("read failure on " + path + ": " + detail);
    }
    gzclose(gz);
    if (pending && !blank(line)) ingest_line(line, window, tally, out);
    return out;
}

std::set<std::string> filter_eligible(const std::vector<ContributionRecord>& records,
                                      const StudyWindow& window,
                                      const EligibilityThresholds& thresholds) {
    struct Tally {
        std::set<int> active_weeks;
        std::int64_t submissions = 0;
        std::int64_t nsfw = 0;
    };
    std::unordered_map<std::string, Tally> tallies;
    for (const auto& r : records) {
        Tally& t = tallies[r.community_id];
        t.active_weeks.insert(window.week_index_of(r.timestamp));
        if (r.kind == RecordKind::submission) {
            t.submissions++;
            if (r.nsfw_flag) t.nsfw++;
        }
    }
    std::set<std::string> eligible;
    for (const auto& [community, t] : tallies) {
        const double active_share =
            static_cast<double>(t.active_weeks.size()) / window.weeks();
        if (active_share < thresholds.min_active_week_share) continue;
        const double nsfw_share =
            t.submissions == 0 ? 0.0
                               : static_cast<double>(t.nsfw) / static_cast<double>(t.submissions);
        if (nsfw_share > thresholds.max_nsfw_share) continue;
        eligible.insert(community);
    }
    return eligible;
}

int WeeklyActivityPanel::index_of(const std::string& community) const {
    const auto it = std::find(communities.begin(), communities.end(), community);
    return it == communities.end() ? -1 : static_cast<int>(it - communities.begin());
}

WeeklyActivityPanel build_panel(const std::vector<ContributionRecord>& records,
                                const std::vector<std::string>& communities,
                                const StudyWindow& window) {
    std::unordered_set<std::string> present;
    for (const auto& r : records) present.insert(r.community_id);
    for (const auto& c : communities)
        if (present.find(c) == present.end())
            throw std::invalid_argument("panel requested for unknown community: " + c);

    WeeklyActivityPanel panel;
    panel.communities = communities;
    panel.weeks = window.weeks();
    panel.group_size.assign(communities.size(), std::vector<int>(panel.weeks, 0));
    panel.messages.assign(communities.size(), std::vector<int>(panel.weeks, 0));

    std::unordered_map<std::string, int> index;
    for (size_t i = 0; i < communities.size(); ++i)
        index[communities[i]] = static_cast<int>(i);

    // Distinct authors per community-week; keys reuse the index to avoid
    // string concatenation per record.
    std::vector<std::unordered_set<std::string>> seen(communities.size() *
                                                      static_cast<size_t>(panel.weeks));
    for (const auto& r : records) {
        const auto it = index.find(r.community_id);
        if (it == index.end()) continue;
        const int c = it->second;
        const int w = window.week_index_of(r.timestamp);
        panel.messages[c][w]++;
        auto& authors = seen[static_cast<size_t>(c) * panel.weeks + w];
        if (authors.insert(r.author_id).second) panel.group_size[c][w]++;
    }
    return panel;
}

void write_panel_csv(const WeeklyActivityPanel& panel, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write panel: " + path);
    out << "community,week,group_size,messages\n";
    for (size_t c = 0; c < panel.communities.size(); ++c)
        for (int w = 0; w < panel.weeks; ++w)
            out << panel.communities[c] << ',' << w << ',' << panel.group_size[c][w]
                << ',' << panel.messages[c][w] << '\n';
}

WeeklyActivityPanel read_panel_csv(const std::string& path) {
    const csv::Table t = csv::read_table_file(path);
    const size_t ci = t.column("community");
    const size_t wi = t.column("week");
    const size_t gi = t.column("group_size");
    const size_t mi = t.column("messages");

    WeeklyActivityPanel panel;
    std::unordered_map<std::string, int> index;
    int max_week = -1;
    for (const auto& row : t.rows) {
        const int w = std::stoi(row[wi]);
        max_week = std::max(max_week, w);
        if (index.find(row[ci]) == index.end()) {
            index[row[ci]] = static_cast<int>(panel.communities.size());
            panel.communities.push_back(row[ci]);
        }
    }
    panel.weeks = max_week + 1;
    panel.group_size.assign(panel.communities.size(), std::vector<int>(panel.weeks, 0));
    panel.messages.assign(panel.communities.size(), std::vector<int>(panel.weeks, 0));
    for (const auto& row : t.rows) {
        const int c = index[row[ci]];
        const int w = std::stoi(row[wi]);
        panel.group_size[c][w] = std::stoi(row[gi]);
        panel.messages[c][w] = std::stoi(row[mi]);
    }
    return panel;
}

}  // namespace nichemap
