#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace nichemap {

enum class RecordKind { submission, comment };

struct ContributionRecord {
    std::string community_id;
    std::string author_id;
    std::int64_t timestamp = 0;  // seconds since epoch, UTC
    RecordKind kind = RecordKind::comment;
    std::string text;
    bool nsfw_flag = false;  // submissions only
};

// Days since 1970-01-01 for a proleptic Gregorian civil date.
std::int64_t days_from_civil(int year, unsigned month, unsigned day);

struct CivilDate {
    int year = 1970;
    unsigned month = 1;
    unsigned day = 1;
};

CivilDate parse_date(const std::string& iso);  // "YYYY-MM-DD"

// Half-open [start, end) window split into contiguous 7-day weeks aligned
// to the start date. The final week may be partial.
class StudyWindow {
public:
    StudyWindow(const std::string& start_date, const std::string& end_date);

    std::int64_t start_epoch() const { return start_epoch_; }
    std::int64_t end_epoch() const { return end_epoch_; }
    int weeks() const { return weeks_; }
    bool contains(std::int64_t ts) const {
        return ts >= start_epoch_ && ts < end_epoch_;
    }
    int week_index_of(std::int64_t ts) const;  // throws when ts outside window
    const std::string& start_date() const { return start_date_; }
    const std::string& end_date() const { return end_date_; }

private:
    std::string start_date_;
    std::string end_date_;
    std::int64_t start_epoch_ = 0;
    std::int64_t end_epoch_ = 0;
    int weeks_ = 0;
};

struct IngestTally {
    std::uint64_t lines = 0;
    std::uint64_t parsed = 0;
    std::uint64_t malformed = 0;
    std::uint64_t out_of_window = 0;
    std::uint64_t dropped_author = 0;
};

// Line-delimited JSON with fields subreddit, author, created_utc and the
// optional title/selftext/body/over_18. A record with a body is a comment,
// anything else a submission. Malformed lines are tallied, never fatal.
std::vector<ContributionRecord> ingest_ndjson_text(const std::string& text,
                                                   const StudyWindow& window,
                                                   IngestTally& tally);

// Reads plain or gzip-compressed files transparently.
std::vector<ContributionRecord> ingest_ndjson_file(const std::string& path,
                                                   const StudyWindow& window,
                                                   IngestTally& tally);

struct EligibilityThresholds {
    double min_active_week_share = 0.20;  // inclusive
    double max_nsfw_share = 0.10;         // inclusive, over submissions only
};

std::set<std::string> filter_eligible(const std::vector<ContributionRecord>& records,
                                      const StudyWindow& window,
                                      const EligibilityThresholds& thresholds = {});

struct WeeklyActivityPanel {
    std::vector<std::string> communities;
    int weeks = 0;
    std::vector<std::vector<int>> group_size;  // [community][week] distinct authors
    std::vector<std::vector<int>> messages;    // [community][week] contribution count

    int index_of(const std::string& community) const;  // -1 when absent
};

WeeklyActivityPanel build_panel(const std::vector<ContributionRecord>& records,
                                const std::vector<std::string>& communities,
                                const StudyWindow& window);

void write_panel_csv(const WeeklyActivityPanel& panel, const std::string& path);
WeeklyActivityPanel read_panel_csv(const std::string& path);

}  // namespace nichemap
