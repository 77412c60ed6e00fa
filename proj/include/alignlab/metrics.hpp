#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace alignlab {

/// One evaluation row in a training trace.
struct MetricsRecord {
    std::string phase;
    int step = 0;
    std::uint64_t seed = 0;
    double mean_true_reward = 0.0;
    double loss = 0.0;
    double kl_to_ref = 0.0;
    std::uint64_t queries_used = 0;
};

namespace detail {
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}
} // namespace detail

/// Fixed-order JSONL line; stable byte-for-byte across identical runs.
inline std::string to_jsonl(const MetricsRecord& r) {
    std::string out = "{\"phase\":\"" + detail::json_escape(r.phase) + "\"";
    out += ",\"step\":" + std::to_string(r.step);
    out += ",\"seed\":" + std::to_string(r.seed);
    out += ",\"mean_true_reward\":" + detail::format_double(r.mean_true_reward);
    out += ",\"loss\":" + detail::format_double(r.loss);
    out += ",\"kl_to_ref\":" + detail::format_double(r.kl_to_ref);
    out += ",\"queries_used\":" + std::to_string(r.queries_used);
    out += "}";
    return out;
}

inline std::string metrics_jsonl(const std::vector<MetricsRecord>& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += to_jsonl(r);
        out += '\n';
    }
    return out;
}

/// Final per-run summary line for the CSV report.
struct SummaryRow {
    std::string method;
    std::uint64_t seed = 0;
    int best_step = 0;
    double mean_true_reward = 0.0;
    double reward_accuracy = 0.0;
    double win_rate = 0.5;
};

inline std::string summary_csv_header() {
    return "method,seed,best_step,mean_true_reward,reward_accuracy,win_rate";
}

inline std::string to_csv(const SummaryRow& r) {
    return r.method + "," + std::to_string(r.seed) + "," + std::to_string(r.best_step) + "," +
           detail::format_double(r.mean_true_reward) + "," +
           detail::format_double(r.reward_accuracy) + "," + detail::format_double(r.win_rate);
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = summary_csv_header() + "\n";
    for (const auto& r : rows) {
        out += to_csv(r);
        out += '\n';
    }
    return out;
}

} // namespace alignlab
