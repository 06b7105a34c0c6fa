#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <string>
#include <vector>

#include "mlc/error.hpp"

// Evaluation report written by the eval command. Everything a benchmark
// table row needs: the mAP, per-label APs, and the parameter/MAC budget of
// the evaluated model.

namespace mlc {

inline std::string iso8601_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

struct EvalReport {
    std::string split;
    std::string map_mode;
    double map = 0.0;
    std::size_t num_images = 0;
    std::size_t num_labels = 0;
    std::vector<std::pair<std::string, double>> per_label;  // ap, -1 if undefined
    std::size_t total_params = 0;
    std::size_t head_params = 0;
    std::size_t flops_per_image = 0;
    std::string created_at;

    nlohmann::json to_json() const {
        nlohmann::json labels = nlohmann::json::array();
        for (const auto& [name, ap] : per_label) {
            nlohmann::json entry = {{"label", name}};
            if (ap < 0.0)
                entry["ap"] = nullptr;
            else
                entry["ap"] = ap;
            labels.push_back(entry);
        }
        return nlohmann::json{{"split", split},
                              {"map_mode", map_mode},
                              {"map", map},
                              {"num_images", num_images},
                              {"num_labels", num_labels},
                              {"per_label", labels},
                              {"total_params", total_params},
                              {"head_params", head_params},
                              {"flops_per_image", flops_per_image},
                              {"created_at", created_at}};
    }
};

inline void write_report(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write report: " + path);
    os << report.to_json().dump(2) << '\n';
}

}  // namespace mlc
