#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "neuroswift/evaluation.hpp"
#include "neuroswift/manifests.hpp"

namespace neuroswift {

struct TrialMetrics {
    std::int64_t stimulus_id = 0;
    double pixcorr = std::numeric_limits<double>::quiet_NaN();
    double ssim = std::numeric_limits<double>::quiet_NaN();
};

// Metric results of one evaluation run. Metrics that were not computed stay
// NaN and serialize as explicit nulls.
struct MetricReport {
    std::size_t n_trials = 0;
    double mean_pixcorr = std::numeric_limits<double>::quiet_NaN();
    double mean_ssim = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, double> two_way;  // extractor name -> percent
    std::vector<TrialMetrics> per_trial;
    json config_echo = json::object();
};

namespace detail {

// round to 6 significant digits for stable, readable reports
inline double round_sig6(double x) {
    if (!std::isfinite(x) || x == 0.0) return x;
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return std::strtod(buf, nullptr);
}

inline json number_or_null(double x) {
    if (std::isnan(x)) return nullptr;
    return round_sig6(x);
}

}  // namespace detail

inline json report_to_json(const MetricReport& r) {
    json two_way = json::object();
    for (const char* name : {"pixels", "random_projection", "frozen_clip_image"}) {
        auto it = r.two_way.find(name);
        two_way[name] =
            it == r.two_way.end() ? json(nullptr) : detail::number_or_null(it->second);
    }
    for (const auto& [name, value] : r.two_way) {
        if (!two_way.contains(name)) two_way[name] = detail::number_or_null(value);
    }
    return {{"schema_version", kManifestVersion},
            {"kind", "neuroswift_report"},
            {"n_trials", r.n_trials},
            {"metrics",
             {{"pixcorr", detail::number_or_null(r.mean_pixcorr)},
              {"ssim", detail::number_or_null(r.mean_ssim)},
              {"two_way", two_way}}},
            {"config", r.config_echo}};
}

inline MetricReport report_from_json(const json& j) {
    MetricReport r;
    StrictObj o(j, "report.json");
    o.maybe("schema_version");
    o.maybe("kind");
    r.n_trials = o.get_or<std::size_t>("n_trials", 0);
    const json& metrics = o.require("metrics");
    auto read_num = [](const json& v) {
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    r.mean_pixcorr = read_num(metrics.at("pixcorr"));
    r.mean_ssim = read_num(metrics.at("ssim"));
    for (const auto& [name, value] : metrics.at("two_way").items()) {
        if (!value.is_null()) r.two_way[name] = value.get<double>();
    }
    r.config_echo = o.get_or<json>("config", json::object());
    o.done();
    return r;
}

inline void write_report(const std::filesystem::path& dir, const MetricReport& r) {
    std::filesystem::create_directories(dir);
    save_json_file(dir / "report.json", report_to_json(r));
    std::ofstream csv(dir / "per_trial.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot open per_trial.csv in " + dir.string());
    csv << "stimulus_id,pixcorr,ssim\n";
    char buf[40];
    for (const auto& t : r.per_trial) {
        csv << t.stimulus_id;
        for (double v : {t.pixcorr, t.ssim}) {
            if (std::isnan(v)) {
                csv << ",";
            } else {
                std::snprintf(buf, sizeof(buf), "%.6g", v);
                csv << "," << buf;
            }
        }
        csv << "\n";
    }
}

inline void write_contribution_map(const std::filesystem::path& dir, const ContributionMap& m) {
    std::filesystem::create_directories(dir);
    const std::string stem = "contribution_" + m.adapter;
    std::ofstream csv(dir / (stem + ".csv"), std::ios::trunc);
    if (!csv) throw IoError("cannot open contribution csv in " + dir.string());
    csv << "voxel_index,region,contribution\n";
    char buf[40];
    for (std::size_t i = 0; i < m.contribution.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.6g", m.contribution[i]);
        csv << m.voxel_index[i] << "," << m.region[i] << "," << buf << "\n";
    }
    Tensor t({m.contribution.size()}, m.contribution);
    nstf_write(dir / (stem + ".nstf"), t);
    json means = json::object();
    for (const auto& [name, v] : m.region_means) means[name] = detail::round_sig6(v);
    save_json_file(dir / (stem + "_summary.json"),
                   {{"schema_version", kManifestVersion},
                    {"kind", "neuroswift_contribution_map"},
                    {"adapter", m.adapter},
                    {"region_means", means}});
}

}  // namespace neuroswift
