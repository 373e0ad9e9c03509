#include "pcrec/eval.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pcrec/rng.hpp"
#include "pcrec/tensor.hpp"

namespace pcrec {

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::pair<double, double> evaluate_sample(const PointCloud& pred, const PointCloud& gt,
                                          double eps) {
    const PointCloud p = normalize_unit_bbox(pred);
    const PointCloud g = normalize_unit_bbox(gt);
    const double cd = 100.0 * chamfer(p, g);
    const double emd = 10.0 * emd_approx(p, g, eps).cost;
    return {cd, emd};
}

EvalReport evaluate_dataset(const PyramidModel& model, const DatasetManifest& manifest,
                            const std::string& split, double eps) {
    EvalReport report;
    report.split = split;
    const ModelConfig& cfg = model.config();
    report.resolution = cfg.base_n * cfg.upsample_factor * cfg.upsample_factor;
    const std::string cfg_json = cfg.to_json();
    report.config_hash = fnv1a(cfg_json.data(), cfg_json.size());

    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        if (manifest.samples[i].split != split) continue;
        for (std::size_t v = 0; v < manifest.views; ++v) {
            const DatasetSample sample = load_sample(manifest, i, v);
            Tape tape;
            const Pyramid pyramid = model.forward_pyramid(tape, sample.image);
            const PointCloud pred = PointCloud::from_tensor(pyramid.pc3);
            const auto [cd, emd] = evaluate_sample(pred, sample.gt_dense, eps);
            report.samples.push_back({manifest.samples[i].id, v, sample.category, cd, emd});
        }
    }
    if (report.samples.empty())
        throw std::runtime_error("dataset holds no '" + split + "' samples");

    // Category rows reduce in manifest order within each name; the map keeps
    // the names sorted.
    std::map<std::string, CategoryRow> by_category;
    for (const SampleMetrics& s : report.samples) {
        CategoryRow& row = by_category[s.category];
        row.category = s.category;
        row.count += 1;
        row.cd += s.cd;
        row.emd += s.emd;
        report.mean_cd += s.cd;
        report.mean_emd += s.emd;
    }
    for (auto& [name, row] : by_category) {
        row.cd /= static_cast<double>(row.count);
        row.emd /= static_cast<double>(row.count);
        report.categories.push_back(row);
    }
    report.count = report.samples.size();
    report.mean_cd /= static_cast<double>(report.count);
    report.mean_emd /= static_cast<double>(report.count);
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["split"] = split;
    j["resolution"] = resolution;
    j["config_hash"] = hash_hex(config_hash);
    j["count"] = count;
    j["mean_cd"] = mean_cd;
    j["mean_emd"] = mean_emd;
    j["categories"] = nlohmann::json::array();
    for (const CategoryRow& row : categories)
        j["categories"].push_back({{"category", row.category},
                                   {"count", row.count},
                                   {"cd", row.cd},
                                   {"emd", row.emd}});
    j["samples"] = nlohmann::json::array();
    for (const SampleMetrics& s : samples)
        j["samples"].push_back({{"id", s.id},
                                {"view", s.view},
                                {"category", s.category},
                                {"cd", s.cd},
                                {"emd", s.emd}});
    return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    EvalReport report;
    report.split = j.at("split").get<std::string>();
    report.resolution = j.at("resolution").get<std::size_t>();
    report.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    report.count = j.at("count").get<std::size_t>();
    report.mean_cd = j.at("mean_cd").get<double>();
    report.mean_emd = j.at("mean_emd").get<double>();
    for (const auto& row : j.at("categories"))
        report.categories.push_back({row.at("category").get<std::string>(),
                                     row.at("count").get<std::size_t>(),
                                     row.at("cd").get<double>(), row.at("emd").get<double>()});
    for (const auto& s : j.at("samples"))
        report.samples.push_back({s.at("id").get<std::string>(),
                                  s.at("view").get<std::size_t>(),
                                  s.at("category").get<std::string>(),
                                  s.at("cd").get<double>(), s.at("emd").get<double>()});
    return report;
}

std::string format_report(const EvalReport& report, const std::string& format) {
    if (format == "json") return report.to_json();
    if (format == "csv") {
        std::string out = "category,count,chamfer_x100,emd_x10\n";
        for (const CategoryRow& row : report.categories)
            out += row.category + "," + std::to_string(row.count) + "," + num(row.cd) + "," +
                   num(row.emd) + "\n";
        out += "mean," + std::to_string(report.count) + "," + num(report.mean_cd) + "," +
               num(report.mean_emd) + "\n";
        return out;
    }
    if (format == "table") {
        char line[128];
        std::string out;
        std::snprintf(line, sizeof(line), "%-12s %14s %14s\n", "category", "chamfer(x100)",
                      "emd(x10)");
        out += line;
        for (const CategoryRow& row : report.categories) {
            std::snprintf(line, sizeof(line), "%-12s %14.4f %14.4f\n", row.category.c_str(),
                          row.cd, row.emd);
            out += line;
        }
        std::snprintf(line, sizeof(line), "%-12s %14.4f %14.4f\n", "mean", report.mean_cd,
                      report.mean_emd);
        out += line;
        return out;
    }
    throw std::invalid_argument("unknown report format: " + format);
}

void emit_report(const EvalReport& report, const std::string& format, const std::string& path) {
    const std::string text = format_report(report, format);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    out.flush();
    if (!out.good()) throw std::runtime_error("failed writing " + path);
}

}  // namespace pcrec
