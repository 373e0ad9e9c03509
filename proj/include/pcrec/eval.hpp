#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pcrec/data.hpp"
#include "pcrec/model.hpp"
#include "pcrec/pointset.hpp"

namespace pcrec {

// Metrics for one evaluated view, already on the reporting scale: Chamfer
// times 100, assignment distance times 10.
struct SampleMetrics {
    std::string id;
    std::size_t view = 0;
    std::string category;
    double cd = 0.0;
    double emd = 0.0;

    bool operator==(const SampleMetrics&) const = default;
};

struct CategoryRow {
    std::string category;
    std::size_t count = 0;
    double cd = 0.0;  // mean over the category's views
    double emd = 0.0;

    bool operator==(const CategoryRow&) const = default;
};

// Aggregated evaluation over one dataset split. Per-view entries are kept so
// every mean in the report can be recomputed from the report alone.
struct EvalReport {
    std::string split;
    std::size_t resolution = 0;     // points per evaluated cloud
    std::uint64_t config_hash = 0;  // identifies the architecture evaluated
    std::size_t count = 0;          // views evaluated
    double mean_cd = 0.0;
    double mean_emd = 0.0;
    std::vector<CategoryRow> categories;  // sorted by category name
    std::vector<SampleMetrics> samples;   // manifest order

    bool operator==(const EvalReport&) const = default;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

// Renormalizes each cloud to its own unit bounding box, then reports
// (100 * chamfer, 10 * assignment distance). Uniformly scaling either input
// therefore does not move the metrics. eps is the assignment solver's
// relative slack.
std::pair<double, double> evaluate_sample(const PointCloud& pred, const PointCloud& gt,
                                          double eps = 0.01);

// Runs the full pyramid on every view of the split, in manifest order, and
// scores the densest prediction against the dense ground truth.
EvalReport evaluate_dataset(const PyramidModel& model, const DatasetManifest& manifest,
                            const std::string& split, double eps = 0.01);

// format: "json" (lossless, includes per-view entries), "csv" (header,
// category rows, mean row), or "table" (columns category, chamfer, emd).
std::string format_report(const EvalReport& report, const std::string& format);
void emit_report(const EvalReport& report, const std::string& format, const std::string& path);

}  // namespace pcrec
