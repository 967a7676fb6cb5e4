#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cams/geo.hpp"
#include "cams/mobility_data.hpp"
#include "cams/urban_space.hpp"

namespace cams::metrics {

// One distribution, either over numeric bins (with implicit under/overflow
// buckets at the ends) or over a categorical support list. JSD operands must
// share the exact same support.
class Histogram {
public:
    static Histogram binned(std::vector<double> edges);
    static Histogram categorical(std::vector<std::string> support);

    void add_value(double v, double weight = 1.0);             // binned only
    void add_label(const std::string& label, double weight = 1.0);  // categorical only

    bool is_categorical() const { return !support_.empty() || edges_.empty(); }
    const std::vector<double>& edges() const { return edges_; }
    const std::vector<std::string>& support() const { return support_; }
    const std::vector<double>& mass() const { return mass_; }
    double total() const;
    std::vector<double> normalized() const;  // throws when total == 0

    bool same_support(const Histogram& other) const;

private:
    std::vector<double> edges_;          // strictly increasing; bins = size()-1 (+2 under/over)
    std::vector<std::string> support_;   // categorical labels
    std::map<std::string, std::size_t> label_index_;
    std::vector<double> mass_;
};

// Jensen-Shannon divergence with base-2 logarithms, in [0, 1].
double jsd(const Histogram& p, const Histogram& q);
// Core form over two aligned, same-length mass vectors (need not be
// normalized; normalization happens inside).
double jsd_masses(const std::vector<double>& p, const std::vector<double>& q);

// Aligns two categorical count maps onto their union support (sorted keys).
std::pair<Histogram, Histogram> align_categorical(const std::map<std::string, double>& a,
                                                  const std::map<std::string, double>& b);

// Root-mean-square haversine distance from the coordinate centroid.
double radius_of_gyration_km(const std::vector<GeoPoint>& points);

struct EvalConfig {
    int utc_offset_s = 8 * 3600;
    double spatial_min_km = 0.1;
    double spatial_max_km = 100.0;
    int spatial_bins = 30;        // log-spaced between min and max
    int si_bin_s = 1800;          // half-hour step-interval bins
    int si_span_h = 24;
    double stvd_cell_km = 1.0;    // grid anchored at the city bbox SW corner
    int fvloc_top = 40;
    int workers = 1;
};

std::vector<double> log_spaced_edges(double min_v, double max_v, int bins);

// Per-user distribution bundle feeding the individual JSD metrics.
struct UserHistograms {
    std::string user_id;
    Histogram distance;  // per-day total travel distance
    Histogram radius;    // per-day radius of gyration
    Histogram si;        // consecutive time gaps within a day
    Histogram sd;        // consecutive step distances within a day
    std::map<std::string, double> stvd;  // "cellX_cellY_hour" -> visits
    std::map<std::string, double> dard;  // "hour|intent" -> visits
    long days = 0;
    long points = 0;
    long step_pairs = 0;  // 0 => excluded from SI/SD
};

std::vector<UserHistograms> per_user_histograms(const std::vector<mobility::Trajectory>& data,
                                                const urban::SpatialIndex& index,
                                                const EvalConfig& cfg);

struct TvrCounts {
    long valid = 0;
    long total = 0;
};

struct MetricReport {
    double fvloc = 0.0;
    double actprob = 0.0;
    double distance = 0.0;
    double radius = 0.0;
    double si = 0.0;
    double sd = 0.0;
    double dard = 0.0;
    double stvd = 0.0;
    std::optional<double> tvr;

    long users_generated = 0;
    long users_real = 0;
    long users_matched = 0;
    long users_skipped = 0;         // present on one side only
    long users_si_sd_excluded = 0;  // no step pairs on some side
    long days_generated = 0;
    long days_real = 0;
    long points_generated = 0;
    long points_real = 0;

    // The eight JSD fields in canonical order.
    std::vector<std::pair<std::string, double>> jsd_fields() const;
    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
    double mean_jsd() const;
};

MetricReport evaluate(const std::vector<mobility::Trajectory>& generated,
                      const std::vector<mobility::Trajectory>& real,
                      const urban::SpatialIndex& index, const EvalConfig& cfg = {},
                      const std::optional<TvrCounts>& tvr = std::nullopt);

struct CmrrTable {
    std::vector<std::string> models;
    std::vector<std::string> metric_names;
    std::vector<std::vector<double>> ranks;  // [model][metric], average-rank ties
    std::vector<double> cmrr;                // mean reciprocal rank per model

    std::string to_csv() const;  // model,<metric ranks...>,cmrr
};

CmrrTable cmrr(const std::map<std::string, MetricReport>& reports, bool tvr_included = false);

// Plot-ready pooled per-metric distributions (generated vs real), one CSV per
// metric under out_dir.
void write_plot_data(const std::string& out_dir,
                     const std::vector<mobility::Trajectory>& generated,
                     const std::vector<mobility::Trajectory>& real,
                     const urban::SpatialIndex& index, const EvalConfig& cfg = {});

}  // namespace cams::metrics
