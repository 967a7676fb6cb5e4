#include "cams/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <set>

#include "cams/errors.hpp"
#include "cams/timeutil.hpp"

namespace cams::metrics {

Histogram Histogram::binned(std::vector<double> edges) {
    if (edges.size() < 2) throw Error("histogram needs at least two edges");
    for (size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw Error("histogram edges must be strictly increasing");
    Histogram h;
    h.edges_ = std::move(edges);
    h.mass_.assign(h.edges_.size() + 1, 0.0);  // + underflow and overflow
    return h;
}

Histogram Histogram::categorical(std::vector<std::string> support) {
    Histogram h;
    h.support_ = std::move(support);
    h.mass_.assign(h.support_.size(), 0.0);
    for (size_t i = 0; i < h.support_.size(); ++i) h.label_index_[h.support_[i]] = i;
    if (h.label_index_.size() != h.support_.size())
        throw Error("categorical support has duplicate labels");
    return h;
}

void Histogram::add_value(double v, double weight) {
    if (edges_.empty()) throw Error("add_value on a categorical histogram");
    // bucket 0 = underflow, 1..n = bins, n+1 = overflow
    std::size_t bucket;
    if (v < edges_.front()) {
        bucket = 0;
    } else if (v >= edges_.back()) {
        bucket = mass_.size() - 1;
    } else {
        auto it = std::upper_bound(edges_.begin(), edges_.end(), v);
        bucket = static_cast<std::size_t>(it - edges_.begin());
    }
    mass_[bucket] += weight;
}

void Histogram::add_label(const std::string& label, double weight) {
    auto it = label_index_.find(label);
    if (it == label_index_.end()) throw Error("label outside histogram support: " + label);
    mass_[it->second] += weight;
}

double Histogram::total() const {
    return std::accumulate(mass_.begin(), mass_.end(), 0.0);
}

std::vector<double> Histogram::normalized() const {
    double t = total();
    if (!(t > 0.0)) throw Error("cannot normalize an empty histogram");
    std::vector<double> out(mass_.size());
    for (size_t i = 0; i < mass_.size(); ++i) out[i] = mass_[i] / t;
    return out;
}

bool Histogram::same_support(const Histogram& other) const {
    return edges_ == other.edges_ && support_ == other.support_;
}

double jsd_masses(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw Error("jsd: mismatched support sizes");
    double pt = std::accumulate(p.begin(), p.end(), 0.0);
    double qt = std::accumulate(q.begin(), q.end(), 0.0);
    if (!(pt > 0.0) || !(qt > 0.0)) throw Error("jsd: empty distribution");
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw Error("jsd: negative mass");
        double pi = p[i] / pt;
        double qi = q[i] / qt;
        double mi = 0.5 * (pi + qi);
        if (pi > 0.0) sum += 0.5 * pi * std::log2(pi / mi);
        if (qi > 0.0) sum += 0.5 * qi * std::log2(qi / mi);
    }
    return std::clamp(sum, 0.0, 1.0);
}

double jsd(const Histogram& p, const Histogram& q) {
    if (!p.same_support(q)) throw Error("jsd: histograms have different supports");
    return jsd_masses(p.mass(), q.mass());
}

std::pair<Histogram, Histogram> align_categorical(const std::map<std::string, double>& a,
                                                  const std::map<std::string, double>& b) {
    std::vector<std::string> support;
    for (const auto& [k, v] : a) support.push_back(k);
    for (const auto& [k, v] : b)
        if (!a.count(k)) support.push_back(k);
    std::sort(support.begin(), support.end());
    Histogram ha = Histogram::categorical(support);
    Histogram hb = Histogram::categorical(support);
    for (const auto& [k, v] : a) ha.add_label(k, v);
    for (const auto& [k, v] : b) hb.add_label(k, v);
    return {std::move(ha), std::move(hb)};
}

double radius_of_gyration_km(const std::vector<GeoPoint>& points) {
    if (points.empty()) throw Error("radius_of_gyration: no points");
    GeoPoint centroid{0.0, 0.0};
    for (const auto& p : points) {
        centroid.lat += p.lat;
        centroid.lon += p.lon;
    }
    centroid.lat /= static_cast<double>(points.size());
    centroid.lon /= static_cast<double>(points.size());
    double acc = 0.0;
    for (const auto& p : points) {
        double d = haversine_km(p, centroid);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(points.size()));
}

std::vector<double> log_spaced_edges(double min_v, double max_v, int bins) {
    std::vector<double> edges(bins + 1);
    double lmin = std::log10(min_v), lmax = std::log10(max_v);
    for (int i = 0; i <= bins; ++i)
        edges[i] = std::pow(10.0, lmin + (lmax - lmin) * i / static_cast<double>(bins));
    edges.front() = min_v;
    edges.back() = max_v;
    return edges;
}

namespace {

std::vector<double> si_edges(const EvalConfig& cfg) {
    int bins = cfg.si_span_h * 3600 / cfg.si_bin_s;
    std::vector<double> edges(bins + 1);
    for (int i = 0; i <= bins; ++i) edges[i] = static_cast<double>(i) * cfg.si_bin_s;
    return edges;
}

UserHistograms make_empty_user(const std::string& user, const EvalConfig& cfg) {
    auto spatial = log_spaced_edges(cfg.spatial_min_km, cfg.spatial_max_km, cfg.spatial_bins);
    UserHistograms u;
    u.user_id = user;
    u.distance = Histogram::binned(spatial);
    u.radius = Histogram::binned(spatial);
    u.si = Histogram::binned(si_edges(cfg));
    u.sd = Histogram::binned(spatial);
    return u;
}

}  // namespace

std::vector<UserHistograms> per_user_histograms(const std::vector<mobility::Trajectory>& data,
                                                const urban::SpatialIndex& index,
                                                const EvalConfig& cfg) {
    if (data.empty()) throw Error("per_user_histograms: empty dataset");
    GridSpec grid = GridSpec::make(index.bbox(), cfg.stvd_cell_km);

    std::map<std::string, std::vector<const mobility::Trajectory*>> by_user;
    for (const auto& t : data) by_user[t.user_id].push_back(&t);

    std::vector<std::string> users;
    for (const auto& [u, v] : by_user) users.push_back(u);

    auto build_one = [&](const std::string& user) {
        UserHistograms u = make_empty_user(user, cfg);
        for (const auto* traj : by_user[user]) {
            ++u.days;
            double day_total = 0.0;
            std::vector<GeoPoint> positions;
            for (const auto& pt : traj->points) {
                GeoPoint pos = pt.position(index);
                positions.push_back(pos);
                int hour = local_hour(pt.timestamp, cfg.utc_offset_s);
                u.stvd[grid.cell_key(pos) + "_" + std::to_string(hour)] += 1.0;
                u.dard[std::to_string(hour) + "|" + pt.intent] += 1.0;
                ++u.points;
            }
            for (size_t i = 1; i < traj->points.size(); ++i) {
                double gap =
                    static_cast<double>(traj->points[i].timestamp - traj->points[i - 1].timestamp);
                double step = haversine_km(positions[i - 1], positions[i]);
                u.si.add_value(gap);
                u.sd.add_value(step);
                day_total += step;
                ++u.step_pairs;
            }
            u.distance.add_value(day_total);
            u.radius.add_value(radius_of_gyration_km(positions));
        }
        return u;
    };

    std::vector<UserHistograms> out(users.size());
    if (cfg.workers > 1 && users.size() > 1) {
        std::vector<std::future<UserHistograms>> futures;
        for (const auto& user : users)
            futures.push_back(std::async(std::launch::async, build_one, user));
        for (size_t i = 0; i < futures.size(); ++i) out[i] = futures[i].get();
    } else {
        for (size_t i = 0; i < users.size(); ++i) out[i] = build_one(users[i]);
    }
    return out;
}

std::vector<std::pair<std::string, double>> MetricReport::jsd_fields() const {
    return {{"fvloc", fvloc}, {"actprob", actprob}, {"distance", distance}, {"radius", radius},
            {"si", si},       {"sd", sd},           {"dard", dard},         {"stvd", stvd}};
}

double MetricReport::mean_jsd() const {
    double sum = 0.0;
    for (const auto& [name, v] : jsd_fields()) sum += v;
    return sum / 8.0;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j{{"fvloc", fvloc}, {"actprob", actprob}, {"distance", distance},
                     {"radius", radius}, {"si", si},         {"sd", sd},
                     {"dard", dard},     {"stvd", stvd}};
    if (tvr) j["tvr"] = *tvr;
    j["counts"] = {{"users_generated", users_generated},
                   {"users_real", users_real},
                   {"users_matched", users_matched},
                   {"users_skipped", users_skipped},
                   {"users_si_sd_excluded", users_si_sd_excluded},
                   {"days_generated", days_generated},
                   {"days_real", days_real},
                   {"points_generated", points_generated},
                   {"points_real", points_real}};
    return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    r.fvloc = j.at("fvloc").get<double>();
    r.actprob = j.at("actprob").get<double>();
    r.distance = j.at("distance").get<double>();
    r.radius = j.at("radius").get<double>();
    r.si = j.at("si").get<double>();
    r.sd = j.at("sd").get<double>();
    r.dard = j.at("dard").get<double>();
    r.stvd = j.at("stvd").get<double>();
    if (j.contains("tvr")) r.tvr = j["tvr"].get<double>();
    if (j.contains("counts")) {
        const auto& c = j["counts"];
        r.users_generated = c.value("users_generated", 0L);
        r.users_real = c.value("users_real", 0L);
        r.users_matched = c.value("users_matched", 0L);
        r.users_skipped = c.value("users_skipped", 0L);
        r.users_si_sd_excluded = c.value("users_si_sd_excluded", 0L);
        r.days_generated = c.value("days_generated", 0L);
        r.days_real = c.value("days_real", 0L);
        r.points_generated = c.value("points_generated", 0L);
        r.points_real = c.value("points_real", 0L);
    }
    return r;
}

namespace {

// Location token for collective visit counting: poi id, or a coordinate cell
// key for raw fixes.
std::string location_token(const mobility::TrajectoryPoint& pt, const GridSpec& grid,
                           const urban::SpatialIndex& index) {
    if (!pt.poi_id.empty()) return pt.poi_id;
    return "@" + grid.cell_key(pt.position(index));
}

std::map<std::string, double> visit_counts(const std::vector<mobility::Trajectory>& data,
                                           const GridSpec& grid,
                                           const urban::SpatialIndex& index) {
    std::map<std::string, double> counts;
    for (const auto& t : data)
        for (const auto& pt : t.points) counts[location_token(pt, grid, index)] += 1.0;
    return counts;
}

std::vector<std::string> top_locations(const std::map<std::string, double>& counts, int top) {
    std::vector<std::pair<std::string, double>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    for (int i = 0; i < static_cast<int>(items.size()) && i < top; ++i)
        out.push_back(items[i].first);
    return out;
}

std::map<std::string, double> intent_counts(const std::vector<mobility::Trajectory>& data) {
    std::map<std::string, double> counts;
    for (const auto& t : data)
        for (const auto& pt : t.points) counts[pt.intent] += 1.0;
    return counts;
}

}  // namespace

MetricReport evaluate(const std::vector<mobility::Trajectory>& generated,
                      const std::vector<mobility::Trajectory>& real,
                      const urban::SpatialIndex& index, const EvalConfig& cfg,
                      const std::optional<TvrCounts>& tvr) {
    if (generated.empty() || real.empty()) throw Error("evaluate: empty dataset");

    auto gen_hists = per_user_histograms(generated, index, cfg);
    auto real_hists = per_user_histograms(real, index, cfg);
    std::map<std::string, const UserHistograms*> gen_by_user, real_by_user;
    for (const auto& u : gen_hists) gen_by_user[u.user_id] = &u;
    for (const auto& u : real_hists) real_by_user[u.user_id] = &u;

    MetricReport rep;
    rep.users_generated = static_cast<long>(gen_by_user.size());
    rep.users_real = static_cast<long>(real_by_user.size());
    for (const auto& t : generated) {
        ++rep.days_generated;
        rep.points_generated += static_cast<long>(t.points.size());
    }
    for (const auto& t : real) {
        ++rep.days_real;
        rep.points_real += static_cast<long>(t.points.size());
    }

    std::vector<std::string> matched;
    for (const auto& [user, hists] : gen_by_user)
        if (real_by_user.count(user)) matched.push_back(user);
    rep.users_matched = static_cast<long>(matched.size());
    rep.users_skipped = rep.users_generated + rep.users_real - 2 * rep.users_matched;
    if (matched.empty()) throw Error("evaluate: no users present in both datasets");

    double d_sum = 0, r_sum = 0, stvd_sum = 0, dard_sum = 0, si_sum = 0, sd_sum = 0;
    long si_sd_users = 0;
    for (const auto& user : matched) {
        const UserHistograms& g = *gen_by_user[user];
        const UserHistograms& r = *real_by_user[user];
        d_sum += jsd(g.distance, r.distance);
        r_sum += jsd(g.radius, r.radius);
        {
            auto [hg, hr] = align_categorical(g.stvd, r.stvd);
            stvd_sum += jsd(hg, hr);
        }
        {
            auto [hg, hr] = align_categorical(g.dard, r.dard);
            dard_sum += jsd(hg, hr);
        }
        if (g.step_pairs > 0 && r.step_pairs > 0) {
            si_sum += jsd(g.si, r.si);
            sd_sum += jsd(g.sd, r.sd);
            ++si_sd_users;
        } else {
            ++rep.users_si_sd_excluded;
        }
    }
    const double n = static_cast<double>(matched.size());
    rep.distance = d_sum / n;
    rep.radius = r_sum / n;
    rep.stvd = stvd_sum / n;
    rep.dard = dard_sum / n;
    rep.si = si_sd_users > 0 ? si_sum / si_sd_users : 0.0;
    rep.sd = si_sd_users > 0 ? sd_sum / si_sd_users : 0.0;

    // FVLoc: union of each side's top-N locations plus an "other" bucket.
    GridSpec grid = GridSpec::make(index.bbox(), cfg.stvd_cell_km);
    auto gen_counts = visit_counts(generated, grid, index);
    auto real_counts = visit_counts(real, grid, index);
    std::set<std::string> fv_support;
    for (const auto& loc : top_locations(gen_counts, cfg.fvloc_top)) fv_support.insert(loc);
    for (const auto& loc : top_locations(real_counts, cfg.fvloc_top)) fv_support.insert(loc);
    std::map<std::string, double> gen_fv, real_fv;
    double gen_other = 0, real_other = 0;
    for (const auto& [loc, c] : gen_counts) {
        if (fv_support.count(loc)) gen_fv[loc] = c;
        else gen_other += c;
    }
    for (const auto& [loc, c] : real_counts) {
        if (fv_support.count(loc)) real_fv[loc] = c;
        else real_other += c;
    }
    if (gen_other > 0 || real_other > 0) {
        gen_fv["__other__"] = gen_other;
        real_fv["__other__"] = real_other;
    }
    {
        auto [hg, hr] = align_categorical(gen_fv, real_fv);
        rep.fvloc = jsd(hg, hr);
    }

    // ActProb: collective intent frequencies.
    {
        auto [hg, hr] = align_categorical(intent_counts(generated), intent_counts(real));
        rep.actprob = jsd(hg, hr);
    }

    if (tvr) {
        if (tvr->total <= 0) throw Error("evaluate: tvr sample with no emissions");
        rep.tvr = static_cast<double>(tvr->valid) / static_cast<double>(tvr->total);
    }
    return rep;
}

CmrrTable cmrr(const std::map<std::string, MetricReport>& reports, bool tvr_included) {
    if (reports.size() < 2) throw Error("cmrr: need at least two models");

    CmrrTable table;
    bool all_have_tvr = true, any_has_tvr = false;
    for (const auto& [model, rep] : reports) {
        table.models.push_back(model);
        all_have_tvr = all_have_tvr && rep.tvr.has_value();
        any_has_tvr = any_has_tvr || rep.tvr.has_value();
    }
    if (tvr_included && !all_have_tvr)
        throw Error("cmrr: tvr requested but absent from some reports");
    if (!tvr_included && any_has_tvr && !all_have_tvr)
        throw Error("cmrr: heterogeneous metric sets across reports");

    struct MetricSpec {
        std::string name;
        bool ascending;  // true: lower is better (JSD)
    };
    std::vector<MetricSpec> specs;
    for (const auto& [name, v] : reports.begin()->second.jsd_fields())
        specs.push_back({name, true});
    if (tvr_included) specs.push_back({"tvr", false});

    const std::size_t m = table.models.size();
    table.ranks.assign(m, std::vector<double>(specs.size(), 0.0));
    table.metric_names.clear();
    for (const auto& s : specs) table.metric_names.push_back(s.name);

    for (std::size_t mi = 0; mi < specs.size(); ++mi) {
        std::vector<double> values(m);
        for (std::size_t i = 0; i < m; ++i) {
            const MetricReport& rep = reports.at(table.models[i]);
            if (specs[mi].name == "tvr") {
                values[i] = *rep.tvr;
            } else {
                for (const auto& [name, v] : rep.jsd_fields())
                    if (name == specs[mi].name) values[i] = v;
            }
        }
        // Average-rank tie handling over the better-first ordering.
        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return specs[mi].ascending ? values[a] < values[b] : values[a] > values[b];
        });
        std::size_t i = 0;
        while (i < m) {
            std::size_t j = i;
            while (j + 1 < m && values[order[j + 1]] == values[order[i]]) ++j;
            double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
            for (std::size_t k = i; k <= j; ++k) table.ranks[order[k]][mi] = avg_rank;
            i = j + 1;
        }
    }

    table.cmrr.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double sum = 0.0;
        for (std::size_t mi = 0; mi < specs.size(); ++mi) sum += 1.0 / table.ranks[i][mi];
        table.cmrr[i] = sum / static_cast<double>(specs.size());
    }
    return table;
}

std::string CmrrTable::to_csv() const {
    std::string out = "model";
    for (const auto& name : metric_names) out += "," + name + "_rank";
    out += ",cmrr\n";
    for (std::size_t i = 0; i < models.size(); ++i) {
        out += models[i];
        for (double r : ranks[i]) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), ",%g", r);
            out += buf;
        }
        char buf[48];
        std::snprintf(buf, sizeof(buf), ",%.6f\n", cmrr[i]);
        out += buf;
    }
    return out;
}

namespace {

void write_hist_csv(const std::string& path, const Histogram& gen, const Histogram& real) {
    std::ofstream out(path, std::ios::trunc);
    out << "bin,generated_mass,real_mass\n";
    auto g = gen.total() > 0 ? gen.normalized() : std::vector<double>(gen.mass().size(), 0.0);
    auto r = real.total() > 0 ? real.normalized() : std::vector<double>(real.mass().size(), 0.0);
    if (gen.is_categorical()) {
        for (size_t i = 0; i < gen.support().size(); ++i)
            out << gen.support()[i] << ',' << g[i] << ',' << r[i] << '\n';
    } else {
        const auto& edges = gen.edges();
        out << "<" << edges.front() << ',' << g[0] << ',' << r[0] << '\n';
        for (size_t i = 0; i + 1 < edges.size(); ++i)
            out << edges[i] << "-" << edges[i + 1] << ',' << g[i + 1] << ',' << r[i + 1] << '\n';
        out << ">=" << edges.back() << ',' << g.back() << ',' << r.back() << '\n';
    }
}

}  // namespace

void write_plot_data(const std::string& out_dir,
                     const std::vector<mobility::Trajectory>& generated,
                     const std::vector<mobility::Trajectory>& real,
                     const urban::SpatialIndex& index, const EvalConfig& cfg) {
    std::filesystem::create_directories(out_dir);
    auto spatial = log_spaced_edges(cfg.spatial_min_km, cfg.spatial_max_km, cfg.spatial_bins);

    // Pooled (all-user) distributions per metric.
    struct Pool {
        Histogram distance, radius, si, sd;
        std::map<std::string, double> stvd, dard, intents;
    };
    auto pooled = [&](const std::vector<mobility::Trajectory>& data) {
        Pool p{Histogram::binned(spatial), Histogram::binned(spatial),
               Histogram::binned(si_edges(cfg)), Histogram::binned(spatial)};
        GridSpec grid = GridSpec::make(index.bbox(), cfg.stvd_cell_km);
        for (const auto& t : data) {
            std::vector<GeoPoint> pos;
            double day_total = 0.0;
            for (const auto& pt : t.points) {
                pos.push_back(pt.position(index));
                int hour = local_hour(pt.timestamp, cfg.utc_offset_s);
                p.stvd[grid.cell_key(pos.back()) + "_" + std::to_string(hour)] += 1.0;
                p.dard[std::to_string(hour) + "|" + pt.intent] += 1.0;
                p.intents[pt.intent] += 1.0;
            }
            for (size_t i = 1; i < pos.size(); ++i) {
                double step = haversine_km(pos[i - 1], pos[i]);
                p.sd.add_value(step);
                p.si.add_value(static_cast<double>(t.points[i].timestamp -
                                                   t.points[i - 1].timestamp));
                day_total += step;
            }
            if (!pos.empty()) {
                p.distance.add_value(day_total);
                p.radius.add_value(radius_of_gyration_km(pos));
            }
        }
        return p;
    };

    Pool g = pooled(generated);
    Pool r = pooled(real);
    auto dir = std::filesystem::path(out_dir);
    write_hist_csv((dir / "distance_hist.csv").string(), g.distance, r.distance);
    write_hist_csv((dir / "radius_hist.csv").string(), g.radius, r.radius);
    write_hist_csv((dir / "si_hist.csv").string(), g.si, r.si);
    write_hist_csv((dir / "sd_hist.csv").string(), g.sd, r.sd);
    {
        auto [hg, hr] = align_categorical(g.stvd, r.stvd);
        write_hist_csv((dir / "stvd_hist.csv").string(), hg, hr);
    }
    {
        auto [hg, hr] = align_categorical(g.dard, r.dard);
        write_hist_csv((dir / "dard_hist.csv").string(), hg, hr);
    }
    {
        auto [hg, hr] = align_categorical(g.intents, r.intents);
        write_hist_csv((dir / "actprob_hist.csv").string(), hg, hr);
    }
}

}  // namespace cams::metrics
