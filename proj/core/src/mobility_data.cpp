#include "cams/mobility_data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <set>

#include "cams/csv.hpp"
#include "cams/errors.hpp"
#include "cams/strings.hpp"

namespace cams::mobility {

namespace {

std::string format_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

const std::string* UserProfile::attribute(const std::string& key) const {
    for (const auto& [k, v] : attributes)
        if (k == key) return &v;
    return nullptr;
}

std::string UserProfile::render() const {
    std::string out;
    for (const auto& [k, v] : attributes) {
        if (!out.empty()) out += "; ";
        out += k + "=" + v;
    }
    return out;
}

GeoPoint TrajectoryPoint::position(const urban::SpatialIndex& index) const {
    if (!poi_id.empty()) return index.poi(poi_id).point();
    if (coord) return *coord;
    throw Error("trajectory point without poi or coordinates");
}

IntentMap::IntentMap(std::map<std::string, std::string> table, std::string default_intent)
    : table_(std::move(table)), default_(std::move(default_intent)) {}

IntentMap IntentMap::builtin_defaults() {
    return IntentMap({{"Food", "dining"},
                      {"Restaurant", "dining"},
                      {"Cafe", "dining"},
                      {"Residential", "home"},
                      {"Office", "work"},
                      {"Company", "work"},
                      {"Mall", "shopping"},
                      {"Shop", "shopping"},
                      {"Park", "recreation"},
                      {"Museum", "recreation"},
                      {"School", "education"},
                      {"University", "education"},
                      {"Hospital", "medical"},
                      {"Clinic", "medical"},
                      {"Station", "transit"},
                      {"Airport", "transit"},
                      {"Gym", "sports"},
                      {"Stadium", "sports"}});
}

IntentMap IntentMap::load(const std::string& path) {
    CsvFile csv = read_csv(path);
    if (csv.header.size() < 2 || trim(csv.header[0]) != "category" ||
        trim(csv.header[1]) != "intent")
        throw IngestError(path, 1, "header", "expected category,intent");
    std::map<std::string, std::string> table;
    for (size_t i = 0; i < csv.rows.size(); ++i)
        table[trim(csv.rows[i][0])] = trim(csv.rows[i][1]);
    return IntentMap(std::move(table));
}

const std::string& IntentMap::intent_of(const std::string& category) const {
    auto it = table_.find(category);
    return it == table_.end() ? default_ : it->second;
}

std::vector<std::string> IntentMap::categories_for(const std::string& intent) const {
    std::vector<std::string> out;
    for (const auto& [cat, in] : table_)
        if (in == intent) out.push_back(cat);
    return out;
}

std::vector<std::string> IntentMap::taxonomy() const {
    std::set<std::string> tokens;
    for (const auto& [cat, in] : table_) tokens.insert(in);
    tokens.insert(default_);
    return {tokens.begin(), tokens.end()};
}

std::vector<UserProfile> load_profiles(const std::string& path) {
    CsvFile csv = read_csv(path);
    if (csv.header.empty() || trim(csv.header[0]) != "user_id")
        throw IngestError(path, 1, "header", "first column must be user_id");
    const auto& schema = profile_schema();
    for (size_t c = 1; c < csv.header.size(); ++c) {
        std::string key = trim(csv.header[c]);
        if (std::find(schema.begin(), schema.end(), key) == schema.end())
            throw IngestError(path, 1, key, "unknown attribute key '" + key + "'");
    }

    std::vector<UserProfile> out;
    std::set<std::string> seen;
    std::vector<std::string> duplicates;
    for (size_t i = 0; i < csv.rows.size(); ++i) {
        const auto& row = csv.rows[i];
        UserProfile p;
        p.user_id = trim(row[0]);
        if (!seen.insert(p.user_id).second) {
            duplicates.push_back(p.user_id);
            continue;
        }
        for (size_t c = 1; c < csv.header.size(); ++c)
            p.attributes.emplace_back(trim(csv.header[c]), trim(row[c]));
        out.push_back(std::move(p));
    }
    if (!duplicates.empty())
        throw IngestError(path, 0, "user_id", "duplicate user ids: " + join(duplicates, ", "));
    return out;
}

void write_profiles(const std::string& path, const std::vector<UserProfile>& profiles) {
    std::vector<std::string> header = {"user_id"};
    for (const auto& key : profile_schema()) header.push_back(key);
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : profiles) {
        std::vector<std::string> row = {p.user_id};
        for (const auto& key : profile_schema()) {
            const std::string* v = p.attribute(key);
            row.push_back(v ? *v : "");
        }
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

TrajectoryLoadResult load_trajectories(const std::string& path, const urban::SpatialIndex& index,
                                       const IntentMap& intents, const MobilityConfig& cfg) {
    CsvFile csv = read_csv(path);
    int c_user = 0, c_ts = 1, c_poi = 2, c_lat = 3, c_lon = 4, c_cat = 5;
    {
        const std::vector<std::string> expected = {"user_id", "timestamp_iso8601", "poi_id",
                                                   "lat",     "lon",               "category"};
        for (size_t i = 0; i < expected.size(); ++i)
            if (i >= csv.header.size() || trim(csv.header[i]) != expected[i])
                throw IngestError(path, 1, expected[i], "unexpected trajectory header");
    }

    TrajectoryLoadResult result;
    std::map<std::pair<std::string, CivilDate>, std::vector<TrajectoryPoint>> grouped;
    for (size_t i = 0; i < csv.rows.size(); ++i) {
        const auto& row = csv.rows[i];
        long line = csv.line_numbers[i];
        TrajectoryPoint pt;
        std::string user = trim(row[c_user]);
        auto ts = parse_iso8601(trim(row[c_ts]));
        if (!ts) throw IngestError(path, line, "timestamp_iso8601", "unparsable timestamp");
        pt.timestamp = *ts;
        pt.poi_id = trim(row[c_poi]);
        std::string lat_s = trim(row[c_lat]), lon_s = trim(row[c_lon]);
        if (!lat_s.empty() && !lon_s.empty()) {
            GeoPoint g;
            auto r1 = std::from_chars(lat_s.data(), lat_s.data() + lat_s.size(), g.lat);
            auto r2 = std::from_chars(lon_s.data(), lon_s.data() + lon_s.size(), g.lon);
            if (r1.ec != std::errc{} || r2.ec != std::errc{})
                throw IngestError(path, line, "lat/lon", "unparsable coordinates");
            if (!valid_coordinates(g))
                throw IngestError(path, line, "lat/lon", "coordinates out of range");
            pt.coord = g;
        }
        pt.category = trim(row[c_cat]);
        if (!pt.poi_id.empty() && !index.find_poi(pt.poi_id)) {
            if (!pt.coord) {
                ++result.dropped_unresolvable;
                continue;
            }
            pt.poi_id.clear();  // keep the raw fix
        }
        if (pt.poi_id.empty() && !pt.coord) {
            ++result.dropped_unresolvable;
            continue;
        }
        if (pt.category.empty() && !pt.poi_id.empty()) pt.category = index.poi(pt.poi_id).category;
        pt.intent = intents.intent_of(pt.category);
        grouped[{user, local_date(pt.timestamp, cfg.utc_offset_s)}].push_back(std::move(pt));
    }

    for (auto& [key, points] : grouped) {
        std::stable_sort(points.begin(), points.end(),
                         [](const TrajectoryPoint& a, const TrajectoryPoint& b) {
                             return a.timestamp < b.timestamp;
                         });
        Trajectory t;
        t.user_id = key.first;
        t.day = key.second;
        for (auto& pt : points) {
            if (!t.points.empty() && pt.timestamp == t.points.back().timestamp) {
                ++result.duplicate_timestamps;  // keep first
                continue;
            }
            t.points.push_back(std::move(pt));
        }
        result.trajectories.push_back(std::move(t));
    }
    return result;
}

void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories,
                        const MobilityConfig& cfg) {
    std::vector<const Trajectory*> sorted;
    for (const auto& t : trajectories) sorted.push_back(&t);
    std::sort(sorted.begin(), sorted.end(), [](const Trajectory* a, const Trajectory* b) {
        if (a->user_id != b->user_id) return a->user_id < b->user_id;
        return a->day < b->day;
    });
    std::vector<std::vector<std::string>> rows;
    for (const auto* t : sorted) {
        for (const auto& pt : t->points) {
            rows.push_back({t->user_id, format_iso8601(pt.timestamp, cfg.utc_offset_s), pt.poi_id,
                            pt.coord ? format_coord(pt.coord->lat) : "",
                            pt.coord ? format_coord(pt.coord->lon) : "", pt.category});
        }
    }
    write_csv(path, {"user_id", "timestamp_iso8601", "poi_id", "lat", "lon", "category"}, rows);
}

Trajectory align_to_time_grid(const Trajectory& traj, int interval_s) {
    if (traj.points.empty()) throw Error("align_to_time_grid: empty trajectory");
    if (interval_s <= 0) throw Error("align_to_time_grid: interval must be positive");
    Trajectory out;
    out.user_id = traj.user_id;
    out.day = traj.day;
    const std::int64_t first = traj.points.front().timestamp;
    const std::int64_t last = traj.points.back().timestamp;
    std::size_t held = 0;
    for (std::int64_t t = first; t <= last; t += interval_s) {
        while (held + 1 < traj.points.size() && traj.points[held + 1].timestamp <= t) ++held;
        TrajectoryPoint pt = traj.points[held];
        pt.timestamp = t;
        out.points.push_back(std::move(pt));
    }
    return out;
}

}  // namespace cams::mobility
