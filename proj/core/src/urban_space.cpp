#include "cams/urban_space.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cams/csv.hpp"
#include "cams/errors.hpp"
#include "cams/strings.hpp"

namespace cams::urban {

namespace {

bool is_geojson_path(const std::string& path) {
    auto dot = path.rfind('.');
    if (dot == std::string::npos) return false;
    std::string ext = path.substr(dot);
    return ext == ".geojson" || ext == ".json";
}

double parse_double(const std::string& file, long line, const std::string& field,
                    const std::string& value) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size())
        throw IngestError(file, line, field, "not a number: '" + value + "'");
    return out;
}

int column_of(const std::vector<std::string>& header, std::string_view name) {
    for (size_t i = 0; i < header.size(); ++i)
        if (trim(header[i]) == name) return static_cast<int>(i);
    return -1;
}

}  // namespace

std::string_view to_string(RegionLevel level) {
    switch (level) {
        case RegionLevel::admin: return "admin";
        case RegionLevel::subdistrict: return "subdistrict";
        case RegionLevel::street: return "street";
    }
    return "?";
}

std::optional<RegionLevel> region_level_from_string(std::string_view s) {
    if (s == "admin") return RegionLevel::admin;
    if (s == "subdistrict") return RegionLevel::subdistrict;
    if (s == "street") return RegionLevel::street;
    return std::nullopt;
}

bool Region::contains(const GeoPoint& p) const {
    if (boundary.size() < 3) return false;
    BoundingBox box;
    for (const auto& v : boundary) box.expand(v);
    if (!box.contains(p)) return false;
    // Ray casting toward +lon.
    bool inside = false;
    for (size_t i = 0, j = boundary.size() - 1; i < boundary.size(); j = i++) {
        const auto& a = boundary[i];
        const auto& b = boundary[j];
        if ((a.lat > p.lat) != (b.lat > p.lat)) {
            double x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
            if (p.lon < x) inside = !inside;
        }
    }
    return inside;
}

const Poi* SpatialIndex::find_poi(const std::string& id) const {
    auto it = poi_by_id_.find(id);
    return it == poi_by_id_.end() ? nullptr : &pois_[it->second];
}

const Poi& SpatialIndex::poi(const std::string& id) const {
    const Poi* p = find_poi(id);
    if (!p) throw NotFoundError("unknown poi id: " + id);
    return *p;
}

const Region* SpatialIndex::find_region(RegionLevel level, const std::string& id) const {
    const auto& m = region_by_id_[static_cast<int>(level)];
    auto it = m.find(id);
    return it == m.end() ? nullptr : &regions_[it->second];
}

const Region& SpatialIndex::region(RegionLevel level, const std::string& id) const {
    const Region* r = find_region(level, id);
    if (!r) throw NotFoundError("unknown " + std::string(to_string(level)) + " region: " + id);
    return *r;
}

std::vector<const Region*> SpatialIndex::regions_at(RegionLevel level) const {
    std::vector<const Region*> out;
    for (const auto& r : regions_)
        if (r.level == level) out.push_back(&r);
    std::sort(out.begin(), out.end(),
              [](const Region* a, const Region* b) { return a->id < b->id; });
    return out;
}

std::vector<std::string> SpatialIndex::child_region_ids(RegionLevel parent_level,
                                                        const std::string& parent_id) const {
    std::vector<std::string> out;
    const auto& m = region_children_[static_cast<int>(parent_level)];
    auto it = m.find(parent_id);
    if (it != m.end())
        for (auto idx : it->second) out.push_back(regions_[idx].id);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<const Poi*> SpatialIndex::pois_in_region(RegionLevel level,
                                                     const std::string& region_id) const {
    std::vector<const Poi*> out;
    const auto& m = region_pois_[static_cast<int>(level)];
    auto it = m.find(region_id);
    if (it != m.end())
        for (auto idx : it->second) out.push_back(&pois_[idx]);
    std::sort(out.begin(), out.end(), [](const Poi* a, const Poi* b) { return a->id < b->id; });
    return out;
}

std::int64_t SpatialIndex::radius_cell_key(std::int64_t x, std::int64_t y) const {
    return x * 2000003 + y;  // coordinates are small; collisions impossible in range
}

std::vector<const Poi*> SpatialIndex::pois_within_radius(
    const GeoPoint& center, double radius_km, const std::optional<std::string>& category) const {
    struct Hit {
        const Poi* poi;
        double dist;
    };
    std::vector<Hit> hits;
    auto consider = [&](const Poi& p) {
        if (category && p.category != *category) return;
        double d = haversine_km(center, p.point());
        if (d <= radius_km) hits.push_back({&p, d});
    };

    if (pois_.empty()) return {};

    // Conservative degree window: great-circle distance bounds |dlat| directly,
    // |dlon| via the smallest cosine of latitude inside the window.
    double dlat = radius_km / kKmPerDegLat;
    double lat_lo = center.lat - dlat, lat_hi = center.lat + dlat;
    double max_abs_lat = std::max(std::abs(lat_lo), std::abs(lat_hi));
    double min_cos = max_abs_lat >= 90.0 ? 0.0 : std::cos(max_abs_lat * kPi / 180.0);
    bool full_lon = min_cos < 1e-6;
    double dlon = full_lon ? 360.0 : radius_km / (kKmPerDegLat * min_cos) * 1.0001;

    if (full_lon || dlon >= 180.0) {
        for (const auto& p : pois_) consider(p);
    } else {
        std::int64_t x0 = std::max(cell_min_x_, radius_grid_.cell_x(center.lon - dlon));
        std::int64_t x1 = std::min(cell_max_x_, radius_grid_.cell_x(center.lon + dlon));
        std::int64_t y0 = std::max(cell_min_y_, radius_grid_.cell_y(lat_lo));
        std::int64_t y1 = std::min(cell_max_y_, radius_grid_.cell_y(lat_hi));
        for (std::int64_t y = y0; y <= y1; ++y) {
            for (std::int64_t x = x0; x <= x1; ++x) {
                auto it = radius_cells_.find(radius_cell_key(x, y));
                if (it == radius_cells_.end()) continue;
                for (auto idx : it->second) consider(pois_[idx]);
            }
        }
    }

    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.poi->id < b.poi->id;
    });
    std::vector<const Poi*> out;
    out.reserve(hits.size());
    for (const auto& h : hits) out.push_back(h.poi);
    return out;
}

std::string SpatialIndex::hierarchical_address(const std::string& poi_id) const {
    const Poi& p = poi(poi_id);
    const Region& admin = region(RegionLevel::admin, p.region_path[0]);
    const Region& sub = region(RegionLevel::subdistrict, p.region_path[1]);
    const Region& street = region(RegionLevel::street, p.region_path[2]);
    return admin.name + ", " + sub.name + ", " + street.name + ", " + p.name;
}

std::string SpatialIndex::human_address(const std::string& poi_id) const {
    const Poi& p = poi(poi_id);
    if (roads_.empty() || junctions_.empty())
        throw UnsupportedError("human-intuitive address unavailable: no named road intersection");
    const Junction* best = nullptr;
    double best_dist = 0.0;
    for (const auto& j : junctions_) {
        double d = haversine_km(p.point(), roads_.nodes[j.node]);
        if (!best || d < best_dist) {
            best = &j;
            best_dist = d;
        }
    }
    long meters = std::lround(best_dist * 1000.0);
    return std::to_string(meters) + " meters from the intersection of " + best->road_a + " and " +
           best->road_b;
}

bool SpatialIndex::validate_toponym(std::string_view name) const {
    return toponyms_.count(normalize_name(name)) > 0;
}

const Poi* SpatialIndex::resolve_poi_name(std::string_view name) const {
    auto it = poi_by_norm_name_.find(normalize_name(name));
    return it == poi_by_norm_name_.end() ? nullptr : &pois_[it->second];
}

void SpatialIndex::finalize() {
    for (std::size_t i = 0; i < pois_.size(); ++i) {
        const Poi& p = pois_[i];
        bbox_.expand(p.point());
        poi_by_id_.emplace(p.id, i);
        std::string norm = normalize_name(p.name);
        toponyms_.insert(norm);
        auto [it, inserted] = poi_by_norm_name_.emplace(norm, i);
        if (!inserted && p.id < pois_[it->second].id) it->second = i;
        for (int level = 0; level < 3; ++level)
            region_pois_[level][p.region_path[level]].push_back(i);
    }
    for (std::size_t i = 0; i < regions_.size(); ++i) {
        const Region& r = regions_[i];
        region_by_id_[static_cast<int>(r.level)].emplace(r.id, i);
        toponyms_.insert(normalize_name(r.name));
        if (r.level != RegionLevel::admin)
            region_children_[static_cast<int>(r.level) - 1][r.parent_id].push_back(i);
    }
    for (const auto& e : roads_.edges) toponyms_.insert(normalize_name(e.name));

    // Junctions: road nodes incident to at least two distinctly named edges.
    for (std::size_t n = 0; n < roads_.nodes.size(); ++n) {
        std::vector<std::string> names;
        for (int ei : roads_.incident[n]) names.push_back(roads_.edges[ei].name);
        std::sort(names.begin(), names.end());
        names.erase(std::unique(names.begin(), names.end()), names.end());
        if (names.size() >= 2)
            junctions_.push_back(Junction{static_cast<int>(n), names[0], names[1]});
    }

    // Uniform grid for radius queries.
    if (!pois_.empty()) {
        radius_grid_ = GridSpec::make(bbox_, 0.5);
        bool first = true;
        for (std::size_t i = 0; i < pois_.size(); ++i) {
            std::int64_t x = radius_grid_.cell_x(pois_[i].lon);
            std::int64_t y = radius_grid_.cell_y(pois_[i].lat);
            radius_cells_[radius_cell_key(x, y)].push_back(i);
            if (first) {
                cell_min_x_ = cell_max_x_ = x;
                cell_min_y_ = cell_max_y_ = y;
                first = false;
            } else {
                cell_min_x_ = std::min(cell_min_x_, x);
                cell_max_x_ = std::max(cell_max_x_, x);
                cell_min_y_ = std::min(cell_min_y_, y);
                cell_max_y_ = std::max(cell_max_y_, y);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

class CityIngestor {
public:
    SpatialIndex run(const std::string& poi_file, const std::string& region_file,
                     const std::string& road_file) {
        if (!region_file.empty()) load_regions(region_file);
        load_pois(poi_file, /*expect_regions=*/!region_file.empty());
        if (region_file.empty()) synthesize_pseudo_hierarchy();
        validate_region_refs(poi_file);
        if (!road_file.empty()) load_roads(road_file);
        index_.finalize();
        return std::move(index_);
    }

private:
    void load_pois(const std::string& path, bool expect_regions) {
        if (is_geojson_path(path)) {
            load_pois_geojson(path);
        } else {
            load_pois_csv(path, expect_regions);
        }
    }

    void add_poi(const std::string& file, long line, Poi&& p) {
        if (!valid_coordinates(p.point()))
            throw IngestError(file, line, "lat/lon",
                              "coordinates out of range for poi '" + p.id + "'");
        if (p.population_weight < 0.0)
            throw IngestError(file, line, "population_weight", "must be non-negative");
        if (p.id.empty()) throw IngestError(file, line, "id", "empty poi id");
        if (!seen_poi_ids_.insert(p.id).second)
            throw IngestError(file, line, "id", "duplicate poi id '" + p.id + "'");
        p.region_path[3] = p.id;
        index_.pois_.push_back(std::move(p));
    }

    void load_pois_csv(const std::string& path, bool expect_regions) {
        CsvFile csv = read_csv(path);
        int c_id = column_of(csv.header, "id");
        int c_name = column_of(csv.header, "name");
        int c_cat = column_of(csv.header, "category");
        int c_lat = column_of(csv.header, "lat");
        int c_lon = column_of(csv.header, "lon");
        int c_adm = column_of(csv.header, "admin");
        int c_sub = column_of(csv.header, "subdistrict");
        int c_str = column_of(csv.header, "street");
        int c_w = column_of(csv.header, "population_weight");
        if (c_id < 0 || c_name < 0 || c_cat < 0 || c_lat < 0 || c_lon < 0)
            throw IngestError(path, 1, "header", "need id,name,category,lat,lon columns");
        if (expect_regions && (c_adm < 0 || c_sub < 0 || c_str < 0))
            throw IngestError(path, 1, "header",
                              "region file given but admin/subdistrict/street columns missing");
        for (size_t i = 0; i < csv.rows.size(); ++i) {
            const auto& row = csv.rows[i];
            long line = csv.line_numbers[i];
            Poi p;
            p.id = trim(row[c_id]);
            p.name = trim(row[c_name]);
            p.category = trim(row[c_cat]);
            p.lat = parse_double(path, line, "lat", trim(row[c_lat]));
            p.lon = parse_double(path, line, "lon", trim(row[c_lon]));
            if (c_adm >= 0 && expect_regions) {
                p.region_path[0] = trim(row[c_adm]);
                p.region_path[1] = trim(row[c_sub]);
                p.region_path[2] = trim(row[c_str]);
            }
            if (c_w >= 0 && !trim(row[c_w]).empty())
                p.population_weight = parse_double(path, line, "population_weight", trim(row[c_w]));
            add_poi(path, line, std::move(p));
        }
    }

    void load_pois_geojson(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IngestError(path, 0, "", "cannot open file");
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const std::exception& e) {
            throw IngestError(path, 0, "", std::string("invalid json: ") + e.what());
        }
        if (!doc.contains("features"))
            throw IngestError(path, 0, "features", "not a FeatureCollection");
        long n = 0;
        for (const auto& f : doc["features"]) {
            ++n;
            const auto& props = f.value("properties", nlohmann::json::object());
            const auto& geom = f.value("geometry", nlohmann::json::object());
            if (geom.value("type", "") != "Point")
                throw IngestError(path, n, "geometry", "poi feature must be a Point");
            const auto& coords = geom["coordinates"];
            Poi p;
            p.id = props.value("id", "");
            p.name = props.value("name", "");
            p.category = props.value("category", "");
            p.lon = coords.at(0).get<double>();
            p.lat = coords.at(1).get<double>();
            p.region_path[0] = props.value("admin", "");
            p.region_path[1] = props.value("subdistrict", "");
            p.region_path[2] = props.value("street", "");
            if (props.contains("population_weight"))
                p.population_weight = props["population_weight"].get<double>();
            add_poi(path, n, std::move(p));
        }
    }

    void add_region(const std::string& file, long line, Region&& r) {
        if (r.id.empty()) throw IngestError(file, line, "id", "empty region id");
        auto& seen = seen_region_ids_[static_cast<int>(r.level)];
        if (!seen.insert(r.id).second)
            throw IngestError(file, line, "id",
                              "duplicate " + std::string(to_string(r.level)) + " region id '" +
                                  r.id + "'");
        index_.regions_.push_back(std::move(r));
    }

    void load_regions(const std::string& path) {
        if (is_geojson_path(path)) {
            load_regions_geojson(path);
        } else {
            CsvFile csv = read_csv(path);
            int c_id = column_of(csv.header, "id");
            int c_name = column_of(csv.header, "name");
            int c_level = column_of(csv.header, "level");
            int c_parent = column_of(csv.header, "parent_id");
            if (c_id < 0 || c_name < 0 || c_level < 0 || c_parent < 0)
                throw IngestError(path, 1, "header", "need id,name,level,parent_id columns");
            for (size_t i = 0; i < csv.rows.size(); ++i) {
                const auto& row = csv.rows[i];
                long line = csv.line_numbers[i];
                Region r;
                r.id = trim(row[c_id]);
                r.name = trim(row[c_name]);
                auto level = region_level_from_string(trim(row[c_level]));
                if (!level)
                    throw IngestError(path, line, "level", "unknown level '" + row[c_level] + "'");
                r.level = *level;
                r.parent_id = trim(row[c_parent]);
                add_region(path, line, std::move(r));
            }
        }
        check_region_parents(path);
    }

    void load_regions_geojson(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IngestError(path, 0, "", "cannot open file");
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const std::exception& e) {
            throw IngestError(path, 0, "", std::string("invalid json: ") + e.what());
        }
        long n = 0;
        for (const auto& f : doc.value("features", nlohmann::json::array())) {
            ++n;
            const auto& props = f.value("properties", nlohmann::json::object());
            Region r;
            r.id = props.value("id", "");
            r.name = props.value("name", "");
            auto level = region_level_from_string(props.value("level", ""));
            if (!level) throw IngestError(path, n, "level", "unknown or missing level");
            r.level = *level;
            r.parent_id = props.value("parent_id", "");
            const auto& geom = f.value("geometry", nlohmann::json::object());
            if (geom.value("type", "") == "Polygon") {
                for (const auto& v : geom["coordinates"].at(0))
                    r.boundary.push_back(GeoPoint{v.at(1).get<double>(), v.at(0).get<double>()});
            }
            add_region(path, n, std::move(r));
        }
        check_region_parents(path);
    }

    void check_region_parents(const std::string& path) {
        for (const auto& r : index_.regions_) {
            if (r.level == RegionLevel::admin) {
                if (!r.parent_id.empty())
                    throw IngestError(path, 0, "parent_id",
                                      "admin region '" + r.id + "' must not have a parent");
                continue;
            }
            int parent_level = static_cast<int>(r.level) - 1;
            if (!seen_region_ids_[parent_level].count(r.parent_id))
                throw IngestError(path, 0, "parent_id",
                                  "region '" + r.id + "' references unknown parent '" +
                                      r.parent_id + "'");
        }
    }

    void validate_region_refs(const std::string& poi_file) {
        std::vector<std::string> dangling;
        for (const auto& p : index_.pois_) {
            for (int level = 0; level < 3; ++level) {
                if (!seen_region_ids_[level].count(p.region_path[level])) {
                    dangling.push_back(p.id);
                    break;
                }
            }
        }
        if (!dangling.empty()) {
            std::sort(dangling.begin(), dangling.end());
            throw IngestError(poi_file, 0, "region_path",
                              "pois with dangling region references: " + join(dangling, ", "));
        }
    }

    // Nested 8 km / 2 km / 0.5 km grids anchored at the POI bounding box's
    // southwest corner; region names are the cell keys so they can be
    // recomputed from coordinates alone.
    void synthesize_pseudo_hierarchy() {
        index_.pseudo_hierarchy_ = true;
        BoundingBox box;
        for (const auto& p : index_.pois_) box.expand(p.point());
        if (box.empty_) return;
        const std::array<double, 3> cell_km = {kPseudoAdminCellKm, kPseudoSubdistrictCellKm,
                                               kPseudoStreetCellKm};
        const std::array<std::string, 3> prefix = {"cell8km_", "cell2km_", "cell500m_"};
        std::array<GridSpec, 3> grid;
        for (int level = 0; level < 3; ++level) grid[level] = GridSpec::make(box, cell_km[level]);

        std::array<std::map<std::string, std::string>, 3> cells;  // id -> parent id
        for (auto& p : index_.pois_) {
            std::string parent;
            for (int level = 0; level < 3; ++level) {
                std::string id = prefix[level] + grid[level].cell_key(p.point());
                p.region_path[level] = id;
                cells[level].emplace(id, parent);
                parent = id;
            }
        }
        for (int level = 0; level < 3; ++level) {
            for (const auto& [id, parent] : cells[level]) {
                Region r;
                r.id = id;
                r.name = id;
                r.level = static_cast<RegionLevel>(level);
                r.parent_id = parent;
                add_region("<pseudo>", 0, std::move(r));
            }
        }
    }

    void load_roads(const std::string& path) {
        CsvFile csv = read_csv(path);
        int c_name = column_of(csv.header, "road_name");
        int c_lat1 = column_of(csv.header, "lat1");
        int c_lon1 = column_of(csv.header, "lon1");
        int c_lat2 = column_of(csv.header, "lat2");
        int c_lon2 = column_of(csv.header, "lon2");
        if (c_name < 0 || c_lat1 < 0 || c_lon1 < 0 || c_lat2 < 0 || c_lon2 < 0)
            throw IngestError(path, 1, "header", "need road_name,lat1,lon1,lat2,lon2 columns");

        std::map<std::pair<double, double>, int> node_ids;
        auto node_of = [&](double lat, double lon) {
            auto [it, inserted] = node_ids.emplace(std::make_pair(lat, lon),
                                                   static_cast<int>(index_.roads_.nodes.size()));
            if (inserted) {
                index_.roads_.nodes.push_back(GeoPoint{lat, lon});
                index_.roads_.incident.emplace_back();
            }
            return it->second;
        };

        for (size_t i = 0; i < csv.rows.size(); ++i) {
            const auto& row = csv.rows[i];
            long line = csv.line_numbers[i];
            RoadEdge e;
            e.name = trim(row[c_name]);
            GeoPoint a{parse_double(path, line, "lat1", trim(row[c_lat1])),
                       parse_double(path, line, "lon1", trim(row[c_lon1]))};
            GeoPoint b{parse_double(path, line, "lat2", trim(row[c_lat2])),
                       parse_double(path, line, "lon2", trim(row[c_lon2]))};
            if (!valid_coordinates(a) || !valid_coordinates(b))
                throw IngestError(path, line, "lat/lon", "road endpoint out of range");
            if (a == b) throw IngestError(path, line, "lat/lon", "zero-length road segment");
            e.a = node_of(a.lat, a.lon);
            e.b = node_of(b.lat, b.lon);
            e.length_km = haversine_km(a, b);
            int edge_idx = static_cast<int>(index_.roads_.edges.size());
            index_.roads_.edges.push_back(e);
            index_.roads_.incident[e.a].push_back(edge_idx);
            index_.roads_.incident[e.b].push_back(edge_idx);
        }
    }

    SpatialIndex index_;
    std::unordered_set<std::string> seen_poi_ids_;
    std::array<std::unordered_set<std::string>, 3> seen_region_ids_;
};

SpatialIndex ingest_city(const std::string& poi_file, const std::string& region_file,
                         const std::string& road_file) {
    return CityIngestor().run(poi_file, region_file, road_file);
}

}  // namespace cams::urban
