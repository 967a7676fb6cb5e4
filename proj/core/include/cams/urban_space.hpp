#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cams/geo.hpp"

namespace cams::urban {

struct Poi {
    std::string id;
    std::string name;
    std::string category;
    double lat = 0.0;
    double lon = 0.0;
    // admin, subdistrict, street, self (poi id)
    std::array<std::string, 4> region_path;
    double population_weight = 1.0;

    GeoPoint point() const { return GeoPoint{lat, lon}; }
};

enum class RegionLevel : int { admin = 0, subdistrict = 1, street = 2 };

std::string_view to_string(RegionLevel level);
std::optional<RegionLevel> region_level_from_string(std::string_view s);

struct Region {
    std::string id;
    std::string name;
    RegionLevel level = RegionLevel::admin;
    std::string parent_id;            // empty at admin level
    std::vector<GeoPoint> boundary;   // optional polygon (outer ring)

    // Bounding-box test plus ray casting; false when no boundary is known.
    bool contains(const GeoPoint& p) const;
};

struct RoadEdge {
    std::string name;
    int a = 0;  // node indices
    int b = 0;
    double length_km = 0.0;
};

struct RoadGraph {
    std::vector<GeoPoint> nodes;
    std::vector<RoadEdge> edges;
    std::vector<std::vector<int>> incident;  // node -> edge indices

    bool empty() const { return edges.empty(); }
};

// Immutable city store: POIs, the three-level region hierarchy, the road
// graph, a uniform grid for radius queries and normalized-name lookups.
// Safe for unlimited concurrent readers once built.
class SpatialIndex {
public:
    const std::vector<Poi>& pois() const { return pois_; }
    const Poi* find_poi(const std::string& id) const;
    const Poi& poi(const std::string& id) const;  // throws NotFoundError

    const Region* find_region(RegionLevel level, const std::string& id) const;
    const Region& region(RegionLevel level, const std::string& id) const;
    std::vector<const Region*> regions_at(RegionLevel level) const;
    // Children one level below the given region (region ids).
    std::vector<std::string> child_region_ids(RegionLevel parent_level,
                                              const std::string& parent_id) const;
    std::vector<const Poi*> pois_in_region(RegionLevel level, const std::string& region_id) const;

    const RoadGraph& roads() const { return roads_; }
    const BoundingBox& bbox() const { return bbox_; }
    bool pseudo_hierarchy() const { return pseudo_hierarchy_; }

    std::vector<const Poi*> pois_within_radius(
        const GeoPoint& center, double radius_km,
        const std::optional<std::string>& category = std::nullopt) const;

    std::string hierarchical_address(const std::string& poi_id) const;
    std::string human_address(const std::string& poi_id) const;

    // True iff the case-folded, whitespace-normalized name matches an
    // ingested POI, road or region name.
    bool validate_toponym(std::string_view name) const;
    // Resolves a (normalized) name to a POI; nullptr when the name does not
    // belong to any POI. Duplicate names resolve to the smallest poi id.
    const Poi* resolve_poi_name(std::string_view name) const;

    std::size_t poi_count() const { return pois_.size(); }

private:
    friend class CityIngestor;

    void finalize();
    std::int64_t radius_cell_key(std::int64_t x, std::int64_t y) const;

    std::vector<Poi> pois_;
    std::vector<Region> regions_;
    RoadGraph roads_;
    BoundingBox bbox_;
    bool pseudo_hierarchy_ = false;

    std::unordered_map<std::string, std::size_t> poi_by_id_;
    std::array<std::unordered_map<std::string, std::size_t>, 3> region_by_id_;
    std::array<std::unordered_map<std::string, std::vector<std::size_t>>, 3> region_children_;
    std::array<std::unordered_map<std::string, std::vector<std::size_t>>, 3> region_pois_;
    std::unordered_set<std::string> toponyms_;                      // normalized
    std::unordered_map<std::string, std::size_t> poi_by_norm_name_;

    GridSpec radius_grid_;
    std::unordered_map<std::int64_t, std::vector<std::size_t>> radius_cells_;
    std::int64_t cell_min_x_ = 0, cell_max_x_ = 0, cell_min_y_ = 0, cell_max_y_ = 0;

    struct Junction {
        int node = 0;
        std::string road_a;  // two lexicographically smallest distinct names
        std::string road_b;
    };
    std::vector<Junction> junctions_;
};

// Pseudo-hierarchy cell sizes used when no region file is supplied: nested
// square grids named by cell indices.
inline constexpr double kPseudoAdminCellKm = 8.0;
inline constexpr double kPseudoSubdistrictCellKm = 2.0;
inline constexpr double kPseudoStreetCellKm = 0.5;

// Builds the index from a POI file (CSV or GeoJSON), an optional region file
// (CSV or GeoJSON) and an optional road CSV. With no region file a 4-level
// pseudo-hierarchy is synthesized from nested grids.
SpatialIndex ingest_city(const std::string& poi_file, const std::string& region_file = "",
                         const std::string& road_file = "");

}  // namespace cams::urban
