#pragma once

#include <cstdint>
#include <string>

namespace cams {

struct GeoPoint {
    double lat = 0.0;  // WGS84 decimal degrees
    double lon = 0.0;

    bool operator==(const GeoPoint&) const = default;
};

// IUGG mean Earth radius.
inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr double kPi = 3.141592653589793238462643383279502884;

// km per degree of latitude on the reference sphere (pi*R/180).
inline constexpr double kKmPerDegLat = kPi * kEarthRadiusKm / 180.0;

// Great-circle distance in km.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

bool valid_coordinates(const GeoPoint& p);

// Axis-aligned lat/lon box.
struct BoundingBox {
    double min_lat = 0.0, min_lon = 0.0, max_lat = 0.0, max_lon = 0.0;

    void expand(const GeoPoint& p);
    bool contains(const GeoPoint& p) const;
    bool empty_ = true;
};

// Uniform km-sized grid anchored at a box's southwest corner. Degree extents
// are derived once from the anchor latitude, so cell lookup is plain
// arithmetic: ix = floor((lon-origin)/cell_w), iy = floor((lat-origin)/cell_h).
// Used by the pseudo-region hierarchy and the space-time visit histograms.
struct GridSpec {
    double origin_lat = 0.0;
    double origin_lon = 0.0;
    double cell_h_deg = 0.0;  // latitude extent of a cell
    double cell_w_deg = 0.0;  // longitude extent of a cell

    static GridSpec make(const BoundingBox& box, double cell_km);

    std::int64_t cell_x(double lon) const;
    std::int64_t cell_y(double lat) const;
    std::string cell_key(const GeoPoint& p) const;  // "<ix>_<iy>"
};

}  // namespace cams
