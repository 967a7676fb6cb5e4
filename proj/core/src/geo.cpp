#include "cams/geo.hpp"

#include <algorithm>
#include <cmath>

namespace cams {

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    constexpr double deg = kPi / 180.0;
    const double phi1 = a.lat * deg;
    const double phi2 = b.lat * deg;
    const double dphi = (b.lat - a.lat) * deg;
    const double dlam = (b.lon - a.lon) * deg;
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlam / 2.0);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

bool valid_coordinates(const GeoPoint& p) {
    return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
           p.lon >= -180.0 && p.lon <= 180.0;
}

void BoundingBox::expand(const GeoPoint& p) {
    if (empty_) {
        min_lat = max_lat = p.lat;
        min_lon = max_lon = p.lon;
        empty_ = false;
        return;
    }
    min_lat = std::min(min_lat, p.lat);
    max_lat = std::max(max_lat, p.lat);
    min_lon = std::min(min_lon, p.lon);
    max_lon = std::max(max_lon, p.lon);
}

bool BoundingBox::contains(const GeoPoint& p) const {
    return !empty_ && p.lat >= min_lat && p.lat <= max_lat && p.lon >= min_lon && p.lon <= max_lon;
}

GridSpec GridSpec::make(const BoundingBox& box, double cell_km) {
    GridSpec g;
    g.origin_lat = box.min_lat;
    g.origin_lon = box.min_lon;
    g.cell_h_deg = cell_km / kKmPerDegLat;
    // Longitude extent shrinks with latitude; anchor the conversion at the
    // box's southern edge and clamp near the poles.
    double c = std::cos(box.min_lat * kPi / 180.0);
    g.cell_w_deg = cell_km / (kKmPerDegLat * std::max(c, 0.01));
    return g;
}

std::int64_t GridSpec::cell_x(double lon) const {
    return static_cast<std::int64_t>(std::floor((lon - origin_lon) / cell_w_deg));
}

std::int64_t GridSpec::cell_y(double lat) const {
    return static_cast<std::int64_t>(std::floor((lat - origin_lat) / cell_h_deg));
}

std::string GridSpec::cell_key(const GeoPoint& p) const {
    return std::to_string(cell_x(p.lon)) + "_" + std::to_string(cell_y(p.lat));
}

}  // namespace cams
