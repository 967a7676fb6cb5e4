#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cams/geo.hpp"
#include "cams/timeutil.hpp"
#include "cams/urban_space.hpp"

namespace cams::mobility {

// Attribute schema of the profile CSV, in column order.
inline const std::vector<std::string>& profile_schema() {
    static const std::vector<std::string> keys = {"age",       "gender",     "income",
                                                  "education", "occupation", "home_hint"};
    return keys;
}

struct UserProfile {
    std::string user_id;
    // Ordered (key, value) pairs following the declared schema.
    std::vector<std::pair<std::string, std::string>> attributes;

    const std::string* attribute(const std::string& key) const;
    // Deterministic one-line rendering for prompts: "age=30s; gender=f; ...".
    std::string render() const;
};

struct TrajectoryPoint {
    std::int64_t timestamp = 0;     // seconds since epoch, UTC
    std::string poi_id;             // empty when only raw coordinates are known
    std::optional<GeoPoint> coord;  // raw fix; required when poi_id is empty
    std::string intent = "unknown";
    std::string category;

    GeoPoint position(const urban::SpatialIndex& index) const;
};

struct Trajectory {
    std::string user_id;
    CivilDate day;
    std::vector<TrajectoryPoint> points;  // strictly increasing timestamps
};

// category -> intent table, total via the default intent.
class IntentMap {
public:
    IntentMap() = default;
    explicit IntentMap(std::map<std::string, std::string> table,
                       std::string default_intent = "other");

    static IntentMap builtin_defaults();
    static IntentMap load(const std::string& path);  // CSV category,intent

    const std::string& intent_of(const std::string& category) const;
    // Categories mapped to the given intent (empty when none).
    std::vector<std::string> categories_for(const std::string& intent) const;
    const std::map<std::string, std::string>& table() const { return table_; }
    const std::string& default_intent() const { return default_; }
    // The full intent taxonomy: mapped intents plus the default.
    std::vector<std::string> taxonomy() const;

private:
    std::map<std::string, std::string> table_;
    std::string default_ = "other";
};

struct MobilityConfig {
    int utc_offset_s = 8 * 3600;  // Beijing local days by default
};

std::vector<UserProfile> load_profiles(const std::string& path);
void write_profiles(const std::string& path, const std::vector<UserProfile>& profiles);

struct TrajectoryLoadResult {
    std::vector<Trajectory> trajectories;  // sorted by (user, day)
    long dropped_unresolvable = 0;
    long duplicate_timestamps = 0;
};

TrajectoryLoadResult load_trajectories(const std::string& path, const urban::SpatialIndex& index,
                                       const IntentMap& intents,
                                       const MobilityConfig& cfg = {});
void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories,
                        const MobilityConfig& cfg = {});

// Zero-order hold onto a uniform grid: one point per slot in [first, last],
// each carrying the most recent observed point at or before the slot time.
Trajectory align_to_time_grid(const Trajectory& traj, int interval_s);

}  // namespace cams::mobility
