#include <doctest.h>

#include <random>

#include "cams/errors.hpp"
#include "cams/mobility_data.hpp"
#include "test_util.hpp"

using namespace cams;
using namespace cams::mobility;
using camstest::TempDir;
using camstest::fixture_city;
using camstest::fixture_intents;
using camstest::read_file;
using camstest::write_file;

TEST_CASE("profiles load and validate") {
    auto profiles = load_profiles(camstest::fixture_path("profiles.csv"));
    CHECK(profiles.size() == 12);
    CHECK(profiles[0].user_id == "u01");
    CHECK(*profiles[0].attribute("occupation") == "engineer");
    CHECK(profiles[0].render().find("age=20s") != std::string::npos);

    TempDir tmp("profiles");
    SUBCASE("duplicate user ids rejected") {
        write_file(tmp.path("p.csv"), "user_id,age\nu1,20s\nu1,30s\n");
        try {
            load_profiles(tmp.path("p.csv"));
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            CHECK(std::string(e.what()).find("u1") != std::string::npos);
        }
    }
    SUBCASE("unknown attribute key rejected") {
        write_file(tmp.path("p.csv"), "user_id,age,shoe_size\nu1,20s,42\n");
        try {
            load_profiles(tmp.path("p.csv"));
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            CHECK(std::string(e.what()).find("shoe_size") != std::string::npos);
        }
    }
}

TEST_CASE("trajectories load grouped and sorted") {
    auto index = fixture_city();
    auto intents = fixture_intents();
    auto loaded =
        load_trajectories(camstest::fixture_path("trajectories.csv"), index, intents, {});
    CHECK(loaded.trajectories.size() == 24);  // 12 users x 2 days
    CHECK(loaded.dropped_unresolvable == 0);

    const Trajectory* u01_d1 = nullptr;
    for (const auto& t : loaded.trajectories)
        if (t.user_id == "u01" && t.day == CivilDate{2019, 10, 1}) u01_d1 = &t;
    REQUIRE(u01_d1 != nullptr);
    CHECK(u01_d1->points.size() == 5);
    CHECK(u01_d1->points.front().poi_id == "p01");
    CHECK(u01_d1->points.front().intent == "home");
    for (size_t i = 1; i < u01_d1->points.size(); ++i)
        CHECK(u01_d1->points[i].timestamp > u01_d1->points[i - 1].timestamp);
}

TEST_CASE("loader handles disorder, bad pois, duplicates") {
    auto index = fixture_city();
    auto intents = fixture_intents();
    TempDir tmp("trajload");
    write_file(tmp.path("t.csv"),
               "user_id,timestamp_iso8601,poi_id,lat,lon,category\n"
               "u1,2019-10-01T12:00:00+08:00,p02,,,\n"
               "u1,2019-10-01T08:00:00+08:00,p01,,,\n"      // out of order
               "u1,2019-10-01T12:00:00+08:00,p03,,,\n"      // duplicate timestamp
               "u1,2019-10-01T15:00:00+08:00,ghost,,,\n"    // unresolvable, no coords
               "u1,2019-10-01T16:00:00+08:00,,39.99,116.31,Food\n");  // raw coordinates
    auto loaded = load_trajectories(tmp.path("t.csv"), index, intents, {});
    REQUIRE(loaded.trajectories.size() == 1);
    const auto& t = loaded.trajectories[0];
    CHECK(loaded.dropped_unresolvable == 1);
    CHECK(loaded.duplicate_timestamps == 1);
    REQUIRE(t.points.size() == 3);
    CHECK(t.points[0].poi_id == "p01");
    CHECK(t.points[1].poi_id == "p02");  // first of the duplicate pair wins
    CHECK(t.points[2].poi_id.empty());
    CHECK(t.points[2].coord.has_value());
    CHECK(t.points[2].intent == "dining");
}

TEST_CASE("time grid alignment holds the last seen point") {
    Trajectory t;
    t.user_id = "u";
    t.day = CivilDate{2019, 10, 1};
    auto base = day_start_epoch(t.day, 8 * 3600);
    auto mk = [&](int hhmm, const std::string& poi) {
        TrajectoryPoint pt;
        pt.timestamp = base + (hhmm / 100) * 3600 + (hhmm % 100) * 60;
        pt.poi_id = poi;
        pt.intent = "other";
        return pt;
    };

    SUBCASE("single point repeats in covered slots") {
        t.points = {mk(900, "a")};
        auto g = align_to_time_grid(t, 1800);
        REQUIRE(g.points.size() == 1);  // [first, last] collapses to one slot
        CHECK(g.points[0].poi_id == "a");
    }

    SUBCASE("two points, half hour grid") {
        t.points = {mk(900, "a"), mk(1000, "b")};
        auto g = align_to_time_grid(t, 1800);
        REQUIRE(g.points.size() == 3);  // 09:00, 09:30, 10:00
        CHECK(g.points[0].poi_id == "a");
        CHECK(g.points[1].poi_id == "a");
        CHECK(g.points[2].poi_id == "b");
        CHECK(g.points[1].timestamp == g.points[0].timestamp + 1800);
    }

    SUBCASE("random sparse day equals the step-function oracle") {
        std::mt19937_64 rng(5);
        std::uniform_int_distribution<int> minute(0, 1439);
        std::vector<int> times;
        for (int i = 0; i < 12; ++i) times.push_back(minute(rng) * 60);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
        t.points.clear();
        for (size_t i = 0; i < times.size(); ++i) {
            TrajectoryPoint pt;
            pt.timestamp = base + times[i];
            pt.poi_id = "poi" + std::to_string(i);
            t.points.push_back(pt);
        }
        int interval = 900;
        auto g = align_to_time_grid(t, interval);
        // oracle: replay the step function by scanning for the latest point
        // at or before each slot time
        std::vector<std::int64_t> expected_ts;
        for (std::int64_t ts = t.points.front().timestamp; ts <= t.points.back().timestamp;
             ts += interval)
            expected_ts.push_back(ts);
        REQUIRE(g.points.size() == expected_ts.size());
        for (size_t k = 0; k < expected_ts.size(); ++k) {
            CHECK(g.points[k].timestamp == expected_ts[k]);
            std::string want;
            for (const auto& pt : t.points)
                if (pt.timestamp <= expected_ts[k]) want = pt.poi_id;
            CHECK(g.points[k].poi_id == want);
        }
    }

    SUBCASE("rejects empty input and bad interval") {
        Trajectory empty;
        CHECK_THROWS_AS(align_to_time_grid(empty, 60), Error);
        t.points = {mk(900, "a")};
        CHECK_THROWS_AS(align_to_time_grid(t, 0), Error);
    }
}

TEST_CASE("write then load round trips byte-identically") {
    auto index = fixture_city();
    auto intents = fixture_intents();
    auto loaded =
        load_trajectories(camstest::fixture_path("trajectories.csv"), index, intents, {});

    TempDir tmp("roundtrip");
    write_trajectories(tmp.path("a.csv"), loaded.trajectories, {});
    auto reloaded = load_trajectories(tmp.path("a.csv"), index, intents, {});
    write_trajectories(tmp.path("b.csv"), reloaded.trajectories, {});
    CHECK(read_file(tmp.path("a.csv")) == read_file(tmp.path("b.csv")));
}

TEST_CASE("intent mapping") {
    auto intents = fixture_intents();
    CHECK(intents.intent_of("Food") == "dining");
    CHECK(intents.intent_of("Heliport") == "other");
    // idempotent under repeated application: applying the table to an intent
    // token falls through to the default, which is itself a fixed point
    CHECK(intents.intent_of(intents.intent_of("Food")) == "other");
    CHECK(intents.intent_of("other") == "other");
    auto tax = intents.taxonomy();
    CHECK(std::find(tax.begin(), tax.end(), "dining") != tax.end());
    CHECK(std::find(tax.begin(), tax.end(), "other") != tax.end());
    auto food_cats = intents.categories_for("dining");
    CHECK(std::find(food_cats.begin(), food_cats.end(), "Food") != food_cats.end());
}

TEST_CASE("fuzzed trajectory files satisfy the invariants") {
    auto index = fixture_city();
    auto intents = fixture_intents();
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> minute(0, 1439), poi_pick(1, 30), user_pick(1, 5),
        day_pick(1, 3);
    TempDir tmp("fuzz");
    for (int trial = 0; trial < 10; ++trial) {
        std::string csv = "user_id,timestamp_iso8601,poi_id,lat,lon,category\n";
        for (int row = 0; row < 60; ++row) {
            char line[160];
            int m = minute(rng);
            std::snprintf(line, sizeof(line), "fu%02d,2019-10-%02dT%02d:%02d:00+08:00,p%02d,,,\n",
                          user_pick(rng), day_pick(rng), m / 60, m % 60, poi_pick(rng));
            csv += line;
        }
        write_file(tmp.path("f.csv"), csv);
        auto loaded = load_trajectories(tmp.path("f.csv"), index, intents, {});
        for (const auto& t : loaded.trajectories) {
            auto start = day_start_epoch(t.day, 8 * 3600);
            for (size_t i = 0; i < t.points.size(); ++i) {
                if (i) CHECK(t.points[i].timestamp > t.points[i - 1].timestamp);
                CHECK(t.points[i].timestamp >= start);
                CHECK(t.points[i].timestamp < start + 86400);
                CHECK(!t.points[i].poi_id.empty());
            }
        }
    }
}
