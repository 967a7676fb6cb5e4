#include <doctest.h>

#include <cmath>
#include <random>

#include "cams/errors.hpp"
#include "cams/urban_space.hpp"
#include "test_util.hpp"

using namespace cams;
using namespace cams::urban;
using camstest::TempDir;
using camstest::fixture_city;
using camstest::write_file;

TEST_CASE("haversine basics") {
    CHECK(haversine_km({0, 0}, {0, 0}) == 0.0);
    // Antipodal points sit half the circumference apart.
    double half = kPi * kEarthRadiusKm;
    CHECK(std::abs(haversine_km({0, 0}, {0, 180}) - half) < 0.5);

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ulat(-89, 89), ulon(-180, 180);
    for (int i = 0; i < 100; ++i) {
        GeoPoint a{ulat(rng), ulon(rng)}, b{ulat(rng), ulon(rng)}, c{ulat(rng), ulon(rng)};
        CHECK(haversine_km(a, b) == haversine_km(b, a));
        CHECK(haversine_km(a, b) >= 0.0);
        CHECK(haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-6);
    }
    CHECK(haversine_km({39.99, 116.31}, {39.99, 116.31}) == 0.0);
}

TEST_CASE("ingest fixture city round trip") {
    auto index = fixture_city();
    CHECK(index.poi_count() == 30);
    CHECK(index.poi("p03").name == "Lotus Pavilion Restaurant");
    CHECK(index.poi("p03").region_path[0] == "A1");
    CHECK(index.poi("p03").region_path[3] == "p03");
    CHECK(index.regions_at(RegionLevel::admin).size() == 2);
    CHECK(index.regions_at(RegionLevel::street).size() == 6);
    CHECK(index.roads().edges.size() == 14);

    // Ingestion is deterministic.
    auto again = fixture_city();
    for (const auto& poi : index.pois())
        CHECK(again.hierarchical_address(poi.id) == index.hierarchical_address(poi.id));
}

TEST_CASE("ingest rejects bad rows") {
    TempDir tmp("ingest");
    SUBCASE("latitude out of range") {
        write_file(tmp.path("pois.csv"), "id,name,category,lat,lon\nx1,Bad,Food,91.0,10.0\n");
        try {
            ingest_city(tmp.path("pois.csv"));
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            CHECK(e.line() == 2);
            CHECK(std::string(e.what()).find("x1") != std::string::npos);
        }
    }
    SUBCASE("duplicate poi id") {
        write_file(tmp.path("pois.csv"),
                   "id,name,category,lat,lon\nx1,A,Food,1,1\nx1,B,Food,2,2\n");
        CHECK_THROWS_AS(ingest_city(tmp.path("pois.csv")), IngestError);
    }
    SUBCASE("dangling region reference lists poi ids") {
        write_file(tmp.path("pois.csv"),
                   "id,name,category,lat,lon,admin,subdistrict,street\n"
                   "x1,A,Food,1,1,A9,S9,T9\n");
        write_file(tmp.path("regions.csv"), "id,name,level,parent_id\nA1,North,admin,\n");
        try {
            ingest_city(tmp.path("pois.csv"), tmp.path("regions.csv"));
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            CHECK(std::string(e.what()).find("x1") != std::string::npos);
        }
    }
    SUBCASE("zero length road segment") {
        write_file(tmp.path("pois.csv"), "id,name,category,lat,lon\nx1,A,Food,1,1\n");
        write_file(tmp.path("roads.csv"), "road_name,lat1,lon1,lat2,lon2\nR,1,1,1,1\n");
        CHECK_THROWS_AS(ingest_city(tmp.path("pois.csv"), "", tmp.path("roads.csv")),
                        IngestError);
    }
}

TEST_CASE("pseudo hierarchy from nested grids") {
    TempDir tmp("pseudo");
    std::mt19937_64 rng(3);
    write_file(tmp.path("pois.csv"), camstest::random_poi_csv(rng, 40, {"Food", "Mall", "Park"}));
    auto index = ingest_city(tmp.path("pois.csv"));
    CHECK(index.pseudo_hierarchy());

    // Oracle: recompute each POI's cell indices by direct arithmetic from the
    // bounding box southwest corner.
    BoundingBox box;
    for (const auto& poi : index.pois()) box.expand(poi.point());
    const double cell_sizes[3] = {8.0, 2.0, 0.5};
    const char* prefixes[3] = {"cell8km_", "cell2km_", "cell500m_"};
    for (const auto& poi : index.pois()) {
        for (int level = 0; level < 3; ++level) {
            double h = cell_sizes[level] / kKmPerDegLat;
            double w = cell_sizes[level] /
                       (kKmPerDegLat * std::max(std::cos(box.min_lat * kPi / 180.0), 0.01));
            long ix = static_cast<long>(std::floor((poi.lon - box.min_lon) / w));
            long iy = static_cast<long>(std::floor((poi.lat - box.min_lat) / h));
            std::string expected =
                std::string(prefixes[level]) + std::to_string(ix) + "_" + std::to_string(iy);
            CHECK(poi.region_path[level] == expected);
            // every region id resolves
            CHECK(index.find_region(static_cast<RegionLevel>(level), poi.region_path[level]) !=
                  nullptr);
        }
        // addresses render with the grid-cell names
        auto addr = index.hierarchical_address(poi.id);
        CHECK(addr.find("cell8km_") != std::string::npos);
    }
}

TEST_CASE("radius queries") {
    auto index = fixture_city();
    SUBCASE("a poi finds itself") {
        auto p = index.poi("p03");
        auto hits = index.pois_within_radius(p.point(), 0.001);
        bool found = false;
        for (const auto* h : hits) found = found || h->id == "p03";
        CHECK(found);
    }
    SUBCASE("city-wide radius returns everything") {
        auto hits = index.pois_within_radius({39.96, 116.39}, 100.0);
        CHECK(hits.size() == 30);
    }
    SUBCASE("category filter") {
        auto p = index.poi("p03");
        for (const auto* h : index.pois_within_radius(p.point(), 2.0, std::string("Food")))
            CHECK(h->category == "Food");
    }
}

TEST_CASE("radius query equals linear scan on random cities") {
    std::mt19937_64 rng(17);
    TempDir tmp("radius");
    write_file(tmp.path("pois.csv"),
               camstest::random_poi_csv(rng, 50, {"Food", "Mall", "Park", "Office"}));
    auto index = ingest_city(tmp.path("pois.csv"));

    std::uniform_real_distribution<double> ulat(39.8, 40.1), ulon(116.2, 116.6),
        uradius(0.05, 25.0);
    std::vector<std::string> cats = {"Food", "Mall", "Park", "Office"};
    for (int trial = 0; trial < 100; ++trial) {
        GeoPoint center{ulat(rng), ulon(rng)};
        double radius = uradius(rng);
        std::optional<std::string> category;
        if (trial % 3 == 0) category = cats[trial % cats.size()];

        auto fast = index.pois_within_radius(center, radius, category);

        // Brute-force oracle with the same ordering rule.
        struct Hit {
            const Poi* poi;
            double d;
        };
        std::vector<Hit> slow;
        for (const auto& poi : index.pois()) {
            if (category && poi.category != *category) continue;
            double d = haversine_km(center, poi.point());
            if (d <= radius) slow.push_back({&poi, d});
        }
        std::sort(slow.begin(), slow.end(), [](const Hit& a, const Hit& b) {
            if (a.d != b.d) return a.d < b.d;
            return a.poi->id < b.poi->id;
        });
        REQUIRE(fast.size() == slow.size());
        for (size_t i = 0; i < fast.size(); ++i) CHECK(fast[i]->id == slow[i].poi->id);
    }
}

TEST_CASE("hierarchical addresses") {
    auto index = fixture_city();
    CHECK(index.hierarchical_address("p03") ==
          "Haidian, Zhongguancun, Chengfu Road Area, Lotus Pavilion Restaurant");
    // two POIs on the same street share the prefix up to the street name
    auto a = index.hierarchical_address("p01");
    auto b = index.hierarchical_address("p02");
    auto prefix = a.substr(0, a.rfind(','));
    CHECK(b.substr(0, prefix.size()) == prefix);
    CHECK_THROWS_AS(index.hierarchical_address("nope"), NotFoundError);

    // toponym closure: every address component validates
    for (const auto& poi : index.pois()) {
        auto addr = index.hierarchical_address(poi.id);
        size_t start = 0;
        while (start <= addr.size()) {
            size_t comma = addr.find(", ", start);
            std::string part = addr.substr(start, comma == std::string::npos ? std::string::npos
                                                                             : comma - start);
            CHECK(index.validate_toponym(part));
            if (comma == std::string::npos) break;
            start = comma + 2;
        }
    }
}

TEST_CASE("human addresses") {
    TempDir tmp("human");
    // Junction of Rd B and Rd C at (40.0, 116.0); poi x1 sits on it, x2 is
    // ~100 m due north.
    double dlat = 0.1 / kKmPerDegLat;
    char pois[512];
    std::snprintf(pois, sizeof(pois),
                  "id,name,category,lat,lon\nx1,On Junction,Food,40.0,116.0\n"
                  "x2,North Spot,Food,%.9f,116.0\n",
                  40.0 + dlat);
    write_file(tmp.path("pois.csv"), pois);
    write_file(tmp.path("roads.csv"),
               "road_name,lat1,lon1,lat2,lon2\n"
               "Rd B,40.0,115.99,40.0,116.0\n"
               "Rd B,40.0,116.0,40.0,116.01\n"
               "Rd C,39.99,116.0,40.0,116.0\n"
               "Rd C,40.0,116.0,40.01,116.0\n");
    auto index = ingest_city(tmp.path("pois.csv"), "", tmp.path("roads.csv"));
    CHECK(index.human_address("x1") == "0 meters from the intersection of Rd B and Rd C");

    auto north = index.human_address("x2");
    int meters = 0;
    REQUIRE(std::sscanf(north.c_str(), "%d meters", &meters) == 1);
    CHECK(meters >= 99);
    CHECK(meters <= 101);

    // a single road has no two-name intersection
    TempDir tmp2("human2");
    write_file(tmp2.path("pois.csv"), "id,name,category,lat,lon\nx1,A,Food,40.0,116.0\n");
    write_file(tmp2.path("roads.csv"),
               "road_name,lat1,lon1,lat2,lon2\nLonely Rd,40.0,115.99,40.0,116.0\n");
    auto lonely = ingest_city(tmp2.path("pois.csv"), "", tmp2.path("roads.csv"));
    CHECK_THROWS_AS(lonely.human_address("x1"), UnsupportedError);
}

TEST_CASE("toponym validation") {
    auto index = fixture_city();
    CHECK(index.validate_toponym("Lotus Pavilion Restaurant"));
    CHECK(index.validate_toponym("  lotus   pavilion RESTAURANT "));
    CHECK(index.validate_toponym("Chengfu Road"));       // road name
    CHECK(index.validate_toponym("Haidian"));            // region name
    CHECK_FALSE(index.validate_toponym("Atlantis Mall"));
    CHECK(index.resolve_poi_name("blue door cafe")->id == "p14");
    CHECK(index.resolve_poi_name("Chengfu Road") == nullptr);  // road, not a poi
}

TEST_CASE("geojson ingestion") {
    TempDir tmp("geojson");
    write_file(tmp.path("pois.geojson"), R"({
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature",
         "geometry": {"type": "Point", "coordinates": [116.31, 39.98]},
         "properties": {"id": "g1", "name": "Geo Cafe", "category": "Food",
                        "admin": "A1", "subdistrict": "S1", "street": "T1",
                        "population_weight": 2.0}}
      ]})");
    write_file(tmp.path("regions.geojson"), R"({
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "geometry": {"type": "Polygon",
          "coordinates": [[[116.0, 39.9], [116.6, 39.9], [116.6, 40.1], [116.0, 40.1]]]},
         "properties": {"id": "A1", "name": "North", "level": "admin"}},
        {"type": "Feature", "geometry": null,
         "properties": {"id": "S1", "name": "Mid", "level": "subdistrict", "parent_id": "A1"}},
        {"type": "Feature", "geometry": null,
         "properties": {"id": "T1", "name": "Low", "level": "street", "parent_id": "S1"}}
      ]})");
    auto index = ingest_city(tmp.path("pois.geojson"), tmp.path("regions.geojson"));
    CHECK(index.poi("g1").name == "Geo Cafe");
    CHECK(index.poi("g1").population_weight == 2.0);
    CHECK(index.hierarchical_address("g1") == "North, Mid, Low, Geo Cafe");
    // polygon containment via bbox + ray casting
    const Region& admin = index.region(RegionLevel::admin, "A1");
    CHECK(admin.contains({39.98, 116.31}));
    CHECK_FALSE(admin.contains({41.0, 116.31}));
}
