#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "baa/data.hpp"
#include "baa/errors.hpp"
#include "baa/image_io.hpp"
#include "test_support.hpp"

using namespace baa;
using baa::testing::TempDir;
using baa::testing::write_file;

namespace {

DatasetManifest manifest_of(std::size_t n, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> age(kMinBoneAge, kMaxBoneAge);
    DatasetManifest m;
    for (std::size_t i = 0; i < n; ++i)
        m.records.push_back({"r" + std::to_string(i), "unused.png", age(rng), i % 3 == 0});
    return m;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = double(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

TEST_SUITE("data") {

TEST_CASE("load_manifest reads rows in order and resolves image paths") {
    TempDir dir;
    std::filesystem::create_directories(dir / "img");
    for (auto id : {"1377", "1378"})
        write_file(dir.path() / "img" / (std::string(id) + ".png"), "x");
    write_file(dir / "m.csv", "id,boneage,male\n1377,180,False\n1378,12,True\n");

    const auto m = load_manifest(dir / "m.csv", dir / "img");
    REQUIRE(m.size() == 2);
    CHECK(m.records[0].id == "1377");
    CHECK(m.records[0].bone_age == 180);
    CHECK_FALSE(m.records[0].male);
    CHECK(m.records[1].male);
    CHECK(m.records[1].image_path == dir.path() / "img" / "1378.png");
    CHECK(m.source.find("m.csv") != std::string::npos);
}

TEST_CASE("header-only manifest is valid and empty") {
    TempDir dir;
    write_file(dir / "m.csv", "id,boneage,male\n");
    CHECK(load_manifest(dir / "m.csv", dir.path()).size() == 0);
}

TEST_CASE("column order in the header is free") {
    TempDir dir;
    write_file(dir / "m.csv", "male,id,boneage\nTrue,7,100\n");
    const auto m = load_manifest(dir / "m.csv", dir.path(), false);
    REQUIRE(m.size() == 1);
    CHECK(m.records[0].id == "7");
    CHECK(m.records[0].bone_age == 100);
}

TEST_CASE("malformed rows name their line") {
    TempDir dir;
    write_file(dir / "m.csv", "id,boneage,male\n1,10,True\n2,abc,False\n");
    try {
        load_manifest(dir / "m.csv", dir.path(), false);
        FAIL("expected MalformedRow");
    } catch (const MalformedRow& e) {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }

    write_file(dir / "m.csv", "id,boneage,male\n1,10,maybe\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv", dir.path(), false), MalformedRow);
    write_file(dir / "m.csv", "id,boneage,male\n1,0,True\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv", dir.path(), false), MalformedRow);
    write_file(dir / "m.csv", "id,boneage,male\n1,289,True\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv", dir.path(), false), MalformedRow);
    write_file(dir / "m.csv", "id,age,male\n1,20,True\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv", dir.path(), false), MalformedRow);
}

TEST_CASE("strict mode reports the missing image id") {
    TempDir dir;
    write_file(dir / "m.csv", "id,boneage,male\n42,10,True\n");
    try {
        load_manifest(dir / "m.csv", dir.path(), true);
        FAIL("expected MissingImage");
    } catch (const MissingImage& e) {
        CHECK(e.id() == "42");
    }
    CHECK(load_manifest(dir / "m.csv", dir.path(), false).size() == 1);
}

TEST_CASE("duplicate ids are rejected") {
    TempDir dir;
    write_file(dir / "m.csv", "id,boneage,male\n5,10,True\n5,11,False\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv", dir.path(), false), DuplicateId);
}

TEST_CASE("compute_stats on the hand-enumerated four-record set") {
    DatasetManifest m;
    m.records = {{"a", "", 12, true}, {"b", "", 24, true}, {"c", "", 24, false}, {"d", "", 36, false}};
    const auto s = compute_stats(m, 12);
    CHECK(s.total == 4);
    CHECK(s.male_count == 2);
    CHECK(s.female_count == 2);
    CHECK(s.age_histogram == std::map<int, std::size_t>{{12, 1}, {24, 2}, {36, 1}});
    CHECK(s.modal_bin == 24);
    CHECK(s.min_age == 12);
    CHECK(s.max_age == 36);
    CHECK(s.mean_age == doctest::Approx(24.0));
    CHECK(s.male_histogram == std::map<int, std::size_t>{{12, 1}, {24, 1}});
}

TEST_CASE("compute_stats on an empty manifest is all zero") {
    const auto s = compute_stats(DatasetManifest{}, 12);
    CHECK(s.total == 0);
    CHECK(s.age_histogram.empty());
    CHECK(to_json(s)["total"] == 0);
    CHECK_THROWS_AS(compute_stats(DatasetManifest{}, 0), InputError);
}

TEST_CASE("stats conservation over random manifests") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = manifest_of(50 + seed * 13, seed);
        const int width = 1 + int(seed % 30);
        const auto s = compute_stats(m, width);
        std::size_t mass = 0;
        for (const auto& [bin, count] : s.age_histogram) {
            CHECK(bin % width == 0);
            mass += count;
        }
        CHECK(mass == s.total);
        CHECK(s.male_count + s.female_count == s.total);
    }
}

TEST_CASE("make_splits: exact sizes, disjointness and determinism over random requests") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng() % 300;
        const auto m = manifest_of(n, trial);
        SplitSizes sizes;
        sizes.train = rng() % (n + 1);
        sizes.val = rng() % (n - sizes.train + 1);
        sizes.test = rng() % (n - sizes.train - sizes.val + 1);
        const std::uint64_t seed = rng();

        const auto a = make_splits(m, sizes, seed);
        CHECK(a.train_ids.size() == sizes.train);
        CHECK(a.val_ids.size() == sizes.val);
        CHECK(a.test_ids.size() == sizes.test);
        std::set<std::string> all(a.train_ids.begin(), a.train_ids.end());
        all.insert(a.val_ids.begin(), a.val_ids.end());
        all.insert(a.test_ids.begin(), a.test_ids.end());
        CHECK(all.size() == sizes.total());

        const auto b = make_splits(m, sizes, seed);
        CHECK(a == b);
        CHECK(to_json(a).dump() == to_json(b).dump());
    }
}

TEST_CASE("make_splits on a full-corpus-sized pool") {
    const auto m = manifest_of(12611);
    const auto split = make_splits(m, {6000, 2000, 200}, 42);
    CHECK(split.train_ids.size() == 6000);
    CHECK(split.val_ids.size() == 2000);
    CHECK(split.test_ids.size() == 200);
    CHECK(split == make_splits(m, {6000, 2000, 200}, 42));
    CHECK_FALSE(split == make_splits(m, {6000, 2000, 200}, 43));
    CHECK(split_from_json(to_json(split)) == split);
}

TEST_CASE("make_splits rejects oversized requests") {
    CHECK_THROWS_AS(make_splits(manifest_of(12), {10, 5, 1}, 0), InsufficientSamples);
}

TEST_CASE("synthetic dataset round-trips through load_manifest") {
    TempDir dir;
    const auto built = build_synthetic_dataset(dir.path(), 64, 7);
    CHECK(built.source == "synthetic:7");
    const auto loaded = load_manifest(dir / "manifest.csv", dir / "images", true);
    REQUIRE(loaded.size() == 64);
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(loaded.records[i] == built.records[i]);
}

TEST_CASE("single-record synthetic dataset") {
    TempDir dir;
    const auto m = build_synthetic_dataset(dir.path(), 1, 0);
    REQUIRE(m.size() == 1);
    CHECK(m.records[0].bone_age >= 1);
    CHECK(m.records[0].bone_age <= 288);
    CHECK_THROWS_AS(build_synthetic_dataset(dir.path(), 0, 0), InputError);
}

TEST_CASE("synthetic brightness tracks age (Pearson over emitted files)") {
    TempDir dir;
    const auto m = build_synthetic_dataset(dir.path(), 64, 7);
    std::vector<double> ages, brightness;
    for (const auto& r : m.records) {
        const auto raster = read_image(r.image_path);
        REQUIRE(raster.has_value());
        double sum = 0;
        for (auto px : raster->pixels)
            sum += px;
        ages.push_back(r.bone_age);
        brightness.push_back(sum / double(raster->pixels.size()));
    }
    CHECK(pearson(ages, brightness) > 0.99);
}

TEST_CASE("synthetic generation fails on an unwritable directory") {
    TempDir dir;
    write_file(dir / "blocker", "file, not a directory");
    CHECK_THROWS_AS(build_synthetic_dataset(dir / "blocker" / "sub", 2, 0), IoError);
}

} // TEST_SUITE
