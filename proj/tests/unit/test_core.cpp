#include <algorithm>
#include <set>

#include "doctest.h"
#include "mlehr/core/ingest.hpp"
#include "mlehr/core/manifest.hpp"
#include "mlehr/core/split.hpp"
#include "mlehr/core/store.hpp"
#include "mlehr/error.hpp"
#include "mlehr/util/rng.hpp"
#include "test_util.hpp"

using namespace mlehr;
using namespace mlehr::core;

namespace {

std::string error_kind(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind() + ":" + e.detail();
    }
    return "none";
}

const char* kStays =
    "subject,stay,intime,outtime,deathtime,age\n"
    "p1,s1,1000,4000,,50\n"
    "p2,s2,2000,9000,3000,70\n";

std::string manifest_json(const std::string& language = "nl", const std::string& lab_ts = "\"timestamp_column\": \"t\",") {
    return R"({
  "site_id": "siteA",
  "language": ")" + language + R"(",
  "stays": {"file_path": "stays.csv", "patient_column": "subject", "stay_column": "stay",
            "admit_column": "intime", "discharge_column": "outtime", "death_column": "deathtime",
            "age_column": "age"},
  "tables": [
    {"name": "lab", "file_path": "lab.csv", "event_type": "lab", )" + lab_ts + R"( "patient_column": "subject", "stay_column": "stay"},
    {"name": "vital", "file_path": "vital.csv", "event_type": "vital", "timestamp_column": "t", "patient_column": "subject", "stay_column": "stay"},
    {"name": "med", "file_path": "med.csv", "event_type": "med", "timestamp_column": "t", "patient_column": "subject", "stay_column": "stay", "excluded_columns": ["row_id"]}
  ]
})";
}

void write_site(const testutil::TempDir& dir, const std::string& manifest) {
    testutil::write_file(dir / "stays.csv", kStays);
    testutil::write_file(dir / "lab.csv",
                         "subject,stay,t,item,value\n"
                         "p1,s1,1100,natrium,139\n"
                         "p1,s1,1050,kreatinine,1.1\n"
                         "p1,s1,1200,kalium,4.1\n"
                         "p1,s1,1300,natrium,141\n"
                         "p1,s1,1030,kalium,3.9\n");
    testutil::write_file(dir / "vital.csv",
                         "subject,stay,t,name,value\n"
                         "p1,s1,1010,hartslag,80\n"
                         "p1,s1,1100,hartslag,82\n"
                         "p1,s1,1250,bloeddruk,120\n"
                         "p1,s1,1500,hartslag,90\n"
                         "p1,s1,1040,bloeddruk,110\n");
    testutil::write_file(dir / "med.csv", "row_id,subject,stay,t,drug,dose\n1,p2,s2,2100,furosemide,40\n");
    testutil::write_file(dir / "manifest.json", manifest);
}

}  // namespace

TEST_CASE("manifest parses three tables") {
    testutil::TempDir dir;
    write_site(dir, manifest_json());
    auto m = parse_manifest(dir / "manifest.json");
    CHECK(m.site_id == "siteA");
    CHECK(m.language == Language::nl);
    REQUIRE(m.tables.size() == 3);
    CHECK(m.tables[2].excluded_columns == std::vector<std::string>{"row_id"});
}

TEST_CASE("manifest rejects unknown language") {
    testutil::TempDir dir;
    write_site(dir, manifest_json("fr"));
    CHECK(error_kind([&] { parse_manifest(dir / "manifest.json"); }) == "UnknownLanguage:fr");
}

TEST_CASE("manifest missing timestamp column names the table") {
    testutil::TempDir dir;
    write_site(dir, manifest_json("nl", ""));
    CHECK(error_kind([&] { parse_manifest(dir / "manifest.json"); }) == "MissingColumn:lab");
}

TEST_CASE("manifest rejects unknown keys and duplicate tables") {
    testutil::TempDir dir;
    auto text = manifest_json();
    auto bad = text;
    bad.insert(bad.find("\"language\""), "\"colour\": 1, ");
    write_site(dir, bad);
    CHECK(error_kind([&] { parse_manifest(dir / "manifest.json"); }).rfind("UnknownKey", 0) == 0);

    auto dup = text;
    auto pos = dup.find("\"name\": \"vital\"");
    dup.replace(pos, std::string("\"name\": \"vital\"").size(), "\"name\": \"lab\"");
    write_site(dir, dup);
    CHECK(error_kind([&] { parse_manifest(dir / "manifest.json"); }) == "DuplicateTable:lab");
}

TEST_CASE("manifest header check catches absent column") {
    testutil::TempDir dir;
    write_site(dir, manifest_json());
    testutil::write_file(dir / "lab.csv", "subject,stay,time,item\np1,s1,1,x\n");
    CHECK(error_kind([&] { parse_manifest(dir / "manifest.json"); }) == "MissingColumn:lab");
}

TEST_CASE("ingest merges and sorts two tables") {
    testutil::TempDir dir;
    write_site(dir, manifest_json());
    auto data = ingest_site(parse_manifest(dir / "manifest.json"));
    REQUIRE(data.stays.size() == 2);
    const auto& s1 = data.stays[0];
    CHECK(s1.stay_id == "s1");
    REQUIRE(s1.events.size() == 10);
    CHECK(std::is_sorted(s1.events.begin(), s1.events.end(),
                         [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; }));
    CHECK(s1.events.front().timestamp == 10.0);
    // Tie at t=100 between lab and vital resolves by table name.
    CHECK(s1.events[4].source_table == "lab");
    CHECK(s1.events[5].source_table == "vital");
    CHECK(data.stays[1].death_time == 3000.0);
    CHECK(data.report.events == 11);
}

TEST_CASE("ingest drops unparseable timestamps and counts them") {
    testutil::TempDir dir;
    write_site(dir, manifest_json());
    testutil::write_file(dir / "med.csv", "row_id,subject,stay,t,drug,dose\n1,p2,s2,n/a,furosemide,40\n");
    auto data = ingest_site(parse_manifest(dir / "manifest.json"));
    CHECK(data.report.dropped_bad_timestamp == 1);
    CHECK(data.stays[1].events.empty());
}

TEST_CASE("ingest rejects events before admission") {
    testutil::TempDir dir;
    write_site(dir, manifest_json());
    testutil::write_file(dir / "med.csv", "row_id,subject,stay,t,drug,dose\n1,p2,s2,1990,furosemide,40\n");
    auto m = parse_manifest(dir / "manifest.json");
    CHECK(error_kind([&] { ingest_site(m); }).rfind("ClockSkew", 0) == 0);
    IngestOptions lenient;
    lenient.clock_skew_slack_minutes = 30;
    CHECK(ingest_site(m, lenient).stays[1].events.size() == 1);
}

TEST_CASE("ingest reports ragged csv rows") {
    testutil::TempDir dir;
    write_site(dir, manifest_json());
    auto m = parse_manifest(dir / "manifest.json");
    testutil::write_file(dir / "vital.csv", "subject,stay,t,name,value\np1,s1,1010,hartslag\n");
    CHECK(error_kind([&] { ingest_site(m); }).rfind("CsvParse", 0) == 0);
}

TEST_CASE("ingest is invariant to row permutation") {
    testutil::TempDir dir;
    write_site(dir, manifest_json());
    auto m = parse_manifest(dir / "manifest.json");
    auto base = ingest_site(m).stays;
    std::vector<std::string> rows = {"p1,s1,1100,natrium,139", "p1,s1,1100,natrium,139", "p1,s1,1100,kalium,4",
                                     "p1,s1,1050,kreatinine,1.1", "p1,s1,1100,natrium,140"};
    util::Rng rng(7);
    std::vector<ICUStay> first;
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(rows);
        std::string text = "subject,stay,t,item,value\n";
        for (const auto& r : rows) text += r + "\n";
        testutil::write_file(dir / "lab.csv", text);
        auto stays = ingest_site(m).stays;
        if (trial == 0)
            first = stays;
        else
            CHECK(stays == first);
    }
}

TEST_CASE("timestamps accept numbers and iso datetimes") {
    CHECK(parse_timestamp_minutes("12.5") == 12.5);
    CHECK(parse_timestamp_minutes("1970-01-02 00:01") == 1441.0);
    CHECK(parse_timestamp_minutes("2000-03-01T12:00:30").has_value());
    CHECK_FALSE(parse_timestamp_minutes("n/a").has_value());
    CHECK_FALSE(parse_timestamp_minutes("").has_value());
}

TEST_CASE("store round-trips losslessly") {
    testutil::TempDir dir;
    write_site(dir, manifest_json());
    auto data = ingest_site(parse_manifest(dir / "manifest.json"));
    data.stays[0].weight_kg = 81.25;
    data.stays[0].dialysis = true;
    save_store(data, dir / "out" / "siteA.store");
    auto back = load_store(dir / "out" / "siteA.store");
    CHECK(back.stays == data.stays);
    CHECK(back.manifest.site_id == "siteA");
    CHECK(back.report.events == data.report.events);
    CHECK(encode_store(back) == encode_store(data));
    auto bytes = encode_store(data);
    CHECK(error_kind([&] { decode_store(bytes.substr(0, bytes.size() - 3)); }).rfind("CorruptFile", 0) == 0);
}

TEST_CASE("split sizes follow the 8:1:1 rule") {
    auto ids = [](int n) {
        std::vector<std::string> v;
        for (int i = 0; i < n; ++i) v.push_back("p" + std::to_string(i));
        return v;
    };
    auto s10 = split_patients(ids(10), 0);
    CHECK(s10.train.size() == 8);
    CHECK(s10.valid.size() == 1);
    CHECK(s10.test.size() == 1);
    auto s1 = split_patients(ids(1), 0);
    CHECK(s1.train.size() == 1);
    CHECK(s1.valid.empty());
    CHECK(s1.test.empty());
    auto s9 = split_patients(ids(9), 0);
    CHECK(s9.train.size() == 8);
    CHECK(s9.valid.size() == 1);
    CHECK(s9.test.empty());
}

TEST_CASE("split is a deterministic exact partition") {
    std::vector<std::string> ids;
    for (int i = 0; i < 1000; ++i) ids.push_back("patient" + std::to_string(i));
    for (int n : {2, 3, 7, 19, 1000}) {
        std::vector<std::string> sub(ids.begin(), ids.begin() + n);
        auto a = split_patients(sub, 42);
        auto reversed = sub;
        std::reverse(reversed.begin(), reversed.end());
        auto b = split_patients(reversed, 42);
        CHECK(a.train == b.train);
        CHECK(a.valid == b.valid);
        CHECK(a.test == b.test);
        std::set<std::string> all;
        for (auto* part : {&a.train, &a.valid, &a.test}) all.insert(part->begin(), part->end());
        CHECK(all.size() == static_cast<size_t>(n));
        CHECK(a.train.size() + a.valid.size() + a.test.size() == static_cast<size_t>(n));
        CHECK(std::abs(static_cast<double>(a.train.size()) - 0.8 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(a.valid.size()) - 0.1 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(a.test.size()) - 0.1 * n) <= 1.0);
    }
    CHECK(split_patients(ids, 1).train != split_patients(ids, 2).train);
}

TEST_CASE("split rejects duplicates") {
    CHECK(error_kind([] { split_patients({"a", "b", "a"}, 0); }) == "DuplicatePatient:a");
}
