#include <cmath>

#include "doctest.h"
#include "mlehr/error.hpp"
#include "mlehr/text/linearize.hpp"
#include "mlehr/util/rng.hpp"

using namespace mlehr;
using namespace mlehr::text;
using V = std::vector<std::string>;

TEST_CASE("digit place examples") {
    CHECK(digit_place_encode(98.6) == V{"9@1", "8@0", "6@-1"});
    CHECK(digit_place_encode(0) == V{"0@0"});
    CHECK(digit_place_encode(-1.5) == V{"NEG", "1@0", "5@-1"});
    CHECK(digit_place_encode(139) == V{"1@2", "3@1", "9@0"});
    CHECK(digit_place_encode(0.05) == V{"0@0", "0@-1", "5@-2"});
    CHECK(digit_place_encode(-0.0) == V{"0@0"});
    CHECK(digit_place_encode(-0.00001) == V{"0@0"});
    CHECK(digit_place_encode(1.23456) == V{"1@0", "2@-1", "3@-2", "4@-3", "6@-4"});
    CHECK(digit_place_encode(2.5) == V{"2@0", "5@-1"});
    CHECK_THROWS_AS(digit_place_encode(NAN), Error);
    CHECK_THROWS_AS(digit_place_encode(-INFINITY), Error);
}

TEST_CASE("digit place rounding is half to even on exact halves") {
    // 0.00125 and 0.00375 are not exact in binary; 2^-5 multiples are.
    CHECK(digit_place_encode(0.03125) == V{"0@0", "0@-1", "3@-2", "1@-3", "2@-4"});
    CHECK(digit_place_encode(0.09375) == V{"0@0", "0@-1", "9@-2", "3@-3", "8@-4"});
}

TEST_CASE("digit place decode recovers four decimals") {
    util::Rng rng(1);
    for (int i = 0; i < 200000; ++i) {
        double x = rng.uniform(-1e6, 1e6);
        if (i % 3 == 0) x = std::round(x * 100) / 100;
        if (i % 5 == 0) x /= 1e4;
        double back = digit_place_decode(digit_place_encode(x));
        REQUIRE(std::fabs(back - x) <= 5e-5 + 1e-9 * std::fabs(x));
    }
    for (double x = -3; x <= 3; x += 0.0001) {
        REQUIRE(std::fabs(digit_place_decode(digit_place_encode(x)) - x) <= 5.1e-5);
    }
}

TEST_CASE("digit place tokens are recognised") {
    CHECK(is_digit_place_token("3@1"));
    CHECK(is_digit_place_token("0@-4"));
    CHECK_FALSE(is_digit_place_token("@1"));
    CHECK_FALSE(is_digit_place_token("a@1"));
    CHECK_FALSE(is_digit_place_token("3@"));
    CHECK(is_protected_token("|"));
    CHECK(is_protected_token("NEG"));
    CHECK_FALSE(is_protected_token("neg"));
}

TEST_CASE("linearize examples") {
    MedicalEvent lab{"lab", "lab", 10, {{"item", std::string("Natrium")}, {"value", 139.0}, {"unit", std::string("mmol/l")}}};
    CHECK(linearize_event(lab).text == "lab | item natrium | value 1@2 3@1 9@0 | unit mmol/l");
    MedicalEvent med{"med", "med", 10, {{"drug", std::string("Furosemid")}, {"dose", 40.0}, {"route", std::string("iv")}}};
    CHECK(linearize_event(med).text == "med | drug furosemid | dose 4@1 0@0 | route iv");
    CHECK(linearize_event(med).text == linearize_event(med).text);
    MedicalEvent empty{"lab", "lab", 0, {}};
    CHECK_THROWS_WITH_AS(linearize_event(empty), "EmptyEvent: lab", Error);
    MedicalEvent spaced{"Vital Sign", "v", 0, {{"Item  Name", std::string("Heart\tRate ")}}};
    CHECK(linearize_event(spaced).text == "vital sign | item name heart rate");
}

namespace {

std::vector<ICUStay> identifier_fixture() {
    std::vector<ICUStay> stays(1);
    for (int i = 0; i < 6; ++i) {
        stays[0].events.push_back(MedicalEvent{"vital",
                                               "chart",
                                               double(i),
                                               {{"row_id", double(i + 1)},
                                                {"hadm_id", double(77)},
                                                {"heartrate", double(80 + (i % 2))},
                                                {"label", std::string("hr")}}});
    }
    return stays;
}

}  // namespace

TEST_CASE("identifier columns are detected and dropped") {
    auto stays = identifier_fixture();
    core::SiteManifest m;
    m.tables.push_back(core::EventTableSpec{"chart", "chart.csv", "vital", "t", "p", "s", {"hadm_id"}, {}});
    auto cols = identifier_columns(stays, m);
    CHECK(cols.count({"chart", "row_id"}) == 1);
    CHECK(cols.count({"chart", "heartrate"}) == 0);
    CHECK(cols.count({"chart", "hadm_id"}) == 1);
    CHECK(cols.count({"chart", "label"}) == 0);
    drop_identifier_columns(stays, cols);
    CHECK(linearize_event(stays[0].events[0]).text == "vital | heartrate 8@1 0@0 | label hr");
}

TEST_CASE("corpus tsv round trip") {
    std::vector<CorpusRecord> recs = {{"s1", 12.5, "lab | item x"}, {"s2", 0, "vital | hr 8@1 0@0"}};
    CHECK(parse_corpus_tsv(corpus_tsv(recs)) == recs);
    CHECK_THROWS_AS(parse_corpus_tsv("a\tb\n"), Error);
}
