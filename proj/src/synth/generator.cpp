#include "mlehr/synth/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "json.hpp"
#include "mlehr/error.hpp"
#include "mlehr/util/civil.hpp"
#include "mlehr/util/csv.hpp"
#include "mlehr/util/fs.hpp"
#include "mlehr/util/hash.hpp"
#include "mlehr/util/rng.hpp"

namespace mlehr::synth {

using nlohmann::json;

const std::string& Term::in(Language lang) const {
    switch (lang) {
        case Language::nl: return nl;
        case Language::de: return de;
        default: return en;
    }
}

const std::vector<Term>& clinical_terms() {
    static const std::vector<Term> terms = {
        {"creatinine", "kreatinine", "kreatinin"},
        {"platelets", "trombocyten", "thrombozyten"},
        {"leukocytes", "leukocyten", "leukozyten"},
        {"hemoglobin", "hemoglobine", "hämoglobin"},
        {"bicarbonate", "bicarbonaat", "bikarbonat"},
        {"sodium", "natrium", "natrium"},
        {"potassium", "kalium", "kalium"},
        {"lactate", "lactaat", "laktat"},
        {"glucose", "glucose", "glukose"},
        {"pulse", "hartslag", "puls"},
        {"pressure", "bloeddruk", "blutdruck"},
        {"temperature", "temperatuur", "temperatur"},
        {"breathing", "ademhaling", "atmung"},
        {"saturation", "saturatie", "sättigung"},
        {"urine", "diurese", "diurese"},
        {"consciousness", "bewustzijn", "bewusstsein"},
        {"alert", "wakker", "wach"},
        {"confused", "verward", "verwirrt"},
        {"somnolent", "slaperig", "schläfrig"},
        {"comatose", "comateus", "komatös"},
        {"norepinephrine", "noradrenaline", "noradrenalin"},
        {"furosemide", "furosemide", "furosemid"},
        {"insulin", "insuline", "insulin"},
        {"paracetamol", "paracetamol", "paracetamol"},
        {"ceftriaxone", "ceftriaxon", "ceftriaxon"},
        {"heparin", "heparine", "heparin"},
        {"propofol", "propofol", "propofol"},
        {"units", "eenheden", "einheiten"},
    };
    return terms;
}

namespace {

enum class Kind { lab, vital, obs, urine, med };
enum Dim { kRenal = 0, kHemat = 1, kMetab = 2, kHemo = 3 };

struct Concept {
    const char* analyte;  // analyte / common variable name; "" for meds and obs
    Kind kind;
    int term;
    int decimals;
    const char* unit;  // "" = language term "units"
};

enum ConceptId {
    cCreatinine, cPlatelets, cLeukocytes, cHemoglobin, cBicarbonate, cSodium, cPotassium, cLactate, cGlucose,
    cPulse, cPressure, cTemperature, cBreathing, cSaturation, cConsciousness, cUrine,
    cNorepinephrine, cFurosemide, cInsulin, cParacetamol, cCeftriaxone, cHeparin, cPropofol, kConceptCount
};

constexpr int kUnitsTerm = 27;
constexpr double kCreatinineUmol = 88.42;

const std::array<Concept, kConceptCount>& concepts() {
    static const std::array<Concept, kConceptCount> table = {{
        {"creatinine", Kind::lab, 0, 2, "mg/dl"},
        {"platelets", Kind::lab, 1, 0, "10^9/l"},
        {"wbc", Kind::lab, 2, 1, "10^9/l"},
        {"hemoglobin", Kind::lab, 3, 1, "g/dl"},
        {"bicarbonate", Kind::lab, 4, 0, "mmol/l"},
        {"sodium", Kind::lab, 5, 0, "mmol/l"},
        {"potassium", Kind::lab, 6, 1, "mmol/l"},
        {"lactate", Kind::lab, 7, 1, "mmol/l"},
        {"glucose", Kind::lab, 8, 1, "mmol/l"},
        {"pulse", Kind::vital, 9, 0, "bpm"},
        {"pressure", Kind::vital, 10, 0, "mmhg"},
        {"temperature", Kind::vital, 11, 1, "degc"},
        {"breathing", Kind::vital, 12, 0, "/min"},
        {"saturation", Kind::vital, 13, 0, "%"},
        {"", Kind::obs, 15, 0, ""},
        {"urine", Kind::urine, 14, 0, "ml"},
        {"", Kind::med, 20, 2, "ug/kg/min"},
        {"", Kind::med, 21, 0, "mg"},
        {"", Kind::med, 22, 0, ""},
        {"", Kind::med, 23, 0, "mg"},
        {"", Kind::med, 24, 0, "g"},
        {"", Kind::med, 25, 0, ""},
        {"", Kind::med, 26, 0, "mg"},
    }};
    return table;
}

const char* kRoutes[] = {"iv", "po", "sc"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Latent {
    std::vector<double> z, obs, fut;
    int dims = 4;
    double at(const std::vector<double>& v, int d) const { return v[static_cast<size_t>(d % dims)]; }
};

double mortality_severity(const Latent& l, const std::vector<double>& v) {
    return (0.6 * l.at(v, kHemo) + 0.5 * l.at(v, kRenal) + 0.4 * l.at(v, kMetab) + 0.3 * l.at(v, kHemat)) / 0.9274;
}

double los_severity(const Latent& l, const std::vector<double>& v) {
    return (0.5 * l.at(v, kMetab) + 0.5 * l.at(v, kHemat) + 0.4 * l.at(v, kHemo)) / 0.8124;
}

constexpr double kMortalitySlope = 2.4;
constexpr double kLosSlope = 0.55;
constexpr double kDeathShape = 1.3;

double los_sigma(double s) { return 0.35 + 0.5 * (1.0 - s); }

struct RawEvent {
    int cid;
    long long minute;  // since admission
    double value = 0.0;
    int value_term = -1;
    int route = -1;
};

enum class StayType { normal, minor, short_stay, gap_death };

struct StayRecord {
    std::string patient_id, stay_id;
    StayType type = StayType::normal;
    int age = 0;
    double weight = 70;
    bool dialysis = false;
    long long admit = 0, discharge = 0;
    std::optional<long long> death;
    Latent latent;
    std::vector<RawEvent> events;
};

double round_to(double v, int decimals) {
    double f = std::pow(10.0, decimals);
    return std::round(v * f) / f;
}

// Canonical-unit value of a measured concept for latent vector v.
double measure(int c, const Latent& l, const std::vector<double>& v, double prog, util::Rng& rng) {
    auto z = [&](int d) { return l.at(v, d); };
    switch (c) {
        case cCreatinine: return 0.95 * std::exp(0.45 * z(kRenal) + prog + 0.04 * rng.normal());
        case cPlatelets: return std::max(5.0, 210.0 * std::exp(-0.5 * z(kHemat) + 0.05 * rng.normal()));
        case cLeukocytes: return 9.0 * std::exp(0.35 * z(kMetab) + 0.05 * rng.normal());
        case cHemoglobin: return std::max(3.0, 11.5 - 1.6 * z(kHemat) + 0.2 * rng.normal());
        case cBicarbonate: return 25.0 - 2.8 * z(kMetab) + 0.5 * rng.normal();
        case cSodium: return 139.5 + 3.8 * z(kMetab) + 0.7 * rng.normal();
        case cPotassium: return std::max(2.0, 4.2 + 0.35 * z(kRenal) + 0.1 * rng.normal());
        case cLactate: return 1.4 * std::exp(0.45 * z(kHemo) + 0.05 * rng.normal());
        case cGlucose: return std::max(2.0, 7.5 + 1.6 * z(kMetab) + 0.3 * rng.normal());
        case cPulse: return std::max(30.0, 86.0 + 13.0 * z(kHemo) + 4.0 * rng.normal());
        case cPressure: return std::max(30.0, 78.0 - 9.0 * z(kHemo) + 4.0 * rng.normal());
        case cTemperature: return 37.1 + 0.5 * z(kMetab) + 0.15 * rng.normal();
        case cBreathing: return std::max(4.0, 17.0 + 3.0 * z(kHemo) + 1.5 * rng.normal());
        case cSaturation: return std::min(100.0, 96.5 - 1.5 * z(kHemo) + 0.8 * rng.normal());
        default: return 0.0;
    }
}

// Hourly urine rate in mL/kg/h.
double urine_rate(const Latent& l, const std::vector<double>& v, double prog, util::Rng& rng) {
    return 1.2 * std::exp(-0.55 * l.at(v, kRenal) - 0.6 * prog + 0.3 * rng.normal());
}

void add_measure(StayRecord& s, int c, long long minute, const std::vector<double>& v, double prog,
                 util::Rng& rng) {
    double value = round_to(measure(c, s.latent, v, prog, rng), concepts()[c].decimals);
    s.events.push_back(RawEvent{c, minute, value});
}

void window_events(StayRecord& s, long long los, util::Rng& rng) {
    const auto& obs = s.latent.obs;
    auto in_stay = [&](long long m) { return m >= 0 && m < los && m <= 720; };
    auto jitter = [&](long long lo, long long hi) { return lo + static_cast<long long>(rng.below(hi - lo + 1)); };

    long long panel = jitter(15, 120);
    for (int c = cCreatinine; c <= cGlucose; ++c) {
        bool take = rng.bernoulli(0.9);
        long long m = panel + jitter(0, 5);
        if (take && in_stay(m)) add_measure(s, c, m, obs, 0.0, rng);
    }
    long long second = jitter(420, 700);
    for (int c : {cCreatinine, cSodium, cPotassium, cLactate, cGlucose}) {
        bool take = rng.bernoulli(0.6);
        long long m = second + jitter(0, 5);
        if (take && in_stay(m)) add_measure(s, c, m, obs, 0.0, rng);
    }
    for (int j = 0; j < 4; ++j) {
        long long base = 60 + 180 * j + jitter(0, 40) - 20;
        for (int c : {cPulse, cPressure, cSaturation}) {
            if (in_stay(base)) add_measure(s, c, base, obs, 0.0, rng);
        }
        if (j % 2 == 0) {
            for (int c : {cTemperature, cBreathing}) {
                if (in_stay(base)) add_measure(s, c, base, obs, 0.0, rng);
            }
        }
        if (j == 0 || j == 3) {
            double score = 0.5 * s.latent.at(obs, kHemo) + 0.5 * s.latent.at(obs, kMetab) + 0.3 * rng.normal();
            int term = score < 0.8 ? 16 : score < 1.6 ? 17 : score < 2.3 ? 18 : 19;
            if (in_stay(base + 2)) s.events.push_back(RawEvent{cConsciousness, base + 2, 0.0, term});
        }
    }
    for (long long m : {180, 360, 540, 720}) {
        double ml = round_to(3.0 * urine_rate(s.latent, obs, 0.0, rng) * s.weight, 0);
        if (in_stay(m)) s.events.push_back(RawEvent{cUrine, m, ml});
    }
    auto med = [&](int c, double p, double dose, int route) {
        bool given = rng.bernoulli(p);
        long long m = jitter(30, 690);
        if (given && in_stay(m)) s.events.push_back(RawEvent{c, m, round_to(dose, concepts()[c].decimals), -1, route});
    };
    const double zr = s.latent.at(obs, kRenal), zm = s.latent.at(obs, kMetab), zd = s.latent.at(obs, kHemo);
    med(cNorepinephrine, sigmoid(2.5 * (zd - 0.8)), 0.08 * std::exp(0.3 * zd), 0);
    med(cFurosemide, sigmoid(2.0 * (zr - 0.8)), zr > 1.5 ? 80 : 40, 0);
    med(cInsulin, sigmoid(2.0 * (zm - 0.5)), std::clamp(std::round(4 + 2 * zm), 1.0, 12.0), 2);
    med(cParacetamol, 0.35, 1000, 1);
    med(cCeftriaxone, 0.3, 2, 0);
    med(cHeparin, 0.5, 5000, 2);
    med(cPropofol, 0.25, 150, 0);
}

void later_events(StayRecord& s, long long los, util::Rng& rng) {
    const auto& fut = s.latent.fut;
    const double zr_true = s.latent.at(s.latent.z, kRenal);
    auto prog_at = [&](long long minute) {
        double days = std::max(0.0, (static_cast<double>(minute) - 1440.0) / 1440.0);
        return 0.35 * std::max(zr_true - 0.3, 0.0) * days;
    };
    const long long urine_end = std::min(los, 1440LL + 72 * 60);
    for (long long h = 13; h * 60 <= urine_end; ++h) {
        long long m = h * 60 - static_cast<long long>(rng.below(10));
        bool missing = rng.bernoulli(0.03);
        double ml = round_to(urine_rate(s.latent, fut, prog_at(m), rng) * s.weight, 0);
        if (!missing && m < los) s.events.push_back(RawEvent{cUrine, m, ml});
    }
    for (int d = 1; d <= 14; ++d) {
        long long start = 1440 + (d - 1) * 1440LL;
        if (start >= los) break;
        long long m = start + 60 + static_cast<long long>(rng.below(1321));
        for (int c = cCreatinine; c <= cGlucose; ++c) {
            bool take = rng.bernoulli(c == cCreatinine ? 0.85 : 0.75);
            long long mc = m + static_cast<long long>(rng.below(6));
            if (!take || mc >= los) continue;
            double prog = c == cCreatinine ? prog_at(mc) : 0.0;
            add_measure(s, c, mc, fut, prog, rng);
        }
    }
}

struct Calibration {
    double alpha = 0.0;
    double mu = 0.0;
};

double death_days(util::Rng& rng) { return 14.0 * std::pow(1.0 - rng.uniform(), kDeathShape); }

Calibration calibrate(const GeneratorConfig& cfg) {
    util::Rng rng(util::derive_seed(cfg.noise_seed, "calibration"));
    const int n = 20000;
    const double s = cfg.signal_strength;
    std::vector<double> sev_m(n), sev_l(n), xi(n);
    Latent l;
    l.dims = cfg.latent_dims;
    for (int i = 0; i < n; ++i) {
        l.z.assign(static_cast<size_t>(cfg.latent_dims), 0.0);
        for (auto& v : l.z) v = rng.normal();
        sev_m[i] = mortality_severity(l, l.z);
        sev_l[i] = los_severity(l, l.z);
        xi[i] = rng.normal();
    }
    auto p_death = [&](double alpha, int i) { return sigmoid(alpha + kMortalitySlope * sev_m[i] + 1.5 * (1 - s) * xi[i]); };
    auto bisect = [](auto f, double lo, double hi, double target) {
        for (int it = 0; it < 100; ++it) {
            double mid = 0.5 * (lo + hi);
            (f(mid) < target ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    };
    Calibration c;
    c.alpha = bisect(
        [&](double a) {
            double sum = 0;
            for (int i = 0; i < n; ++i) sum += p_death(a, i);
            return sum / n;
        },
        -20, 10, cfg.mortality_14_target);
    const double p_long_death = 1.0 - std::pow(0.5, 1.0 / kDeathShape);
    const double sigma = los_sigma(s);
    c.mu = bisect(
        [&](double mu) {
            double sum = 0;
            for (int i = 0; i < n; ++i) {
                double pd = p_death(c.alpha, i);
                double z = (std::log(7.0) - mu - kLosSlope * sev_l[i]) / sigma;
                double p_surv_long = 0.5 * std::erfc(z / std::sqrt(2.0));
                sum += pd * p_long_death + (1 - pd) * p_surv_long;
            }
            return sum / n;
        },
        -5, 5, cfg.los_7_target);
    return c;
}

StayRecord make_stay(const GeneratorConfig& cfg, const Calibration& cal, util::Rng& rng, const std::string& patient,
                     const std::string& stay_id, long long admit) {
    StayRecord s;
    s.patient_id = patient;
    s.stay_id = stay_id;
    s.admit = admit;
    const double sig = cfg.signal_strength;
    auto& l = s.latent;
    l.dims = cfg.latent_dims;
    const auto dims = static_cast<size_t>(cfg.latent_dims);
    l.z.resize(dims);
    l.obs.resize(dims);
    l.fut.resize(dims);
    for (size_t d = 0; d < dims; ++d) {
        l.z[d] = rng.normal();
        l.obs[d] = sig * l.z[d] + (1 - sig) * rng.normal();
        l.fut[d] = l.z[d] + (1 - sig) * rng.normal();
    }

    double u = rng.uniform();
    if (u < cfg.minor_rate)
        s.type = StayType::minor;
    else if (u < cfg.minor_rate + cfg.short_stay_rate)
        s.type = StayType::short_stay;
    else if (u < cfg.minor_rate + cfg.short_stay_rate + cfg.gap_death_rate)
        s.type = StayType::gap_death;

    s.age = s.type == StayType::minor ? 15 + static_cast<int>(rng.below(3))
                                      : static_cast<int>(std::clamp(std::round(62 + 15 * rng.normal()), 18.0, 95.0));
    s.weight = round_to(std::clamp(78 + 15 * rng.normal(), 40.0, 160.0), 1);
    s.dialysis = rng.bernoulli(cfg.dialysis_rate);

    // Outcome draws happen for every stay type so streams stay aligned.
    double xi = rng.normal();
    double p_die = sigmoid(cal.alpha + kMortalitySlope * mortality_severity(l, l.z) + 1.5 * (1 - sig) * xi);
    bool dies = rng.uniform() < p_die;
    double ddays = death_days(rng);
    double eta = rng.normal();
    double remaining = std::exp(cal.mu + kLosSlope * los_severity(l, l.z) + los_sigma(sig) * eta);
    double short_los = rng.uniform(6.0, 23.0);
    double gap_death_h = rng.uniform(13.0, 23.5);
    double gap_release_h = rng.uniform(1.0, 12.0);

    long long los = 0;
    switch (s.type) {
        case StayType::short_stay: los = static_cast<long long>(std::round(short_los * 60)); break;
        case StayType::gap_death: {
            long long death = static_cast<long long>(std::round(gap_death_h * 60));
            s.death = death;
            los = std::max<long long>(death, 1440) + static_cast<long long>(std::round(gap_release_h * 60));
            break;
        }
        default:
            if (dies) {
                long long d = 1440 + std::max<long long>(1, static_cast<long long>(std::round(ddays * 1440)));
                s.death = d;
                los = d;
            } else {
                los = 1440 + std::max<long long>(1, static_cast<long long>(std::round(remaining * 1440)));
            }
    }
    window_events(s, los, rng);
    later_events(s, los, rng);
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const RawEvent& a, const RawEvent& b) { return a.minute < b.minute; });
    s.discharge = admit + los;
    if (s.death) *s.death += admit;
    return s;
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string capitalize(std::string s) {
    if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
}

struct TableLayout {
    std::string name;
    std::string event_type;
    std::vector<std::string> header;
    std::string time_col, patient_col, stay_col;
};

struct SchemaLayout {
    TableLayout stays;  // header order: patient, stay, admit, discharge, death, age, weight, dialysis
    std::vector<TableLayout> tables;
    bool iso_time = false;
    bool capitalized = false;
    bool creatinine_umol = false;
    // columns used when mapping variables
    std::string code_col, name_col, value_col, unit_col, dose_col, dose_unit_col, route_col;
    int table_for(Kind k) const;
};

int SchemaLayout::table_for(Kind k) const {
    if (tables.size() == 4) {  // variant 0
        switch (k) {
            case Kind::lab: return 0;
            case Kind::vital:
            case Kind::obs: return 1;
            case Kind::med: return 2;
            case Kind::urine: return 3;
        }
    }
    if (tables.size() == 3) {  // variant 1
        if (k == Kind::obs) return 1;
        if (k == Kind::med) return 2;
        return 0;
    }
    return k == Kind::med ? 1 : 0;
}

SchemaLayout layout_for(int variant) {
    SchemaLayout s;
    if (variant == 0) {
        s.stays = {"icustays", "", {"subject_id", "stay_id", "intime", "outtime", "deathtime", "age", "weight", "rrt"}, "", "subject_id", "stay_id"};
        std::vector<std::string> meas = {"row_id", "subject_id", "stay_id", "charttime", "itemid", "label", "value", "valueuom"};
        s.tables = {{"labevents", "lab", meas, "charttime", "subject_id", "stay_id"},
                    {"chartevents", "chart", meas, "charttime", "subject_id", "stay_id"},
                    {"inputevents", "input",
                     {"row_id", "subject_id", "stay_id", "starttime", "itemid", "label", "amount", "amountuom", "route"},
                     "starttime", "subject_id", "stay_id"},
                    {"outputevents", "output", meas, "charttime", "subject_id", "stay_id"}};
        s.code_col = "itemid", s.name_col = "label", s.value_col = "value", s.unit_col = "valueuom";
        s.dose_col = "amount", s.dose_unit_col = "amountuom", s.route_col = "route";
    } else if (variant == 1) {
        s.stays = {"admissions", "", {"patientid", "admissionid", "admittedat", "dischargedat", "dateofdeath", "age", "weight", "dialysis"}, "", "patientid", "admissionid"};
        s.tables = {{"numericitems", "numeric", {"patientid", "admissionid", "itemid", "item", "value", "unit", "measuredat"}, "measuredat", "patientid", "admissionid"},
                    {"listitems", "list", {"patientid", "admissionid", "itemid", "item", "value", "measuredat"}, "measuredat", "patientid", "admissionid"},
                    {"drugitems", "drug", {"patientid", "admissionid", "itemid", "item", "dose", "doseunit", "route", "start"}, "start", "patientid", "admissionid"}};
        s.capitalized = true;
        s.creatinine_umol = true;
        s.code_col = "itemid", s.name_col = "item", s.value_col = "value", s.unit_col = "unit";
        s.dose_col = "dose", s.dose_unit_col = "doseunit", s.route_col = "route";
    } else {
        s.stays = {"general", "", {"patientid", "stayid", "admissiontime", "dischargetime", "deathtime", "age", "weight", "crrt"}, "", "patientid", "stayid"};
        s.tables = {{"observations", "observation", {"datetime", "stayid", "patientid", "variableid", "name", "value", "unit"}, "datetime", "patientid", "stayid"},
                    {"pharma", "pharma", {"givenat", "stayid", "patientid", "pharmaid", "name", "givendose", "doseunit", "route"}, "givenat", "patientid", "stayid"}};
        s.iso_time = true;
        s.creatinine_umol = true;
        s.code_col = "variableid", s.name_col = "name", s.value_col = "value", s.unit_col = "unit";
        s.dose_col = "givendose", s.dose_unit_col = "doseunit", s.route_col = "route";
    }
    return s;
}

struct SiteRender {
    const SchemaLayout& layout;
    std::array<int, kConceptCount> codes{};
    std::vector<bool> english_term;
    Language language;

    std::string term(int t) const {
        const auto& terms = clinical_terms();
        std::string w = english_term[static_cast<size_t>(t)] ? terms[static_cast<size_t>(t)].en
                                                             : terms[static_cast<size_t>(t)].in(language);
        return layout.capitalized ? capitalize(w) : w;
    }
    std::string time(long long absolute) const {
        return layout.iso_time ? util::format_iso_minutes(absolute) : std::to_string(absolute);
    }
};

}  // namespace

void GeneratorConfig::validate() const {
    if (sites.empty()) fail("InvalidConfig", "no sites");
    if (latent_dims < 1) fail("InvalidConfig", "latent_dims must be >= 1");
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) fail("InvalidConfig", "signal_strength must be in [0,1]");
    for (double r : {invalid_timestamp_rate, minor_rate, short_stay_rate, gap_death_rate, readmission_rate, dialysis_rate}) {
        if (!(r >= 0.0 && r < 1.0)) fail("InvalidConfig", "rates must be in [0,1)");
    }
    if (minor_rate + short_stay_rate + gap_death_rate >= 1.0) fail("InvalidConfig", "exclusion rates sum to >= 1");
    if (!(mortality_14_target > 0 && mortality_14_target < 1) || !(los_7_target > 0 && los_7_target < 1))
        fail("InvalidConfig", "targets must be in (0,1)");
    std::vector<std::string> ids;
    for (const auto& s : sites) {
        if (s.site_id.empty()) fail("InvalidConfig", "empty site_id");
        if (s.n_stays <= 0) fail("InvalidConfig", s.site_id + ": n_stays must be > 0");
        if (s.schema_variant < 0 || s.schema_variant > 2) fail("InvalidConfig", s.site_id + ": schema_variant must be 0, 1 or 2");
        if (s.language == Language::undetected) fail("UnknownLanguage", s.site_id);
        if (!(s.english_fraction >= 0 && s.english_fraction <= 1)) fail("InvalidConfig", s.site_id + ": english_fraction");
        if (std::find(ids.begin(), ids.end(), s.site_id) != ids.end()) fail("InvalidConfig", "duplicate site_id " + s.site_id);
        ids.push_back(s.site_id);
    }
}

GeneratorConfig parse_generator_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail("InvalidConfig", e.what());
    }
    GeneratorConfig c;
    static const std::vector<std::string> top = {"sites", "n_sites", "latent_dims", "signal_strength", "noise_seed",
                                                 "mortality_14_target", "los_7_target", "invalid_timestamp_rate",
                                                 "minor_rate", "short_stay_rate", "gap_death_rate", "readmission_rate",
                                                 "dialysis_rate"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(top.begin(), top.end(), it.key()) == top.end()) fail("UnknownKey", it.key());
    }
    try {
        c.latent_dims = j.value("latent_dims", c.latent_dims);
        c.signal_strength = j.value("signal_strength", c.signal_strength);
        c.noise_seed = j.value("noise_seed", c.noise_seed);
        c.mortality_14_target = j.value("mortality_14_target", c.mortality_14_target);
        c.los_7_target = j.value("los_7_target", c.los_7_target);
        c.invalid_timestamp_rate = j.value("invalid_timestamp_rate", c.invalid_timestamp_rate);
        c.minor_rate = j.value("minor_rate", c.minor_rate);
        c.short_stay_rate = j.value("short_stay_rate", c.short_stay_rate);
        c.gap_death_rate = j.value("gap_death_rate", c.gap_death_rate);
        c.readmission_rate = j.value("readmission_rate", c.readmission_rate);
        c.dialysis_rate = j.value("dialysis_rate", c.dialysis_rate);
        for (const auto& s : j.at("sites")) {
            for (auto it = s.begin(); it != s.end(); ++it) {
                static const std::vector<std::string> keys = {"site_id", "language", "n_stays", "schema_variant",
                                                              "vocabulary_seed", "seed", "english_fraction"};
                if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) fail("UnknownKey", "sites." + it.key());
            }
            SiteConfig sc;
            sc.site_id = s.at("site_id").get<std::string>();
            sc.language = parse_language(s.value("language", std::string("en")));
            sc.n_stays = s.value("n_stays", sc.n_stays);
            sc.schema_variant = s.value("schema_variant", sc.schema_variant);
            sc.vocabulary_seed = s.value("vocabulary_seed", sc.vocabulary_seed);
            if (s.contains("seed")) sc.seed = s["seed"].is_string() ? s["seed"].get<std::string>() : s["seed"].dump();
            sc.english_fraction = s.value("english_fraction", sc.english_fraction);
            c.sites.push_back(std::move(sc));
        }
    } catch (const json::exception& e) {
        fail("InvalidConfig", e.what());
    }
    if (j.contains("n_sites") && j["n_sites"].get<size_t>() != c.sites.size())
        fail("InvalidConfig", "n_sites does not match the number of sites");
    c.validate();
    return c;
}

GeneratedData generate(const GeneratorConfig& cfg) {
    cfg.validate();
    const auto cal = calibrate(cfg);
    GeneratedData out;
    out.truth.mortality_intercept = cal.alpha;
    out.truth.los_log_median = cal.mu;
    const auto& terms = clinical_terms();
    for (Language lang : {Language::nl, Language::de}) {
        auto& lex = out.truth.lexicon[lang];
        for (const auto& t : terms) lex[t.in(lang)] = t.en;
    }

    for (const auto& sc : cfg.sites) {
        const auto layout = layout_for(sc.schema_variant);
        SiteRender render{layout, {}, std::vector<bool>(terms.size(), false), sc.language};

        util::Rng vocab(util::derive_seed(sc.vocabulary_seed, "vocabulary"));
        std::vector<int> pool;
        for (int c = 100; c < 1000; ++c) pool.push_back(c);
        vocab.shuffle(pool);
        for (int c = 0; c < kConceptCount; ++c) render.codes[static_cast<size_t>(c)] = pool[static_cast<size_t>(c)];
        std::vector<size_t> order(terms.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        vocab.shuffle(order);
        SiteTruth truth;
        truth.site_id = sc.site_id;
        truth.language = sc.language;
        truth.schema_variant = sc.schema_variant;
        if (sc.language != Language::en) {
            auto n_en = static_cast<size_t>(std::llround(sc.english_fraction * static_cast<double>(terms.size())));
            for (size_t i = 0; i < n_en; ++i) {
                render.english_term[order[i]] = true;
                truth.english_terms.push_back(terms[order[i]].en);
            }
            std::sort(truth.english_terms.begin(), truth.english_terms.end());
        }

        const std::string seed_tag = sc.seed.empty() ? sc.site_id : sc.seed;
        const std::uint64_t site_seed = util::derive_seed(cfg.noise_seed, "site:" + seed_tag);
        util::Rng site_rng(site_seed);

        std::vector<StayRecord> stays;
        const long long epoch = util::days_from_civil(2150, 1, 1) * 1440;
        int patient_no = 0;
        while (static_cast<int>(stays.size()) < sc.n_stays) {
            char pid[32];
            std::snprintf(pid, sizeof pid, "P%06d", patient_no++);
            int n_here = (site_rng.bernoulli(cfg.readmission_rate) && static_cast<int>(stays.size()) + 2 <= sc.n_stays) ? 2 : 1;
            long long admit = epoch + static_cast<long long>(site_rng.below(5 * 365 * 1440));
            for (int k = 0; k < n_here; ++k) {
                char sid[32];
                std::snprintf(sid, sizeof sid, "S%07zu", stays.size());
                util::Rng stay_rng(util::derive_seed(site_seed, sid));
                auto rec = make_stay(cfg, cal, stay_rng, pid, sid, admit);
                admit = rec.discharge + 1440 * (2 + static_cast<long long>(site_rng.below(200)));
                stays.push_back(std::move(rec));
            }
        }

        // Render tables.
        GeneratedSite site;
        site.config = sc;
        util::Rng ts_rng(util::derive_seed(site_seed, "invalid-timestamps"));
        std::vector<std::string> table_text(layout.tables.size());
        std::vector<size_t> row_ids(layout.tables.size(), 0);
        for (size_t t = 0; t < layout.tables.size(); ++t) table_text[t] = util::csv_line(layout.tables[t].header);
        std::string stays_text = util::csv_line(layout.stays.header);

        for (const auto& s : stays) {
            std::map<std::string, std::string> srow = {
                {layout.stays.header[0], s.patient_id},
                {layout.stays.header[1], s.stay_id},
                {layout.stays.header[2], render.time(s.admit)},
                {layout.stays.header[3], render.time(s.discharge)},
                {layout.stays.header[4], s.death ? render.time(*s.death) : ""},
                {layout.stays.header[5], std::to_string(s.age)},
                {layout.stays.header[6], fixed(s.weight, 1)},
                {layout.stays.header[7], s.dialysis ? "1" : "0"}};
            std::vector<std::string> fields;
            for (const auto& h : layout.stays.header) fields.push_back(srow[h]);
            stays_text += util::csv_line(fields);

            switch (s.type) {
                case StayType::minor: ++truth.exclusions["age"]; break;
                case StayType::short_stay: ++truth.exclusions["short_stay"]; break;
                case StayType::gap_death: ++truth.exclusions["death_in_gap"]; break;
                default: break;
            }
            truth.latent[s.stay_id] = s.latent.z;

            for (const auto& e : s.events) {
                const auto& con = concepts()[static_cast<size_t>(e.cid)];
                int ti = layout.table_for(con.kind);
                const auto& tl = layout.tables[static_cast<size_t>(ti)];
                bool invalid = ts_rng.bernoulli(cfg.invalid_timestamp_rate);
                std::map<std::string, std::string> row;
                row["row_id"] = std::to_string(++row_ids[static_cast<size_t>(ti)]);
                row[tl.patient_col] = s.patient_id;
                row[tl.stay_col] = s.stay_id;
                row[tl.time_col] = invalid ? "n/a" : render.time(s.admit + e.minute);
                row[layout.code_col] = std::to_string(render.codes[static_cast<size_t>(e.cid)]);
                row[layout.name_col] = render.term(con.term);
                if (con.kind == Kind::med) {
                    row[layout.dose_col] = fixed(e.value, con.decimals);
                    row[layout.dose_unit_col] = con.unit[0] ? con.unit : render.term(kUnitsTerm);
                    row[layout.route_col] = kRoutes[e.route];
                } else if (con.kind == Kind::obs) {
                    row[layout.value_col] = render.term(e.value_term);
                } else if (e.cid == cCreatinine && layout.creatinine_umol) {
                    row[layout.value_col] = fixed(std::round(e.value * kCreatinineUmol), 0);
                    row[layout.unit_col] = "umol/l";
                } else {
                    row[layout.value_col] = fixed(e.value, con.decimals);
                    row[layout.unit_col] = con.unit;
                }
                std::vector<std::string> f;
                f.reserve(tl.header.size());
                for (const auto& h : tl.header) {
                    auto it = row.find(h);
                    f.push_back(it == row.end() ? "" : it->second);
                }
                table_text[static_cast<size_t>(ti)] += util::csv_line(f);
                if (invalid)
                    ++truth.invalid_timestamp_rows;
                else
                    ++truth.event_rows;
                ++truth.rows_per_table[tl.name];
            }
        }
        for (const char* r : {"age", "short_stay", "death_in_gap"}) truth.exclusions.emplace(r, 0);
        truth.n_stays = stays.size();

        auto& m = site.manifest;
        m.site_id = sc.site_id;
        m.language = sc.language;
        m.stays = core::StaysTableSpec{layout.stays.name + ".csv", layout.stays.header[0], layout.stays.header[1],
                                       layout.stays.header[2], layout.stays.header[3], layout.stays.header[4],
                                       layout.stays.header[5], layout.stays.header[6], layout.stays.header[7]};
        site.files[layout.stays.name + ".csv"] = std::move(stays_text);
        for (size_t t = 0; t < layout.tables.size(); ++t) {
            const auto& tl = layout.tables[t];
            m.tables.push_back(core::EventTableSpec{tl.name, tl.name + ".csv", tl.event_type, tl.time_col, tl.patient_col,
                                                    tl.stay_col, {}, {}});
            site.files[tl.name + ".csv"] = std::move(table_text[t]);
        }
        for (int c = 0; c < kConceptCount; ++c) {
            const auto& con = concepts()[static_cast<size_t>(c)];
            if (!con.analyte[0]) continue;
            core::VariableSource src;
            src.table = layout.tables[static_cast<size_t>(layout.table_for(con.kind))].name;
            src.column = layout.value_col;
            src.unit_scale = (c == cCreatinine && layout.creatinine_umol) ? 1.0 / kCreatinineUmol : 1.0;
            src.match_column = layout.code_col;
            src.match_value = std::to_string(render.codes[static_cast<size_t>(c)]);
            m.common_variable_map[con.analyte] = src;
            if (con.kind == Kind::urine || c <= cSodium) m.analyte_map[con.analyte] = src;
        }
        out.sites.push_back(std::move(site));
        out.truth.sites.push_back(std::move(truth));
    }
    return out;
}

std::string ground_truth_json(const GroundTruth& truth) {
    json j;
    j["mortality_intercept"] = truth.mortality_intercept;
    j["los_log_median"] = truth.los_log_median;
    json lex = json::object();
    for (const auto& [lang, m] : truth.lexicon) lex[std::string(to_string(lang))] = m;
    j["lexicon"] = lex;
    json sites = json::array();
    for (const auto& s : truth.sites) {
        json sj;
        sj["site_id"] = s.site_id;
        sj["language"] = std::string(to_string(s.language));
        sj["schema_variant"] = s.schema_variant;
        sj["n_stays"] = s.n_stays;
        sj["event_rows"] = s.event_rows;
        sj["invalid_timestamp_rows"] = s.invalid_timestamp_rows;
        sj["rows_per_table"] = s.rows_per_table;
        sj["exclusions"] = s.exclusions;
        sj["english_terms"] = s.english_terms;
        sj["latent"] = s.latent;
        sites.push_back(sj);
    }
    j["sites"] = sites;
    return j.dump(1);
}

std::string lexicon_tsv(const GroundTruth& truth, const std::vector<Language>& languages) {
    std::string out;
    for (Language lang : languages) {
        auto it = truth.lexicon.find(lang);
        if (it == truth.lexicon.end()) continue;
        for (const auto& [w, en] : it->second) out += std::string(to_string(lang)) + "\t" + w + "\t" + en + "\n";
    }
    return out;
}

void write_generated(const GeneratedData& data, const std::filesystem::path& out_dir) {
    util::ensure_dir(out_dir);
    for (const auto& site : data.sites) {
        auto dir = out_dir / site.config.site_id;
        for (const auto& [name, text] : site.files) util::atomic_write(dir / name, text);
        util::atomic_write(dir / "manifest.json", core::manifest_to_json(site.manifest));
    }
    util::atomic_write(out_dir / "ground_truth.json", ground_truth_json(data.truth));
    util::atomic_write(out_dir / "lexicon.tsv", lexicon_tsv(data.truth, {Language::nl, Language::de}));
}

}  // namespace mlehr::synth
