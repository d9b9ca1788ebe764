#include "mlehr/core/store.hpp"

#include "mlehr/util/binio.hpp"
#include "mlehr/util/fs.hpp"

namespace mlehr::core {

namespace {
constexpr char kMagic[] = "MLEHRSTR";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string encode_store(const SiteData& data) {
    util::BinWriter w;
    w.raw(kMagic, 8);
    w.u32(kVersion);
    w.str(manifest_to_json(data.manifest));
    const auto& r = data.report;
    w.u64(r.rows_read);
    w.u64(r.events);
    w.u64(r.dropped_bad_timestamp);
    w.u64(r.dropped_unknown_stay);
    w.u64(r.dropped_empty);
    w.u64(data.stays.size());
    for (const auto& s : data.stays) {
        w.str(s.site_id);
        w.str(s.patient_id);
        w.str(s.stay_id);
        w.f64(s.age_years);
        w.f64(s.admit_time);
        w.f64(s.discharge_time);
        w.u8(s.death_time.has_value());
        if (s.death_time) w.f64(*s.death_time);
        w.u8(s.weight_kg.has_value());
        if (s.weight_kg) w.f64(*s.weight_kg);
        w.u8(s.dialysis);
        w.u64(s.events.size());
        for (const auto& e : s.events) {
            w.str(e.event_type);
            w.str(e.source_table);
            w.f64(e.timestamp);
            w.u64(e.features.size());
            for (const auto& f : e.features) {
                w.str(f.name);
                if (f.is_number()) {
                    w.u8(1);
                    w.f64(f.number());
                } else {
                    w.u8(0);
                    w.str(f.text());
                }
            }
        }
    }
    return w.data();
}

SiteData decode_store(const std::string& bytes, const std::string& source) {
    util::BinReader r(bytes, source);
    char magic[8];
    r.raw(magic, 8);
    if (std::string(magic, 8) != std::string(kMagic, 8)) fail("CorruptFile", source + " bad magic");
    if (r.u32() != kVersion) fail("CorruptFile", source + " unsupported version");
    SiteData data;
    data.manifest = parse_manifest_text(r.str(), {}, false);
    data.report.rows_read = r.u64();
    data.report.events = r.u64();
    data.report.dropped_bad_timestamp = r.u64();
    data.report.dropped_unknown_stay = r.u64();
    data.report.dropped_empty = r.u64();
    auto n = r.u64();
    data.stays.resize(n);
    for (auto& s : data.stays) {
        s.site_id = r.str();
        s.patient_id = r.str();
        s.stay_id = r.str();
        s.age_years = r.f64();
        s.admit_time = r.f64();
        s.discharge_time = r.f64();
        if (r.u8()) s.death_time = r.f64();
        if (r.u8()) s.weight_kg = r.f64();
        s.dialysis = r.u8() != 0;
        s.events.resize(r.u64());
        for (auto& e : s.events) {
            e.event_type = r.str();
            e.source_table = r.str();
            e.timestamp = r.f64();
            e.features.resize(r.u64());
            for (auto& f : e.features) {
                f.name = r.str();
                if (r.u8()) {
                    f.value = r.f64();
                } else {
                    f.value = r.str();
                }
            }
        }
    }
    if (!r.done()) fail("CorruptFile", source + " trailing bytes");
    return data;
}

void save_store(const SiteData& data, const std::filesystem::path& path) {
    util::atomic_write(path, encode_store(data));
}

SiteData load_store(const std::filesystem::path& path) { return decode_store(util::read_text(path), path.string()); }

}  // namespace mlehr::core
