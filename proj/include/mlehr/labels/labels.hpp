#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlehr/core/manifest.hpp"
#include "mlehr/core/types.hpp"
#include "mlehr/core/variables.hpp"

namespace mlehr::labels {

inline constexpr int kNull = -1;

struct WindowConfig {
    double observation_hours = 12.0;
    double gap_hours = 12.0;
    double min_stay_hours = 24.0;
    double min_age_years = 18.0;

    void validate() const;
    double observation_end_minutes() const { return observation_hours * 60.0; }
    // Prediction time t0: end of the gap.
    double t0_minutes() const { return (observation_hours + gap_hours) * 60.0; }
};

WindowConfig parse_window_config(const std::string& json_text);

enum class TaskKind { binary, multiclass };
enum class TaskFamily { mortality, los, lab, aki };

struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::binary;
    TaskFamily family = TaskFamily::mortality;
    int horizon_days = 1;
    int n_classes = 2;
    std::string analyte;  // lab tasks only
};

struct AnalyteCutoffs {
    std::string unit;
    std::vector<double> cutoffs;  // strictly increasing
};

class CutoffTable {
   public:
    CutoffTable() = default;
    explicit CutoffTable(std::map<std::string, AnalyteCutoffs> analytes);

    // Left-open bins: value <= c[0] -> 0, c[0] < value <= c[1] -> 1, ...
    // Throws UnknownAnalyte / NonFinite.
    int bin(const std::string& analyte, double value) const;
    int n_bins(const std::string& analyte) const;
    const std::map<std::string, AnalyteCutoffs>& analytes() const { return analytes_; }

   private:
    std::map<std::string, AnalyteCutoffs> analytes_;
};

CutoffTable parse_cutoffs(const std::string& json_text);
CutoffTable load_cutoffs(const std::filesystem::path& path);
// The bundled assets/cutoffs.json.
const CutoffTable& default_cutoffs();

// Analytes with lab-severity tasks, in task order.
const std::vector<std::string>& lab_analytes();

// Mortality k in {1,2,3,7,14}, LOS k in {7,14}, one task per analyte and
// k in {1,2,3}, AKI k in {1,2,3}.
std::vector<TaskSpec> make_tasks(const CutoffTable& cutoffs);

// Per-stay labels aligned with a task list; kNull masks a task.
using LabelVector = std::vector<int>;

struct CohortResult {
    std::vector<ICUStay> stays;
    std::map<std::string, size_t> excluded;  // reason -> count
};

// Exclusion reasons, checked in this order: "age", "short_stay", "death_in_gap".
CohortResult build_cohort(std::vector<ICUStay> stays, const WindowConfig& w);

int label_mortality(const ICUStay& stay, int k, const WindowConfig& w);
int label_los(const ICUStay& stay, int k, const WindowConfig& w);

// Hourly urine rates in mL/kg/h over slots (t0 + 60j, t0 + 60(j+1)], j < k*24.
// Slots without any urine event are absent.
std::vector<std::optional<double>> urine_slots(const std::vector<core::Measurement>& urine_ml, double weight_kg,
                                               int k, const WindowConfig& w);

struct StayObservations {
    std::map<std::string, std::vector<core::Measurement>> analytes;  // mapped analytes only
};

StayObservations observe(const ICUStay& stay, const core::SiteManifest& manifest);

// Most recent value in (t0, t0 + k days], binned. Urine uses the latest
// occupied hourly slot. kNull when nothing is measured, or when the stay is
// dialysis-flagged for creatinine and urine.
int label_lab_task(const ICUStay& stay, const StayObservations& obs, const std::string& analyte, int k,
                   const CutoffTable& cutoffs, const WindowConfig& w);

int creatinine_stage(double baseline, double latest);
int urine_stage(const std::vector<std::optional<double>>& slots);

// max(creatinine stage, urine stage); creatinine-only when the site maps no
// urine or the stay has no weight.
int label_aki(const ICUStay& stay, const StayObservations& obs, int k, const WindowConfig& w);

LabelVector label_stay(const ICUStay& stay, const core::SiteManifest& manifest, const std::vector<TaskSpec>& tasks,
                       const CutoffTable& cutoffs, const WindowConfig& w);

struct LabeledStay {
    std::string patient_id;
    std::string stay_id;
    LabelVector labels;
};

struct LabeledCohort {
    std::vector<LabeledStay> rows;
    std::map<std::string, size_t> excluded;
};

// build_cohort followed by label_stay on every included stay.
LabeledCohort label_cohort(const std::vector<ICUStay>& stays, const core::SiteManifest& manifest,
                           const std::vector<TaskSpec>& tasks, const CutoffTable& cutoffs, const WindowConfig& w);

// labels.csv: patient_id, stay_id, then one column per task.
std::string labels_csv(const std::vector<TaskSpec>& tasks, const std::vector<LabeledStay>& rows);
std::vector<LabeledStay> parse_labels_csv(const std::string& text, const std::vector<TaskSpec>& tasks);

// label_stats.csv: task, class, count, percent; the Null class is "null".
std::string label_stats_csv(const std::vector<TaskSpec>& tasks, const std::vector<LabeledStay>& rows);

}  // namespace mlehr::labels
