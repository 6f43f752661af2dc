#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace camds {

// abnormal (label 1) is the positive class throughout
struct ConfusionCounts {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t tn = 0;
    int64_t fn = 0;
    int64_t total() const { return tp + fp + tn + fn; }
};

// prob >= threshold predicts abnormal; the tie at the threshold goes to the
// positive class (sensitivity bias for a detection aid).
ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels,
                          double threshold = 0.5);

// Degenerate denominators yield a disengaged optional, never 0.
struct FrameMetrics {
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> accuracy;
    std::optional<double> f1;
};
FrameMetrics metrics(const ConfusionCounts& counts);

// Mean of frame probabilities. The inputs are sorted before a pairwise sum,
// so any permutation of the same frames produces bit-identical output.
double aggregate_patient(std::span<const double> frame_probs);

struct PatientPrediction {
    std::string patient_id;
    std::vector<double> frame_probs;
    double aggregated = 0;
    int predicted = 0;
    int true_label = 0;
};
PatientPrediction make_patient_prediction(std::string patient_id,
                                          std::vector<double> frame_probs, int true_label,
                                          double threshold = 0.5);

struct PatientFailure {
    std::string patient_id;
    double aggregated = 0;
    int true_label = 0;
    bool false_positive = false;  // otherwise false negative
};
// Misclassified patients, most confidently wrong first.
std::vector<PatientFailure> patient_failures(std::span<const PatientPrediction> predictions);

struct RocPoint {
    double threshold;    // predict abnormal when prob >= threshold
    double sensitivity;  // true positive rate
    double fpr;          // 1 - specificity
};
struct RocCurve {
    std::vector<RocPoint> points;  // sorted by fpr, includes (0,0) and (1,1)
};

// Threshold sweep over the unique probabilities (ties grouped). Throws
// "AUC undefined" when only one class is present.
RocCurve roc(std::span<const double> probs, std::span<const int> labels);
double auc(const RocCurve& curve);

struct OperatingPoint {
    double threshold;
    double sensitivity;
    double specificity;
};
// Highest-specificity curve point among those with sensitivity >= target.
OperatingPoint operating_point(const RocCurve& curve, double target_sensitivity);

// raters x items grid of nominal labels; empty optional = missing rating
struct RatingMatrix {
    std::vector<std::string> raters;
    std::vector<std::string> items;
    std::vector<std::optional<std::string>> cells;  // raters * items, row-major

    const std::optional<std::string>& at(size_t rater, size_t item) const {
        return cells[rater * items.size() + item];
    }
    std::optional<std::string>& at(size_t rater, size_t item) {
        return cells[rater * items.size() + item];
    }

    // CSV with raters as rows and items as columns; header row carries item
    // ids after a leading rater column; empty cell = missing.
    static RatingMatrix read_csv(const std::string& path);
};

struct AlphaResult {
    bool defined = false;  // false when expected disagreement is zero
    double value = 0;
};

// Krippendorff's alpha for nominal data over the coincidence matrix of
// pairable values (items with at least two ratings). Throws when no item is
// pairable.
AlphaResult krippendorff_alpha(const RatingMatrix& matrix);

struct FoldReportRow {
    std::string name;  // "fold 1", ... or a model name
    FrameMetrics m;
};
// Per-fold rows plus an unweighted average row; the average of a column
// skips undefined entries.
std::vector<FoldReportRow> with_average_row(std::vector<FoldReportRow> rows);
std::string fold_report_csv(std::span<const FoldReportRow> rows);
// Measures as rows, folds as columns (the familiar results-table layout).
std::string fold_report_table(std::span<const FoldReportRow> rows);

}  // namespace camds
