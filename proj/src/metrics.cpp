#include "camds/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "camds/image_io.hpp"  // ParseError

namespace camds {

ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels,
                          double threshold) {
    if (probs.empty()) throw std::invalid_argument("confusion: empty input");
    if (probs.size() != labels.size())
        throw std::invalid_argument("confusion: got " + std::to_string(probs.size()) +
                                    " probabilities for " + std::to_string(labels.size()) +
                                    " labels");
    ConfusionCounts c;
    for (size_t i = 0; i < probs.size(); ++i) {
        const bool predicted_abnormal = probs[i] >= threshold;
        const bool is_abnormal = labels[i] == 1;
        if (predicted_abnormal && is_abnormal)
            ++c.tp;
        else if (predicted_abnormal && !is_abnormal)
            ++c.fp;
        else if (!predicted_abnormal && is_abnormal)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

FrameMetrics metrics(const ConfusionCounts& c) {
    FrameMetrics m;
    if (c.tp + c.fn > 0)
        m.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (c.tn + c.fp > 0)
        m.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    if (c.total() > 0)
        m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (2 * c.tp + c.fp + c.fn > 0)
        m.f1 = static_cast<double>(2 * c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
    return m;
}

namespace {

double pairwise_sum(const double* v, size_t n) {
    if (n == 1) return v[0];
    if (n == 2) return v[0] + v[1];
    const size_t half = n / 2;
    return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

}  // namespace

double aggregate_patient(std::span<const double> frame_probs) {
    if (frame_probs.empty())
        throw std::invalid_argument("patient has no informative frames");
    for (double p : frame_probs)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("aggregate_patient: probability " + std::to_string(p) +
                                        " outside [0,1]");
    std::vector<double> sorted(frame_probs.begin(), frame_probs.end());
    std::sort(sorted.begin(), sorted.end());
    return pairwise_sum(sorted.data(), sorted.size()) / static_cast<double>(sorted.size());
}

PatientPrediction make_patient_prediction(std::string patient_id, std::vector<double> frame_probs,
                                          int true_label, double threshold) {
    PatientPrediction p;
    p.patient_id = std::move(patient_id);
    p.aggregated = aggregate_patient(frame_probs);
    p.frame_probs = std::move(frame_probs);
    p.predicted = p.aggregated >= threshold ? 1 : 0;
    p.true_label = true_label;
    return p;
}

std::vector<PatientFailure> patient_failures(std::span<const PatientPrediction> predictions) {
    std::vector<PatientFailure> failures;
    for (const auto& p : predictions) {
        if (p.predicted == p.true_label) continue;
        PatientFailure f;
        f.patient_id = p.patient_id;
        f.aggregated = p.aggregated;
        f.true_label = p.true_label;
        f.false_positive = p.predicted == 1;
        failures.push_back(std::move(f));
    }
    std::stable_sort(failures.begin(), failures.end(),
                     [](const PatientFailure& a, const PatientFailure& b) {
                         return std::abs(a.aggregated - 0.5) > std::abs(b.aggregated - 0.5);
                     });
    return failures;
}

RocCurve roc(std::span<const double> probs, std::span<const int> labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw std::invalid_argument("roc: inputs empty or mismatched");
    int64_t pos = 0, neg = 0;
    for (int l : labels) (l == 1 ? pos : neg) += 1;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("AUC undefined: labels contain a single class");

    // descending unique thresholds; predicting prob >= t
    std::vector<double> thresholds(probs.begin(), probs.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    // sort instances once by descending prob; sweep accumulates tp/fp
    std::vector<size_t> order(probs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return probs[a] > probs[b]; });

    RocCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    int64_t tp = 0, fp = 0;
    size_t idx = 0;
    for (double t : thresholds) {
        while (idx < order.size() && probs[order[idx]] >= t) {
            (labels[order[idx]] == 1 ? tp : fp) += 1;
            ++idx;
        }
        curve.points.push_back({t, static_cast<double>(tp) / static_cast<double>(pos),
                                static_cast<double>(fp) / static_cast<double>(neg)});
    }
    // threshold at the minimum probability already classifies everything
    // abnormal, so the (1,1) endpoint is the last point by construction
    return curve;
}

double auc(const RocCurve& curve) {
    if (curve.points.size() < 2) throw std::invalid_argument("AUC undefined: degenerate curve");
    double area = 0;
    for (size_t i = 1; i < curve.points.size(); ++i) {
        const auto& a = curve.points[i - 1];
        const auto& b = curve.points[i];
        area += (b.fpr - a.fpr) * (a.sensitivity + b.sensitivity) / 2.0;
    }
    return area;
}

OperatingPoint operating_point(const RocCurve& curve, double target_sensitivity) {
    const RocPoint* best = nullptr;
    for (const auto& p : curve.points) {
        if (p.sensitivity < target_sensitivity) continue;
        if (!best || p.fpr < best->fpr ||
            (p.fpr == best->fpr && p.sensitivity > best->sensitivity))
            best = &p;
    }
    if (!best)
        throw std::invalid_argument("operating_point: no curve point reaches sensitivity " +
                                    std::to_string(target_sensitivity));
    return {best->threshold, best->sensitivity, 1.0 - best->fpr};
}

RatingMatrix RatingMatrix::read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    std::string line;
    int lineno = 0;
    RatingMatrix m;

    auto split = [](const std::string& l) {
        std::vector<std::string> fields;
        std::string cur;
        for (char ch : l) {
            if (ch == ',') {
                fields.push_back(cur);
                cur.clear();
            } else if (ch != '\r') {
                cur.push_back(ch);
            }
        }
        fields.push_back(cur);
        return fields;
    };

    if (!std::getline(in, line)) throw ParseError(path + ":1: missing header row");
    ++lineno;
    auto header = split(line);
    if (header.size() < 2 || header[0] != "rater")
        throw ParseError(path + ":1: bad header (expected rater,<item ids...>)");
    m.items.assign(header.begin() + 1, header.end());

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != header.size())
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(header.size()) + " columns, got " +
                             std::to_string(fields.size()));
        m.raters.push_back(fields[0]);
        for (size_t i = 1; i < fields.size(); ++i)
            m.cells.push_back(fields[i].empty() ? std::nullopt
                                                : std::optional<std::string>(fields[i]));
    }
    return m;
}

AlphaResult krippendorff_alpha(const RatingMatrix& matrix) {
    const size_t n_items = matrix.items.size();
    const size_t n_raters = matrix.raters.size();
    if (matrix.cells.size() != n_items * n_raters)
        throw std::invalid_argument("krippendorff_alpha: ragged rating matrix");

    // label alphabet over pairable items only
    std::map<std::string, size_t> label_index;
    std::vector<std::vector<size_t>> pairable;  // per item, ratings as label indices
    for (size_t item = 0; item < n_items; ++item) {
        std::vector<std::string> ratings;
        for (size_t rater = 0; rater < n_raters; ++rater)
            if (matrix.at(rater, item)) ratings.push_back(*matrix.at(rater, item));
        if (ratings.size() < 2) continue;
        std::vector<size_t> idx;
        for (auto& r : ratings)
            idx.push_back(label_index.try_emplace(r, label_index.size()).first->second);
        pairable.push_back(std::move(idx));
    }
    if (pairable.empty())
        throw std::invalid_argument(
            "krippendorff_alpha: no pairable items (need an item with at least two ratings)");

    const size_t L = label_index.size();
    // coincidence matrix: each ordered pair within an item adds 1/(m_u - 1)
    std::vector<double> o(L * L, 0.0);
    for (const auto& ratings : pairable) {
        const double w = 1.0 / static_cast<double>(ratings.size() - 1);
        for (size_t i = 0; i < ratings.size(); ++i)
            for (size_t j = 0; j < ratings.size(); ++j)
                if (i != j) o[ratings[i] * L + ratings[j]] += w;
    }
    std::vector<double> n_c(L, 0.0);
    double n = 0;
    for (size_t c = 0; c < L; ++c)
        for (size_t k = 0; k < L; ++k) {
            n_c[c] += o[c * L + k];
            n += o[c * L + k];
        }

    double observed_disagreement = 0;  // sum of off-diagonal coincidences
    for (size_t c = 0; c < L; ++c)
        for (size_t k = 0; k < L; ++k)
            if (c != k) observed_disagreement += o[c * L + k];
    double expected_pairs = 0;  // sum over c != k of n_c * n_k
    for (size_t c = 0; c < L; ++c)
        for (size_t k = 0; k < L; ++k)
            if (c != k) expected_pairs += n_c[c] * n_c[k];

    AlphaResult res;
    if (expected_pairs <= 0.0) {
        res.defined = false;  // every pairable rating carries one label
        return res;
    }
    const double d_o = observed_disagreement / n;
    const double d_e = expected_pairs / (n * (n - 1.0));
    res.defined = true;
    res.value = 1.0 - d_o / d_e;
    return res;
}

std::vector<FoldReportRow> with_average_row(std::vector<FoldReportRow> rows) {
    if (rows.empty()) throw std::invalid_argument("fold report needs at least one row");
    auto avg = [&](auto getter) -> std::optional<double> {
        double sum = 0;
        int count = 0;
        for (const auto& r : rows) {
            const auto v = getter(r.m);
            if (v) {
                sum += *v;
                ++count;
            }
        }
        if (count == 0) return std::nullopt;
        return sum / count;
    };
    FoldReportRow average;
    average.name = "average";
    average.m.sensitivity = avg([](const FrameMetrics& m) { return m.sensitivity; });
    average.m.specificity = avg([](const FrameMetrics& m) { return m.specificity; });
    average.m.accuracy = avg([](const FrameMetrics& m) { return m.accuracy; });
    average.m.f1 = avg([](const FrameMetrics& m) { return m.f1; });
    rows.push_back(std::move(average));
    return rows;
}

namespace {

std::string fmt_metric(const std::optional<double>& v) {
    if (!v) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return buf;
}

}  // namespace

std::string fold_report_csv(std::span<const FoldReportRow> rows) {
    std::string out = "name,sensitivity,specificity,accuracy,f1\n";
    for (const auto& r : rows)
        out += r.name + "," + fmt_metric(r.m.sensitivity) + "," + fmt_metric(r.m.specificity) +
               "," + fmt_metric(r.m.accuracy) + "," + fmt_metric(r.m.f1) + "\n";
    return out;
}

std::string fold_report_table(std::span<const FoldReportRow> rows) {
    std::ostringstream out;
    out << "measure";
    for (const auto& r : rows) out << "\t" << r.name;
    out << "\n";
    auto line = [&](const char* name, auto getter) {
        out << name;
        for (const auto& r : rows) {
            const auto v = getter(r.m);
            out << "\t";
            if (v) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * *v);
                out << buf;
            } else {
                out << "nan";
            }
        }
        out << "\n";
    };
    line("sensitivity", [](const FrameMetrics& m) { return m.sensitivity; });
    line("specificity", [](const FrameMetrics& m) { return m.specificity; });
    line("accuracy", [](const FrameMetrics& m) { return m.accuracy; });
    line("f1", [](const FrameMetrics& m) { return m.f1; });
    return out.str();
}

}  // namespace camds
