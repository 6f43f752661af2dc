#include "camds/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "camds/rng.hpp"

namespace camds {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

[[noreturn]] void manifest_fail(const std::string& path, int line, const std::string& what) {
    throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<FrameRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    std::string line;
    int lineno = 0;

    if (!std::getline(in, line)) manifest_fail(path, 1, "missing header row");
    ++lineno;
    const auto header = split_csv_line(line);
    const std::vector<std::string> expected = {"patient_id", "frame_index", "path", "label",
                                               "informative"};
    if (header != expected)
        manifest_fail(path, lineno,
                      "bad header (expected patient_id,frame_index,path,label,informative)");

    std::vector<FrameRecord> records;
    std::set<std::pair<std::string, int>> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5)
            manifest_fail(path, lineno,
                          "expected 5 columns, got " + std::to_string(fields.size()));
        FrameRecord rec;
        rec.patient_id = fields[0];
        if (rec.patient_id.empty()) manifest_fail(path, lineno, "empty patient_id");
        try {
            size_t pos = 0;
            rec.frame_index = std::stoi(fields[1], &pos);
            if (pos != fields[1].size()) throw std::invalid_argument("");
        } catch (...) {
            manifest_fail(path, lineno, "bad frame_index '" + fields[1] + "'");
        }
        rec.path = fields[2];
        if (fields[3] == "normal")
            rec.label = FrameLabel::Normal;
        else if (fields[3] == "abnormal")
            rec.label = FrameLabel::Abnormal;
        else
            manifest_fail(path, lineno, "unknown label token '" + fields[3] + "'");
        if (fields[4] == "0")
            rec.informative = false;
        else if (fields[4] == "1")
            rec.informative = true;
        else
            manifest_fail(path, lineno, "informative must be 0 or 1, got '" + fields[4] + "'");
        if (!seen.insert({rec.patient_id, rec.frame_index}).second)
            manifest_fail(path, lineno,
                          "duplicate key (" + rec.patient_id + ", " +
                              std::to_string(rec.frame_index) + ")");
        records.push_back(std::move(rec));
    }
    return records;
}

std::string resolve_frame_path(const std::string& manifest_path, const std::string& frame_path) {
    const std::filesystem::path p(frame_path);
    if (p.is_absolute()) return frame_path;
    return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

std::vector<FrameRecord> load_manifest_resolved(const std::string& path) {
    auto records = load_manifest(path);
    for (auto& r : records) r.path = resolve_frame_path(path, r.path);
    return records;
}

void save_manifest(std::span<const FrameRecord> records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "patient_id,frame_index,path,label,informative\n";
    for (const auto& r : records)
        out << r.patient_id << "," << r.frame_index << "," << r.path << "," << label_name(r.label)
            << "," << (r.informative ? 1 : 0) << "\n";
    if (!out) throw std::runtime_error(path + ": write failed");
}

FilterResult filter_informative(std::span<const FrameRecord> records) {
    FilterResult res;
    std::map<std::string, int> kept_per_patient;
    for (const auto& r : records) kept_per_patient.emplace(r.patient_id, 0);
    for (const auto& r : records)
        if (r.informative) {
            res.records.push_back(r);
            kept_per_patient[r.patient_id] += 1;
        }
    for (const auto& [patient, kept] : kept_per_patient)
        if (kept == 0) res.patients_left_empty.push_back(patient);
    return res;
}

std::vector<PatientClip> group_by_patient(std::span<const FrameRecord> records) {
    std::map<std::string, PatientClip> clips;
    for (const auto& r : records) {
        auto [it, inserted] = clips.try_emplace(r.patient_id);
        if (inserted) {
            it->second.patient_id = r.patient_id;
            it->second.label = r.label;
        } else if (it->second.label != r.label) {
            throw std::invalid_argument("patient " + r.patient_id +
                                        " carries frames with conflicting labels");
        }
        it->second.frames.push_back(r);
    }
    std::vector<PatientClip> out;
    out.reserve(clips.size());
    for (auto& [id, clip] : clips) {
        std::sort(clip.frames.begin(), clip.frames.end(),
                  [](const FrameRecord& a, const FrameRecord& b) {
                      return a.frame_index < b.frame_index;
                  });
        out.push_back(std::move(clip));
    }
    return out;
}

namespace {

// floor(train*n) / floor(val*n) / remainder
void split_one(std::vector<std::string>& ids, Rng& rng, const SplitRatios& ratios,
               FoldSplit& fold) {
    rng.shuffle(ids);
    const size_t n = ids.size();
    const size_t n_train = static_cast<size_t>(std::floor(ratios.train * static_cast<double>(n)));
    const size_t n_val = static_cast<size_t>(std::floor(ratios.val * static_cast<double>(n)));
    for (size_t i = 0; i < n; ++i) {
        if (i < n_train)
            fold.train.push_back(ids[i]);
        else if (i < n_train + n_val)
            fold.val.push_back(ids[i]);
        else
            fold.test.push_back(ids[i]);
    }
}

}  // namespace

std::vector<FoldSplit> split_folds(const std::map<std::string, FrameLabel>& patient_labels, int k,
                                   const SplitRatios& ratios, uint64_t seed, bool stratify) {
    if (k < 1) throw std::invalid_argument("split_folds: k must be >= 1");
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
        throw std::invalid_argument("split_folds: ratios must sum to 1");
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0)
        throw std::invalid_argument("split_folds: ratios must be non-negative");
    const size_t n = patient_labels.size();
    if (n < static_cast<size_t>(2 * k))
        throw std::invalid_argument("split_folds: need at least " + std::to_string(2 * k) +
                                    " patients for " + std::to_string(k) + " folds, got " +
                                    std::to_string(n));

    std::vector<FoldSplit> folds;
    for (int f = 1; f <= k; ++f) {
        FoldSplit fold;
        fold.fold_index = f;
        fold.seed = seed;
        Rng rng(mix_seed(seed, rng_tag::kFoldSplit, static_cast<uint64_t>(f)));
        if (stratify) {
            std::vector<std::string> normal, abnormal;
            for (const auto& [id, label] : patient_labels)
                (label == FrameLabel::Normal ? normal : abnormal).push_back(id);
            split_one(normal, rng, ratios, fold);
            split_one(abnormal, rng, ratios, fold);
        } else {
            std::vector<std::string> ids;
            ids.reserve(n);
            for (const auto& [id, label] : patient_labels) ids.push_back(id);
            split_one(ids, rng, ratios, fold);
        }
        folds.push_back(std::move(fold));
    }
    return folds;
}

void save_folds(std::span<const FoldSplit> folds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "fold,role,patient_id\n";
    for (const auto& f : folds) {
        for (const auto& id : f.train) out << f.fold_index << ",train," << id << "\n";
        for (const auto& id : f.val) out << f.fold_index << ",val," << id << "\n";
        for (const auto& id : f.test) out << f.fold_index << ",test," << id << "\n";
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

std::vector<FoldSplit> load_folds(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line)) manifest_fail(path, 1, "missing header row");
    ++lineno;
    if (split_csv_line(line) != std::vector<std::string>{"fold", "role", "patient_id"})
        manifest_fail(path, lineno, "bad header (expected fold,role,patient_id)");

    std::map<int, FoldSplit> folds;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3)
            manifest_fail(path, lineno, "expected 3 columns, got " + std::to_string(fields.size()));
        int fold_index = 0;
        try {
            size_t pos = 0;
            fold_index = std::stoi(fields[0], &pos);
            if (pos != fields[0].size() || fold_index < 1) throw std::invalid_argument("");
        } catch (...) {
            manifest_fail(path, lineno, "bad fold index '" + fields[0] + "'");
        }
        auto& fold = folds[fold_index];
        fold.fold_index = fold_index;
        if (fields[1] == "train")
            fold.train.push_back(fields[2]);
        else if (fields[1] == "val")
            fold.val.push_back(fields[2]);
        else if (fields[1] == "test")
            fold.test.push_back(fields[2]);
        else
            manifest_fail(path, lineno, "unknown role '" + fields[1] + "'");
    }
    std::vector<FoldSplit> out;
    for (auto& [idx, fold] : folds) out.push_back(std::move(fold));
    return out;
}

}  // namespace camds
