#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "camds/image_io.hpp"

namespace camds {

enum class FrameLabel { Normal = 0, Abnormal = 1 };

inline std::string label_name(FrameLabel l) {
    return l == FrameLabel::Normal ? "normal" : "abnormal";
}

struct FrameRecord {
    std::string patient_id;
    int frame_index = 0;
    std::string path;
    FrameLabel label = FrameLabel::Normal;
    bool informative = true;

    bool operator==(const FrameRecord&) const = default;
};

// Strict CSV manifest: header patient_id,frame_index,path,label,informative.
// Labels are normal/abnormal, informative is 0/1. Errors carry line numbers.
// Paths are stored verbatim; relative ones are relative to the manifest.
std::vector<FrameRecord> load_manifest(const std::string& path);
void save_manifest(std::span<const FrameRecord> records, const std::string& path);

// Joins a manifest-relative frame path onto the manifest's directory;
// absolute paths pass through.
std::string resolve_frame_path(const std::string& manifest_path, const std::string& frame_path);

// Convenience: load and resolve every record path against the manifest.
std::vector<FrameRecord> load_manifest_resolved(const std::string& path);

struct FilterResult {
    std::vector<FrameRecord> records;               // informative frames only
    std::vector<std::string> patients_left_empty;   // warning list
};
FilterResult filter_informative(std::span<const FrameRecord> records);

// Frames of one patient clip; per the collection protocol all frames share
// the clip label.
struct PatientClip {
    std::string patient_id;
    FrameLabel label = FrameLabel::Normal;
    std::vector<FrameRecord> frames;
};
std::vector<PatientClip> group_by_patient(std::span<const FrameRecord> records);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct FoldSplit {
    int fold_index = 0;  // 1-based
    uint64_t seed = 0;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

// k independent seeded shuffles of the patient list; per fold the first
// floor(train*n) patients train, the next floor(val*n) validate, the
// remainder test. With stratify, the same rule is applied per class.
std::vector<FoldSplit> split_folds(const std::map<std::string, FrameLabel>& patient_labels, int k,
                                   const SplitRatios& ratios, uint64_t seed,
                                   bool stratify = false);

// CSV fold,role,patient_id with roles train/val/test.
void save_folds(std::span<const FoldSplit> folds, const std::string& path);
std::vector<FoldSplit> load_folds(const std::string& path);

}  // namespace camds
