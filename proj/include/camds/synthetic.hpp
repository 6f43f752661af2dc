#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camds/dataset.hpp"

namespace camds {

// Desk-scale stand-in for the clinical corpus. Normal frames carry sparse
// thin curvilinear strokes; abnormal frames additionally carry a planted
// square region of dense tangled thick strokes over the same background
// statistics. The planted region is recorded as a mask file next to the
// frame (<frame>_mask.pgm, 255 inside).
struct SyntheticSpec {
    int patients_per_class = 20;
    int frames_per_patient_min = 50;
    int frames_per_patient_max = 50;
    int image_size = 64;
    double normal_stroke_thickness = 1.0;
    double abnormal_stroke_thickness = 2.2;
    int strokes_per_frame = 5;          // sparse background strokes, both classes
    double tangle_density = 1.6;        // planted strokes per 100 region pixels
    double region_fraction = 0.5;       // planted square side / image side
    uint64_t seed = 0;

    void validate() const;
};

struct SyntheticSummary {
    std::string manifest_path;
    int num_patients = 0;
    int num_frames = 0;
    int num_masks = 0;
};

SyntheticSummary generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

// Mask path convention for a generated frame path.
std::string mask_path_for(const std::string& frame_path);

}  // namespace camds
