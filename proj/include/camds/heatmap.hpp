#pragma once

#include <string>

#include "camds/image_io.hpp"
#include "camds/model.hpp"

namespace camds {

// Nearest-neighbor upsample of a non-negative activation map to the given
// size, normalized by the map maximum into [0,255]. An all-zero map yields an
// all-zero image.
Image render_heatmap(const SpatialMap& map, int width, int height);

// 50/50 blend of the heatmap (rendered in the red channel) onto the frame.
Image render_overlay(const SpatialMap& map, const Image& frame);

struct CamExportPaths {
    std::string heatmap;            // grayscale PGM
    std::string overlay;            // PPM, empty when no frame was given
};

// Writes <prefix>.pgm (and <prefix>_overlay.ppm when a frame is supplied,
// upsampling to the frame size; otherwise to target_size).
CamExportPaths export_cam(const SpatialMap& map, const Image* frame, int target_size,
                          const std::string& prefix);

}  // namespace camds
