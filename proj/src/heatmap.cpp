#include "camds/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace camds {

Image render_heatmap(const SpatialMap& map, int width, int height) {
    if (map.width < 1 || map.height < 1 ||
        map.values.size() != static_cast<size_t>(map.width) * map.height)
        throw std::invalid_argument("render_heatmap: malformed activation map");
    float maxv = 0;
    for (float v : map.values) {
        if (v < 0) throw std::invalid_argument("render_heatmap: map must be non-negative");
        maxv = std::max(maxv, v);
    }

    Image out;
    out.width = width;
    out.height = height;
    out.channels = 1;
    out.pixels.assign(static_cast<size_t>(width) * height, 0);
    if (maxv == 0) return out;

    for (int y = 0; y < height; ++y) {
        const int my = static_cast<int>(static_cast<int64_t>(y) * map.height / height);
        for (int x = 0; x < width; ++x) {
            const int mx = static_cast<int>(static_cast<int64_t>(x) * map.width / width);
            const float v = map.values[static_cast<size_t>(my) * map.width + mx];
            out.pixels[static_cast<size_t>(y) * width + x] =
                static_cast<uint8_t>(std::lround(v / maxv * 255.0f));
        }
    }
    return out;
}

Image render_overlay(const SpatialMap& map, const Image& frame) {
    if (frame.channels != 3)
        throw std::invalid_argument("render_overlay: frame must be a 3-channel image");
    const Image heat = render_heatmap(map, frame.width, frame.height);
    Image out = frame;
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const uint8_t h = heat.pixels[static_cast<size_t>(y) * frame.width + x];
            const auto blend = [&](int c, int heat_value) {
                const int v = (frame.pixels[frame.index(y, x, c)] + heat_value) / 2;
                out.pixels[out.index(y, x, c)] = static_cast<uint8_t>(v);
            };
            blend(0, h);
            blend(1, 0);
            blend(2, 0);
        }
    return out;
}

CamExportPaths export_cam(const SpatialMap& map, const Image* frame, int target_size,
                          const std::string& prefix) {
    CamExportPaths paths;
    const int w = frame ? frame->width : target_size;
    const int h = frame ? frame->height : target_size;
    paths.heatmap = prefix + ".pgm";
    write_pgm(render_heatmap(map, w, h), paths.heatmap);
    if (frame) {
        paths.overlay = prefix + "_overlay.ppm";
        write_ppm(render_overlay(map, *frame), paths.overlay);
    }
    return paths;
}

}  // namespace camds
