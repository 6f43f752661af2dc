#include "camds/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "camds/rng.hpp"

namespace fs = std::filesystem;

namespace camds {

void SyntheticSpec::validate() const {
    if (patients_per_class < 0) throw std::invalid_argument("patients_per_class must be >= 0");
    if (frames_per_patient_min < 1 || frames_per_patient_max < frames_per_patient_min)
        throw std::invalid_argument("frames per patient range is invalid");
    if (image_size < 8) throw std::invalid_argument("image_size must be >= 8");
    if (region_fraction <= 0 || region_fraction > 1)
        throw std::invalid_argument("region_fraction must be in (0,1]");
    if (tangle_density <= 0) throw std::invalid_argument("tangle_density must be > 0");
    if (strokes_per_frame < 0) throw std::invalid_argument("strokes_per_frame must be >= 0");
}

namespace {

struct Canvas {
    int size;
    std::vector<uint8_t> rgb;  // interleaved

    explicit Canvas(int s) : size(s), rgb(static_cast<size_t>(s) * s * 3, 0) {}

    void set(int y, int x, int r, int g, int b) {
        if (y < 0 || y >= size || x < 0 || x >= size) return;
        const size_t i = (static_cast<size_t>(y) * size + x) * 3;
        rgb[i] = static_cast<uint8_t>(std::clamp(r, 0, 255));
        rgb[i + 1] = static_cast<uint8_t>(std::clamp(g, 0, 255));
        rgb[i + 2] = static_cast<uint8_t>(std::clamp(b, 0, 255));
    }
};

void paint_background(Canvas& canvas, Rng& rng) {
    const int s = canvas.size;
    // low-frequency tint blobs over a tissue-pink base
    struct Blob {
        double cy, cx, radius, amp;
    };
    std::vector<Blob> blobs;
    for (int i = 0; i < 4; ++i)
        blobs.push_back({rng.next_double() * s, rng.next_double() * s,
                         s * (0.25 + 0.35 * rng.next_double()),
                         22.0 * (rng.next_double() - 0.5)});
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double tint = 0;
            for (const auto& b : blobs) {
                const double d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
                tint += b.amp * std::exp(-d2 / (2 * b.radius * b.radius));
            }
            const double noise = 6.0 * (rng.next_double() - 0.5);
            canvas.set(y, x, static_cast<int>(196 + tint + noise),
                       static_cast<int>(142 + 0.8 * tint + noise),
                       static_cast<int>(138 + 0.6 * tint + noise));
        }
}

void stamp_disk(Canvas& canvas, double cy, double cx, double radius, int r, int g, int b) {
    const int lo_y = static_cast<int>(std::floor(cy - radius));
    const int hi_y = static_cast<int>(std::ceil(cy + radius));
    const int lo_x = static_cast<int>(std::floor(cx - radius));
    const int hi_x = static_cast<int>(std::ceil(cx + radius));
    for (int y = lo_y; y <= hi_y; ++y)
        for (int x = lo_x; x <= hi_x; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= radius * radius)
                canvas.set(y, x, r, g, b);
}

struct StrokeStyle {
    double thickness;
    double curvature;   // max heading change per step, radians
    int length;
};

// Seeded random walk stamped as overlapping disks. When bounds are given the
// walk reflects off them, keeping the stroke inside the planted region.
void draw_stroke(Canvas& canvas, Rng& rng, const StrokeStyle& style, double y0, double x0,
                 double min_y, double max_y, double min_x, double max_x) {
    double y = y0, x = x0;
    double heading = rng.next_double() * 2 * std::numbers::pi;
    const int dark_r = 110 + static_cast<int>(rng.next_below(30));
    const int dark_g = 40 + static_cast<int>(rng.next_below(25));
    const int dark_b = 52 + static_cast<int>(rng.next_below(25));
    for (int step = 0; step < style.length; ++step) {
        stamp_disk(canvas, y, x, style.thickness / 2.0, dark_r, dark_g, dark_b);
        heading += style.curvature * 2.0 * (rng.next_double() - 0.5);
        y += std::sin(heading);
        x += std::cos(heading);
        if (y < min_y || y > max_y) {
            heading = -heading;
            y = std::clamp(y, min_y, max_y);
        }
        if (x < min_x || x > max_x) {
            heading = std::numbers::pi - heading;
            x = std::clamp(x, min_x, max_x);
        }
    }
}

}  // namespace

std::string mask_path_for(const std::string& frame_path) {
    const auto dot = frame_path.rfind('.');
    const std::string stem = dot == std::string::npos ? frame_path : frame_path.substr(0, dot);
    return stem + "_mask.pgm";
}

SyntheticSummary generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "frames", ec);
    if (ec) throw std::runtime_error(out_dir + ": cannot create output directory: " + ec.message());

    const int s = spec.image_size;
    std::vector<FrameRecord> records;
    SyntheticSummary summary;
    summary.num_patients = 2 * spec.patients_per_class;

    const int total_patients = 2 * spec.patients_per_class;
    for (int p = 0; p < total_patients; ++p) {
        const bool abnormal = p >= spec.patients_per_class;
        char pid[16];
        std::snprintf(pid, sizeof(pid), "p%03d", p + 1);

        Rng patient_rng(mix_seed(spec.seed, rng_tag::kSynthetic, static_cast<uint64_t>(p)));
        const int frames =
            spec.frames_per_patient_min +
            static_cast<int>(patient_rng.next_below(
                static_cast<uint64_t>(spec.frames_per_patient_max - spec.frames_per_patient_min) +
                1));

        for (int f = 0; f < frames; ++f) {
            Rng rng(mix_seed(spec.seed, rng_tag::kSynthetic,
                             0x10000ULL * static_cast<uint64_t>(p + 1) + static_cast<uint64_t>(f)));
            Canvas canvas(s);
            paint_background(canvas, rng);

            // sparse thin strokes appear in both classes
            const StrokeStyle thin{spec.normal_stroke_thickness, 0.35, s};
            for (int i = 0; i < spec.strokes_per_frame; ++i)
                draw_stroke(canvas, rng, thin, rng.next_double() * s, rng.next_double() * s, 0,
                            s - 1, 0, s - 1);

            char fname[64];
            std::snprintf(fname, sizeof(fname), "%s_f%03d.ppm", pid, f);
            // manifest paths are relative to the manifest so the corpus can move
            const std::string rel_path = (fs::path("frames") / fname).string();
            const std::string frame_path = (fs::path(out_dir) / rel_path).string();

            if (abnormal) {
                const int side = std::max(4, static_cast<int>(spec.region_fraction * s));
                const int oy = static_cast<int>(rng.next_below(static_cast<uint64_t>(s - side + 1)));
                const int ox = static_cast<int>(rng.next_below(static_cast<uint64_t>(s - side + 1)));
                const int tangled =
                    std::max(1, static_cast<int>(spec.tangle_density * side * side / 100.0));
                const StrokeStyle thick{spec.abnormal_stroke_thickness, 1.4, 2 * side};
                for (int i = 0; i < tangled; ++i)
                    draw_stroke(canvas, rng, thick, oy + rng.next_double() * side,
                                ox + rng.next_double() * side, oy, oy + side - 1, ox,
                                ox + side - 1);

                Image mask;
                mask.width = s;
                mask.height = s;
                mask.channels = 1;
                mask.pixels.assign(static_cast<size_t>(s) * s, 0);
                for (int y = oy; y < oy + side; ++y)
                    for (int x = ox; x < ox + side; ++x)
                        mask.pixels[static_cast<size_t>(y) * s + x] = 255;
                write_pgm(mask, mask_path_for(frame_path));
                summary.num_masks += 1;
            }

            Image img;
            img.width = s;
            img.height = s;
            img.channels = 3;
            img.pixels = std::move(canvas.rgb);
            write_ppm(img, frame_path);

            FrameRecord rec;
            rec.patient_id = pid;
            rec.frame_index = f;
            rec.path = rel_path;
            rec.label = abnormal ? FrameLabel::Abnormal : FrameLabel::Normal;
            rec.informative = true;
            records.push_back(std::move(rec));
        }
    }

    summary.num_frames = static_cast<int>(records.size());
    summary.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    save_manifest(records, summary.manifest_path);
    return summary;
}

}  // namespace camds
