#include "camds/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace camds {

namespace {

// PNM header token reader: skips whitespace and '#' comments, tracks offset.
struct PnmReader {
    const std::string& path;
    std::ifstream in;
    int64_t offset = 0;

    explicit PnmReader(const std::string& p) : path(p), in(p, std::ios::binary) {
        if (!in) throw ParseError(path + ": cannot open file");
    }

    int get() {
        const int c = in.get();
        if (c != EOF) ++offset;
        return c;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(path + ": malformed header at offset " + std::to_string(offset) + ": " +
                         what);
    }

    std::string token() {
        int c = get();
        while (c != EOF && (std::isspace(c) || c == '#')) {
            if (c == '#')
                while (c != EOF && c != '\n') c = get();
            c = get();
        }
        if (c == EOF) fail("unexpected end of file");
        std::string tok;
        while (c != EOF && !std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            c = get();
        }
        return tok;
    }

    int number(const std::string& what) {
        const std::string tok = token();
        try {
            size_t pos = 0;
            const int v = std::stoi(tok, &pos);
            if (pos != tok.size() || v < 0) fail(what + " must be a non-negative integer");
            return v;
        } catch (const ParseError&) {
            throw;
        } catch (...) {
            fail(what + " is not a number: '" + tok + "'");
        }
    }
};

}  // namespace

Image read_pnm(const std::string& path) {
    PnmReader r(path);
    const std::string magic = r.token();
    int channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        r.fail("expected magic P5 or P6, got '" + magic + "'");

    Image img;
    img.channels = channels;
    img.width = r.number("width");
    img.height = r.number("height");
    const int maxval = r.number("maxval");
    if (img.width < 1 || img.height < 1) r.fail("image dimensions must be positive");
    if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (expected 255)");
    // the token reader already consumed the single whitespace after maxval

    const size_t expected = static_cast<size_t>(img.width) * img.height * channels;
    img.pixels.resize(expected);
    r.in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(expected));
    const size_t got = static_cast<size_t>(r.in.gcount());
    if (got != expected)
        throw ParseError(path + ": truncated pixel data: expected " + std::to_string(expected) +
                         " bytes, got " + std::to_string(got));
    return img;
}

namespace {

void write_pnm(const Image& img, const std::string& path, int channels, const char* magic) {
    if (img.channels != channels)
        throw std::invalid_argument(std::string(magic) + " writer needs " +
                                    std::to_string(channels) + "-channel image, got " +
                                    std::to_string(img.channels));
    if (img.pixels.size() != static_cast<size_t>(img.width) * img.height * channels)
        throw std::invalid_argument("image pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << magic << "\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace

void write_pgm(const Image& img, const std::string& path) { write_pnm(img, path, 1, "P5"); }
void write_ppm(const Image& img, const std::string& path) { write_pnm(img, path, 3, "P6"); }

Tensor image_to_tensor(const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("image_to_tensor: expected 1 or 3 channels");
    const int H = img.height, W = img.width;
    std::vector<float> data(static_cast<size_t>(3) * H * W);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const uint8_t v = img.pixels[img.index(y, x, img.channels == 3 ? c : 0)];
                data[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<float>(v) / 255.0f;
            }
    return Tensor::from_data({3, H, W}, std::move(data));
}

Image tensor_to_image(const Tensor& t) {
    if (t.shape().size() != 3 || t.shape()[0] != 3)
        throw std::invalid_argument("tensor_to_image: expected [3,H,W], got " +
                                    shape_str(t.shape()));
    const int H = t.shape()[1], W = t.shape()[2];
    Image img;
    img.width = W;
    img.height = H;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(3) * H * W);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const float v = t.data()[(static_cast<size_t>(c) * H + y) * W + x];
                const float scaled = std::round(v * 255.0f);
                img.pixels[img.index(y, x, c)] =
                    static_cast<uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
            }
    return img;
}

Image resize_width(const Image& img, int target_width) {
    if (target_width < 1) throw std::invalid_argument("resize_width: target width must be >= 1");
    if (target_width == img.width) return img;
    const int target_height = std::max(
        1, static_cast<int>(std::lround(static_cast<double>(img.height) * target_width /
                                        static_cast<double>(img.width))));
    Image out;
    out.width = target_width;
    out.height = target_height;
    out.channels = img.channels;
    out.pixels.resize(static_cast<size_t>(target_width) * target_height * img.channels);

    const double sx = static_cast<double>(img.width) / target_width;
    const double sy = static_cast<double>(img.height) / target_height;
    for (int y = 0; y < target_height; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < target_width; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            for (int c = 0; c < img.channels; ++c) {
                const double top = (1 - wx) * img.pixels[img.index(y0, x0, c)] +
                                   wx * img.pixels[img.index(y0, x1, c)];
                const double bot = (1 - wx) * img.pixels[img.index(y1, x0, c)] +
                                   wx * img.pixels[img.index(y1, x1, c)];
                const double v = (1 - wy) * top + wy * bot;
                out.pixels[out.index(y, x, c)] =
                    static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
            }
        }
    }
    return out;
}

Image center_crop_square(const Image& img) {
    const int side = std::min(img.width, img.height);
    const int ox = (img.width - side) / 2;
    const int oy = (img.height - side) / 2;
    Image out;
    out.width = side;
    out.height = side;
    out.channels = img.channels;
    out.pixels.resize(static_cast<size_t>(side) * side * img.channels);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.pixels[out.index(y, x, c)] = img.pixels[img.index(oy + y, ox + x, c)];
    return out;
}

}  // namespace camds
