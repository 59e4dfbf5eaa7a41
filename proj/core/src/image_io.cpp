#include "sanet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sanet {

namespace {

struct Netpbm {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<unsigned char> pixels;
};

std::size_t read_header_int(std::istream& is, const std::filesystem::path& path) {
    // Skip whitespace and '#' comments.
    for (;;) {
        const int ch = is.peek();
        if (ch == '#') {
            std::string line;
            std::getline(is, line);
        } else if (ch != EOF && std::isspace(ch)) {
            is.get();
        } else {
            break;
        }
    }
    std::size_t v = 0;
    if (!(is >> v)) throw std::runtime_error("malformed Netpbm header in " + path.string());
    return v;
}

Netpbm read_netpbm(const std::filesystem::path& path, const char* magic, std::size_t channels) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string m;
    is >> m;
    if (m != magic) {
        throw std::runtime_error(path.string() + ": expected " + magic + " file, found '" + m + "'");
    }
    Netpbm img;
    img.width = read_header_int(is, path);
    img.height = read_header_int(is, path);
    const std::size_t maxval = read_header_int(is, path);
    if (maxval != 255) throw std::runtime_error(path.string() + ": only maxval 255 is supported");
    is.get();  // single whitespace before the raster
    img.channels = channels;
    img.pixels.resize(img.width * img.height * channels);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw std::runtime_error(path.string() + ": truncated raster");
    return img;
}

void write_netpbm(const std::filesystem::path& path, const char* magic, std::size_t w, std::size_t h,
                  const std::vector<unsigned char>& pixels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << magic << '\n' << w << ' ' << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor4 read_ppm(const std::filesystem::path& path) {
    const Netpbm img = read_netpbm(path, "P6", 3);
    Tensor4 t({1, 3, img.height, img.width});
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                t.at(0, c, y, x) = img.pixels[(y * img.width + x) * 3 + c] / 255.0;
            }
        }
    }
    return t;
}

void write_ppm(const std::filesystem::path& path, const Tensor4& image) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw std::invalid_argument("write_ppm: expected (1, 3, H, W), got " + s.str());
    std::vector<unsigned char> px(s.h * s.w * 3);
    for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) px[(y * s.w + x) * 3 + c] = to_byte(image.at(0, c, y, x));
        }
    }
    write_netpbm(path, "P6", s.w, s.h, px);
}

LabelMap read_pgm_labels(const std::filesystem::path& path) {
    const Netpbm img = read_netpbm(path, "P5", 1);
    LabelMap labels(1, img.height, img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) labels.data[i] = img.pixels[i];
    return labels;
}

void write_pgm_labels(const std::filesystem::path& path, const LabelMap& labels) {
    if (labels.n != 1) throw std::invalid_argument("write_pgm_labels: expected a single label map");
    std::vector<unsigned char> px(labels.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        const std::int32_t v = labels.data[i];
        if (v < 0 || v > 255) throw std::invalid_argument("write_pgm_labels: label outside [0, 255]");
        px[i] = static_cast<unsigned char>(v);
    }
    write_netpbm(path, "P5", labels.w, labels.h, px);
}

void write_pgm(const std::filesystem::path& path, const Tensor4& gray) {
    const Shape& s = gray.shape();
    if (s.n != 1 || s.c != 1) throw std::invalid_argument("write_pgm: expected (1, 1, H, W), got " + s.str());
    std::vector<unsigned char> px(s.h * s.w);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(gray[i]);
    write_netpbm(path, "P5", s.w, s.h, px);
}

Tensor4 read_pgm(const std::filesystem::path& path) {
    const Netpbm img = read_netpbm(path, "P5", 1);
    Tensor4 t({1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
    return t;
}

}  // namespace sanet
