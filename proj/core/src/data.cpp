#include "sanet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sanet/image_io.hpp"
#include "sanet/rng.hpp"

namespace sanet {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "clutter", "imp_surf", "building", "low_veg", "tree", "car"};

// Mean colour per class in (NIR, R, G) order, loosely modelled on IRRG imagery.
constexpr std::array<std::array<double, 3>, kNumClasses> kClassColour = {{
    {0.42, 0.38, 0.34},
    {0.50, 0.50, 0.52},
    {0.60, 0.48, 0.47},
    {0.70, 0.46, 0.40},
    {0.76, 0.33, 0.30},
    {0.50, 0.50, 0.50},
}};

bool inside(const SceneObject& o, std::ptrdiff_t y, std::ptrdiff_t x) {
    if (y < o.top || x < o.left || y >= o.top + static_cast<std::ptrdiff_t>(o.height) ||
        x >= o.left + static_cast<std::ptrdiff_t>(o.width)) {
        return false;
    }
    if (o.shape == ObjectShape::rectangle) return true;
    const double ry = 0.5 * static_cast<double>(o.height);
    const double rx = 0.5 * static_cast<double>(o.width);
    const double dy = (static_cast<double>(y - o.top) + 0.5 - ry) / ry;
    const double dx = (static_cast<double>(x - o.left) + 0.5 - rx) / rx;
    return dy * dy + dx * dx <= 1.0;
}

// Visits the on-canvas pixels covered by o.
template <typename Fn>
void for_each_pixel(const SceneObject& o, std::size_t h, std::size_t w, Fn fn) {
    const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, o.top);
    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, o.left);
    const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h),
                                                       o.top + static_cast<std::ptrdiff_t>(o.height));
    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                       o.left + static_cast<std::ptrdiff_t>(o.width));
    for (std::ptrdiff_t y = y0; y < y1; ++y) {
        for (std::ptrdiff_t x = x0; x < x1; ++x) {
            if (inside(o, y, x)) fn(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        }
    }
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// Box of the given area and height/width ratio, or {0, 0} if it cannot fit.
std::pair<std::size_t, std::size_t> box_for(double area, double ratio) {
    const double hh = std::sqrt(area * ratio);
    const auto h = static_cast<std::size_t>(std::max(1.0, std::round(hh)));
    const auto w = static_cast<std::size_t>(std::max(1.0, std::round(area / static_cast<double>(h))));
    return {h, w};
}

SceneObject place(std::int32_t cls, ObjectShape shape, std::size_t h, std::size_t w,
                  const SceneSpec& spec, Rng& rng) {
    SceneObject o;
    o.cls = cls;
    o.shape = shape;
    o.height = h;
    o.width = w;
    o.top = rng.uniform_int(0, static_cast<std::int64_t>(spec.height - h));
    o.left = rng.uniform_int(0, static_cast<std::int64_t>(spec.width - w));
    return o;
}

}  // namespace

std::span<const std::string_view> class_names() { return kClassNames; }

void SceneSpec::validate() const {
    if (height < 8 || width < 8) throw std::invalid_argument("scene spec: canvas must be at least 8x8");
    if (!(small_max_fraction > 0.0 && small_max_fraction < medium_min_fraction &&
          medium_min_fraction <= medium_max_fraction && medium_max_fraction < large_min_fraction &&
          large_min_fraction <= large_max_fraction && large_max_fraction <= 1.0)) {
        throw std::invalid_argument("scene spec: size buckets must be ordered and non-overlapping");
    }
    if (!(medium_max_aspect >= 1.0 && medium_max_aspect < strip_min_aspect &&
          strip_min_aspect <= strip_max_aspect)) {
        throw std::invalid_argument("scene spec: strip aspect range must exceed the medium range");
    }
    if (noise_std < 0.0) throw std::invalid_argument("scene spec: noise_std must be >= 0");
}

Scene render_scene(std::size_t height, std::size_t width, std::span<const SceneObject> objects,
                   double noise_std, Rng& rng) {
    Scene scene;
    scene.image = zeros({1, 3, height, width});
    scene.labels = LabelMap(1, height, width, kClutter);
    scene.objects.assign(objects.begin(), objects.end());

    std::array<double, 3> ground{};
    for (std::size_t c = 0; c < 3; ++c) ground[c] = kClassColour[kClutter][c] + rng.normal(0.0, 0.03);
    for (std::size_t c = 0; c < 3; ++c) {
        std::fill_n(scene.image.plane(0, c), height * width, ground[c]);
    }

    for (const SceneObject& o : objects) {
        if (o.cls < 0 || o.cls >= static_cast<std::int32_t>(kNumClasses)) {
            throw std::invalid_argument("render_scene: object class out of range");
        }
        std::array<double, 3> colour{};
        for (std::size_t c = 0; c < 3; ++c) {
            colour[c] = o.cls == kCar ? rng.uniform(0.1, 0.9)
                                      : kClassColour[static_cast<std::size_t>(o.cls)][c] + rng.normal(0.0, 0.03);
        }
        for_each_pixel(o, height, width, [&](std::size_t y, std::size_t x) {
            scene.labels.at(0, y, x) = o.cls;
            for (std::size_t c = 0; c < 3; ++c) scene.image.at(0, c, y, x) = colour[c];
        });
    }

    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            // Canopy gets extra texture.
            const double sigma = scene.labels.at(0, y, x) == kTree ? 1.5 * noise_std : noise_std;
            for (std::size_t c = 0; c < 3; ++c) {
                double& v = scene.image.at(0, c, y, x);
                v = quantize(v + (sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0));
            }
        }
    }
    return scene;
}

Scene generate_scene(const SceneSpec& spec, Rng& rng) {
    spec.validate();
    const double canvas = static_cast<double>(spec.height * spec.width);
    const std::size_t max_extent = std::max(spec.height, spec.width);
    const std::size_t min_extent = std::min(spec.height, spec.width);
    std::vector<SceneObject> objects;
    std::size_t skipped = 0;
    LabelMap working(1, spec.height, spec.width, kClutter);

    auto accept = [&](const SceneObject& o) {
        for_each_pixel(o, spec.height, spec.width, [&](std::size_t y, std::size_t x) { working.at(0, y, x) = o.cls; });
        objects.push_back(o);
    };
    auto fits = [&](std::size_t h, std::size_t w) {
        return h >= 1 && w >= 1 && h <= spec.height && w <= spec.width;
    };

    for (std::size_t i = 0; i < spec.large_count; ++i) {
        const std::int32_t cls = rng.bernoulli(0.6) ? kBuilding : kLowVeg;
        bool placed = false;
        for (std::size_t t = 0; t < spec.max_retries && !placed; ++t) {
            const double area = rng.uniform(spec.large_min_fraction, spec.large_max_fraction) * canvas;
            auto [h, w] = box_for(area, rng.uniform(0.6, 1.6));
            const double frac = static_cast<double>(h * w) / canvas;
            if (!fits(h, w) || frac < spec.large_min_fraction || frac > spec.large_max_fraction) continue;
            accept(place(cls, ObjectShape::rectangle, h, w, spec, rng));
            placed = true;
        }
        if (!placed) ++skipped;
    }

    const std::size_t thin_lo = std::max<std::size_t>(2, min_extent / 50);
    const std::size_t thin_hi = std::max<std::size_t>(thin_lo, min_extent / 20);
    for (std::size_t i = 0; i < spec.strip_count; ++i) {
        const std::int32_t cls = rng.bernoulli(0.6) ? kSurface : kBuilding;
        bool placed = false;
        for (std::size_t t = 0; t < spec.max_retries && !placed; ++t) {
            const auto thickness = static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(thin_lo), static_cast<std::int64_t>(thin_hi)));
            const double aspect = rng.uniform(spec.strip_min_aspect, spec.strip_max_aspect);
            auto length = static_cast<std::size_t>(std::ceil(static_cast<double>(thickness) * aspect));
            const bool vertical = rng.bernoulli(0.5);
            length = std::min(length, vertical ? spec.height : spec.width);
            if (static_cast<double>(length) < spec.strip_min_aspect * static_cast<double>(thickness)) continue;
            const std::size_t h = vertical ? length : thickness;
            const std::size_t w = vertical ? thickness : length;
            if (!fits(h, w) || max_extent < length) continue;
            accept(place(cls, ObjectShape::rectangle, h, w, spec, rng));
            placed = true;
        }
        if (!placed) ++skipped;
    }

    for (std::size_t i = 0; i < spec.medium_count; ++i) {
        const double u = rng.uniform();
        const std::int32_t cls = u < 0.4 ? kBuilding : (u < 0.75 ? kTree : kLowVeg);
        const ObjectShape shape = cls == kBuilding ? ObjectShape::rectangle : ObjectShape::ellipse;
        bool placed = false;
        for (std::size_t t = 0; t < spec.max_retries && !placed; ++t) {
            const double area = rng.uniform(spec.medium_min_fraction, spec.medium_max_fraction) * canvas;
            double ratio = rng.uniform(1.0, spec.medium_max_aspect);
            if (rng.bernoulli(0.5)) ratio = 1.0 / ratio;
            auto [h, w] = box_for(area, ratio);
            const double frac = static_cast<double>(h * w) / canvas;
            const double aspect = static_cast<double>(std::max(h, w)) / static_cast<double>(std::min(h, w));
            if (!fits(h, w) || frac < spec.medium_min_fraction || frac > spec.medium_max_fraction ||
                aspect > spec.medium_max_aspect) {
                continue;
            }
            accept(place(cls, shape, h, w, spec, rng));
            placed = true;
        }
        if (!placed) ++skipped;
    }

    const auto max_small_area = static_cast<std::size_t>(std::floor(spec.small_max_fraction * canvas));
    for (std::size_t i = 0; i < spec.small_count; ++i) {
        bool placed = false;
        for (std::size_t t = 0; t < spec.max_retries && !placed && max_small_area >= 2; ++t) {
            const std::size_t side = max_small_area >= 6 && rng.bernoulli(0.5) ? 2 : 1;
            const std::size_t long_max = std::min<std::size_t>(max_small_area / side, 3 * side);
            if (long_max < 2) continue;
            const auto length = static_cast<std::size_t>(rng.uniform_int(2, static_cast<std::int64_t>(long_max)));
            const bool vertical = rng.bernoulli(0.5);
            const std::size_t h = vertical ? length : side;
            const std::size_t w = vertical ? side : length;
            if (!fits(h, w)) continue;
            const SceneObject o = place(kCar, ObjectShape::rectangle, h, w, spec, rng);
            // Cars park on road surface only.
            bool on_road = true;
            for_each_pixel(o, spec.height, spec.width, [&](std::size_t y, std::size_t x) {
                on_road = on_road && working.at(0, y, x) == kSurface;
            });
            if (!on_road) continue;
            accept(o);
            placed = true;
        }
        if (!placed) ++skipped;
    }

    Scene scene = render_scene(spec.height, spec.width, objects, spec.noise_std, rng);
    scene.skipped = skipped;
    return scene;
}

Scene generate_scene(const SceneSpec& spec) {
    Rng rng(spec.seed);
    return generate_scene(spec, rng);
}

// ---------------------------------------------------------------------------

void TileSpec::validate() const {
    if (tile_h == 0 || tile_w == 0) throw std::invalid_argument("tile spec: tile size must be >= 1");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw std::invalid_argument("tile spec: overlap must be in [0, 1)");
}

std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile, double overlap) {
    if (tile == 0) throw std::invalid_argument("tile_origins: tile must be >= 1");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw std::invalid_argument("tile_origins: overlap must be in [0, 1)");
    if (extent < tile) {
        throw std::invalid_argument("tile_origins: canvas extent " + std::to_string(extent) +
                                    " is smaller than tile " + std::to_string(tile));
    }
    const auto stride = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(static_cast<double>(tile) * (1.0 - overlap) + 1e-9)));
    std::vector<std::size_t> origins;
    std::size_t p = 0;
    for (; p + tile <= extent; p += stride) origins.push_back(p);
    if (origins.back() + tile < extent) origins.push_back(extent - tile);
    return origins;
}

Tensor4 crop(const Tensor4& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    const Shape& s = image.shape();
    if (y + h > s.h || x + w > s.w) throw std::invalid_argument("crop: window outside image " + s.str());
    Tensor4 out({s.n, s.c, h, w});
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < h; ++i) {
                const double* src = image.plane(n, c) + (y + i) * s.w + x;
                std::copy(src, src + w, out.plane(n, c) + i * w);
            }
        }
    }
    return out;
}

LabelMap crop(const LabelMap& labels, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    if (y + h > labels.h || x + w > labels.w) throw std::invalid_argument("crop: window outside label map");
    LabelMap out(labels.n, h, w);
    for (std::size_t n = 0; n < labels.n; ++n) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) out.at(n, i, j) = labels.at(n, y + i, x + j);
        }
    }
    return out;
}

std::vector<Tile> tile(const Tensor4& image, const LabelMap& labels, const TileSpec& spec) {
    spec.validate();
    const Shape& s = image.shape();
    if (labels.h != s.h || labels.w != s.w) throw std::invalid_argument("tile: labels do not match image");
    const auto ys = tile_origins(s.h, spec.tile_h, spec.overlap);
    const auto xs = tile_origins(s.w, spec.tile_w, spec.overlap);
    std::vector<Tile> tiles;
    tiles.reserve(ys.size() * xs.size());
    for (std::size_t y : ys) {
        for (std::size_t x : xs) {
            tiles.push_back({crop(image, y, x, spec.tile_h, spec.tile_w),
                             crop(labels, y, x, spec.tile_h, spec.tile_w), y, x});
        }
    }
    return tiles;
}

// ---------------------------------------------------------------------------

Tensor4 flip_horizontal(const Tensor4& t) {
    const Shape& s = t.shape();
    Tensor4 out(s);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, s.w - 1 - x);
    return out;
}

Tensor4 flip_vertical(const Tensor4& t) {
    const Shape& s = t.shape();
    Tensor4 out(s);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, s.h - 1 - y, x);
    return out;
}

LabelMap flip_horizontal(const LabelMap& l) {
    LabelMap out(l.n, l.h, l.w);
    for (std::size_t n = 0; n < l.n; ++n)
        for (std::size_t y = 0; y < l.h; ++y)
            for (std::size_t x = 0; x < l.w; ++x) out.at(n, y, x) = l.at(n, y, l.w - 1 - x);
    return out;
}

LabelMap flip_vertical(const LabelMap& l) {
    LabelMap out(l.n, l.h, l.w);
    for (std::size_t n = 0; n < l.n; ++n)
        for (std::size_t y = 0; y < l.h; ++y)
            for (std::size_t x = 0; x < l.w; ++x) out.at(n, y, x) = l.at(n, l.h - 1 - y, x);
    return out;
}

std::pair<Tensor4, LabelMap> augment_flip(const Tensor4& image, const LabelMap& labels, Rng& rng) {
    const bool horizontal = rng.bernoulli(0.5);
    const bool vertical = rng.bernoulli(0.5);
    Tensor4 img = horizontal ? flip_horizontal(image) : image;
    LabelMap lab = horizontal ? flip_horizontal(labels) : labels;
    if (vertical) {
        img = flip_vertical(img);
        lab = flip_vertical(lab);
    }
    return {std::move(img), std::move(lab)};
}

// ---------------------------------------------------------------------------

std::vector<double> class_frequencies(std::span<const LabelMap> labels, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    std::size_t total = 0;
    for (const LabelMap& l : labels) {
        for (std::int32_t v : l.data) {
            if (v == LabelMap::kIgnore) continue;
            if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
                throw std::invalid_argument("class_frequencies: label " + std::to_string(v) + " out of range");
            }
            ++counts[static_cast<std::size_t>(v)];
            ++total;
        }
    }
    std::vector<double> freq(num_classes, 0.0);
    if (total == 0) return freq;
    for (std::size_t k = 0; k < num_classes; ++k) {
        freq[k] = static_cast<double>(counts[k]) / static_cast<double>(total);
    }
    return freq;
}

std::vector<double> class_weights(std::span<const double> frequencies, double c) {
    if (!(c > 1.0)) throw std::invalid_argument("class_weights: c must be > 1");
    std::vector<double> w;
    w.reserve(frequencies.size());
    for (double p : frequencies) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("class_weights: frequency outside [0, 1]");
        w.push_back(1.0 / std::log(p + c));
    }
    return w;
}

// ---------------------------------------------------------------------------

Dataset make_dataset(const DatasetSpec& spec) {
    if (spec.scenes == 0) throw std::invalid_argument("make_dataset: need at least one scene");
    if (!(spec.val_fraction >= 0.0 && spec.val_fraction < 1.0)) {
        throw std::invalid_argument("make_dataset: val_fraction must be in [0, 1)");
    }
    auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(spec.scenes) * spec.val_fraction));
    n_val = std::min(n_val, spec.scenes - 1);
    Dataset data;
    for (std::size_t i = 0; i < spec.scenes; ++i) {
        SceneSpec s = spec.scene;
        s.seed = spec.seed + i;
        Scene scene = generate_scene(s);
        (i < spec.scenes - n_val ? data.train : data.val).push_back(std::move(scene));
    }
    return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ofstream manifest;
    fs::create_directories(dir);
    manifest.open(dir / "scenes.txt");
    if (!manifest) throw std::runtime_error("cannot write " + (dir / "scenes.txt").string());
    auto write_split = [&](const std::vector<Scene>& scenes, const std::string& split) {
        fs::create_directories(dir / split);
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            std::ostringstream stem;
            stem << "scene_" << std::setw(3) << std::setfill('0') << i;
            const std::string img = split + "/" + stem.str() + ".ppm";
            const std::string lab = split + "/" + stem.str() + "_labels.pgm";
            write_ppm(dir / img, scenes[i].image);
            write_pgm_labels(dir / lab, scenes[i].labels);
            manifest << split << ' ' << img << ' ' << lab << '\n';
        }
    };
    write_split(data.train, "train");
    write_split(data.val, "val");
    if (!manifest) throw std::runtime_error("failed writing dataset manifest");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "scenes.txt");
    if (!manifest) throw std::runtime_error("cannot open " + (dir / "scenes.txt").string());
    Dataset data;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string split, img, lab;
        if (!(is >> split >> img >> lab)) throw std::runtime_error("malformed manifest line: " + line);
        Scene scene;
        scene.image = read_ppm(dir / img);
        scene.labels = read_pgm_labels(dir / lab);
        if (scene.labels.h != scene.image.shape().h || scene.labels.w != scene.image.shape().w) {
            throw std::runtime_error("label map size differs from image for " + img);
        }
        if (split == "train") {
            data.train.push_back(std::move(scene));
        } else if (split == "val") {
            data.val.push_back(std::move(scene));
        } else {
            throw std::runtime_error("unknown split '" + split + "' in manifest");
        }
    }
    return data;
}

Tensor4 normalize_image(const Tensor4& image) {
    Tensor4 out = image;
    for (double& v : out.data()) v = 2.0 * v - 1.0;
    return out;
}

}  // namespace sanet
