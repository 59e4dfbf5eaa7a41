#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "sanet/layers.hpp"
#include "sanet/tensor.hpp"

namespace sanet {

class Rng;

/// Class ids of the synthetic aerial scenes.
enum ClassId : std::int32_t {
    kClutter = 0,
    kSurface = 1,
    kBuilding = 2,
    kLowVeg = 3,
    kTree = 4,
    kCar = 5,
};
inline constexpr std::size_t kNumClasses = 6;

/// Short column names, indexed by ClassId.
std::span<const std::string_view> class_names();

enum class ObjectShape { rectangle, ellipse };

/// Axis-aligned object in pixel coordinates. Parts outside the canvas are clipped.
struct SceneObject {
    std::int32_t cls = kClutter;
    ObjectShape shape = ObjectShape::rectangle;
    std::ptrdiff_t top = 0;
    std::ptrdiff_t left = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Synthetic scene recipe. Objects come in four disjoint scale buckets:
/// small (area <= small_max_fraction of the canvas, car-like), medium
/// (compact, area within [medium_min_fraction, medium_max_fraction]),
/// strip (aspect >= strip_min_aspect) and large (area >= large_min_fraction).
struct SceneSpec {
    std::size_t height = 128;
    std::size_t width = 128;

    double small_max_fraction = 0.0002;
    double medium_min_fraction = 0.005;
    double medium_max_fraction = 0.05;
    double medium_max_aspect = 2.0;
    double strip_min_aspect = 6.0;
    double strip_max_aspect = 12.0;
    double large_min_fraction = 0.15;
    double large_max_fraction = 0.30;

    std::size_t small_count = 10;
    std::size_t medium_count = 5;
    std::size_t strip_count = 3;
    std::size_t large_count = 1;

    double noise_std = 0.06;
    std::size_t max_retries = 25;
    std::uint64_t seed = 1;

    void validate() const;
};

struct Scene {
    Tensor4 image;    ///< (1, 3, H, W), 8-bit quantised values in [0, 1]
    LabelMap labels;  ///< (1, H, W)
    std::vector<SceneObject> objects;
    std::size_t skipped = 0;  ///< objects dropped after exhausting placement retries
};

/// Paints objects in order (later objects overwrite earlier ones) with
/// class-specific colours plus Gaussian noise. Labels are pixel-exact.
Scene render_scene(std::size_t height, std::size_t width, std::span<const SceneObject> objects,
                   double noise_std, Rng& rng);

/// Samples objects per bucket (large, strip, medium, then small objects that
/// must sit entirely on road surface) and renders them.
Scene generate_scene(const SceneSpec& spec, Rng& rng);
/// Same, seeded from spec.seed.
Scene generate_scene(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Tiling

struct TileSpec {
    std::size_t tile_h = 64;
    std::size_t tile_w = 64;
    double overlap = 0.5;

    void validate() const;
};

/// Window origins along one axis: multiples of floor(tile * (1 - overlap)),
/// plus a final window flush with the far edge.
std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile, double overlap);

struct Tile {
    Tensor4 image;
    LabelMap labels;
    std::size_t y = 0;
    std::size_t x = 0;
};

/// Raster-order tiles covering the whole canvas.
std::vector<Tile> tile(const Tensor4& image, const LabelMap& labels, const TileSpec& spec);

/// Copies the window [y, y+h) x [x, x+w) of every channel.
Tensor4 crop(const Tensor4& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w);
LabelMap crop(const LabelMap& labels, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

// ---------------------------------------------------------------------------
// Augmentation

Tensor4 flip_horizontal(const Tensor4& t);
Tensor4 flip_vertical(const Tensor4& t);
LabelMap flip_horizontal(const LabelMap& l);
LabelMap flip_vertical(const LabelMap& l);

/// Horizontal and vertical flips, each applied independently with probability 0.5.
std::pair<Tensor4, LabelMap> augment_flip(const Tensor4& image, const LabelMap& labels, Rng& rng);

// ---------------------------------------------------------------------------
// Class weighting

/// Pixel frequency of every class over all maps (ignored pixels excluded).
std::vector<double> class_frequencies(std::span<const LabelMap> labels, std::size_t num_classes);

/// w_k = 1 / ln(P_k + c). Requires c > 1.
std::vector<double> class_weights(std::span<const double> frequencies, double c);

// ---------------------------------------------------------------------------
// Datasets

struct DatasetSpec {
    SceneSpec scene;
    std::size_t scenes = 24;
    double val_fraction = 0.2;
    std::uint64_t seed = 1;
};

struct Dataset {
    std::vector<Scene> train;
    std::vector<Scene> val;
};

/// Scene i is generated from seed + i; the last round(scenes * val_fraction)
/// scenes form the validation split.
Dataset make_dataset(const DatasetSpec& spec);

/// Writes <dir>/{train,val}/scene_NNN.ppm, scene_NNN_labels.pgm and a
/// scenes.txt with one "split image labels" line per scene.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Maps [0, 1] pixel values to the network's [-1, 1] input range.
Tensor4 normalize_image(const Tensor4& image);

}  // namespace sanet
