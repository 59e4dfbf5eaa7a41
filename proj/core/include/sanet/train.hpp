#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sanet/config.hpp"
#include "sanet/data.hpp"
#include "sanet/metrics.hpp"
#include "sanet/network.hpp"
#include "sanet/optim.hpp"
#include "sanet/rng.hpp"

namespace sanet {

/// Training hyperparameters. Defaults follow the full-scale recipe; desk-scale
/// runs override epochs and batch from the command line.
struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch = 16;
    double base_lr = 5e-4;
    double poly_power = 0.9;
    double weight_decay = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool decoupled_weight_decay = true;
    double loss_c = 1.12;
    bool augment = true;
    /// Include the clutter class in reported means.
    bool include_background = false;
    double tile_overlap = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    AdamConfig adam() const;
    KeyValues to_kv() const;
    /// Unknown keys are ignored; malformed values throw std::invalid_argument.
    static TrainConfig from_kv(const KeyValues& kv);
};

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;  ///< mean batch loss
    double lr = 0.0;    ///< rate used by the epoch's last step
    Metrics metrics;    ///< running metrics of the epoch's training predictions
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::vector<double> class_weights;
    Rng rng;  ///< shuffling/augmentation stream after the last step
    std::size_t iterations = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Tiles the training scenes to the network input size, then runs Adam with a
/// per-iteration poly schedule that reaches zero on the final step. Throws
/// std::runtime_error when the loss becomes non-finite.
TrainResult train(Network& net, const Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Class ids averaged in reported means.
std::vector<std::size_t> report_classes(std::size_t num_classes, bool include_background);

/// Full-image logits: tiles the image at the network input size with the given
/// overlap and averages overlapping logits. Image values in [0, 1].
Tensor4 predict_logits(const Network& net, const Tensor4& image, double overlap = 0.5);

/// Confusion matrix over whole scenes, one prediction per pixel.
ConfusionMatrix evaluate(const Network& net, std::span<const Scene> scenes, double overlap = 0.5);

/// "imp_surf_iou,imp_surf_f1,...,mean_iou,mean_f1,oa" for the reported classes.
std::string metric_header(std::size_t num_classes, bool include_background);
/// Matching values in percent with two decimals.
std::string metric_row(const Metrics& m, bool include_background);

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochLog> log,
                       bool include_background);

struct AblationRow {
    Variant variant = Variant::baseline;
    Metrics metrics;
    std::size_t parameters = 0;
    double final_loss = 0.0;
};

using AblationProgress = std::function<void(Variant, const EpochLog&)>;

/// Trains each variant from the same seed on the same data and evaluates it on
/// the validation split (the training split when there is none).
std::vector<AblationRow> run_ablation(const Dataset& data, const TrainConfig& cfg,
                                      const NetworkConfig& base,
                                      std::span<const Variant> variants = ablation_order(),
                                      const AblationProgress& progress = {});

/// CSV with a "network" column followed by metric_header().
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows,
                        bool include_background);
/// Fixed-width text rendering of the same table.
std::string format_ablation_table(std::span<const AblationRow> rows, bool include_background);

}  // namespace sanet
