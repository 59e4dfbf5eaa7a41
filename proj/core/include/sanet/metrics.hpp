#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sanet/layers.hpp"

namespace sanet {

/// counts(g, p) = pixels with ground truth g predicted as p.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = 0)
        : k_(num_classes), counts_(num_classes * num_classes, 0) {}

    std::size_t num_classes() const { return k_; }
    std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * k_ + pred]; }
    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
    std::uint64_t total() const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b);

/// Counts every pixel whose ground truth is not LabelMap::kIgnore.
ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes);

struct Metrics {
    std::vector<double> iou;
    std::vector<double> f1;
    std::vector<bool> present;  ///< class occurs in the ground truth
    double mean_iou = 0.0;
    double mean_f1 = 0.0;
    double oa = 0.0;
};

/// IoU_k = TP/(TP+FP+FN), F1_k = 2TP/(2TP+FP+FN), OA = trace/total.
/// Means average the classes in `mean_over` (all classes when empty) that
/// are present in the ground truth. Classes with a zero denominator score 0.
/// Throws std::invalid_argument on an empty matrix.
Metrics metrics(const ConfusionMatrix& cm, std::span<const std::size_t> mean_over = {});

}  // namespace sanet
