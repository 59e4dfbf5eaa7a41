#include "sanet/metrics.hpp"

#include <stdexcept>
#include <string>

namespace sanet {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts_) t += c;
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw std::invalid_argument("ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) {
    a += b;
    return a;
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
    if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w) {
        throw std::invalid_argument("confusion: prediction and ground truth differ in size");
    }
    ConfusionMatrix cm(num_classes);
    const auto K = static_cast<std::int32_t>(num_classes);
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const std::int32_t g = gt.data[i];
        if (g == LabelMap::kIgnore) continue;
        const std::int32_t p = pred.data[i];
        if (g < 0 || g >= K || p < 0 || p >= K) {
            throw std::invalid_argument("confusion: label out of range at pixel " + std::to_string(i));
        }
        ++cm.at(static_cast<std::size_t>(g), static_cast<std::size_t>(p));
    }
    return cm;
}

Metrics metrics(const ConfusionMatrix& cm, std::span<const std::size_t> mean_over) {
    const std::size_t K = cm.num_classes();
    const std::uint64_t total = cm.total();
    if (K == 0 || total == 0) throw std::invalid_argument("metrics: empty confusion matrix");

    Metrics m;
    m.iou.assign(K, 0.0);
    m.f1.assign(K, 0.0);
    m.present.assign(K, false);
    std::uint64_t trace = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const std::uint64_t tp = cm.at(k, k);
        std::uint64_t fp = 0;
        std::uint64_t fn = 0;
        for (std::size_t j = 0; j < K; ++j) {
            if (j == k) continue;
            fp += cm.at(j, k);
            fn += cm.at(k, j);
        }
        trace += tp;
        m.present[k] = tp + fn > 0;
        const std::uint64_t iou_den = tp + fp + fn;
        const std::uint64_t f1_den = 2 * tp + fp + fn;
        m.iou[k] = iou_den ? static_cast<double>(tp) / static_cast<double>(iou_den) : 0.0;
        m.f1[k] = f1_den ? 2.0 * static_cast<double>(tp) / static_cast<double>(f1_den) : 0.0;
    }
    m.oa = static_cast<double>(trace) / static_cast<double>(total);

    std::size_t counted = 0;
    auto accumulate = [&](std::size_t k) {
        if (k >= K) throw std::invalid_argument("metrics: class index out of range");
        if (!m.present[k]) return;
        m.mean_iou += m.iou[k];
        m.mean_f1 += m.f1[k];
        ++counted;
    };
    if (mean_over.empty()) {
        for (std::size_t k = 0; k < K; ++k) accumulate(k);
    } else {
        for (std::size_t k : mean_over) accumulate(k);
    }
    if (counted) {
        m.mean_iou /= static_cast<double>(counted);
        m.mean_f1 /= static_cast<double>(counted);
    }
    return m;
}

}  // namespace sanet
