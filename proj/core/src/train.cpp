#include "sanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sanet {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5eed;

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

double parse_double(const KeyValues& kv, const char* key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(std::string("config: '") + key + "' expects a number, got '" +
                                    it->second + "'");
    }
}

std::uint64_t parse_uint(const KeyValues& kv, const char* key, std::uint64_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t pos = 0;
        if (!it->second.empty() && it->second.front() == '-') throw std::invalid_argument("negative");
        const auto v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(std::string("config: '") + key +
                                    "' expects a non-negative integer, got '" + it->second + "'");
    }
}

bool parse_bool(const KeyValues& kv, const char* key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw std::invalid_argument(std::string("config: '") + key + "' expects true/false, got '" + v + "'");
}

struct Sample {
    const Tensor4* image;
    const LabelMap* labels;
};

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("train config: base_lr must be > 0");
    if (!(poly_power > 0.0)) throw std::invalid_argument("train config: poly power must be > 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("train config: Adam betas must be in [0, 1)");
    }
    if (!(loss_c > 1.0)) throw std::invalid_argument("train config: loss c must be > 1");
    if (!(tile_overlap >= 0.0 && tile_overlap < 1.0)) {
        throw std::invalid_argument("train config: tile overlap must be in [0, 1)");
    }
}

AdamConfig TrainConfig::adam() const {
    return {beta1, beta2, eps, weight_decay, decoupled_weight_decay};
}

KeyValues TrainConfig::to_kv() const {
    return {
        {"epochs", std::to_string(epochs)},
        {"batch", std::to_string(batch)},
        {"lr", fmt("%.17g", base_lr)},
        {"poly_power", fmt("%.17g", poly_power)},
        {"weight_decay", fmt("%.17g", weight_decay)},
        {"beta1", fmt("%.17g", beta1)},
        {"beta2", fmt("%.17g", beta2)},
        {"adam_eps", fmt("%.17g", eps)},
        {"decoupled_weight_decay", decoupled_weight_decay ? "true" : "false"},
        {"loss_c", fmt("%.17g", loss_c)},
        {"augment", augment ? "true" : "false"},
        {"include_background", include_background ? "true" : "false"},
        {"overlap", fmt("%.17g", tile_overlap)},
        {"seed", std::to_string(seed)},
    };
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
    TrainConfig c;
    c.epochs = parse_uint(kv, "epochs", c.epochs);
    c.batch = parse_uint(kv, "batch", c.batch);
    c.base_lr = parse_double(kv, "lr", c.base_lr);
    c.poly_power = parse_double(kv, "poly_power", c.poly_power);
    c.weight_decay = parse_double(kv, "weight_decay", c.weight_decay);
    c.beta1 = parse_double(kv, "beta1", c.beta1);
    c.beta2 = parse_double(kv, "beta2", c.beta2);
    c.eps = parse_double(kv, "adam_eps", c.eps);
    c.decoupled_weight_decay = parse_bool(kv, "decoupled_weight_decay", c.decoupled_weight_decay);
    c.loss_c = parse_double(kv, "loss_c", c.loss_c);
    c.augment = parse_bool(kv, "augment", c.augment);
    c.include_background = parse_bool(kv, "include_background", c.include_background);
    c.tile_overlap = parse_double(kv, "overlap", c.tile_overlap);
    c.seed = parse_uint(kv, "seed", c.seed);
    c.validate();
    return c;
}

std::vector<std::size_t> report_classes(std::size_t num_classes, bool include_background) {
    std::vector<std::size_t> classes;
    for (std::size_t k = include_background ? 0 : 1; k < num_classes; ++k) classes.push_back(k);
    return classes;
}

TrainResult train(Network& net, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("train: dataset has no training scenes");
    const NetworkConfig& nc = net.config();
    const TileSpec tspec{nc.input_h, nc.input_w, cfg.tile_overlap};

    std::vector<Tile> tiles;
    std::vector<LabelMap> scene_labels;
    for (const Scene& s : data.train) {
        auto t = tile(s.image, s.labels, tspec);
        std::move(t.begin(), t.end(), std::back_inserter(tiles));
        scene_labels.push_back(s.labels);
    }

    TrainResult result;
    result.class_weights = class_weights(class_frequencies(scene_labels, nc.num_classes), cfg.loss_c);
    result.rng = Rng(cfg.seed + kShuffleStream);
    Rng& rng = result.rng;

    const std::size_t n = tiles.size();
    const std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const std::size_t max_iter = cfg.epochs * per_epoch;
    const AdamConfig adam = cfg.adam();
    const auto mean_classes = report_classes(nc.num_classes, cfg.include_background);
    AdamState state;
    std::vector<ParamRef> params = net.parameters();
    std::vector<std::size_t> order(n);

    std::size_t iter = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t i = n; i-- > 1;) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(order[i], order[j]);
        }

        EpochLog log;
        log.epoch = epoch;
        ConfusionMatrix cm(nc.num_classes);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < per_epoch; ++b, ++iter) {
            const std::size_t first = b * cfg.batch;
            const std::size_t count = std::min(cfg.batch, n - first);
            Tensor4 batch({count, nc.in_channels, nc.input_h, nc.input_w});
            LabelMap labels(count, nc.input_h, nc.input_w);
            const std::size_t img_size = nc.in_channels * nc.input_h * nc.input_w;
            const std::size_t lab_size = nc.input_h * nc.input_w;
            for (std::size_t k = 0; k < count; ++k) {
                const Tile& t = tiles[order[first + k]];
                Tensor4 img = t.image;
                LabelMap lab = t.labels;
                if (cfg.augment) std::tie(img, lab) = augment_flip(img, lab, rng);
                img = normalize_image(img);
                std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(k * img_size));
                std::copy(lab.data.begin(), lab.data.end(), labels.data.begin() + static_cast<std::ptrdiff_t>(k * lab_size));
            }

            auto [logits, tape] = net.forward(batch);
            CrossEntropyResult ce = weighted_cross_entropy(logits, labels, result.class_weights);
            if (!std::isfinite(ce.loss)) {
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", iteration " + std::to_string(iter));
            }
            net.zero_grads();
            net.backward(ce.grad_logits, tape);
            const double lr = poly_lr(iter, max_iter - 1, cfg.base_lr, cfg.poly_power);
            adam_step(params, state, lr, adam);

            cm += confusion(argmax_channels(logits), labels, nc.num_classes);
            loss_sum += ce.loss;
            log.lr = lr;
        }
        log.loss = loss_sum / static_cast<double>(per_epoch);
        log.metrics = metrics(cm, mean_classes);
        if (on_epoch) on_epoch(log);
        result.log.push_back(std::move(log));
    }
    result.iterations = iter;
    return result;
}

Tensor4 predict_logits(const Network& net, const Tensor4& image, double overlap) {
    const NetworkConfig& nc = net.config();
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != nc.in_channels) {
        throw std::invalid_argument("predict_logits: expected a single image with " +
                                    std::to_string(nc.in_channels) + " channels, got " + s.str());
    }
    const auto ys = tile_origins(s.h, nc.input_h, overlap);
    const auto xs = tile_origins(s.w, nc.input_w, overlap);
    Tensor4 acc({1, nc.num_classes, s.h, s.w});
    std::vector<double> hits(s.h * s.w, 0.0);
    const Tensor4 input = normalize_image(image);
    for (std::size_t y : ys) {
        for (std::size_t x : xs) {
            const Tensor4 logits = net.predict(crop(input, y, x, nc.input_h, nc.input_w));
            for (std::size_t c = 0; c < nc.num_classes; ++c) {
                for (std::size_t i = 0; i < nc.input_h; ++i) {
                    for (std::size_t j = 0; j < nc.input_w; ++j) acc.at(0, c, y + i, x + j) += logits.at(0, c, i, j);
                }
            }
            for (std::size_t i = 0; i < nc.input_h; ++i) {
                for (std::size_t j = 0; j < nc.input_w; ++j) hits[(y + i) * s.w + x + j] += 1.0;
            }
        }
    }
    for (std::size_t c = 0; c < nc.num_classes; ++c) {
        double* p = acc.plane(0, c);
        for (std::size_t k = 0; k < s.h * s.w; ++k) p[k] /= hits[k];
    }
    return acc;
}

ConfusionMatrix evaluate(const Network& net, std::span<const Scene> scenes, double overlap) {
    ConfusionMatrix cm(net.config().num_classes);
    for (const Scene& s : scenes) {
        cm += confusion(argmax_channels(predict_logits(net, s.image, overlap)), s.labels,
                        net.config().num_classes);
    }
    return cm;
}

std::string metric_header(std::size_t num_classes, bool include_background) {
    std::string h;
    for (std::size_t k : report_classes(num_classes, include_background)) {
        const std::string name = k < kNumClasses ? std::string(class_names()[k]) : "class" + std::to_string(k);
        h += name + "_iou," + name + "_f1,";
    }
    h += "mean_iou,mean_f1,oa";
    return h;
}

std::string metric_row(const Metrics& m, bool include_background) {
    std::string r;
    for (std::size_t k : report_classes(m.iou.size(), include_background)) {
        r += fmt("%.2f", 100.0 * m.iou[k]) + "," + fmt("%.2f", 100.0 * m.f1[k]) + ",";
    }
    r += fmt("%.2f", 100.0 * m.mean_iou) + "," + fmt("%.2f", 100.0 * m.mean_f1) + "," + fmt("%.2f", 100.0 * m.oa);
    return r;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochLog> log,
                       bool include_background) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    const std::size_t K = log.empty() ? kNumClasses : log.front().metrics.iou.size();
    const auto classes = report_classes(K, include_background);
    os << "epoch,loss,lr,mean_iou,mean_f1,oa";
    for (std::size_t k : classes) os << ',' << class_names()[k] << "_iou";
    for (std::size_t k : classes) os << ',' << class_names()[k] << "_f1";
    os << '\n';
    for (const EpochLog& e : log) {
        os << e.epoch << ',' << fmt("%.10g", e.loss) << ',' << fmt("%.6e", e.lr) << ','
           << fmt("%.6f", e.metrics.mean_iou) << ',' << fmt("%.6f", e.metrics.mean_f1) << ','
           << fmt("%.6f", e.metrics.oa);
        for (std::size_t k : classes) os << ',' << fmt("%.6f", e.metrics.iou[k]);
        for (std::size_t k : classes) os << ',' << fmt("%.6f", e.metrics.f1[k]);
        os << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<AblationRow> run_ablation(const Dataset& data, const TrainConfig& cfg, const NetworkConfig& base,
                                      std::span<const Variant> variants, const AblationProgress& progress) {
    const std::span<const Scene> eval_scenes = data.val.empty() ? std::span<const Scene>(data.train)
                                                                : std::span<const Scene>(data.val);
    const auto mean_classes = report_classes(base.num_classes, cfg.include_background);
    std::vector<AblationRow> rows;
    for (Variant v : variants) {
        NetworkConfig nc = base;
        nc.variant = v;
        Rng rng(cfg.seed);
        Network net = Network::build(nc, rng);
        EpochCallback cb;
        if (progress) cb = [&](const EpochLog& e) { progress(v, e); };
        const TrainResult tr = train(net, data, cfg, cb);
        AblationRow row;
        row.variant = v;
        row.parameters = net.parameter_count();
        row.final_loss = tr.log.back().loss;
        row.metrics = metrics(evaluate(net, eval_scenes, cfg.tile_overlap), mean_classes);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows,
                        bool include_background) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    const std::size_t K = rows.empty() ? kNumClasses : rows.front().metrics.iou.size();
    os << "network," << metric_header(K, include_background) << '\n';
    for (const AblationRow& r : rows) {
        os << table_name(r.variant) << ',' << metric_row(r.metrics, include_background) << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::string format_ablation_table(std::span<const AblationRow> rows, bool include_background) {
    std::ostringstream os;
    const std::size_t K = rows.empty() ? kNumClasses : rows.front().metrics.iou.size();
    const auto classes = report_classes(K, include_background);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-14s", "Networks");
    os << buf;
    for (std::size_t k : classes) {
        std::snprintf(buf, sizeof buf, " %8s_IoU %7s_F1", std::string(class_names()[k]).c_str(),
                      std::string(class_names()[k]).c_str());
        os << buf;
    }
    os << "   mIoU    mF1     OA  params\n";
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-14s", std::string(table_name(r.variant)).c_str());
        os << buf;
        for (std::size_t k : classes) {
            std::snprintf(buf, sizeof buf, " %12.2f %10.2f", 100.0 * r.metrics.iou[k], 100.0 * r.metrics.f1[k]);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, " %6.2f %6.2f %6.2f %7zu\n", 100.0 * r.metrics.mean_iou,
                      100.0 * r.metrics.mean_f1, 100.0 * r.metrics.oa, r.parameters);
        os << buf;
    }
    return os.str();
}

}  // namespace sanet
