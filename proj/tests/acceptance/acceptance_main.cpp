// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sanet/data.hpp"
#include "sanet/gradcheck.hpp"
#include "sanet/layers.hpp"
#include "sanet/metrics.hpp"
#include "sanet/optim.hpp"
#include "sanet/rng.hpp"
#include "sanet/sam.hpp"
#include "sanet/train.hpp"

namespace fs = std::filesystem;
using namespace sanet;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Context {
    fs::path work;
    fs::path sanet;
    std::size_t ablation_seeds = 3;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Tensor4 gate_reference(const Tensor4& x) {
    Tensor4 out = x;
    for (double& v : out.data()) v = v + v / (1.0 + std::exp(-v));
    return out;
}

// 1 -------------------------------------------------------------------------
Outcome gradient_oracle(const Context&) {
    const auto t0 = std::chrono::steady_clock::now();
    GradcheckOptions opt;
    opt.probes = 50;
    opt.eps = 1e-5;
    const GradcheckReport report = run_gradcheck(GradcheckScope::all, opt);
    const double elapsed = seconds_since(t0);

    Outcome o;
    double worst_layer = 0.0;
    double worst_net = 0.0;
    std::size_t min_probes = SIZE_MAX;
    std::set<std::string> ops;
    for (const GradcheckEntry& e : report.entries) {
        ops.insert(e.op);
        const bool network = e.op.starts_with("network");
        (network ? worst_net : worst_layer) = std::max(network ? worst_net : worst_layer, e.max_rel_error);
        min_probes = std::min(min_probes, e.probes);
        if (e.max_rel_error > (network ? 1e-4 : 1e-5) || !std::isfinite(e.max_rel_error)) o.pass = false;
    }
    for (const char* required : {"conv2d_s1", "conv2d_s2", "sigmoid", "bilinear_sample", "upsample_bilinear",
                                 "weighted_cross_entropy", "sam", "attention_control", "network_sam_multi"}) {
        if (!ops.contains(required)) {
            o.pass = false;
            o.detail += std::string("missing op ") + required + "; ";
        }
    }
    if (min_probes < 50 || elapsed >= 120.0) o.pass = false;

    // the harness must also reject a corrupted gradient
    opt.inject_fault = true;
    const bool fault_caught = !run_gradcheck(GradcheckScope::all, opt).all_passed();
    o.pass = o.pass && fault_caught;

    o.detail += std::to_string(report.entries.size()) + " ops, layer max " + fmt("%.2e", worst_layer) +
                ", network max " + fmt("%.2e", worst_net) + ", min probes " + std::to_string(min_probes) +
                ", " + fmt("%.1fs", elapsed) + (fault_caught ? ", fault detected" : ", FAULT MISSED");
    return o;
}

// 2 -------------------------------------------------------------------------
Outcome sam_identity_limit(const Context&) {
    Outcome o;
    Rng rng(2024);
    SamParams zero = sam_init(8, 16, 16, rng);
    for (double& v : zero.conv_a.weight.data()) v = 0.0;
    for (double& v : zero.conv_b.weight.data()) v = 0.0;
    const Tensor4 x = rand_uniform({2, 8, 16, 16}, -1.0, 1.0, rng);
    const double zero_dev = max_abs_diff(sam_forward(x, zero).first, gate_reference(x));

    double fresh_dev = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng r(seed);
        const SamParams p = sam_init(16, 16, 16, r);
        const Tensor4 xi = rand_uniform({1, 16, 16, 16}, -1.0, 1.0, r);
        fresh_dev = std::max(fresh_dev, max_abs_diff(sam_forward(xi, p).first, gate_reference(xi)));
    }
    o.pass = zero_dev <= 1e-12 && fresh_dev <= 1e-2;
    o.detail = "zero weights " + fmt("%.2e", zero_dev) + ", fresh init (10 seeds) " + fmt("%.2e", fresh_dev);
    return o;
}

// 3 -------------------------------------------------------------------------
Outcome bilinear_exactness(const Context&) {
    Outcome o;
    double identity_err = 0.0;
    Rng rng(3);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 3}, {7, 5}, {16, 16}, {33, 64}}) {
        const Tensor4 x = randn({2, 3, h, w}, 0.0, 1.0, rng);
        identity_err = std::max(identity_err, max_abs_diff(bilinear_sample_forward(x, identity_grid(2, h, w)).first, x));
    }
    const Tensor4 quad({1, 1, 2, 2}, {0, 1, 2, 3});
    const double centre = bilinear_sample_forward(quad, ResampleMap{zeros({1, 2, 2, 2})}).first[0];

    const Tensor4 row({1, 1, 1, 3}, {10, 20, 30});
    ResampleMap m = identity_grid(1, 1, 3);
    m.coords.at(0, 0, 0, 0) = 0.5;
    auto [y, tape] = bilinear_sample_forward(row, m);
    Tensor4 g = zeros(y.shape());
    g[0] = 2.0;
    const double grad_map = bilinear_sample_backward(g, tape).map.at(0, 0, 0, 0);

    const double frac_err = std::max({std::abs(centre - 1.5), std::abs(y[0] - 25.0), std::abs(grad_map - 20.0)});
    o.pass = identity_err == 0.0 && frac_err <= 1e-12;
    o.detail = "identity error " + fmt("%.1e", identity_err) + ", fractional error " + fmt("%.1e", frac_err);
    return o;
}

// 4 -------------------------------------------------------------------------
Outcome metrics_oracle(const Context&) {
    Outcome o;
    Rng rng(4);
    double worst = 0.0;
    std::size_t count_mismatch = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(2, 6));
        const auto h = static_cast<std::size_t>(rng.uniform_int(1, 32));
        const auto w = static_cast<std::size_t>(rng.uniform_int(1, 32));
        LabelMap pred(1, h, w);
        LabelMap gt(1, h, w);
        for (std::size_t i = 0; i < h * w; ++i) {
            pred.data[i] = static_cast<std::int32_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
            gt.data[i] = static_cast<std::int32_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
        }
        const ConfusionMatrix cm = confusion(pred, gt, k);
        const Metrics m = metrics(cm);

        // naive oracle: per-class pixel scans
        double iou_sum = 0.0;
        double f1_sum = 0.0;
        std::size_t present = 0;
        std::size_t correct = 0;
        for (std::size_t c = 0; c < k; ++c) {
            std::uint64_t tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < h * w; ++i) {
                const bool p = pred.data[i] == static_cast<std::int32_t>(c);
                const bool g = gt.data[i] == static_cast<std::int32_t>(c);
                tp += p && g;
                fp += p && !g;
                fn += !p && g;
            }
            correct += tp;
            if (cm.at(c, c) != tp) ++count_mismatch;
            std::uint64_t row = 0, col = 0;
            for (std::size_t j = 0; j < k; ++j) {
                row += cm.at(c, j);
                col += cm.at(j, c);
            }
            if (row - cm.at(c, c) != fn || col - cm.at(c, c) != fp) ++count_mismatch;
            const double iou = tp + fp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn) : 0.0;
            const double f1 = tp + fp + fn ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
            worst = std::max({worst, std::abs(iou - m.iou[c]), std::abs(f1 - m.f1[c])});
            if (tp + fn > 0) {
                ++present;
                iou_sum += iou;
                f1_sum += f1;
            }
        }
        if (cm.total() != h * w) ++count_mismatch;
        const double oa = static_cast<double>(correct) / static_cast<double>(h * w);
        worst = std::max({worst, std::abs(oa - m.oa), std::abs(iou_sum / present - m.mean_iou),
                          std::abs(f1_sum / present - m.mean_f1)});
    }
    o.pass = count_mismatch == 0 && worst <= 1e-12;
    o.detail = "1000 pairs, count mismatches " + std::to_string(count_mismatch) + ", max metric error " +
               fmt("%.1e", worst);
    return o;
}

// 5 -------------------------------------------------------------------------
Outcome pipeline_arithmetic(const Context&) {
    Outcome o;
    const Tensor4 canvas({1, 1, 1024, 1024});
    const LabelMap labels(1, 1024, 1024);
    const auto tiles = tile(canvas, labels, TileSpec{512, 512, 0.5});
    std::vector<char> hit(1024 * 1024, 0);
    for (const Tile& t : tiles)
        for (std::size_t y = 0; y < 512; ++y) std::fill_n(hit.begin() + (t.y + y) * 1024 + t.x, 512, 1);
    const bool covered = std::all_of(hit.begin(), hit.end(), [](char c) { return c != 0; });

    const double mid = poly_lr(50, 100, 5e-4, 0.9);
    const double mid_err = std::abs(mid - 5e-4 * std::pow(0.5, 0.9));
    const std::vector<double> freq{0.0, 1.0};
    const double w_err = std::abs(class_weights(freq, 1.12)[0] - 1.0 / std::log(1.12));

    o.pass = tiles.size() == 9 && covered && mid_err <= 1e-9 && w_err <= 1e-9;
    o.detail = std::to_string(tiles.size()) + " tiles, " + (covered ? "full" : "partial") + " coverage, poly error " +
               fmt("%.1e", mid_err) + ", weight error " + fmt("%.1e", w_err);
    return o;
}

// 6 -------------------------------------------------------------------------
constexpr std::size_t kAblationScenes = 20;
constexpr std::size_t kAblationEpochs = 30;

Outcome ablation_direction(const Context& ctx) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    DatasetSpec ds;
    ds.scenes = kAblationScenes;
    ds.scene.height = ds.scene.width = 128;
    const Dataset data = make_dataset(ds);

    NetworkConfig net;  // default stage widths
    net.input_h = net.input_w = 64;

    const std::vector<Variant> variants{Variant::baseline, Variant::sam_multi, Variant::attn_multi_control};
    std::size_t wins = 0;
    double sum_sam = 0.0;
    double sum_ctrl = 0.0;
    double sum_base = 0.0;
    std::ostringstream per_seed;
    std::ofstream log(ctx.work / "ablation_seeds.csv");
    log << "seed,baseline,sam_multi,attn_multi_control\n";
    for (std::size_t seed = 0; seed < ctx.ablation_seeds; ++seed) {
        TrainConfig cfg;
        cfg.epochs = kAblationEpochs;
        cfg.batch = 4;
        cfg.seed = seed;
        const auto rows = run_ablation(data, cfg, net, variants);
        const double base = rows[0].metrics.mean_iou;
        const double sam = rows[1].metrics.mean_iou;
        const double ctrl = rows[2].metrics.mean_iou;
        wins += sam >= base;
        sum_base += base;
        sum_sam += sam;
        sum_ctrl += ctrl;
        per_seed << " seed" << seed << "(" << fmt("%.2f", 100 * base) << "/" << fmt("%.2f", 100 * sam) << "/"
                 << fmt("%.2f", 100 * ctrl) << ")";
        log << seed << ',' << base << ',' << sam << ',' << ctrl << '\n';
    }
    const double n = static_cast<double>(ctx.ablation_seeds);
    const bool direction = wins * 3 >= 2 * ctx.ablation_seeds;
    const bool vs_control = sum_sam >= sum_ctrl;
    o.pass = direction && vs_control && ctx.ablation_seeds >= 3;
    o.detail = "mIoU base/sam_multi/control:" + per_seed.str() + "; sam_multi>=baseline in " + std::to_string(wins) +
               "/" + std::to_string(ctx.ablation_seeds) + ", mean " + fmt("%.2f", 100 * sum_base / n) + "/" +
               fmt("%.2f", 100 * sum_sam / n) + "/" + fmt("%.2f", 100 * sum_ctrl / n) + ", " +
               fmt("%.0fs", seconds_since(t0));
    return o;
}

// 7 -------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const Context& ctx) {
    Outcome o;
    const std::string args = " train --variant sam_multi --epochs 2 --batch 4 --seed 7 --scenes 8 --threads 1";
    std::vector<fs::path> runs;
    for (const char* name : {"determinism_a", "determinism_b"}) {
        const fs::path out = ctx.work / name;
        fs::remove_all(out);
        const std::string cmd = "\"" + ctx.sanet.string() + "\"" + args + " --out \"" + out.string() + "\" > \"" +
                                (ctx.work / (std::string(name) + ".log")).string() + "\" 2>&1";
        if (std::system(cmd.c_str()) != 0) {
            o.pass = false;
            o.detail = "sanet train failed: " + cmd;
            return o;
        }
        runs.push_back(out);
    }
    const std::string ck = slurp(runs[0] / "checkpoint.bin");
    const std::string csv = slurp(runs[0] / "metrics.csv");
    const bool same_ck = !ck.empty() && ck == slurp(runs[1] / "checkpoint.bin");
    const bool same_csv = !csv.empty() && csv == slurp(runs[1] / "metrics.csv");
    o.pass = same_ck && same_csv;
    o.detail = "checkpoint " + std::to_string(ck.size()) + " bytes " + (same_ck ? "identical" : "DIFFERENT") +
               ", metrics.csv " + (same_csv ? "identical" : "DIFFERENT");
    return o;
}

// 8 -------------------------------------------------------------------------
Outcome clamp_invariant(const Context&) {
    Outcome o;
    double worst = 0.0;
    double worst_unclamped = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        SamParams p = sam_init(8, 12, 12, rng);
        p.conv_a.weight = scale(p.conv_a.weight, 1000.0);
        p.conv_b.weight = scale(p.conv_b.weight, 1000.0);
        const Tensor4 x = randn({2, 8, 12, 12}, 0.0, 100.0, rng);
        const SamTape tape = sam_forward(x, p).second;
        worst = std::max(worst, max_abs(tape.map.coords));
        worst_unclamped = std::max(worst_unclamped, max_abs(tape.unclamped));
    }
    o.pass = worst <= 1.0;
    o.detail = "max |map| " + fmt("%.6f", worst) + " (max unclamped " + fmt("%.3g", worst_unclamped) + ")";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sanet acceptance suite"};
    Context ctx;
    std::string work = "acceptance_work";
    std::string sanet_bin;
    std::vector<int> only;
    app.add_option("--work-dir", work, "scratch directory");
    app.add_option("--sanet", sanet_bin, "path to the sanet executable")->required();
    app.add_option("--only", only, "run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    ctx.work = work;
    ctx.sanet = fs::absolute(sanet_bin);
    fs::create_directories(ctx.work);

    const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
        {"gradient oracle", gradient_oracle},
        {"SAM identity limit", sam_identity_limit},
        {"bilinear exactness", bilinear_exactness},
        {"metrics oracle", metrics_oracle},
        {"pipeline arithmetic", pipeline_arithmetic},
        {"ablation direction", ablation_direction},
        {"determinism", determinism},
        {"clamp invariant", clamp_invariant},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second(ctx);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
    return failures == 0 ? 0 : 1;
}
