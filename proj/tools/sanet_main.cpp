// sanet: data generation, gradient checking, training, evaluation, ablation
// and score-map export from one binary.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sanet/config.hpp"
#include "sanet/data.hpp"
#include "sanet/gradcheck.hpp"
#include "sanet/image_io.hpp"
#include "sanet/network.hpp"
#include "sanet/parallel.hpp"
#include "sanet/rng.hpp"
#include "sanet/train.hpp"

namespace fs = std::filesystem;
using namespace sanet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Config problems detected before any work starts.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string now_utc() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Values registered per subcommand: key -> (storage, default).
struct Options {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> handles;
    std::string config_file;

    void add(CLI::App* app, const std::string& key, const std::string& def, const std::string& help) {
        values[key] = def;
        std::string flag = "--" + key;
        for (char& ch : flag) ch = ch == '_' ? '-' : ch;
        handles[key] = app->add_option(flag, values[key], help + " [default: " + (def.empty() ? "none" : def) + "]");
    }

    /// Defaults, then the config file, then explicit flags.
    KeyValues resolve() const {
        KeyValues kv = defaults;
        if (!config_file.empty()) {
            KeyValues file;
            try {
                file = read_config_file(config_file);
            } catch (const std::exception& e) {
                throw UsageError(e.what());
            }
            for (const auto& [k, v] : file) {
                if (!handles.count(k)) throw UsageError("config " + config_file + ": unknown key '" + k + "'");
                kv[k] = v;
            }
        }
        for (const auto& [k, opt] : handles) {
            if (opt->count() > 0) kv[k] = values.at(k);
        }
        return kv;
    }

    std::map<std::string, std::string> defaults;

    void freeze_defaults() { defaults = values; }
};

template <class F>
auto usage_guard(F&& f) {
    try {
        return f();
    } catch (const UsageError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    } catch (const std::out_of_range& e) {
        throw UsageError(e.what());
    }
}

std::uint64_t to_u64(const KeyValues& kv, const std::string& key) {
    return usage_guard([&] {
        const std::string& v = kv.at(key);
        std::size_t pos = 0;
        if (v.empty() || v.front() == '-') throw std::invalid_argument("");
        const auto out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return static_cast<std::uint64_t>(out);
    });
}

double to_double(const KeyValues& kv, const std::string& key) {
    try {
        const std::string& v = kv.at(key);
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return out;
    } catch (const std::exception&) {
        throw UsageError("'" + key + "' expects a number, got '" + kv.at(key) + "'");
    }
}

class Manifest {
public:
    Manifest(std::string command, const KeyValues& config)
        : command_(std::move(command)), config_(config), start_(now_utc()) {}

    void artifact(const fs::path& p) { artifacts_.push_back(p.string()); }

    void write(const fs::path& dir, int argc, char** argv) const {
        KeyValues kv;
        kv["command"] = command_;
        std::string args;
        for (int i = 1; i < argc; ++i) args += (i > 1 ? " " : "") + std::string(argv[i]);
        kv["argv"] = args;
        for (const auto& [k, v] : config_) kv["config." + k] = v;
        if (auto it = config_.find("seed"); it != config_.end()) kv["seed"] = it->second;
        kv["config_hash"] = git_blob_hash(format_key_values(config_));
        for (std::size_t i = 0; i < artifacts_.size(); ++i) {
            char key[32];
            std::snprintf(key, sizeof key, "artifact.%03zu", i);
            kv[key] = artifacts_[i];
        }
        kv["start_time"] = start_;
        kv["end_time"] = now_utc();
        const fs::path p = dir / "manifest.txt";
        std::ofstream os(p);
        os << format_key_values(kv);
        if (!os) throw std::runtime_error("cannot write " + p.string());
    }

private:
    std::string command_;
    KeyValues config_;
    std::string start_;
    std::vector<std::string> artifacts_;
};

// ---------------------------------------------------------------------------

void add_data_options(Options& o, CLI::App* app) {
    o.add(app, "data", "", "dataset directory from gen-data; synthesised in memory when empty");
    o.add(app, "canvas", "128", "synthetic scene edge length in pixels");
    o.add(app, "scenes", "24", "synthetic scene count");
    o.add(app, "data_seed", "1", "synthetic dataset seed");
    o.add(app, "val_fraction", "0.2", "fraction of scenes held out for validation");
}

void add_train_options(Options& o, CLI::App* app) {
    add_data_options(o, app);
    o.add(app, "variant", "baseline", "baseline|sam_single|sam_multi|attn_single_control|attn_multi_control");
    o.add(app, "stage_channels", "16,32,64,128,256", "channels of the five stages");
    o.add(app, "tile", "64", "network input size (tiles are tile x tile)");
    o.add(app, "epochs", "30", "training epochs (full-scale recipe: 200)");
    o.add(app, "batch", "4", "batch size (full-scale recipe: 16)");
    o.add(app, "lr", "0.0005", "base learning rate");
    o.add(app, "poly_power", "0.9", "poly schedule power");
    o.add(app, "weight_decay", "0.0002", "weight decay");
    o.add(app, "beta1", "0.9", "Adam beta1");
    o.add(app, "beta2", "0.999", "Adam beta2");
    o.add(app, "adam_eps", "1e-08", "Adam epsilon");
    o.add(app, "decoupled_weight_decay", "true", "decoupled (true) or L2-coupled (false) weight decay");
    o.add(app, "loss_c", "1.12", "class-weight constant c in 1/ln(P + c)");
    o.add(app, "augment", "true", "random horizontal/vertical flips");
    o.add(app, "include_background", "false", "include clutter in reported means");
    o.add(app, "overlap", "0.5", "tile overlap fraction");
}

DatasetSpec dataset_spec(const KeyValues& kv) {
    DatasetSpec spec;
    spec.scene.height = spec.scene.width = to_u64(kv, "canvas");
    spec.scenes = to_u64(kv, "scenes");
    spec.seed = to_u64(kv, "data_seed");
    spec.val_fraction = to_double(kv, "val_fraction");
    if (spec.scenes < 1) throw UsageError("--scenes must be >= 1");
    if (!(spec.val_fraction >= 0.0 && spec.val_fraction < 1.0)) throw UsageError("--val-fraction must be in [0, 1)");
    usage_guard([&] {
        spec.scene.validate();
        return 0;
    });
    return spec;
}

Dataset obtain_dataset(const KeyValues& kv) {
    auto it = kv.find("data");
    if (it != kv.end() && !it->second.empty()) return load_dataset(it->second);
    return make_dataset(dataset_spec(kv));
}

NetworkConfig network_config(const KeyValues& kv) {
    return usage_guard([&] {
        KeyValues n;
        n["variant"] = kv.at("variant");
        n["stage_channels"] = kv.at("stage_channels");
        n["input_h"] = n["input_w"] = kv.at("tile");
        return parse_network_config(n);
    });
}

TrainConfig train_config(const KeyValues& kv) {
    return usage_guard([&] { return TrainConfig::from_kv(kv); });
}

void check_split(const Dataset& data, const NetworkConfig& nc) {
    for (const auto* split : {&data.train, &data.val}) {
        for (const Scene& s : *split) {
            if (s.image.shape().h < nc.input_h || s.image.shape().w < nc.input_w) {
                throw UsageError("scenes (" + s.image.shape().str() + ") are smaller than the tile size " +
                                 std::to_string(nc.input_h));
            }
        }
    }
}

// ---------------------------------------------------------------------------

struct Cmd {
    CLI::App* app;
    Options opts;
    std::function<int(const KeyValues&, Manifest&, const fs::path&)> run;
};

int cmd_gradcheck(const KeyValues& kv, Manifest& m, const fs::path& out, bool inject_fault) {
    const GradcheckScope scope = usage_guard([&] { return parse_gradcheck_scope(kv.at("scope")); });
    GradcheckOptions opt;
    opt.trials = to_u64(kv, "trials");
    opt.seed = to_u64(kv, "seed");
    opt.probes = to_u64(kv, "probes");
    opt.eps = to_double(kv, "eps");
    opt.inject_fault = inject_fault;
    if (opt.trials < 1 || opt.probes < 1 || !(opt.eps > 0.0)) {
        throw UsageError("trials and probes must be >= 1 and eps > 0");
    }
    const GradcheckReport r = run_gradcheck(scope, opt);
    const std::string text = r.format();
    std::cout << text;
    const fs::path p = out / "gradcheck.txt";
    std::ofstream(p) << text;
    m.artifact(p);
    return r.all_passed() ? 0 : kExitRuntime;
}

int cmd_gen_data(const KeyValues& kv, Manifest& m, const fs::path& out) {
    KeyValues d = kv;
    d["data_seed"] = kv.at("seed");
    const Dataset data = make_dataset(dataset_spec(d));
    save_dataset(data, out);
    m.artifact(out / "scenes.txt");
    std::size_t skipped = 0;
    for (const auto* split : {&data.train, &data.val}) {
        for (const Scene& s : *split) skipped += s.skipped;
    }
    std::cout << "wrote " << data.train.size() << " train and " << data.val.size() << " val scenes to "
              << out.string() << " (" << skipped << " objects skipped)\n";
    return 0;
}

int cmd_train(const KeyValues& kv, Manifest& m, const fs::path& out) {
    const NetworkConfig nc = network_config(kv);
    const TrainConfig cfg = train_config(kv);
    const Dataset data = obtain_dataset(kv);
    check_split(data, nc);
    Rng rng(cfg.seed);
    Network net = Network::build(nc, rng);
    std::cout << "variant " << to_string(nc.variant) << ", " << net.parameter_count() << " parameters, "
              << data.train.size() << " train scenes\n";
    const TrainResult tr = train(net, data, cfg, [](const EpochLog& e) {
        std::printf("epoch %zu loss %.6f lr %.3e train mIoU %.2f\n", e.epoch, e.loss, e.lr, 100.0 * e.metrics.mean_iou);
        std::fflush(stdout);
    });
    // only what defines the model and its data; run bookkeeping stays in the manifest
    KeyValues meta;
    for (const auto& [k, v] : kv) {
        if (k != "out" && k != "config" && !k.starts_with("explicit.")) meta[k] = v;
    }
    meta["epoch"] = std::to_string(tr.log.size());
    meta["iterations"] = std::to_string(tr.iterations);
    meta["rng_state"] = tr.rng.state();
    const fs::path ck = out / "checkpoint.bin";
    const fs::path csv = out / "metrics.csv";
    save_checkpoint(ck, net, meta);
    write_metrics_csv(csv, tr.log, cfg.include_background);
    m.artifact(ck);
    m.artifact(csv);
    return 0;
}

int cmd_eval(const KeyValues& kv, Manifest& m, const fs::path& out) {
    if (kv.at("checkpoint").empty()) throw UsageError("eval requires --checkpoint");
    const std::string split = kv.at("split");
    if (split != "train" && split != "val") throw UsageError("--split must be train or val");
    const Checkpoint ck = load_checkpoint(kv.at("checkpoint"));
    // dataset: explicit flags win, otherwise whatever the checkpoint was trained on
    KeyValues dkv = ck.meta;
    for (const char* key : {"data", "canvas", "scenes", "data_seed", "val_fraction"}) {
        if (!dkv.count(key) || kv.at(std::string("explicit.") + key) == "1") dkv[key] = kv.at(key);
    }
    const Dataset data = obtain_dataset(dkv);
    const auto& scenes = split == "val" ? data.val : data.train;
    if (scenes.empty()) throw std::runtime_error("split '" + split + "' has no scenes");
    const bool bg = kv.at("include_background") == "true";
    const double overlap = to_double(kv, "overlap");
    const std::size_t K = ck.network.config().num_classes;
    const Metrics met = metrics(evaluate(ck.network, scenes, overlap), report_classes(K, bg));
    const std::string header = metric_header(K, bg);
    const std::string row = metric_row(met, bg);
    std::cout << header << '\n' << row << '\n';
    const fs::path p = out / "eval.csv";
    std::ofstream(p) << header << '\n' << row << '\n';
    m.artifact(p);
    return 0;
}

int cmd_ablate(const KeyValues& kv, Manifest& m, const fs::path& out) {
    NetworkConfig nc = network_config(kv);
    const TrainConfig cfg = train_config(kv);
    std::vector<Variant> variants;
    usage_guard([&] {
        std::stringstream ss(kv.at("variants"));
        std::string item;
        while (std::getline(ss, item, ',')) variants.push_back(parse_variant(item));
        if (variants.empty()) throw std::invalid_argument("--variants is empty");
        return 0;
    });
    const Dataset data = obtain_dataset(kv);
    check_split(data, nc);
    const auto rows = run_ablation(data, cfg, nc, variants, [&](Variant v, const EpochLog& e) {
        std::printf("%s epoch %zu loss %.6f\n", std::string(table_name(v)).c_str(), e.epoch, e.loss);
        std::fflush(stdout);
    });
    const std::string table = format_ablation_table(rows, cfg.include_background);
    std::cout << table;
    const fs::path csv = out / "ablation.csv";
    const fs::path txt = out / "ablation.txt";
    write_ablation_csv(csv, rows, cfg.include_background);
    std::ofstream(txt) << table;
    m.artifact(csv);
    m.artifact(txt);
    return 0;
}

int cmd_export_maps(const KeyValues& kv, Manifest& m, const fs::path& out) {
    if (kv.at("checkpoint").empty()) throw UsageError("export-maps requires --checkpoint");
    const Checkpoint ck = load_checkpoint(kv.at("checkpoint"));
    Tensor4 image;
    if (!kv.at("image").empty()) {
        image = read_ppm(kv.at("image"));
    } else {
        KeyValues dkv = ck.meta;
        for (const char* key : {"data", "canvas", "scenes", "data_seed", "val_fraction"}) {
            if (!dkv.count(key)) dkv[key] = kv.at(key);
        }
        const Dataset data = obtain_dataset(dkv);
        const std::size_t idx = to_u64(kv, "scene");
        const auto& scenes = data.val.empty() ? data.train : data.val;
        if (idx >= scenes.size()) throw UsageError("--scene out of range");
        image = scenes[idx].image;
    }
    for (const fs::path& p : export_score_maps(ck.network, image, out)) m.artifact(p);
    std::cout << "wrote " << ck.network.config().num_classes << " score maps to " << out.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sanet: segmentation networks with learned re-sampling, on synthetic multi-scale scenes"};
    app.require_subcommand(1);
    std::map<std::string, Cmd> cmds;
    int threads = 0;
    bool inject_fault = false;

    auto make = [&](const std::string& name, const std::string& help, const std::string& out_default) -> Cmd& {
        Cmd& c = cmds[name];
        c.app = app.add_subcommand(name, help);
        c.app->add_option("--config", c.opts.config_file, "key=value config file; flags override it");
        c.app->add_option("--threads", threads, "worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
        c.opts.add(c.app, "out", out_default, "output directory");
        return c;
    };

    {
        Cmd& c = make("gradcheck", "finite-difference gradient checks", "runs/gradcheck");
        c.opts.add(c.app, "scope", "all", "layer|sam|network|all");
        c.opts.add(c.app, "trials", "1", "independent random trials per op");
        c.opts.add(c.app, "probes", "50", "valid probes per op and trial");
        c.opts.add(c.app, "eps", "1e-05", "central-difference step");
        c.opts.add(c.app, "seed", "0", "random seed");
        c.app->add_flag("--inject-fault", inject_fault, "corrupt analytic gradients (negative control)");
        c.run = [&](const KeyValues& kv, Manifest& m, const fs::path& out) {
            return cmd_gradcheck(kv, m, out, inject_fault);
        };
    }
    {
        Cmd& c = make("gen-data", "write a synthetic dataset", "runs/data");
        c.opts.add(c.app, "canvas", "128", "scene edge length in pixels");
        c.opts.add(c.app, "scenes", "24", "scene count");
        c.opts.add(c.app, "val_fraction", "0.2", "fraction of scenes held out for validation");
        c.opts.add(c.app, "seed", "1", "dataset seed");
        c.run = cmd_gen_data;
    }
    {
        Cmd& c = make("train", "train one network variant", "runs/train");
        add_train_options(c.opts, c.app);
        c.opts.add(c.app, "seed", "0", "initialisation and shuffling seed");
        c.run = cmd_train;
    }
    {
        Cmd& c = make("eval", "evaluate a checkpoint on whole scenes", "runs/eval");
        add_data_options(c.opts, c.app);
        c.opts.add(c.app, "checkpoint", "", "checkpoint from train");
        c.opts.add(c.app, "split", "val", "train|val");
        c.opts.add(c.app, "overlap", "0.5", "sliding-window overlap");
        c.opts.add(c.app, "include_background", "false", "include clutter in reported means");
        c.opts.add(c.app, "seed", "0", "unused; recorded in the manifest");
        c.run = cmd_eval;
    }
    {
        Cmd& c = make("ablate", "train and evaluate the five ablation variants", "runs/ablate");
        add_train_options(c.opts, c.app);
        c.opts.add(c.app, "variants", "baseline,attn_single_control,sam_single,attn_multi_control,sam_multi",
                   "comma-separated variants in table order");
        c.opts.add(c.app, "seed", "0", "initialisation and shuffling seed shared by all variants");
        c.run = cmd_ablate;
    }
    {
        Cmd& c = make("export-maps", "write per-class score maps as PGM", "runs/maps");
        add_data_options(c.opts, c.app);
        c.opts.add(c.app, "checkpoint", "", "checkpoint from train");
        c.opts.add(c.app, "image", "", "PPM image; a validation scene when empty");
        c.opts.add(c.app, "scene", "0", "validation scene index when --image is empty");
        c.opts.add(c.app, "seed", "0", "unused; recorded in the manifest");
        c.run = cmd_export_maps;
    }
    for (auto& [name, c] : cmds) c.opts.freeze_defaults();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    for (auto& [name, c] : cmds) {
        if (!c.app->parsed()) continue;
        try {
            KeyValues kv = c.opts.resolve();
            // eval needs to know which data flags were given explicitly
            for (const auto& [k, opt] : c.opts.handles) kv["explicit." + k] = opt->count() > 0 ? "1" : "0";
            KeyValues recorded;
            for (const auto& [k, v] : kv) {
                if (!k.starts_with("explicit.")) recorded[k] = v;
            }
            if (threads > 0) set_num_threads(threads);
            const fs::path out = kv.at("out");
            if (out.empty()) throw UsageError("--out must not be empty");
            try {
                fs::create_directories(out);
            } catch (const std::exception& e) {
                throw std::runtime_error(std::string("cannot create output directory: ") + e.what());
            }
            Manifest manifest(name, recorded);
            const int code = c.run(kv, manifest, out);
            manifest.write(out, argc, argv);
            return code;
        } catch (const UsageError& e) {
            std::cerr << "sanet " << name << ": " << e.what() << '\n';
            return kExitUsage;
        } catch (const std::exception& e) {
            std::cerr << "sanet " << name << ": " << e.what() << '\n';
            return kExitRuntime;
        }
    }
    return kExitUsage;
}
