#include "sanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>

#include "sanet/layers.hpp"
#include "sanet/network.hpp"
#include "sanet/rng.hpp"
#include "sanet/sam.hpp"

namespace sanet {

namespace {

using Signature = std::vector<std::int64_t>;

struct Eval {
    double loss = 0.0;
    Signature sig;
};

struct Candidate {
    double* ptr;
    double analytic;
};

void add_candidates(std::vector<Candidate>& out, std::span<double> values, std::span<const double> grads) {
    for (std::size_t i = 0; i < values.size(); ++i) out.push_back({&values[i], grads[i]});
}

void add_candidates(std::vector<Candidate>& out, Tensor4& values, const Tensor4& grads) {
    add_candidates(out, values.data(), grads.data());
}

void add_candidates(std::vector<Candidate>& out, ConvParams& p) {
    add_candidates(out, p.weight, p.grad_weight);
    add_candidates(out, p.bias, p.grad_bias);
}

void relu_signature(Signature& sig, const Tensor4& pre) {
    for (double v : pre.data()) sig.push_back(v > 0.0);
}

// Bilinear cell indices of a sampling map.
void cell_signature(Signature& sig, const ResampleMap& map) {
    const Shape& s = map.coords.shape();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < 2; ++c) {
            const std::size_t extent = c == 0 ? s.w : s.h;
            const double* p = map.coords.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                sig.push_back(static_cast<std::int64_t>(std::floor(to_pixel(p[i], extent))));
            }
        }
    }
}

void sam_signature(Signature& sig, const SamTape& tape) {
    for (double v : tape.unclamped.data()) sig.push_back(v > -1.0 && v < 1.0);
    cell_signature(sig, tape.map);
}

/// Accumulates probe results for one op across trials.
class Checker {
public:
    Checker(std::string op, double tolerance, const GradcheckOptions& opt)
        : opt_(opt) {
        entry_.op = std::move(op);
        entry_.tolerance = tolerance;
        entry_.pass = true;
    }

    void run(std::vector<Candidate> cands, const std::function<Eval()>& f, Rng& rng) {
        if (opt_.inject_fault) {
            for (Candidate& c : cands) c.analytic = c.analytic * 1.01 + 1e-2;
        }
        for (std::size_t i = cands.size(); i-- > 1;) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(cands[i], cands[j]);
        }
        std::size_t valid = 0;
        for (std::size_t k = 0; k < cands.size() && valid < opt_.probes; ++k) {
            double& v = *cands[k].ptr;
            const double saved = v;
            v = saved + opt_.eps;
            const Eval plus = f();
            v = saved - opt_.eps;
            const Eval minus = f();
            v = saved;
            if (plus.sig != minus.sig) {
                ++entry_.skipped;
                continue;
            }
            const double numeric = (plus.loss - minus.loss) / (2.0 * opt_.eps);
            const double err = relative_error(cands[k].analytic, numeric);
            if (!(err <= entry_.max_rel_error)) entry_.max_rel_error = std::isnan(err) ? INFINITY : err;
            ++valid;
        }
        entry_.probes += valid;
        if (valid < opt_.probes) entry_.pass = false;
    }

    GradcheckEntry finish() {
        entry_.pass = entry_.pass && entry_.max_rel_error <= entry_.tolerance;
        return entry_;
    }

private:
    const GradcheckOptions& opt_;
    GradcheckEntry entry_;
};

using OpTrial = std::function<void(Checker&, Rng&)>;

void check_conv(Checker& ck, Rng& rng, std::size_t stride) {
    Tensor4 x = randn({2, 3, 7, 8}, 0.0, 1.0, rng);
    ConvParams p = ConvParams::he_normal(4, 3, 3, rng);
    for (double& b : p.bias) b = rng.normal(0.0, 0.1);
    auto [out, tape] = conv2d_forward(x, p, stride, 1);
    const Tensor4 g = randn(out.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = conv2d_backward(g, tape, p);
    std::vector<Candidate> c;
    add_candidates(c, x, gx);
    add_candidates(c, p);
    ck.run(c, [&] { return Eval{dot(g, conv2d_forward(x, p, stride, 1).first), {}}; }, rng);
}

void check_relu(Checker& ck, Rng& rng) {
    Tensor4 x = randn({2, 3, 5, 5}, 0.0, 1.0, rng);
    auto [out, tape] = relu_forward(x);
    const Tensor4 g = randn(out.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = relu_backward(g, tape);
    std::vector<Candidate> c;
    add_candidates(c, x, gx);
    ck.run(c, [&] {
        Eval e{dot(g, relu_forward(x).first), {}};
        relu_signature(e.sig, x);
        return e;
    }, rng);
}

void check_sigmoid(Checker& ck, Rng& rng) {
    Tensor4 x = randn({2, 3, 5, 5}, 0.0, 2.0, rng);
    auto [out, tape] = sigmoid_forward(x);
    const Tensor4 g = randn(out.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = sigmoid_backward(g, tape);
    std::vector<Candidate> c;
    add_candidates(c, x, gx);
    ck.run(c, [&] { return Eval{dot(g, sigmoid_forward(x).first), {}}; }, rng);
}

void check_bilinear(Checker& ck, Rng& rng) {
    Tensor4 x = randn({2, 3, 6, 7}, 0.0, 1.0, rng);
    ResampleMap map{zeros({2, 2, 6, 7})};
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t ch = 0; ch < 2; ++ch) {
            const std::size_t extent = ch == 0 ? 7 : 6;
            double* p = map.coords.plane(n, ch);
            for (std::size_t i = 0; i < 42; ++i) {
                // keep every coordinate at least 1e-3 pixel away from a cell edge
                double u = 0.0;
                double px = 0.0;
                do {
                    u = rng.uniform(-0.95, 0.95);
                    px = to_pixel(u, extent);
                } while (std::abs(px - std::round(px)) < 1e-3);
                p[i] = u;
            }
        }
    }
    auto [out, tape] = bilinear_sample_forward(x, map);
    const Tensor4 g = randn(out.shape(), 0.0, 1.0, rng);
    SampleGrads grads = bilinear_sample_backward(g, tape);
    std::vector<Candidate> c;
    add_candidates(c, x, grads.input);
    add_candidates(c, map.coords, grads.map);
    ck.run(c, [&] {
        Eval e{dot(g, bilinear_sample_forward(x, map).first), {}};
        cell_signature(e.sig, map);
        return e;
    }, rng);
}

void check_upsample(Checker& ck, Rng& rng) {
    Tensor4 x = randn({2, 3, 4, 5}, 0.0, 1.0, rng);
    auto [out, tape] = upsample_bilinear(x, 7, 9);
    const Tensor4 g = randn(out.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = upsample_bilinear_backward(g, tape);
    std::vector<Candidate> c;
    add_candidates(c, x, gx);
    ck.run(c, [&] { return Eval{dot(g, upsample_bilinear(x, 7, 9).first), {}}; }, rng);
}

LabelMap random_labels(std::size_t n, std::size_t h, std::size_t w, std::size_t k, Rng& rng) {
    LabelMap l(n, h, w);
    for (auto& v : l.data) {
        v = rng.bernoulli(0.1) ? LabelMap::kIgnore
                               : static_cast<std::int32_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
    }
    return l;
}

void check_cross_entropy(Checker& ck, Rng& rng) {
    Tensor4 logits = randn({2, 4, 3, 5}, 0.0, 2.0, rng);
    const LabelMap labels = random_labels(2, 3, 5, 4, rng);
    std::vector<double> w(4);
    for (double& v : w) v = rng.uniform(0.5, 2.0);
    const CrossEntropyResult r = weighted_cross_entropy(logits, labels, w);
    std::vector<Candidate> c;
    add_candidates(c, logits, r.grad_logits);
    ck.run(c, [&] { return Eval{weighted_cross_entropy(logits, labels, w).loss, {}}; }, rng);
}

void check_sam(Checker& ck, Rng& rng) {
    Tensor4 x = randn({1, 4, 8, 8}, 0.0, 1.0, rng);
    SamParams p = sam_init(4, 8, 8, rng, 0.15);
    auto [out, tape] = sam_forward(x, p);
    const Tensor4 g = randn(out.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = sam_backward(g, tape, p);
    std::vector<Candidate> c;
    add_candidates(c, x, gx);
    add_candidates(c, p.conv_a);
    add_candidates(c, p.conv_b);
    ck.run(c, [&] {
        auto [y, t] = sam_forward(x, p);
        Eval e{dot(g, y), {}};
        sam_signature(e.sig, t);
        return e;
    }, rng);
}

void check_attention(Checker& ck, Rng& rng) {
    Tensor4 x = randn({1, 4, 8, 8}, 0.0, 1.0, rng);
    SamParams p = sam_init(4, 8, 8, rng, 0.15);
    auto [out, tape] = spatial_attention_control_forward(x, p);
    const Tensor4 g = randn(out.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = spatial_attention_control_backward(g, tape, p);
    std::vector<Candidate> c;
    add_candidates(c, x, gx);
    add_candidates(c, p.conv_a);
    add_candidates(c, p.conv_b);
    ck.run(c, [&] { return Eval{dot(g, spatial_attention_control_forward(x, p).first), {}}; }, rng);
}

void check_network(Checker& ck, Rng& rng, Variant variant) {
    NetworkConfig cfg;
    cfg.variant = variant;
    cfg.stage_channels = {2, 2, 2, 2, 2};
    cfg.input_h = cfg.input_w = variant == Variant::baseline ? 32 : 64;
    Network net = Network::build(cfg, rng);
    std::vector<ParamRef> params = net.parameters();
    // the default block init is too small for its gradients to register
    for (ParamRef& p : params) {
        if (p.name.find(".block.") == std::string::npos) continue;
        for (double& v : p.value) v *= 100.0;
    }
    for (ParamRef& p : params) {
        if (p.name.find("bias") == std::string::npos) continue;
        for (double& v : p.value) v = rng.normal(0.0, 0.1);
    }
    Tensor4 x = randn({1, cfg.in_channels, cfg.input_h, cfg.input_w}, 0.0, 1.0, rng);
    const LabelMap labels = random_labels(1, cfg.input_h, cfg.input_w, cfg.num_classes, rng);
    std::vector<double> w(cfg.num_classes);
    for (double& v : w) v = rng.uniform(0.5, 2.0);

    auto [logits, tape] = net.forward(x);
    const CrossEntropyResult r = weighted_cross_entropy(logits, labels, w);
    net.zero_grads();
    const Tensor4 gx = net.backward(r.grad_logits, tape);
    std::vector<Candidate> c;
    add_candidates(c, x, gx);
    for (ParamRef& p : params) add_candidates(c, p.value, p.grad);
    ck.run(c, [&] {
        auto [y, t] = net.forward(x);
        Eval e{weighted_cross_entropy(y, labels, w).loss, {}};
        for (const StageTape& st : t.stages) {
            relu_signature(e.sig, st.relu1.input);
            relu_signature(e.sig, st.relu2.input);
            if (const auto* s = std::get_if<SamTape>(&st.block)) sam_signature(e.sig, *s);
        }
        return e;
    }, rng);
}

struct OpSpec {
    const char* name;
    double tolerance;
    GradcheckScope scope;
    OpTrial trial;
};

std::vector<OpSpec> op_specs() {
    using S = GradcheckScope;
    return {
        {"conv2d_s1", 1e-6, S::layer, [](Checker& c, Rng& r) { check_conv(c, r, 1); }},
        {"conv2d_s2", 1e-6, S::layer, [](Checker& c, Rng& r) { check_conv(c, r, 2); }},
        {"relu", 1e-6, S::layer, check_relu},
        {"sigmoid", 1e-8, S::layer, check_sigmoid},
        {"bilinear_sample", 1e-5, S::layer, check_bilinear},
        {"upsample_bilinear", 1e-6, S::layer, check_upsample},
        {"weighted_cross_entropy", 1e-6, S::layer, check_cross_entropy},
        {"sam", 1e-5, S::sam, check_sam},
        {"attention_control", 1e-5, S::sam, check_attention},
        {"network_baseline", 1e-4, S::network,
         [](Checker& c, Rng& r) { check_network(c, r, Variant::baseline); }},
        {"network_sam_multi", 1e-4, S::network,
         [](Checker& c, Rng& r) { check_network(c, r, Variant::sam_multi); }},
        {"network_attn_multi_control", 1e-4, S::network,
         [](Checker& c, Rng& r) { check_network(c, r, Variant::attn_multi_control); }},
    };
}

}  // namespace

GradcheckScope parse_gradcheck_scope(std::string_view name) {
    if (name == "layer") return GradcheckScope::layer;
    if (name == "sam") return GradcheckScope::sam;
    if (name == "network") return GradcheckScope::network;
    if (name == "all") return GradcheckScope::all;
    throw std::invalid_argument("unknown gradcheck scope '" + std::string(name) +
                                "' (expected layer, sam, network or all)");
}

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1.0});
}

bool GradcheckReport::all_passed() const {
    return !entries.empty() &&
           std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.pass; });
}

std::string GradcheckReport::format() const {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-28s %12s %10s %7s %8s  %s\n", "op", "max_rel_err", "tol", "probes",
                  "skipped", "result");
    out += buf;
    std::size_t passed = 0;
    for (const GradcheckEntry& e : entries) {
        std::snprintf(buf, sizeof buf, "%-28s %12.3e %10.1e %7zu %8zu  %s\n", e.op.c_str(), e.max_rel_error,
                      e.tolerance, e.probes, e.skipped, e.pass ? "PASS" : "FAIL");
        out += buf;
        passed += e.pass;
    }
    std::snprintf(buf, sizeof buf, "%zu/%zu ops passed\n", passed, entries.size());
    out += buf;
    return out;
}

GradcheckReport run_gradcheck(GradcheckScope scope, const GradcheckOptions& options) {
    if (options.trials < 1) throw std::invalid_argument("gradcheck: trials must be >= 1");
    if (options.probes < 1) throw std::invalid_argument("gradcheck: probes must be >= 1");
    if (!(options.eps > 0.0)) throw std::invalid_argument("gradcheck: eps must be > 0");
    GradcheckReport report;
    Rng rng(options.seed);
    for (const OpSpec& spec : op_specs()) {
        if (scope != GradcheckScope::all && scope != spec.scope) continue;
        Checker ck(spec.name, spec.tolerance, options);
        for (std::size_t t = 0; t < options.trials; ++t) {
            Rng trial_rng(rng.next_u64());
            spec.trial(ck, trial_rng);
        }
        report.entries.push_back(ck.finish());
    }
    return report;
}

}  // namespace sanet
