#include "sanet/network.hpp"

#include <algorithm>
#include <array>
#include <sstream>
#include <stdexcept>

#include "sanet/rng.hpp"

namespace sanet {

namespace {

constexpr std::array<Variant, 5> kAblationOrder = {
    Variant::baseline, Variant::attn_single_control, Variant::sam_single,
    Variant::attn_multi_control, Variant::sam_multi};

std::size_t halve(std::size_t extent) { return (extent + 1) / 2; }

}  // namespace

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::sam_single: return "sam_single";
        case Variant::sam_multi: return "sam_multi";
        case Variant::attn_single_control: return "attn_single_control";
        case Variant::attn_multi_control: return "attn_multi_control";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    for (Variant v : kAblationOrder) {
        if (to_string(v) == name) return v;
    }
    throw std::invalid_argument("unknown variant '" + std::string(name) +
                                "' (expected baseline, sam_single, sam_multi, "
                                "attn_single_control or attn_multi_control)");
}

std::string_view table_name(Variant v) {
    switch (v) {
        case Variant::baseline: return "FCN8s";
        case Variant::sam_single: return "FCN8s-SAM-S";
        case Variant::sam_multi: return "FCN8s-SAM-M";
        case Variant::attn_single_control: return "FCN8s-SAM-SC";
        case Variant::attn_multi_control: return "FCN8s-SAM-MC";
    }
    return "unknown";
}

std::span<const Variant> ablation_order() { return kAblationOrder; }

bool uses_sam(Variant v) { return v == Variant::sam_single || v == Variant::sam_multi; }

bool uses_attention(Variant v) {
    return v == Variant::attn_single_control || v == Variant::attn_multi_control;
}

bool is_multi(Variant v) { return v == Variant::sam_multi || v == Variant::attn_multi_control; }

void NetworkConfig::validate() const {
    if (stage_channels.size() != kStages) {
        throw std::invalid_argument("network config: expected 5 stage channel counts, got " +
                                    std::to_string(stage_channels.size()));
    }
    for (std::size_t c : stage_channels) {
        if (c == 0) throw std::invalid_argument("network config: stage channels must be >= 1");
    }
    if (in_channels == 0) throw std::invalid_argument("network config: in_channels must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("network config: num_classes must be >= 2");
    if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0) {
        throw std::invalid_argument("network config: input size must be a positive multiple of 32");
    }
    if (variant != Variant::baseline && (input_h < 64 || input_w < 64)) {
        // The deepest stage must be at least 2x2 for a normalized sampling grid.
        throw std::invalid_argument("network config: block variants need input size >= 64");
    }
}

std::string NetworkConfig::to_text() const {
    std::map<std::string, std::string> kv;
    kv["variant"] = std::string(to_string(variant));
    std::string chans;
    for (std::size_t i = 0; i < stage_channels.size(); ++i) {
        if (i) chans += ',';
        chans += std::to_string(stage_channels[i]);
    }
    kv["stage_channels"] = chans;
    kv["in_channels"] = std::to_string(in_channels);
    kv["num_classes"] = std::to_string(num_classes);
    kv["input_h"] = std::to_string(input_h);
    kv["input_w"] = std::to_string(input_w);
    return format_key_values(kv);
}

NetworkConfig parse_network_config(const std::map<std::string, std::string>& kv) {
    NetworkConfig cfg;
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto* v = get("variant")) cfg.variant = parse_variant(*v);
    if (auto* v = get("stage_channels")) {
        cfg.stage_channels.clear();
        std::stringstream ss(*v);
        std::string item;
        while (std::getline(ss, item, ',')) cfg.stage_channels.push_back(std::stoul(item));
    }
    if (auto* v = get("in_channels")) cfg.in_channels = std::stoul(*v);
    if (auto* v = get("num_classes")) cfg.num_classes = std::stoul(*v);
    if (auto* v = get("input_h")) cfg.input_h = std::stoul(*v);
    if (auto* v = get("input_w")) cfg.input_w = std::stoul(*v);
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------

std::pair<Tensor4, AttentionTape> spatial_attention_control_forward(const Tensor4& input,
                                                                    const SamParams& params) {
    const Shape& s = input.shape();
    if (s.c != params.channels()) {
        throw std::invalid_argument("spatial_attention_control_forward: input " + s.str() +
                                    " does not match block channels " +
                                    std::to_string(params.channels()));
    }
    auto [pre_a, tape_a] = conv2d_forward(input, params.conv_a, 1, 1);
    auto [pre_b, tape_b] = conv2d_forward(input, params.conv_b, 1, 1);
    auto [gated, gate_tape] = sigmoid_forward(add(pre_a, pre_b));

    const std::size_t k = gated.shape().c;
    Tensor4 attention({s.n, 1, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                double m = 0.0;
                for (std::size_t c = 0; c < k; ++c) m += gated.at(n, c, i, j);
                attention.at(n, 0, i, j) = m / static_cast<double>(k);
            }
        }
    }
    Tensor4 out = input;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < s.h; ++i) {
                for (std::size_t j = 0; j < s.w; ++j) {
                    out.at(n, c, i, j) += input.at(n, c, i, j) * attention.at(n, 0, i, j);
                }
            }
        }
    }
    AttentionTape tape;
    tape.input = input;
    tape.conv_a = std::move(tape_a);
    tape.conv_b = std::move(tape_b);
    tape.gate = std::move(gate_tape);
    tape.attention = std::move(attention);
    return {std::move(out), std::move(tape)};
}

Tensor4 spatial_attention_control_backward(const Tensor4& grad_out, AttentionTape& tape,
                                           SamParams& params) {
    require_same_shape(grad_out.shape(), tape.input.shape(), "spatial_attention_control_backward");
    tape.consume("spatial_attention_control_backward");
    const Tensor4& x = tape.input;
    const Shape& s = x.shape();
    Tensor4 grad_in(s);
    Tensor4 grad_att({s.n, 1, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < s.h; ++i) {
                for (std::size_t j = 0; j < s.w; ++j) {
                    const double g = grad_out.at(n, c, i, j);
                    grad_in.at(n, c, i, j) = g * (1.0 + tape.attention.at(n, 0, i, j));
                    grad_att.at(n, 0, i, j) += g * x.at(n, c, i, j);
                }
            }
        }
    }
    const Shape gate_shape = tape.gate.output.shape();
    Tensor4 grad_gated(gate_shape);
    const double inv_k = 1.0 / static_cast<double>(gate_shape.c);
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < gate_shape.c; ++c) {
            for (std::size_t i = 0; i < s.h; ++i) {
                for (std::size_t j = 0; j < s.w; ++j) {
                    grad_gated.at(n, c, i, j) = grad_att.at(n, 0, i, j) * inv_k;
                }
            }
        }
    }
    const Tensor4 grad_pre = sigmoid_backward(grad_gated, tape.gate);
    grad_in = add(grad_in, conv2d_backward(grad_pre, tape.conv_a, params.conv_a));
    grad_in = add(grad_in, conv2d_backward(grad_pre, tape.conv_b, params.conv_b));
    return grad_in;
}

// ---------------------------------------------------------------------------

Network Network::build(const NetworkConfig& config, Rng& rng) {
    config.validate();
    // Blocks draw from their own stream so every variant shares backbone weights.
    Rng block_rng(rng.next_u64());
    Network net;
    net.config_ = config;
    std::size_t c_in = config.in_channels;
    std::size_t h = config.input_h;
    std::size_t w = config.input_w;
    for (std::size_t k = 0; k < NetworkConfig::kStages; ++k) {
        const std::size_t c = config.stage_channels[k];
        Stage stage;
        stage.conv1 = ConvParams::he_normal(c, c_in, 3, rng);
        stage.conv2 = ConvParams::he_normal(c, c, 3, rng);
        h = halve(h);
        w = halve(w);
        const bool last = k + 1 == NetworkConfig::kStages;
        if (config.variant != Variant::baseline && (is_multi(config.variant) || last)) {
            stage.block = sam_init(c, h, w, block_rng);
        }
        net.stages_.push_back(std::move(stage));
        c_in = c;
    }
    const std::size_t K = config.num_classes;
    net.score3_ = ConvParams::he_normal(K, config.stage_channels[2], 1, rng);
    net.score4_ = ConvParams::he_normal(K, config.stage_channels[3], 1, rng);
    net.score5_ = ConvParams::he_normal(K, config.stage_channels[4], 1, rng);
    return net;
}

std::pair<std::size_t, std::size_t> Network::stage_size(std::size_t k) const {
    std::size_t h = config_.input_h;
    std::size_t w = config_.input_w;
    for (std::size_t i = 0; i <= k; ++i) {
        h = halve(h);
        w = halve(w);
    }
    return {h, w};
}

std::pair<Tensor4, NetworkTape> Network::forward(const Tensor4& batch) const {
    const Shape& s = batch.shape();
    if (s.c != config_.in_channels || s.h != config_.input_h || s.w != config_.input_w) {
        throw std::invalid_argument("Network::forward: batch " + s.str() + " does not match config (" +
                                    std::to_string(config_.in_channels) + ", " +
                                    std::to_string(config_.input_h) + "x" +
                                    std::to_string(config_.input_w) + ")");
    }
    NetworkTape tape;
    tape.stages.resize(NetworkConfig::kStages);
    std::vector<Tensor4> outputs;
    outputs.reserve(NetworkConfig::kStages);

    Tensor4 x = batch;
    for (std::size_t k = 0; k < NetworkConfig::kStages; ++k) {
        const Stage& stage = stages_[k];
        StageTape& st = tape.stages[k];
        auto [c1, t1] = conv2d_forward(x, stage.conv1, 1, 1);
        auto [r1, rt1] = relu_forward(c1);
        auto [c2, t2] = conv2d_forward(r1, stage.conv2, 2, 1);
        auto [r2, rt2] = relu_forward(c2);
        st.conv1 = std::move(t1);
        st.relu1 = std::move(rt1);
        st.conv2 = std::move(t2);
        st.relu2 = std::move(rt2);
        x = std::move(r2);
        if (stage.block) {
            if (uses_sam(config_.variant)) {
                auto [y, bt] = sam_forward(x, *stage.block);
                st.block = std::move(bt);
                x = std::move(y);
            } else {
                auto [y, bt] = spatial_attention_control_forward(x, *stage.block);
                st.block = std::move(bt);
                x = std::move(y);
            }
        }
        outputs.push_back(x);
    }

    auto [s5, ts5] = conv2d_forward(outputs[4], score5_);
    auto [s4, ts4] = conv2d_forward(outputs[3], score4_);
    auto [s3, ts3] = conv2d_forward(outputs[2], score3_);
    auto [u5, tu5] = upsample_bilinear(s5, s4.shape().h, s4.shape().w);
    auto [u4, tu4] = upsample_bilinear(add(u5, s4), s3.shape().h, s3.shape().w);
    auto [logits, tuo] = upsample_bilinear(add(u4, s3), config_.input_h, config_.input_w);
    tape.score3 = std::move(ts3);
    tape.score4 = std::move(ts4);
    tape.score5 = std::move(ts5);
    tape.up5 = std::move(tu5);
    tape.up4 = std::move(tu4);
    tape.up_out = std::move(tuo);
    return {std::move(logits), std::move(tape)};
}

Tensor4 Network::backward(const Tensor4& grad_logits, NetworkTape& tape) {
    tape.consume("Network::backward");
    const Tensor4 g_f3 = upsample_bilinear_backward(grad_logits, tape.up_out);
    const Tensor4 g_f4 = upsample_bilinear_backward(g_f3, tape.up4);
    const Tensor4 g_s5 = upsample_bilinear_backward(g_f4, tape.up5);

    std::vector<Tensor4> g_out(NetworkConfig::kStages);
    g_out[2] = conv2d_backward(g_f3, tape.score3, score3_);
    g_out[3] = conv2d_backward(g_f4, tape.score4, score4_);
    g_out[4] = conv2d_backward(g_s5, tape.score5, score5_);

    Tensor4 g = g_out[4];
    for (std::size_t k = NetworkConfig::kStages; k-- > 0;) {
        Stage& stage = stages_[k];
        StageTape& st = tape.stages[k];
        if (k < 4 && !g_out[k].empty()) g = add(g, g_out[k]);
        if (auto* sam_tape = std::get_if<SamTape>(&st.block)) {
            g = sam_backward(g, *sam_tape, *stage.block);
        } else if (auto* att_tape = std::get_if<AttentionTape>(&st.block)) {
            g = spatial_attention_control_backward(g, *att_tape, *stage.block);
        }
        g = relu_backward(g, st.relu2);
        g = conv2d_backward(g, st.conv2, stage.conv2);
        g = relu_backward(g, st.relu1);
        g = conv2d_backward(g, st.conv1, stage.conv1);
    }
    return g;
}

namespace {

void append_conv(std::vector<ParamRef>& refs, const std::string& name, ConvParams& p) {
    refs.push_back({name + ".weight", p.weight.shape(), p.weight.data(), p.grad_weight.data()});
    if (p.has_bias()) {
        refs.push_back({name + ".bias", Shape{1, 1, 1, p.bias.size()}, p.bias, p.grad_bias});
    }
}

}  // namespace

std::vector<ParamRef> Network::parameters() {
    std::vector<ParamRef> refs;
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        const std::string prefix = "stage" + std::to_string(k + 1);
        append_conv(refs, prefix + ".conv1", stages_[k].conv1);
        append_conv(refs, prefix + ".conv2", stages_[k].conv2);
        if (stages_[k].block) {
            append_conv(refs, prefix + ".block.conv_a", stages_[k].block->conv_a);
            append_conv(refs, prefix + ".block.conv_b", stages_[k].block->conv_b);
        }
    }
    append_conv(refs, "score3", score3_);
    append_conv(refs, "score4", score4_);
    append_conv(refs, "score5", score5_);
    return refs;
}

std::size_t Network::parameter_count() const {
    std::size_t total = score3_.parameter_count() + score4_.parameter_count() +
                        score5_.parameter_count();
    for (const Stage& s : stages_) {
        total += s.conv1.parameter_count() + s.conv2.parameter_count();
        if (s.block) total += s.block->parameter_count();
    }
    return total;
}

std::size_t Network::block_count() const {
    return static_cast<std::size_t>(
        std::count_if(stages_.begin(), stages_.end(), [](const Stage& s) { return s.block.has_value(); }));
}

void Network::zero_grads() {
    for (Stage& s : stages_) {
        s.conv1.zero_grads();
        s.conv2.zero_grads();
        if (s.block) s.block->zero_grads();
    }
    score3_.zero_grads();
    score4_.zero_grads();
    score5_.zero_grads();
}

}  // namespace sanet
