#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fd_oracle.hpp"
#include "sanet/network.hpp"
#include "sanet/rng.hpp"

using namespace sanet;

namespace {

NetworkConfig small_config(Variant v, std::size_t size = 64) {
    NetworkConfig c;
    c.variant = v;
    c.stage_channels = {4, 4, 8, 8, 8};
    c.input_h = c.input_w = size;
    return c;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("sanet_test_" + name);
}

}  // namespace

TEST(Variants, NamesRoundTrip) {
    for (Variant v : ablation_order()) EXPECT_EQ(parse_variant(to_string(v)), v);
    EXPECT_THROW(parse_variant("resnet"), std::invalid_argument);
    ASSERT_EQ(ablation_order().size(), 5u);
    EXPECT_EQ(table_name(ablation_order()[0]), "FCN8s");
    EXPECT_EQ(table_name(ablation_order()[1]), "FCN8s-SAM-SC");
    EXPECT_EQ(table_name(ablation_order()[2]), "FCN8s-SAM-S");
    EXPECT_EQ(table_name(ablation_order()[3]), "FCN8s-SAM-MC");
    EXPECT_EQ(table_name(ablation_order()[4]), "FCN8s-SAM-M");
}

TEST(NetworkConfig, Validation) {
    NetworkConfig c;
    EXPECT_NO_THROW(c.validate());
    c.stage_channels = {1, 2, 3};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = NetworkConfig{};
    c.input_h = 48;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = NetworkConfig{};
    c.input_h = c.input_w = 32;
    c.variant = Variant::sam_multi;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config(Variant::sam_single);
    EXPECT_EQ(parse_network_config(parse_key_values(c.to_text())).to_text(), c.to_text());
}

TEST(Network, LogitShapeForEveryVariant) {
    for (Variant v : ablation_order()) {
        Rng rng(1);
        const Network net = Network::build(small_config(v), rng);
        Rng xr(2);
        const Tensor4 logits = net.predict(randn({2, 3, 64, 64}, 0.0, 1.0, xr));
        EXPECT_EQ(logits.shape(), (Shape{2, 6, 64, 64})) << to_string(v);
    }
    Rng rng(1);
    const Network net = Network::build(small_config(Variant::baseline), rng);
    EXPECT_EQ(net.stage_size(4), (std::pair<std::size_t, std::size_t>{2, 2}));
    EXPECT_THROW(net.predict(zeros({1, 3, 32, 32})), std::invalid_argument);
}

TEST(Network, BlockCountsAndParameterParity) {
    Rng r1(1);
    Rng r2(1);
    Rng r3(1);
    Rng r4(1);
    Rng r5(1);
    const NetworkConfig full{};
    auto with = [&](Variant v) {
        NetworkConfig c = full;
        c.variant = v;
        return c;
    };
    const Network base = Network::build(with(Variant::baseline), r1);
    const Network sm = Network::build(with(Variant::sam_multi), r2);
    const Network am = Network::build(with(Variant::attn_multi_control), r3);
    const Network ss = Network::build(with(Variant::sam_single), r4);
    const Network as = Network::build(with(Variant::attn_single_control), r5);
    EXPECT_EQ(base.block_count(), 0u);
    EXPECT_EQ(sm.block_count(), 5u);
    EXPECT_EQ(am.block_count(), 5u);
    EXPECT_EQ(ss.block_count(), 1u);
    EXPECT_EQ(as.block_count(), 1u);
    auto parity = [](const Network& s, const Network& a) {
        const double ps = static_cast<double>(s.parameter_count());
        return std::abs(ps - static_cast<double>(a.parameter_count())) / ps;
    };
    EXPECT_LE(parity(sm, am), 0.005);
    EXPECT_LE(parity(ss, as), 0.005);
    EXPECT_GT(sm.parameter_count(), base.parameter_count());
}

TEST(Network, VariantsShareBackboneWeights) {
    Rng r1(5);
    Rng r2(5);
    Network a = Network::build(small_config(Variant::baseline), r1);
    Network b = Network::build(small_config(Variant::sam_multi), r2);
    auto pa = a.parameters();
    auto pb = b.parameters();
    for (const ParamRef& p : pa) {
        auto it = std::find_if(pb.begin(), pb.end(), [&](const ParamRef& q) { return q.name == p.name; });
        ASSERT_NE(it, pb.end()) << p.name;
        EXPECT_TRUE(std::equal(p.value.begin(), p.value.end(), it->value.begin())) << p.name;
    }
}

TEST(Network, ForwardIsPure) {
    Rng rng(3);
    const Network net = Network::build(small_config(Variant::sam_multi), rng);
    const Tensor4 x = randn({1, 3, 64, 64}, 0.0, 1.0, rng);
    EXPECT_EQ(net.predict(x), net.predict(x));
}

TEST(Network, ZeroInputZeroBiasGivesSpatiallyConstantLogits) {
    Rng rng(4);
    Network net = Network::build(small_config(Variant::baseline), rng);
    for (ParamRef& p : net.parameters()) {
        if (p.name.ends_with(".bias")) std::fill(p.value.begin(), p.value.end(), 0.0);
    }
    const Tensor4 logits = net.predict(zeros({1, 3, 64, 64}));
    for (std::size_t c = 0; c < 6; ++c) {
        const double* p = logits.plane(0, c);
        for (std::size_t i = 1; i < 64 * 64; ++i) ASSERT_EQ(p[i], p[0]);
    }
}

TEST(Network, FiniteDifferenceSpotCheck) {
    NetworkConfig c;
    c.stage_channels = {2, 2, 2, 2, 2};
    c.input_h = c.input_w = 32;
    Rng rng(6);
    Network net = Network::build(c, rng);
    for (ParamRef& p : net.parameters()) {
        if (p.name.ends_with(".bias")) {
            for (double& v : p.value) v = rng.normal(0.0, 0.1);
        }
    }
    const Tensor4 x = randn({1, 3, 32, 32}, 0.0, 1.0, rng);
    LabelMap labels(1, 32, 32);
    for (auto& v : labels.data) v = static_cast<std::int32_t>(rng.uniform_int(0, 5));
    const std::vector<double> w{1.0, 2.0, 1.5, 0.7, 1.0, 3.0};
    auto [logits, tape] = net.forward(x);
    net.zero_grads();
    net.backward(weighted_cross_entropy(logits, labels, w).grad_logits, tape);

    auto params = net.parameters();
    auto loss = [&] { return weighted_cross_entropy(net.predict(x), labels, w).loss; };
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        ParamRef& p = params[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1))];
        const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p.value.size()) - 1));
        worst = std::max(worst, fd::rel_err(p.grad[i], fd::partial(p.value[i], loss)));
    }
    EXPECT_LE(worst, 1e-3);
}

TEST(Network, AttentionControlZeroWeights) {
    Rng rng(7);
    SamParams p = sam_init(3, 5, 5, rng);
    for (double& v : p.conv_a.weight.data()) v = 0.0;
    for (double& v : p.conv_b.weight.data()) v = 0.0;
    const Tensor4 x = randn({1, 3, 5, 5}, 0.0, 1.0, rng);
    EXPECT_LE(max_abs_diff(spatial_attention_control_forward(x, p).first, scale(x, 1.5)), 1e-15);
}

TEST(Network, AttentionControlFiniteDifference) {
    Rng rng(8);
    SamParams p = sam_init(3, 6, 6, rng, 0.2);
    Tensor4 x = randn({1, 3, 6, 6}, 0.0, 1.0, rng);
    auto [y, tape] = spatial_attention_control_forward(x, p);
    const Tensor4 g = randn(y.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = spatial_attention_control_backward(g, tape, p);
    auto loss = [&] { return dot(g, spatial_attention_control_forward(x, p).first); };
    EXPECT_LE(fd::max_error(x.data(), gx.data(), loss), 1e-5);
    EXPECT_LE(fd::max_error(p.conv_a.weight.data(), p.conv_a.grad_weight.data(), loss), 1e-5);
    EXPECT_LE(fd::max_error(p.conv_b.weight.data(), p.conv_b.grad_weight.data(), loss), 1e-5);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    for (Variant v : {Variant::baseline, Variant::sam_multi, Variant::attn_single_control}) {
        Rng rng(9);
        Network net = Network::build(small_config(v), rng);
        const auto path = temp_path("ckpt.bin");
        save_checkpoint(path, net, {{"epoch", "3"}, {"note", "hello world"}});
        const Checkpoint ck = load_checkpoint(path);
        EXPECT_EQ(ck.meta.at("epoch"), "3");
        EXPECT_EQ(ck.meta.at("note"), "hello world");
        EXPECT_EQ(ck.network.config().to_text(), net.config().to_text());
        const Tensor4 x = randn({1, 3, 64, 64}, 0.0, 1.0, rng);
        EXPECT_EQ(ck.network.predict(x), net.predict(x)) << to_string(v);
        std::filesystem::remove(path);
    }
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const auto path = temp_path("bad.bin");
    std::ofstream(path) << "not a checkpoint at all";
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);
    EXPECT_THROW(load_checkpoint(temp_path("missing.bin")), std::runtime_error);

    Rng rng(10);
    Network net = Network::build(small_config(Variant::baseline), rng);
    save_checkpoint(path, net, {});
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 8);
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(ScoreMaps, ShapesRangeAndConstantNet) {
    Rng rng(11);
    Network net = Network::build(small_config(Variant::sam_single), rng);
    const Tensor4 image = rand_uniform({1, 3, 96, 96}, 0.0, 1.0, rng);
    const auto maps = score_maps(net, image);
    ASSERT_EQ(maps.size(), 6u);
    for (const Tensor4& m : maps) {
        EXPECT_EQ(m.shape(), (Shape{1, 1, 96, 96}));
        for (double v : m.data()) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
    }

    for (ParamRef& p : net.parameters()) std::fill(p.value.begin(), p.value.end(), 0.0);
    for (const Tensor4& m : score_maps(net, image)) EXPECT_EQ(max_abs(m), 0.0);

    const auto dir = temp_path("maps");
    const auto paths = export_score_maps(net, image, dir);
    EXPECT_EQ(paths.size(), 6u);
    for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p));
    std::filesystem::remove_all(dir);
}
