#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "sanet/config.hpp"
#include "sanet/layers.hpp"
#include "sanet/sam.hpp"

namespace sanet {

class Rng;

/// Ablation variants. "single" places one block before the deepest score
/// layer, "multi" places one at the end of every stage.
enum class Variant {
    baseline,
    sam_single,
    sam_multi,
    attn_single_control,
    attn_multi_control,
};

std::string_view to_string(Variant v);
/// Throws std::invalid_argument for unknown names.
Variant parse_variant(std::string_view name);
/// Row label used in ablation tables, e.g. "FCN8s-SAM-M".
std::string_view table_name(Variant v);
/// Ablation table row order: FCN8s, SAM-SC, SAM-S, SAM-MC, SAM-M.
std::span<const Variant> ablation_order();

bool uses_sam(Variant v);
bool uses_attention(Variant v);
bool is_multi(Variant v);

struct NetworkConfig {
    static constexpr std::size_t kStages = 5;

    Variant variant = Variant::baseline;
    std::vector<std::size_t> stage_channels{16, 32, 64, 128, 256};
    std::size_t in_channels = 3;
    std::size_t num_classes = 6;
    std::size_t input_h = 64;
    std::size_t input_w = 64;

    /// Throws std::invalid_argument describing the first inconsistency.
    void validate() const;
    /// key=value lines; parse_network_config reads them back.
    std::string to_text() const;
};

NetworkConfig parse_network_config(const std::map<std::string, std::string>& kv);

// ---------------------------------------------------------------------------
// Spatial-attention control block: same convolutions as SAM, no re-sampling.

struct AttentionTape : Tape {
    Tensor4 input;
    ConvTape conv_a;
    ConvTape conv_b;
    SigmoidTape gate;
    Tensor4 attention;  ///< (n, 1, h, w), mean of the two gated channels
};

/// A = mean_k sigmoid(conv_a(x) + conv_b(x))_k;  out = x + x * A.
std::pair<Tensor4, AttentionTape> spatial_attention_control_forward(const Tensor4& input,
                                                                    const SamParams& params);
Tensor4 spatial_attention_control_backward(const Tensor4& grad_out, AttentionTape& tape,
                                           SamParams& params);

// ---------------------------------------------------------------------------

/// Mutable view of one parameter tensor and its gradient buffer.
struct ParamRef {
    std::string name;
    Shape shape;
    std::span<double> value;
    std::span<double> grad;
};

struct StageTape {
    ConvTape conv1;
    ReluTape relu1;
    ConvTape conv2;
    ReluTape relu2;
    std::variant<std::monostate, SamTape, AttentionTape> block;
};

struct NetworkTape : Tape {
    std::vector<StageTape> stages;
    ConvTape score3;
    ConvTape score4;
    ConvTape score5;
    UpsampleTape up5;
    UpsampleTape up4;
    UpsampleTape up_out;
};

/// FCN8s-style network: five [conv3x3 + ReLU + conv3x3/stride 2 + ReLU] stages,
/// optional per-stage block, 1x1 score layers on stages 3-5 fused by bilinear
/// upsampling and addition, and a final upsample to the input size.
class Network {
public:
    static Network build(const NetworkConfig& config, Rng& rng);

    const NetworkConfig& config() const { return config_; }

    /// Logits of shape (n, num_classes, input_h, input_w).
    std::pair<Tensor4, NetworkTape> forward(const Tensor4& batch) const;
    Tensor4 predict(const Tensor4& batch) const { return forward(batch).first; }
    /// Accumulates every parameter gradient; returns the input gradient.
    Tensor4 backward(const Tensor4& grad_logits, NetworkTape& tape);

    /// Parameters in declaration (checkpoint) order.
    std::vector<ParamRef> parameters();
    std::size_t parameter_count() const;
    std::size_t block_count() const;
    void zero_grads();

    /// Spatial size of stage k's output.
    std::pair<std::size_t, std::size_t> stage_size(std::size_t k) const;

private:
    struct Stage {
        ConvParams conv1;
        ConvParams conv2;
        std::optional<SamParams> block;
    };

    NetworkConfig config_;
    std::vector<Stage> stages_;
    ConvParams score3_;
    ConvParams score4_;
    ConvParams score5_;
};

// ---------------------------------------------------------------------------
// Checkpoints: u64 length + UTF-8 key=value text, then every parameter tensor
// in declaration order (biases stored as (1, 1, 1, C)).

struct Checkpoint {
    Network network;
    std::map<std::string, std::string> meta;  ///< everything in the text block
};

void save_checkpoint(const std::filesystem::path& path, Network& net,
                     const std::map<std::string, std::string>& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Score-map export

/// Per-class raw scores for a full image (sliding-window averaged when the
/// image is larger than the network input), each min-max normalised to [0, 1].
/// A constant map normalises to all zeros.
std::vector<Tensor4> score_maps(const Network& net, const Tensor4& image);

/// Writes one 8-bit PGM per class into dir; returns the written paths.
std::vector<std::filesystem::path> export_score_maps(const Network& net, const Tensor4& image,
                                                     const std::filesystem::path& dir);

}  // namespace sanet
