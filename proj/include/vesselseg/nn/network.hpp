#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vesselseg/nn/layers.hpp"
#include "vesselseg/prediction.hpp"

namespace vseg::nn {

enum class Variant { conv_unet, windowed_attention_unet };

struct NetworkConfig {
    Variant variant = Variant::conv_unet;
    int base_channels = 8;
    int depth = 2;   // number of downsamplings
    int window = 4;  // attention variant
    int heads = 2;   // attention variant
    int patch_size = 32;
    std::uint64_t init_seed = 0;

    /// Patch/depth/window compatibility. Throws on violation.
    void validate() const;

    std::string to_json() const;
    static NetworkConfig from_json(const std::string& json_text);
    bool operator==(const NetworkConfig&) const = default;
};

/// Patch -> per-voxel 2-class probabilities, with deterministic seeded
/// initialization and a snapshot/load interface for EMA coupling.
///
/// Instances are single-threaded: forward_training/backward mutate internal
/// caches. Clone (build + load) per thread for parallel inference.
class SegmentationNetwork {
public:
    explicit SegmentationNetwork(const NetworkConfig& cfg);
    SegmentationNetwork(SegmentationNetwork&&) noexcept;
    SegmentationNetwork& operator=(SegmentationNetwork&&) noexcept;
    ~SegmentationNetwork();

    const NetworkConfig& config() const { return cfg_; }

    /// Inference forward: softmax probabilities, no dropout, no cache kept.
    Prediction forward(const Tensor& patch_image);

    /// Training forward; retains activations for the following backward.
    Prediction forward_training(const Tensor& patch_image);

    /// Backpropagates d(loss)/d(probabilities), accumulating parameter grads.
    void backward(const Tensor& grad_probabilities);

    void zero_grads();

    /// Stable-ordered views over every parameter and its gradient.
    std::vector<NamedParam> parameters();

    /// Deep copy of all parameters.
    std::map<std::string, Tensor> snapshot_parameters();

    /// Loads a snapshot; names and shapes must match exactly.
    void load_parameters(const std::map<std::string, Tensor>& params);

private:
    struct Backbone;
    struct ConvUNet;
    struct AttnUNet;

    NetworkConfig cfg_;
    std::unique_ptr<Backbone> impl_;
    ChannelSoftmax softmax_;
};

SegmentationNetwork build_network(const NetworkConfig& cfg);

/// Checkpoint container: embedded config JSON plus named float64 tensors
/// (little-endian). Format details in the README.
void save_tensors(const std::string& path, const NetworkConfig& cfg,
                  const std::map<std::string, Tensor>& tensors);
struct LoadedCheckpoint {
    NetworkConfig config;
    std::map<std::string, Tensor> tensors;
};
LoadedCheckpoint load_tensors(const std::string& path);

}  // namespace vseg::nn
