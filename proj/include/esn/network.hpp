#pragma once

#include "esn/checkpoint.hpp"
#include "esn/matching.hpp"
#include "esn/tensor.hpp"

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

namespace esn {

enum class Variant { ESNet, ESNetM, BaselineNoFMM, PWCAllScales };
enum class SizePreset { Tiny, Small, PaperScale };

Variant variant_from_string(const std::string& s);
SizePreset preset_from_string(const std::string& s);
std::string to_string(Variant v);
std::string to_string(SizePreset p);

struct NetworkConfig {
    Variant variant = Variant::ESNet;
    SizePreset preset = SizePreset::PaperScale;
    // Channel widths for scales 0..6; all zeros means "use the preset".
    std::array<int, 7> channels{};
    int d_max_base = 40;
    std::vector<int> fmm_offsets = {-2, -1, 0, 1, 2};
    // Residual blocks per extractor scale; 0 means "use the preset".
    int blocks_per_scale = 0;

    std::array<int, 7> resolved_channels() const;
    int resolved_blocks() const;
    void validate() const;
};

// Encoder-decoder disparity network. The feature extractor is shared between
// the two views; matching happens through a base cost volume at scale 3 and,
// depending on the variant, residual cost volumes at the fine scales. The
// decoder emits a disparity map at every scale 0..6, each in its own pixel
// units.
template <typename T>
class StereoModel {
public:
    StereoModel(const NetworkConfig& cfg, unsigned long long seed);

    struct Output {
        // index s holds the scale-s map, shape (B, 1, H/2^s, W/2^s)
        std::vector<Tensor<T>> pyramid;
        // ESNet-M only: index s in {0,1,2} holds the scale-s occlusion mask
        std::vector<Tensor<T>> occlusion;
    };

    Output forward(const Tensor<T>& left, const Tensor<T>& right) const;

    // Multi-scale features f^0..f^3 for both views, shared weights.
    std::pair<std::vector<Tensor<T>>, std::vector<Tensor<T>>> feature_extract(
        const Tensor<T>& left, const Tensor<T>& right) const;

    NamedTensors<T>& parameters() { return params_; }
    const NamedTensors<T>& parameters() const { return params_; }
    std::vector<Tensor<T>> parameter_tensors() const;
    index_t parameter_count() const;
    void zero_grads() const;

    const NetworkConfig& config() const { return cfg_; }

    // Layer-by-layer summary (name, shape) for inspection tools.
    std::vector<std::pair<std::string, Shape>> layer_shapes() const;

private:
    Tensor<T> param(const std::string& name) const;
    std::vector<Tensor<T>> extract_one(const Tensor<T>& image) const;
    Tensor<T> resblock(const Tensor<T>& x, const std::string& prefix) const;
    int cost_channels(int scale) const;
    MaskFmmParams<T> mask_params(int scale) const;

    NetworkConfig cfg_;
    std::array<int, 7> ch_;
    int redir_ch_ = 0;
    NamedTensors<T> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

extern template class StereoModel<float>;
extern template class StereoModel<double>;

}  // namespace esn
