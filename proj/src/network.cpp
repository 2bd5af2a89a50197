#include "esn/network.hpp"

#include "esn/ops.hpp"
#include "esn/random.hpp"

#include <algorithm>
#include <cmath>

namespace esn {

Variant variant_from_string(const std::string& s) {
    if (s == "esnet") return Variant::ESNet;
    if (s == "esnet-m" || s == "esnetm") return Variant::ESNetM;
    if (s == "baseline" || s == "baseline-nofmm") return Variant::BaselineNoFMM;
    if (s == "pwc-all-scales" || s == "pwc") return Variant::PWCAllScales;
    throw ConfigError("unknown variant '" + s +
                      "' (expected esnet, esnet-m, baseline, pwc-all-scales)");
}

SizePreset preset_from_string(const std::string& s) {
    if (s == "tiny") return SizePreset::Tiny;
    if (s == "small") return SizePreset::Small;
    if (s == "paper" || s == "paper-scale" || s == "full") return SizePreset::PaperScale;
    throw ConfigError("unknown preset '" + s + "' (expected tiny, small, paper)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::ESNet: return "esnet";
        case Variant::ESNetM: return "esnet-m";
        case Variant::BaselineNoFMM: return "baseline";
        case Variant::PWCAllScales: return "pwc-all-scales";
    }
    return "?";
}

std::string to_string(SizePreset p) {
    switch (p) {
        case SizePreset::Tiny: return "tiny";
        case SizePreset::Small: return "small";
        case SizePreset::PaperScale: return "paper";
    }
    return "?";
}

std::array<int, 7> NetworkConfig::resolved_channels() const {
    bool custom = false;
    for (int c : channels)
        if (c != 0) custom = true;
    if (custom) return channels;
    switch (preset) {
        case SizePreset::Tiny: return {8, 16, 32, 64, 64, 64, 64};
        case SizePreset::Small: return {16, 32, 64, 96, 128, 128, 160};
        case SizePreset::PaperScale: return {32, 64, 128, 256, 512, 512, 1024};
    }
    return {};
}

int NetworkConfig::resolved_blocks() const {
    if (blocks_per_scale > 0) return blocks_per_scale;
    return preset == SizePreset::PaperScale ? 2 : 1;
}

void NetworkConfig::validate() const {
    if (d_max_base < 1) throw ConfigError("d_max_base must be >= 1");
    if (fmm_offsets.empty()) throw ConfigError("fmm_offsets must be non-empty");
    for (int c : resolved_channels())
        if (c < 1) throw ConfigError("channel schedule entries must be positive");
}

namespace {

template <typename T>
Tensor<T> he_init(Shape s, index_t fan_in, Rng& rng) {
    const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
    return randn<T>(s, rng, stddev);
}

}  // namespace

template <typename T>
StereoModel<T>::StereoModel(const NetworkConfig& cfg, unsigned long long seed) : cfg_(cfg) {
    cfg_.validate();
    ch_ = cfg_.resolved_channels();
    redir_ch_ = std::max(8, ch_[3] / 4);

    Rng rng(seed);
    auto add_conv = [&](const std::string& name, int cout, int cin, int k) {
        index_[name + ".w"] = params_.size();
        params_.emplace_back(name + ".w",
                             he_init<T>(Shape{cout, cin, k, k}, index_t(cin) * k * k, rng));
        params_.back().second.set_requires_grad(true);
        index_[name + ".b"] = params_.size();
        params_.emplace_back(name + ".b", Tensor<T>(Shape{1, cout, 1, 1}));
        params_.back().second.set_requires_grad(true);
    };
    auto add_deconv = [&](const std::string& name, int cin, int cout, int k) {
        index_[name + ".w"] = params_.size();
        params_.emplace_back(name + ".w",
                             he_init<T>(Shape{cin, cout, k, k}, index_t(cin) * k * k, rng));
        params_.back().second.set_requires_grad(true);
        index_[name + ".b"] = params_.size();
        params_.emplace_back(name + ".b", Tensor<T>(Shape{1, cout, 1, 1}));
        params_.back().second.set_requires_grad(true);
    };

    const int nb = cfg_.resolved_blocks();
    const bool base_volume = cfg_.variant != Variant::PWCAllScales;

    // shared extractor
    add_conv("ext.in", ch_[0], 3, 3);
    for (int s = 0; s <= 3; ++s) {
        if (s > 0) add_conv("ext.s" + std::to_string(s) + ".down", ch_[s], ch_[s - 1], 3);
        for (int b = 0; b < nb; ++b) {
            const std::string p = "ext.s" + std::to_string(s) + ".res" + std::to_string(b);
            add_conv(p + ".c1", ch_[s], ch_[s], 3);
            add_conv(p + ".c2", ch_[s], ch_[s], 3);
        }
    }

    if (base_volume) {
        add_conv("base.redir", redir_ch_, ch_[3], 1);
        add_conv("base.fuse", ch_[3], cfg_.d_max_base + redir_ch_, 3);
    }

    // encoder continues from scale 3
    for (int s = 4; s <= 6; ++s) {
        add_conv("enc.s" + std::to_string(s) + ".down", ch_[s], ch_[s - 1], 3);
        add_conv("enc.s" + std::to_string(s) + ".conv", ch_[s], ch_[s], 3);
    }

    add_conv("head.s6", 1, ch_[6] + cost_channels(6), 3);

    for (int s = 5; s >= 0; --s) {
        const int skip = ch_[s];
        const int cost = cost_channels(s);
        add_deconv("dec.s" + std::to_string(s) + ".up", ch_[s + 1], ch_[s], 4);
        add_conv("dec.s" + std::to_string(s) + ".conv", ch_[s], ch_[s] + skip + 1 + cost, 3);
        add_conv("head.s" + std::to_string(s), 1, ch_[s] + 1 + cost, 3);
    }

    if (cfg_.variant == Variant::ESNetM) {
        for (int s = 2; s >= 0; --s) {
            const std::string p = "mfmm.s" + std::to_string(s);
            if (s != 2) {
                add_conv(p + ".tl", ch_[s], ch_[2], 1);
                add_conv(p + ".tr", ch_[s], ch_[2], 1);
            }
            // context is the decoder feature at scale s+1
            add_conv(p + ".theta", 1, ch_[s + 1], 3);
            add_conv(p + ".mu", ch_[s], ch_[s + 1], 3);
        }
    }
}

template <typename T>
Tensor<T> StereoModel<T>::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("internal: unknown parameter '" + name + "'");
    return params_[it->second].second;
}

template <typename T>
int StereoModel<T>::cost_channels(int scale) const {
    const int ncost = static_cast<int>(cfg_.fmm_offsets.size());
    switch (cfg_.variant) {
        case Variant::BaselineNoFMM: return scale == 3 ? cfg_.d_max_base : 0;
        case Variant::ESNet:
        case Variant::ESNetM: return scale == 3 ? cfg_.d_max_base : (scale <= 2 ? ncost : 0);
        case Variant::PWCAllScales: return scale >= 2 ? ncost : 0;
    }
    return 0;
}

template <typename T>
Tensor<T> StereoModel<T>::resblock(const Tensor<T>& x, const std::string& prefix) const {
    Tensor<T> y = leaky_relu(conv2d(x, param(prefix + ".c1.w"), param(prefix + ".c1.b"), 1, 1));
    y = conv2d(y, param(prefix + ".c2.w"), param(prefix + ".c2.b"), 1, 1);
    return leaky_relu(add(y, x));
}

template <typename T>
std::vector<Tensor<T>> StereoModel<T>::extract_one(const Tensor<T>& image) const {
    const int nb = cfg_.resolved_blocks();
    std::vector<Tensor<T>> f;
    Tensor<T> x = leaky_relu(conv2d(image, param("ext.in.w"), param("ext.in.b"), 1, 1));
    for (int s = 0; s <= 3; ++s) {
        if (s > 0) {
            const std::string d = "ext.s" + std::to_string(s) + ".down";
            x = leaky_relu(conv2d(x, param(d + ".w"), param(d + ".b"), 2, 1));
        }
        for (int b = 0; b < nb; ++b) {
            x = resblock(x, "ext.s" + std::to_string(s) + ".res" + std::to_string(b));
        }
        f.push_back(x);
    }
    return f;
}

template <typename T>
std::pair<std::vector<Tensor<T>>, std::vector<Tensor<T>>> StereoModel<T>::feature_extract(
    const Tensor<T>& left, const Tensor<T>& right) const {
    const Shape s = left.shape();
    if (!(right.shape() == s)) {
        throw ShapeError("feature_extract: left " + s.str() + " vs right " + right.shape().str());
    }
    if (s.c != 3) throw ShapeError("feature_extract: expected 3-channel input, got " + s.str());
    if (s.h % 64 != 0 || s.w % 64 != 0) {
        throw ShapeError("feature_extract: input " + s.str() + " must be divisible by 64");
    }
    return {extract_one(left), extract_one(right)};
}

template <typename T>
MaskFmmParams<T> StereoModel<T>::mask_params(int scale) const {
    const std::string p = "mfmm.s" + std::to_string(scale);
    MaskFmmParams<T> mp;
    if (scale != 2) {
        mp.transform_left_w = param(p + ".tl.w");
        mp.transform_left_b = param(p + ".tl.b");
        mp.transform_right_w = param(p + ".tr.w");
        mp.transform_right_b = param(p + ".tr.b");
    }
    mp.theta_w = param(p + ".theta.w");
    mp.theta_b = param(p + ".theta.b");
    mp.mu_w = param(p + ".mu.w");
    mp.mu_b = param(p + ".mu.b");
    return mp;
}

template <typename T>
typename StereoModel<T>::Output StereoModel<T>::forward(const Tensor<T>& left,
                                                        const Tensor<T>& right) const {
    auto [fl, fr] = feature_extract(left, right);
    const bool base_volume = cfg_.variant != Variant::PWCAllScales;
    const bool pwc = cfg_.variant == Variant::PWCAllScales;

    auto conv_act = [&](const Tensor<T>& x, const std::string& name, int stride, int pad) {
        return leaky_relu(conv2d(x, param(name + ".w"), param(name + ".b"), stride, pad));
    };

    // matching features per scale; beyond the extractor (scales 4..6, PWC
    // variant only) they are bilinear-downsampled copies of f^3
    std::vector<Tensor<T>> ml(7), mr(7);
    for (int s = 0; s <= 3; ++s) {
        ml[s] = fl[s];
        mr[s] = fr[s];
    }
    if (pwc) {
        for (int s = 4; s <= 6; ++s) {
            const Shape f3 = fl[3].shape();
            const index_t hh = f3.h >> (s - 3), ww = f3.w >> (s - 3);
            ml[s] = bilinear_resize(fl[3], hh, ww);
            mr[s] = bilinear_resize(fr[3], hh, ww);
        }
    }

    // encoder
    Tensor<T> enc_in;
    Tensor<T> base_cost;
    if (base_volume) {
        std::vector<int> base_offsets(static_cast<std::size_t>(cfg_.d_max_base));
        for (int i = 0; i < cfg_.d_max_base; ++i) base_offsets[static_cast<std::size_t>(i)] = i;
        base_cost = correlate(fl[3], fr[3], base_offsets).scores;
        Tensor<T> redir = conv_act(fl[3], "base.redir", 1, 0);
        enc_in = conv_act(concat_channels<T>({base_cost, redir}), "base.fuse", 1, 1);
    } else {
        enc_in = fl[3];
    }

    std::vector<Tensor<T>> enc(7);
    enc[3] = enc_in;
    for (int s = 4; s <= 6; ++s) {
        Tensor<T> x = conv_act(enc[s - 1], "enc.s" + std::to_string(s) + ".down", 2, 1);
        enc[s] = conv_act(x, "enc.s" + std::to_string(s) + ".conv", 1, 1);
    }

    Output out;
    out.pyramid.assign(7, Tensor<T>());
    if (cfg_.variant == Variant::ESNetM) out.occlusion.assign(3, Tensor<T>());

    // coarsest head
    Tensor<T> head6_in = enc[6];
    if (pwc) {
        head6_in = concat_channels<T>({enc[6], correlate(ml[6], mr[6], cfg_.fmm_offsets).scores});
    }
    out.pyramid[6] = conv2d(head6_in, param("head.s6.w"), param("head.s6.b"), 1, 1);

    std::vector<Tensor<T>> dec(7);
    dec[6] = enc[6];
    for (int s = 5; s >= 0; --s) {
        const std::string sp = std::to_string(s);
        Tensor<T> up_feat = leaky_relu(conv_transpose2d(
            dec[s + 1], param("dec.s" + sp + ".up.w"), param("dec.s" + sp + ".up.b"), 2, 1));
        const Shape us = up_feat.shape();
        Tensor<T> up_disp = bilinear_resize(out.pyramid[s + 1], us.h, us.w, /*disparity=*/true);
        Tensor<T> skip = s >= 4 ? enc[s] : (s == 3 ? enc[3] : fl[s]);

        Tensor<T> cost;
        if (cost_channels(s) > 0) {
            if (s == 3 && base_volume) {
                cost = base_cost;
            } else if (cfg_.variant == Variant::ESNetM) {
                MaskFmmResult<T> m = mask_fmm(fl[2], fr[2], out.pyramid[s + 1], dec[s + 1], s,
                                              mask_params(s), {cfg_.fmm_offsets});
                cost = m.cost.scores;
                out.occlusion[s] = m.theta;
            } else {
                cost = fmm(ml[s], mr[s], out.pyramid[s + 1], cfg_.fmm_offsets).scores;
            }
        }

        std::vector<Tensor<T>> dec_in = {up_feat, skip, up_disp};
        if (cost.defined()) dec_in.push_back(cost);
        dec[s] = conv_act(concat_channels(dec_in), "dec.s" + sp + ".conv", 1, 1);

        std::vector<Tensor<T>> head_in = {dec[s], up_disp};
        if (cost.defined()) head_in.push_back(cost);
        out.pyramid[s] = conv2d(concat_channels(head_in), param("head.s" + sp + ".w"),
                                param("head.s" + sp + ".b"), 1, 1);
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> StereoModel<T>::parameter_tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(t);
    return out;
}

template <typename T>
index_t StereoModel<T>::parameter_count() const {
    index_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

template <typename T>
void StereoModel<T>::zero_grads() const {
    for (const auto& [name, t] : params_) t.zero_grad();
}

template <typename T>
std::vector<std::pair<std::string, Shape>> StereoModel<T>::layer_shapes() const {
    std::vector<std::pair<std::string, Shape>> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.emplace_back(name, t.shape());
    return out;
}

template class StereoModel<float>;
template class StereoModel<double>;

}  // namespace esn
