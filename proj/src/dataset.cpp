#include "esn/dataset.hpp"

#include "esn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace fs = std::filesystem;

namespace esn {

void StereoSample::validate() const {
    if (!left.defined() || !right.defined()) throw DataError("sample: missing image");
    if (!(left.shape() == right.shape())) {
        throw DataError("sample: left " + left.shape().str() + " vs right " +
                        right.shape().str());
    }
    if (gt_disparity.defined()) {
        const Shape gs = gt_disparity.shape();
        if (gs.h != left.shape().h || gs.w != left.shape().w) {
            throw DataError("sample: ground truth " + gs.str() + " does not match images " +
                            left.shape().str());
        }
        if (valid_mask.defined()) {
            for (std::size_t i = 0; i < gt_disparity.data().size(); ++i) {
                if (valid_mask.data()[i] != 0.0f && gt_disparity.data()[i] < 0.0f) {
                    throw DataError("sample: negative disparity at a valid pixel");
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

namespace {

constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};

}  // namespace

Tensor<float> normalize(const Tensor<float>& image) {
    const Shape s = image.shape();
    if (s.c != 3) throw DataError("normalize: expected 3 channels, got " + s.str());
    Tensor<float> out(s);
    const index_t hw = s.h * s.w;
    for (index_t b = 0; b < s.b; ++b)
        for (index_t c = 0; c < 3; ++c) {
            const float* src = image.data().data() + (b * 3 + c) * hw;
            float* dst = out.data().data() + (b * 3 + c) * hw;
            const float m = kMean[c], inv = 1.0f / kStd[c];
            for (index_t i = 0; i < hw; ++i) dst[i] = (src[i] - m) * inv;
        }
    return out;
}

Tensor<float> denormalize(const Tensor<float>& image) {
    const Shape s = image.shape();
    if (s.c != 3) throw DataError("denormalize: expected 3 channels, got " + s.str());
    Tensor<float> out(s);
    const index_t hw = s.h * s.w;
    for (index_t b = 0; b < s.b; ++b)
        for (index_t c = 0; c < 3; ++c) {
            const float* src = image.data().data() + (b * 3 + c) * hw;
            float* dst = out.data().data() + (b * 3 + c) * hw;
            const float m = kMean[c], sd = kStd[c];
            for (index_t i = 0; i < hw; ++i) dst[i] = src[i] * sd + m;
        }
    return out;
}

// ---------------------------------------------------------------------------
// cropping
// ---------------------------------------------------------------------------

namespace {

Tensor<float> crop_tensor(const Tensor<float>& t, index_t y0, index_t x0, index_t h, index_t w) {
    const Shape s = t.shape();
    Tensor<float> out(Shape{s.b, s.c, h, w});
    for (index_t b = 0; b < s.b; ++b)
        for (index_t c = 0; c < s.c; ++c)
            for (index_t y = 0; y < h; ++y) {
                std::memcpy(out.data().data() + ((b * s.c + c) * h + y) * w,
                            t.data().data() + ((b * s.c + c) * s.h + (y0 + y)) * s.w + x0,
                            static_cast<std::size_t>(w) * sizeof(float));
            }
    return out;
}

}  // namespace

StereoSample random_crop(const StereoSample& sample, index_t crop_h, index_t crop_w, Rng& rng) {
    const Shape s = sample.left.shape();
    if (crop_h > s.h || crop_w > s.w) {
        throw DataError("random_crop: crop " + std::to_string(crop_h) + "x" +
                        std::to_string(crop_w) + " exceeds image " + s.str());
    }
    std::uniform_int_distribution<index_t> dy(0, s.h - crop_h), dx(0, s.w - crop_w);
    const index_t y0 = dy(rng), x0 = dx(rng);

    StereoSample out = sample;
    out.left = crop_tensor(sample.left, y0, x0, crop_h, crop_w);
    out.right = crop_tensor(sample.right, y0, x0, crop_h, crop_w);
    if (sample.gt_disparity.defined())
        out.gt_disparity = crop_tensor(sample.gt_disparity, y0, x0, crop_h, crop_w);
    if (sample.valid_mask.defined())
        out.valid_mask = crop_tensor(sample.valid_mask, y0, x0, crop_h, crop_w);
    out.occluded_band.reset();  // band coordinates are stale after cropping
    return out;
}

StereoSample crop_to_divisible(const StereoSample& sample, index_t divisor) {
    const Shape s = sample.left.shape();
    const index_t h = (s.h / divisor) * divisor;
    const index_t w = (s.w / divisor) * divisor;
    if (h < divisor || w < divisor) {
        throw DataError("image " + s.str() + " is smaller than " + std::to_string(divisor));
    }
    if (h == s.h && w == s.w) return sample;
    const index_t y0 = (s.h - h) / 2, x0 = (s.w - w) / 2;
    StereoSample out = sample;
    out.left = crop_tensor(sample.left, y0, x0, h, w);
    out.right = crop_tensor(sample.right, y0, x0, h, w);
    if (sample.gt_disparity.defined())
        out.gt_disparity = crop_tensor(sample.gt_disparity, y0, x0, h, w);
    if (sample.valid_mask.defined())
        out.valid_mask = crop_tensor(sample.valid_mask, y0, x0, h, w);
    out.occluded_band.reset();
    return out;
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

namespace {

// Sum of random cosine waves, evaluable at any real coordinate; this is what
// makes exact warping by fractional disparities possible.
struct BandLimitedTexture {
    struct Wave {
        double wx, wy, phase, amp;
    };
    std::vector<Wave> waves;
    double offset = 0.5;

    static BandLimitedTexture make(const SynthSpec& spec, Rng& rng) {
        std::uniform_real_distribution<double> freq(-spec.texture_max_freq, spec.texture_max_freq);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
        BandLimitedTexture t;
        const double amp = 0.42 / std::sqrt(static_cast<double>(spec.texture_waves) / 2.0);
        for (int k = 0; k < spec.texture_waves; ++k) {
            double fx = freq(rng), fy = freq(rng);
            if (spec.periodic_x) {
                // whole number of cycles across the width
                fx = std::round(fx * static_cast<double>(spec.width)) /
                     static_cast<double>(spec.width);
            }
            t.waves.push_back({2.0 * std::numbers::pi * fx, 2.0 * std::numbers::pi * fy,
                               phase(rng), amp});
        }
        return t;
    }

    double operator()(double x, double y) const {
        double v = offset;
        for (const Wave& w : waves) v += w.amp * std::cos(w.wx * x + w.wy * y + w.phase);
        return std::clamp(v, 0.0, 1.0);
    }
};

using Texture3 = std::array<BandLimitedTexture, 3>;

Texture3 make_texture3(const SynthSpec& spec, Rng& rng) {
    return {BandLimitedTexture::make(spec, rng), BandLimitedTexture::make(spec, rng),
            BandLimitedTexture::make(spec, rng)};
}

}  // namespace

std::vector<StereoSample> synth_generate(const SynthSpec& spec, Rng& rng) {
    if (spec.height % 64 != 0 || spec.width % 64 != 0) {
        throw DataError("synth_generate: size " + std::to_string(spec.height) + "x" +
                        std::to_string(spec.width) + " must be divisible by 64");
    }
    std::vector<StereoSample> out;
    out.reserve(static_cast<std::size_t>(spec.count));

    for (int n = 0; n < spec.count; ++n) {
        const index_t H = spec.height, W = spec.width;
        StereoSample s;
        s.left = Tensor<float>(Shape{1, 3, H, W});
        s.right = Tensor<float>(Shape{1, 3, H, W});
        s.gt_disparity = Tensor<float>(Shape{1, 1, H, W});
        s.valid_mask = Tensor<float>(Shape{1, 1, H, W}, 1.0f);
        s.rig = CameraRig{720.0, 0.54};
        s.source_tag = "synthetic";

        const Texture3 bg = make_texture3(spec, rng);

        switch (spec.style) {
            case DisparityStyle::UniformShift: {
                const double d = spec.shift;
                for (index_t y = 0; y < H; ++y)
                    for (index_t x = 0; x < W; ++x) {
                        for (index_t c = 0; c < 3; ++c) {
                            s.left.at(0, c, y, x) = static_cast<float>(bg[c](x, y));
                            s.right.at(0, c, y, x) = static_cast<float>(bg[c](x + d, y));
                        }
                        s.gt_disparity.at(0, 0, y, x) = static_cast<float>(d);
                    }
                break;
            }
            case DisparityStyle::SmoothRamp: {
                for (index_t y = 0; y < H; ++y) {
                    const double d = spec.ramp_min + (spec.ramp_max - spec.ramp_min) *
                                                         static_cast<double>(y) /
                                                         static_cast<double>(H - 1);
                    for (index_t x = 0; x < W; ++x) {
                        for (index_t c = 0; c < 3; ++c) {
                            s.left.at(0, c, y, x) = static_cast<float>(bg[c](x, y));
                            s.right.at(0, c, y, x) = static_cast<float>(bg[c](x + d, y));
                        }
                        s.gt_disparity.at(0, 0, y, x) = static_cast<float>(d);
                    }
                }
                break;
            }
            case DisparityStyle::TwoLayerOcclusion: {
                const Texture3 fg = make_texture3(spec, rng);
                const double db = spec.background_disparity;
                const double df = spec.foreground_disparity;
                if (df <= db) throw DataError("synth_generate: foreground disparity must exceed background");
                const index_t x0 = W / 3, x1 = 2 * W / 3;
                const index_t y0 = H / 4, y1 = 3 * H / 4;
                for (index_t y = 0; y < H; ++y)
                    for (index_t x = 0; x < W; ++x) {
                        const bool in_fg_left = x >= x0 && x < x1 && y >= y0 && y < y1;
                        // a right-view ray hits the foreground surface when its
                        // left-image footprint x + df falls inside the box
                        const double xl_fg = static_cast<double>(x) + df;
                        const bool in_fg_right =
                            xl_fg >= static_cast<double>(x0) && xl_fg < static_cast<double>(x1) &&
                            y >= y0 && y < y1;
                        for (index_t c = 0; c < 3; ++c) {
                            s.left.at(0, c, y, x) = static_cast<float>(
                                in_fg_left ? fg[c](x, y) : bg[c](x, y));
                            s.right.at(0, c, y, x) = static_cast<float>(
                                in_fg_right ? fg[c](xl_fg, y) : bg[c](x + db, y));
                        }
                        s.gt_disparity.at(0, 0, y, x) = static_cast<float>(in_fg_left ? df : db);
                    }
                const index_t band = static_cast<index_t>(std::lround(df - db));
                s.occluded_band = OcclusionBand{x0 - band, x0, y0, y1};
                break;
            }
        }
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// on-disk datasets
// ---------------------------------------------------------------------------

void save_dataset(const std::string& dir, const std::vector<StereoSample>& samples) {
    fs::create_directories(dir);
    char stem[32];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::snprintf(stem, sizeof(stem), "%06zu", i);
        const std::string base = dir + "/" + stem;
        const StereoSample& s = samples[i];
        write_ppm(base + "_left.ppm", s.left);
        write_ppm(base + "_right.ppm", s.right);
        if (s.gt_disparity.defined()) write_pfm(base + "_disp.pfm", s.gt_disparity);

        std::ofstream meta(base + "_meta.txt");
        meta << "source " << (s.source_tag.empty() ? "unknown" : s.source_tag) << "\n";
        if (s.rig) meta << "rig " << s.rig->focal_length_px << " " << s.rig->baseline_m << "\n";
        if (s.occluded_band) {
            meta << "occluded_band " << s.occluded_band->x0 << " " << s.occluded_band->x1 << " "
                 << s.occluded_band->y0 << " " << s.occluded_band->y1 << "\n";
        }
    }
}

std::vector<StereoSample> load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("dataset: '" + dir + "' is not a directory");
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const auto pos = name.find("_left.");
        if (pos != std::string::npos) stems.push_back(name.substr(0, pos));
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw DataError("dataset: no samples found in '" + dir + "'");

    std::vector<StereoSample> out;
    out.reserve(stems.size());
    for (const std::string& stem : stems) {
        const std::string base = dir + "/" + stem;
        StereoSample s;
        for (const char* ext : {".ppm", ".png"}) {
            if (fs::exists(base + "_left" + ext)) {
                s.left = read_image(base + "_left" + ext);
                s.right = read_image(base + "_right" + ext);
                break;
            }
        }
        if (!s.left.defined()) throw DataError("dataset: missing images for '" + stem + "'");
        if (fs::exists(base + "_disp.pfm")) {
            s.gt_disparity = read_pfm(base + "_disp.pfm");
            s.valid_mask = Tensor<float>(s.gt_disparity.shape());
            for (std::size_t i = 0; i < s.gt_disparity.data().size(); ++i) {
                const float v = s.gt_disparity.data()[i];
                s.valid_mask.data()[i] = std::isfinite(v) && v > 0.0f ? 1.0f : 0.0f;
            }
        } else if (fs::exists(base + "_disp.png")) {
            auto [disp, valid] = read_kitti_disparity(base + "_disp.png");
            s.gt_disparity = disp;
            s.valid_mask = valid;
        }
        std::ifstream meta(base + "_meta.txt");
        if (meta) {
            std::string key;
            while (meta >> key) {
                if (key == "source") {
                    meta >> s.source_tag;
                } else if (key == "rig") {
                    CameraRig rig;
                    meta >> rig.focal_length_px >> rig.baseline_m;
                    s.rig = rig;
                } else if (key == "occluded_band") {
                    OcclusionBand b;
                    meta >> b.x0 >> b.x1 >> b.y0 >> b.y1;
                    s.occluded_band = b;
                } else {
                    std::string skip;
                    std::getline(meta, skip);
                }
            }
        }
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

Tensor<float> stack_batch(const std::vector<Tensor<float>>& parts) {
    if (parts.empty()) throw DataError("stack_batch: empty batch");
    const Shape s0 = parts.front().shape();
    index_t btotal = 0;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        if (s.c != s0.c || s.h != s0.h || s.w != s0.w) {
            throw DataError("stack_batch: mismatched shapes " + s.str() + " vs " + s0.str());
        }
        btotal += s.b;
    }
    Tensor<float> out(Shape{btotal, s0.c, s0.h, s0.w});
    float* dst = out.data().data();
    for (const auto& p : parts) {
        std::memcpy(dst, p.data().data(), p.data().size() * sizeof(float));
        dst += p.data().size();
    }
    return out;
}

}  // namespace esn
