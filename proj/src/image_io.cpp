#include "esn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace esn {

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

namespace {

std::string next_pfm_token(std::istream& in) {
    std::string tok;
    if (!(in >> tok)) throw DataError("pfm: truncated header");
    return tok;
}

inline float byteswap_float(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) | ((u & 0x0000ff00u) << 8) |
        ((u & 0x000000ffu) << 24);
    std::memcpy(&v, &u, 4);
    return v;
}

constexpr bool kHostLittle = std::endian::native == std::endian::little;

}  // namespace

Tensor<float> read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("pfm: cannot open '" + path + "'");
    const std::string magic = next_pfm_token(in);
    if (magic == "PF") throw DataError("pfm: color 'PF' files are not supported: " + path);
    if (magic != "Pf") throw DataError("pfm: bad magic '" + magic + "' in " + path);

    index_t w = 0, h = 0;
    double scale = 0;
    try {
        w = std::stoll(next_pfm_token(in));
        h = std::stoll(next_pfm_token(in));
        scale = std::stod(next_pfm_token(in));
    } catch (const std::exception&) {
        throw DataError("pfm: malformed header in " + path);
    }
    if (w < 1 || h < 1 || scale == 0) throw DataError("pfm: malformed header in " + path);
    in.get();  // single whitespace byte after the scale line

    std::vector<float> raw(static_cast<std::size_t>(w * h));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (in.gcount() != static_cast<std::streamsize>(raw.size() * 4)) {
        throw DataError("pfm: truncated payload in " + path);
    }
    const bool file_little = scale < 0;
    if (file_little != kHostLittle) {
        for (float& v : raw) v = byteswap_float(v);
    }

    // PFM rows are bottom-up
    Tensor<float> t(Shape{1, 1, h, w});
    for (index_t y = 0; y < h; ++y) {
        std::memcpy(t.data().data() + y * w, raw.data() + (h - 1 - y) * w,
                    static_cast<std::size_t>(w) * 4);
    }
    return t;
}

void write_pfm(const std::string& path, const Tensor<float>& map) {
    const Shape s = map.shape();
    if (s.b != 1 || s.c != 1) {
        throw DataError("pfm: expected a single-channel map, got " + s.str());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("pfm: cannot open '" + path + "' for writing");
    out << "Pf\n" << s.w << " " << s.h << "\n" << (kHostLittle ? "-1.0" : "1.0") << "\n";
    for (index_t y = s.h - 1; y >= 0; --y) {
        out.write(reinterpret_cast<const char*>(map.data().data() + y * s.w),
                  static_cast<std::streamsize>(s.w * 4));
    }
    if (!out) throw DataError("pfm: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// PNG (via libpng)
// ---------------------------------------------------------------------------

namespace {

struct PngImage {
    index_t w = 0, h = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint16_t> pixels;  // row-major, interleaved, native values
};

PngImage read_png_file(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError("png: cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("png: failed to decode '" + path + "'");
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);  // PNG stores 16-bit big-endian
    png_read_update_info(png, info);

    PngImage img;
    img.w = png_get_image_width(png, info);
    img.h = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.bit_depth = png_get_bit_depth(png, info);

    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> raw(rowbytes * static_cast<std::size_t>(img.h));
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (index_t y = 0; y < img.h; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    const std::size_t n = static_cast<std::size_t>(img.w * img.h) * img.channels;
    img.pixels.resize(n);
    if (img.bit_depth == 16) {
        std::memcpy(img.pixels.data(), raw.data(), n * 2);
    } else {
        for (std::size_t i = 0; i < n; ++i) img.pixels[i] = raw[i];
    }
    return img;
}

void write_png_file(const std::string& path, const std::uint8_t* bytes, index_t h, index_t w,
                    int channels, int bit_depth) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("png: cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("png: failed to encode '" + path + "'");
    }
    png_init_io(png, fp);
    const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);

    const std::size_t rowbytes = static_cast<std::size_t>(w) * channels * (bit_depth / 8);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (index_t y = 0; y < h; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<std::uint8_t*>(bytes) + y * rowbytes;
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace

std::pair<Tensor<float>, Tensor<float>> read_kitti_disparity(const std::string& path) {
    PngImage img = read_png_file(path);
    if (img.bit_depth != 16 || img.channels != 1) {
        throw DataError("kitti disparity: '" + path + "' must be 16-bit single-channel, got " +
                        std::to_string(img.bit_depth) + "-bit x" + std::to_string(img.channels));
    }
    Tensor<float> disp(Shape{1, 1, img.h, img.w});
    Tensor<float> valid(Shape{1, 1, img.h, img.w});
    for (index_t i = 0; i < img.h * img.w; ++i) {
        const std::uint16_t raw = img.pixels[static_cast<std::size_t>(i)];
        disp.data()[static_cast<std::size_t>(i)] = static_cast<float>(raw) / 256.0f;
        valid.data()[static_cast<std::size_t>(i)] = raw > 0 ? 1.0f : 0.0f;
    }
    return {disp, valid};
}

void write_kitti_disparity(const std::string& path, const Tensor<float>& disparity,
                           const Tensor<float>& valid) {
    const Shape s = disparity.shape();
    std::vector<std::uint16_t> px(static_cast<std::size_t>(s.h * s.w), 0);
    for (index_t i = 0; i < s.h * s.w; ++i) {
        if (valid.defined() && valid.data()[static_cast<std::size_t>(i)] == 0.0f) continue;
        const double v = std::clamp(static_cast<double>(disparity.data()[static_cast<std::size_t>(i)]) * 256.0,
                                    1.0, 65535.0);
        px[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(std::lround(v));
    }
    write_png_gray16(path, px, s.h, s.w);
}

void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels, index_t h,
                     index_t w) {
    if (static_cast<index_t>(pixels.size()) != h * w) throw DataError("png: pixel count mismatch");
    write_png_file(path, pixels.data(), h, w, 1, 8);
}

void write_png_rgb8(const std::string& path, const std::vector<std::uint8_t>& pixels, index_t h,
                    index_t w) {
    if (static_cast<index_t>(pixels.size()) != h * w * 3) throw DataError("png: pixel count mismatch");
    write_png_file(path, pixels.data(), h, w, 3, 8);
}

void write_png_gray16(const std::string& path, const std::vector<std::uint16_t>& pixels, index_t h,
                      index_t w) {
    if (static_cast<index_t>(pixels.size()) != h * w) throw DataError("png: pixel count mismatch");
    write_png_file(path, reinterpret_cast<const std::uint8_t*>(pixels.data()), h, w, 1, 16);
}

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit)
// ---------------------------------------------------------------------------

Tensor<float> read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("ppm: cannot open '" + path + "'");
    std::string magic;
    index_t w = 0, h = 0;
    int maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w < 1 || h < 1 || maxval != 255) {
        throw DataError("ppm: unsupported header in '" + path + "' (need P6, maxval 255)");
    }
    in.get();
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w * h * 3));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw DataError("ppm: truncated payload in '" + path + "'");
    }
    Tensor<float> t(Shape{1, 3, h, w});
    for (index_t y = 0; y < h; ++y)
        for (index_t x = 0; x < w; ++x)
            for (index_t c = 0; c < 3; ++c)
                t.at(0, c, y, x) = static_cast<float>(raw[static_cast<std::size_t>((y * w + x) * 3 + c)]) / 255.0f;
    return t;
}

void write_ppm(const std::string& path, const Tensor<float>& image) {
    const Shape s = image.shape();
    if (s.b != 1 || s.c != 3) throw DataError("ppm: expected (1,3,H,W), got " + s.str());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("ppm: cannot open '" + path + "' for writing");
    out << "P6\n" << s.w << " " << s.h << "\n255\n";
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(s.w * s.h * 3));
    for (index_t y = 0; y < s.h; ++y)
        for (index_t x = 0; x < s.w; ++x)
            for (index_t c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(0, c, y, x), 0.0f, 1.0f);
                raw[static_cast<std::size_t>((y * s.w + x) * 3 + c)] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// ---------------------------------------------------------------------------

Tensor<float> read_image(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".ppm") return read_ppm(path);
    if (ext == ".png") {
        PngImage img = read_png_file(path);
        if (img.bit_depth != 8) {
            throw DataError("image: '" + path + "' must be 8-bit for image input");
        }
        const float inv = 1.0f / 255.0f;
        if (img.channels == 1) {
            Tensor<float> t(Shape{1, 3, img.h, img.w});
            for (index_t i = 0; i < img.h * img.w; ++i) {
                const float v = static_cast<float>(img.pixels[static_cast<std::size_t>(i)]) * inv;
                for (index_t c = 0; c < 3; ++c)
                    t.data()[static_cast<std::size_t>(c * img.h * img.w + i)] = v;
            }
            return t;
        }
        if (img.channels != 3) throw DataError("image: unsupported channel count in '" + path + "'");
        Tensor<float> t(Shape{1, 3, img.h, img.w});
        for (index_t y = 0; y < img.h; ++y)
            for (index_t x = 0; x < img.w; ++x)
                for (index_t c = 0; c < 3; ++c)
                    t.at(0, c, y, x) =
                        static_cast<float>(img.pixels[static_cast<std::size_t>((y * img.w + x) * 3 + c)]) * inv;
        return t;
    }
    throw DataError("image: unsupported extension in '" + path + "' (need .png or .ppm)");
}

}  // namespace esn
