#include "fffvdi/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace fffvdi::io {
namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) {
            std::fclose(f);
        }
    }
};

void write_png_rows(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
                    const std::vector<std::vector<png_byte>>& rows) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    require(fp != nullptr, ErrorKind::Data, "png: cannot open " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw data_error("png: libpng write failure for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (const auto& row : rows) {
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image) {
    require(image.dim() == 3 && image.size(0) == 3, ErrorKind::Data, "png: expected [3,H,W], got " + shape_str(image));
    auto img = image.detach().to(torch::kFloat64).cpu().contiguous();
    auto acc = img.accessor<double, 3>();
    int h = static_cast<int>(img.size(1));
    int w = static_cast<int>(img.size(2));
    std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(3 * w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(acc[c][y][x], 0.0, 1.0);
                rows[y][3 * x + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
    }
    write_png_rows(path, w, h, 8, PNG_COLOR_TYPE_RGB, rows);
}

void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask) {
    require(mask.dim() == 3 && mask.size(0) == 1, ErrorKind::Data, "png: expected [1,H,W] mask, got " + shape_str(mask));
    auto m = mask.detach().to(torch::kFloat32).cpu().contiguous();
    auto acc = m.accessor<float, 3>();
    int h = static_cast<int>(m.size(1));
    int w = static_cast<int>(m.size(2));
    std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>((w + 7) / 8, 0));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (acc[0][y][x] > 0.5f) {
                rows[y][x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
            }
        }
    }
    write_png_rows(path, w, h, 1, PNG_COLOR_TYPE_GRAY, rows);
}

torch::Tensor read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    require(png_image_begin_read_from_file(&image, path.c_str()) != 0, ErrorKind::Data,
            "png: cannot read " + path.string());
    bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    int channels = gray ? 1 : 3;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
        std::string msg = image.message;
        png_image_free(&image);
        throw data_error("png: decode failed for " + path.string() + ": " + msg);
    }
    int h = static_cast<int>(image.height);
    int w = static_cast<int>(image.width);
    auto hwc = torch::from_blob(buffer.data(), {h, w, channels}, torch::kUInt8).clone();
    return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

void write_flo(const std::filesystem::path& path, const torch::Tensor& flow) {
    require(flow.dim() == 3 && flow.size(0) == 2, ErrorKind::Data, "flo: expected [2,H,W], got " + shape_str(flow));
    auto hw2 = flow.detach().to(torch::kFloat32).cpu().permute({1, 2, 0}).contiguous();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Data, "flo: cannot write " + path.string());
    float magic = 202021.25f;
    int32_t w = static_cast<int32_t>(flow.size(2));
    int32_t h = static_cast<int32_t>(flow.size(1));
    f.write(reinterpret_cast<const char*>(&magic), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(static_cast<const char*>(hw2.data_ptr()), static_cast<std::streamsize>(hw2.numel() * 4));
}

torch::Tensor read_flo(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Data, "flo: cannot open " + path.string());
    float magic = 0;
    int32_t w = 0;
    int32_t h = 0;
    f.read(reinterpret_cast<char*>(&magic), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    require(static_cast<bool>(f) && magic == 202021.25f, ErrorKind::Data, "flo: bad magic in " + path.string());
    require(w > 0 && h > 0 && w < (1 << 16) && h < (1 << 16), ErrorKind::Data, "flo: bad dimensions");
    auto hw2 = torch::empty({h, w, 2}, torch::kFloat32);
    f.read(static_cast<char*>(hw2.data_ptr()), static_cast<std::streamsize>(hw2.numel() * 4));
    require(static_cast<bool>(f), ErrorKind::Data, "flo: truncated " + path.string());
    return hw2.permute({2, 0, 1}).contiguous();
}

}  // namespace fffvdi::io
