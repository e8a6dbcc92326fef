#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "cxr/errors.hpp"
#include "cxr/image_codec.hpp"

namespace cxr {

namespace {

struct JpegErr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_trap(j_common_ptr cinfo) {
    JpegErr* err = reinterpret_cast<JpegErr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

ImageU8 read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DataError("cannot decode " + path.string() + ": " + msg);
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

    ImageU8 out;
    out.h = static_cast<int>(image.height);
    out.w = static_cast<int>(image.width);
    out.channels = color ? 3 : 1;
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DataError("cannot decode " + path.string() + ": " + msg);
    }
    return out;
}

ImageU8 read_jpeg(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw DataError("cannot open " + path.string());

    jpeg_decompress_struct cinfo;
    JpegErr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_trap;
    std::vector<std::uint8_t> pixels;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(f);
        throw DataError("cannot decode " + path.string() + ": " + jerr.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components >= 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_start_decompress(&cinfo);

    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    const int ch = cinfo.output_components;
    pixels.resize(static_cast<size_t>(h) * static_cast<size_t>(w) * static_cast<size_t>(ch));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels.data() +
                       static_cast<size_t>(cinfo.output_scanline) * static_cast<size_t>(w) * static_cast<size_t>(ch);
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);

    ImageU8 out;
    out.h = h;
    out.w = w;
    out.channels = ch;
    out.pixels = std::move(pixels);
    return out;
}

void write_png(const std::filesystem::path& path, int h, int w, int channels,
               const std::vector<std::uint8_t>& pixels) {
    if (h <= 0 || w <= 0) throw ValueError("write_png: empty image");
    if (pixels.size() != static_cast<size_t>(h) * static_cast<size_t>(w) * static_cast<size_t>(channels)) {
        throw ValueError("write_png: pixel buffer does not match dimensions");
    }
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw Error("cannot write " + path.string() + ": " + msg);
    }
}

} // namespace

ImageU8 read_image(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw DataError("cannot open " + path.string());
    unsigned char magic[4] = {0, 0, 0, 0};
    const size_t got = std::fread(magic, 1, sizeof magic, f);
    std::fclose(f);

    if (got >= 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G') {
        return read_png(path);
    }
    if (got >= 3 && magic[0] == 0xff && magic[1] == 0xd8 && magic[2] == 0xff) {
        return read_jpeg(path);
    }
    throw DataError("unsupported image format: " + path.string());
}

void write_png_gray(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& pixels) {
    write_png(path, h, w, 1, pixels);
}

void write_png_rgb(const std::filesystem::path& path, int h, int w,
                   const std::vector<std::uint8_t>& pixels) {
    write_png(path, h, w, 3, pixels);
}

void write_jpeg_gray(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& pixels, int quality) {
    if (pixels.size() != static_cast<size_t>(h) * static_cast<size_t>(w)) {
        throw ValueError("write_jpeg_gray: pixel buffer does not match dimensions");
    }
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw Error("cannot open " + path.string() + " for writing");

    jpeg_compress_struct cinfo;
    JpegErr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_trap;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::fclose(f);
        throw Error("cannot encode " + path.string() + ": " + jerr.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f);
    cinfo.image_width = static_cast<JDIMENSION>(w);
    cinfo.image_height = static_cast<JDIMENSION>(h);
    cinfo.input_components = 1;
    cinfo.in_color_space = JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    for (int y = 0; y < h; ++y) {
        JSAMPROW row = const_cast<JSAMPROW>(pixels.data() + static_cast<size_t>(y) * static_cast<size_t>(w));
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::fclose(f);
}

} // namespace cxr
