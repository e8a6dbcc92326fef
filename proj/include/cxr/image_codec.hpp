#ifndef CXR_IMAGE_CODEC_HPP
#define CXR_IMAGE_CODEC_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cxr {

/// Decoded 8-bit image, interleaved rows, channels 1 (gray) or 3 (RGB).
struct ImageU8 {
    int h = 0;
    int w = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels; // h*w*channels
};

/// Reads a PNG or JPEG (sniffed from magic bytes). Alpha is dropped,
/// palette/16-bit inputs are folded to 8-bit. Throws DataError naming the
/// file on anything undecodable.
ImageU8 read_image(const std::filesystem::path& path);

void write_png_gray(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& pixels);
void write_png_rgb(const std::filesystem::path& path, int h, int w,
                   const std::vector<std::uint8_t>& pixels);
void write_jpeg_gray(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& pixels, int quality = 92);

} // namespace cxr

#endif
