#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pssc/tensor.hpp"

namespace pssc {

/// 8-bit raster, row-major with interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

/// Image `index` of a [N,C,H,W] batch in [-1,1]; C must be 1 or 3.
Image8 to_image8(const Tensor<float>& batch, int index);

/// Tiles equally sized images row-major into a grid with `pad` pixels of
/// spacing. Gray tiles are promoted to RGB when any tile is RGB.
Image8 tile_grid(const std::vector<Image8>& tiles, int rows, int cols, int pad = 2);

/// Red overlay of a mask [h,w] in [0,1], upsampled (nearest) to the image.
Image8 overlay_mask(const Image8& image, const Tensor<float>& mask, double strength = 0.6);

/// Line plot of ys against xs with axes, as an RGB raster.
Image8 plot_curve(const std::vector<double>& xs, const std::vector<double>& ys, int width = 480, int height = 320);

void write_png(const std::string& path, const Image8& image);
Image8 read_png(const std::string& path);

/// Animated GIF, looping, `delay_cs` hundredths of a second per frame.
/// RGB frames are quantized to a fixed 6x7x6 palette.
void write_gif(const std::string& path, const std::vector<Image8>& frames, int delay_cs = 20);

}  // namespace pssc
