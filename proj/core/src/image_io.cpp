#include "pssc/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>

#include "pssc/error.hpp"

namespace pssc {
namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

Image8 to_rgb(const Image8& img) {
  if (img.channels == 3) return img;
  Image8 out{img.width, img.height, 3, std::vector<std::uint8_t>(img.pixels.size() * 3)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = img.pixels[i];
  }
  return out;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void draw_line(Image8& img, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (x0 >= 0 && x0 < img.width && y0 >= 0 && y0 < img.height) {
      img.at(y0, x0, 0) = r;
      img.at(y0, x0, 1) = g;
      img.at(y0, x0, 2) = b;
    }
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

// Variable-width LZW as used by GIF image data.
class LzwWriter {
 public:
  LzwWriter(int min_code_size, std::vector<std::uint8_t>& out) : min_(min_code_size), out_(out) {}

  void encode(const std::vector<std::uint8_t>& indices) {
    const int clear = 1 << min_, eoi = clear + 1;
    reset();
    emit(clear);
    if (indices.empty()) {
      emit(eoi);
      flush();
      return;
    }
    int prefix = indices[0];
    for (std::size_t i = 1; i < indices.size(); ++i) {
      const int k = indices[i];
      const auto key = (static_cast<std::uint32_t>(prefix) << 8) | static_cast<std::uint32_t>(k);
      auto it = table_.find(key);
      if (it != table_.end()) {
        prefix = it->second;
        continue;
      }
      emit(prefix);
      if (next_ < 4096) {
        table_[key] = next_++;
        if (next_ > (1 << width_) && width_ < 12) ++width_;
      } else {
        emit(clear);
        reset();
      }
      prefix = k;
    }
    emit(prefix);
    emit(eoi);
    flush();
  }

 private:
  void reset() {
    table_.clear();
    width_ = min_ + 1;
    next_ = (1 << min_) + 2;
  }
  void emit(int code) {
    bits_ |= static_cast<std::uint32_t>(code) << nbits_;
    nbits_ += width_;
    while (nbits_ >= 8) {
      block_.push_back(static_cast<std::uint8_t>(bits_ & 0xff));
      bits_ >>= 8;
      nbits_ -= 8;
      if (block_.size() == 255) write_block();
    }
  }
  void flush() {
    if (nbits_ > 0) block_.push_back(static_cast<std::uint8_t>(bits_ & 0xff));
    bits_ = 0;
    nbits_ = 0;
    if (!block_.empty()) write_block();
    out_.push_back(0);
  }
  void write_block() {
    out_.push_back(static_cast<std::uint8_t>(block_.size()));
    out_.insert(out_.end(), block_.begin(), block_.end());
    block_.clear();
  }

  int min_;
  std::vector<std::uint8_t>& out_;
  std::map<std::uint32_t, int> table_;
  int width_ = 0, next_ = 0;
  std::uint32_t bits_ = 0;
  int nbits_ = 0;
  std::vector<std::uint8_t> block_;
};

void put16(std::vector<std::uint8_t>& out, int v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

}  // namespace

Image8 to_image8(const Tensor<float>& batch, int index) {
  if (batch.rank() != 4 || (batch.dim(1) != 1 && batch.dim(1) != 3)) {
    throw std::invalid_argument("to_image8 expects [N,1|3,H,W], got " + shape_string(batch.shape()));
  }
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Image8 img{w, h, c, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * c)};
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) img.at(y, x, ch) = to_byte((batch.at(index, ch, y, x) + 1.0) * 127.5);
    }
  }
  return img;
}

Image8 tile_grid(const std::vector<Image8>& tiles, int rows, int cols, int pad) {
  if (tiles.empty() || rows < 1 || cols < 1 || static_cast<int>(tiles.size()) > rows * cols) {
    throw std::invalid_argument("tile_grid: tile count does not fit the grid");
  }
  const int tw = tiles[0].width, th = tiles[0].height;
  int channels = 1;
  for (const auto& t : tiles) {
    if (t.width != tw || t.height != th) throw std::invalid_argument("tile_grid: tiles differ in size");
    channels = std::max(channels, t.channels);
  }
  Image8 out{cols * tw + (cols + 1) * pad, rows * th + (rows + 1) * pad, channels, {}};
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height * channels, 255);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const Image8 t = channels == 3 ? to_rgb(tiles[i]) : tiles[i];
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    const int oy = pad + r * (th + pad), ox = pad + c * (tw + pad);
    for (int y = 0; y < th; ++y) {
      for (int x = 0; x < tw; ++x) {
        for (int ch = 0; ch < channels; ++ch) out.at(oy + y, ox + x, ch) = t.at(y, x, ch);
      }
    }
  }
  return out;
}

Image8 overlay_mask(const Image8& image, const Tensor<float>& mask, double strength) {
  if (mask.rank() != 2) throw std::invalid_argument("overlay_mask expects a [h,w] mask");
  Image8 out = to_rgb(image);
  const int mh = mask.dim(0), mw = mask.dim(1);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const double m = std::clamp<double>(mask[static_cast<std::size_t>(y * mh / out.height) * mw + x * mw / out.width],
                                          0.0, 1.0) *
                       strength;
      out.at(y, x, 0) = to_byte(out.at(y, x, 0) * (1 - m) + 255.0 * m);
      out.at(y, x, 1) = to_byte(out.at(y, x, 1) * (1 - m));
      out.at(y, x, 2) = to_byte(out.at(y, x, 2) * (1 - m));
    }
  }
  return out;
}

Image8 plot_curve(const std::vector<double>& xs, const std::vector<double>& ys, int width, int height) {
  if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("plot_curve needs >= 2 matching points");
  Image8 img{width, height, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3, 255)};
  const int left = 40, right = 10, top = 10, bottom = 30;
  const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
  const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  const double xr = std::max(*xmax - *xmin, 1e-12), yr = std::max(*ymax - *ymin, 1e-12);
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - *xmin) / xr * (width - left - right - 1))); };
  auto py = [&](double y) {
    return height - bottom - static_cast<int>(std::lround((y - *ymin) / yr * (height - top - bottom - 1)));
  };
  draw_line(img, left, top, left, height - bottom, 0, 0, 0);
  draw_line(img, left, height - bottom, width - right, height - bottom, 0, 0, 0);
  for (int t = 0; t <= 4; ++t) {
    const int x = left + t * (width - left - right - 1) / 4;
    draw_line(img, x, height - bottom, x, height - bottom + 4, 0, 0, 0);
    const int y = height - bottom - t * (height - top - bottom - 1) / 4;
    draw_line(img, left - 4, y, left, y, 0, 0, 0);
  }
  for (std::size_t i = 1; i < xs.size(); ++i) {
    draw_line(img, px(xs[i - 1]), py(ys[i - 1]), px(xs[i]), py(ys[i]), 200, 30, 30);
  }
  return img;
}

void write_png(const std::string& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png supports 1 or 3 channels");
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot create " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed for " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 read_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decoding failed for " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_read_update_info(png, info);
  Image8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_gif(const std::string& path, const std::vector<Image8>& frames, int delay_cs) {
  if (frames.empty()) throw std::invalid_argument("write_gif needs at least one frame");
  const int w = frames[0].width, h = frames[0].height;
  bool rgb = false;
  for (const auto& f : frames) {
    if (f.width != w || f.height != h) throw std::invalid_argument("GIF frames differ in size");
    rgb = rgb || f.channels == 3;
  }
  std::vector<std::uint8_t> out = {'G', 'I', 'F', '8', '9', 'a'};
  put16(out, w);
  put16(out, h);
  out.push_back(0xf7);  // global table, 8 bits, 256 entries
  out.push_back(0);
  out.push_back(0);
  for (int i = 0; i < 256; ++i) {
    if (!rgb) {
      out.insert(out.end(), {static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(i)});
    } else if (i < 252) {
      out.insert(out.end(), {static_cast<std::uint8_t>(i / 42 * 51), static_cast<std::uint8_t>(i / 6 % 7 * 255 / 6),
                             static_cast<std::uint8_t>(i % 6 * 51)});
    } else {
      out.insert(out.end(), {0, 0, 0});
    }
  }
  out.insert(out.end(), {0x21, 0xff, 0x0b});
  const char* ext = "NETSCAPE2.0";
  out.insert(out.end(), ext, ext + 11);
  out.insert(out.end(), {0x03, 0x01, 0x00, 0x00, 0x00});
  for (const auto& f : frames) {
    out.insert(out.end(), {0x21, 0xf9, 0x04, 0x00});
    put16(out, delay_cs);
    out.insert(out.end(), {0x00, 0x00});
    out.push_back(0x2c);
    put16(out, 0);
    put16(out, 0);
    put16(out, w);
    put16(out, h);
    out.push_back(0);
    std::vector<std::uint8_t> idx(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::uint8_t v;
        if (!rgb) {
          v = f.at(y, x);
        } else {
          const int r = f.channels == 3 ? f.at(y, x, 0) : f.at(y, x), g = f.channels == 3 ? f.at(y, x, 1) : r,
                    b = f.channels == 3 ? f.at(y, x, 2) : r;
          v = static_cast<std::uint8_t>((r * 5 + 127) / 255 * 42 + (g * 6 + 127) / 255 * 6 + (b * 5 + 127) / 255);
        }
        idx[static_cast<std::size_t>(y) * w + x] = v;
      }
    }
    out.push_back(8);
    LzwWriter(8, out).encode(idx);
  }
  out.push_back(0x3b);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot create " + path);
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for " + path);
}

}  // namespace pssc
