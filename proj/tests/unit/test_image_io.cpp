#include <gtest/gtest.h>

#include <cstring>

#include "pssc/error.hpp"
#include "pssc/image_io.hpp"
#include "test_util.hpp"

using namespace pssc;
using namespace pssc::testing;

namespace {

Image8 gradient(int w, int h, int channels) {
  Image8 img{w, h, channels, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * channels)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) img.at(y, x, c) = static_cast<std::uint8_t>((x * 13 + y * 7 + c * 50) % 256);
    }
  }
  return img;
}

// Minimal GIF reader written against the GIF89a layout: returns the frames as
// palette-resolved RGB plus the loop count and per-frame delays.
struct DecodedGif {
  int width = 0, height = 0;
  int loop = -1;
  std::vector<int> delays;
  std::vector<Image8> frames;
};

std::vector<int> lzw_decode(const std::vector<std::uint8_t>& data, int min_code) {
  const int clear = 1 << min_code, eoi = clear + 1;
  std::vector<std::vector<int>> dict;
  auto reset = [&] {
    dict.assign(static_cast<std::size_t>(eoi + 1), {});
    for (int i = 0; i < clear; ++i) dict[static_cast<std::size_t>(i)] = {i};
  };
  reset();
  int width = min_code + 1;
  std::size_t bitpos = 0;
  auto read = [&]() -> int {
    int v = 0;
    for (int b = 0; b < width; ++b, ++bitpos) {
      if (bitpos / 8 >= data.size()) return -1;
      v |= ((data[bitpos / 8] >> (bitpos % 8)) & 1) << b;
    }
    return v;
  };
  std::vector<int> out;
  int prev = -1;
  for (;;) {
    const int code = read();
    if (code < 0 || code == eoi) break;
    if (code == clear) {
      reset();
      width = min_code + 1;
      prev = -1;
      continue;
    }
    std::vector<int> entry;
    if (code < static_cast<int>(dict.size())) {
      entry = dict[static_cast<std::size_t>(code)];
      if (prev >= 0) {
        auto added = dict[static_cast<std::size_t>(prev)];
        added.push_back(entry[0]);
        if (dict.size() < 4096) dict.push_back(added);
      }
    } else {
      entry = dict.at(static_cast<std::size_t>(prev));
      entry.push_back(entry[0]);
      if (dict.size() < 4096) dict.push_back(entry);
    }
    out.insert(out.end(), entry.begin(), entry.end());
    prev = code;
    if (static_cast<int>(dict.size()) == (1 << width) && width < 12) ++width;
  }
  return out;
}

DecodedGif decode_gif(const std::string& bytes) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
  std::size_t i = 0;
  auto u16 = [&](std::size_t at) { return p[at] | (p[at + 1] << 8); };
  DecodedGif g;
  EXPECT_EQ(bytes.substr(0, 6), "GIF89a");
  g.width = u16(6);
  g.height = u16(8);
  const std::uint8_t flags = p[10];
  i = 13;
  std::vector<std::uint8_t> palette;
  if (flags & 0x80) {
    const std::size_t n = 3u << ((flags & 7) + 1);
    palette.assign(p + i, p + i + n);
    i += n;
  }
  int delay = 0;
  auto sub_blocks = [&] {
    std::vector<std::uint8_t> data;
    while (p[i] != 0) {
      data.insert(data.end(), p + i + 1, p + i + 1 + p[i]);
      i += 1 + p[i];
    }
    ++i;
    return data;
  };
  while (i < bytes.size()) {
    const std::uint8_t tag = p[i++];
    if (tag == 0x3b) break;
    if (tag == 0x21) {
      const std::uint8_t label = p[i++];
      const auto data = sub_blocks();
      if (label == 0xf9) delay = data[1] | (data[2] << 8);
      if (label == 0xff && data.size() >= 14 && std::memcmp(data.data(), "NETSCAPE2.0", 11) == 0) {
        g.loop = data[12] | (data[13] << 8);
      }
      continue;
    }
    EXPECT_EQ(tag, 0x2c);
    const int w = u16(i + 4), h = u16(i + 6);
    i += 9;
    const int min_code = p[i++];
    const auto indices = lzw_decode(sub_blocks(), min_code);
    EXPECT_EQ(indices.size(), static_cast<std::size_t>(w) * h);
    Image8 frame{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
    for (std::size_t k = 0; k < indices.size() && k < static_cast<std::size_t>(w * h); ++k) {
      for (int c = 0; c < 3; ++c) frame.pixels[k * 3 + c] = palette.at(static_cast<std::size_t>(indices[k]) * 3 + c);
    }
    g.frames.push_back(std::move(frame));
    g.delays.push_back(delay);
  }
  return g;
}

}  // namespace

TEST(ImageIo, ToImage8MapsRange) {
  Tensor<float> t({2, 1, 1, 3}, {-1.0f, 0.0f, 1.0f, -2.0f, 0.5f, 3.0f});
  const auto a = to_image8(t, 0), b = to_image8(t, 1);
  EXPECT_EQ(a.pixels, (std::vector<std::uint8_t>{0, 128, 255}));
  EXPECT_EQ(b.pixels, (std::vector<std::uint8_t>{0, 191, 255}));
  EXPECT_THROW(to_image8(Tensor<float>({1, 2, 2, 2}), 0), std::invalid_argument);
}

TEST(ImageIo, PngRoundTripGrayAndRgb) {
  const auto dir = temp_dir();
  for (int c : {1, 3}) {
    const auto img = gradient(37, 19, c);
    const auto path = (dir / ("g" + std::to_string(c) + ".png")).string();
    write_png(path, img);
    EXPECT_EQ(read_png(path), img);
  }
  EXPECT_THROW(read_png((dir / "nope.png").string()), IoError);
  write_file(dir / "junk.png", "not a png");
  EXPECT_THROW(read_png((dir / "junk.png").string()), IoError);
}

TEST(ImageIo, GifDecodesToSourceFrames) {
  const auto dir = temp_dir();
  std::vector<Image8> frames;
  for (int f = 0; f < 5; ++f) {
    auto img = gradient(40, 30, 1);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(v + f * 31);
    frames.push_back(img);
  }
  // A large noisy frame exercises dictionary resets.
  Image8 noisy{120, 90, 1, std::vector<std::uint8_t>(120 * 90)};
  std::uint32_t s = 1;
  for (auto& v : noisy.pixels) v = static_cast<std::uint8_t>((s = s * 1664525u + 1013904223u) >> 24);
  auto frames2 = std::vector<Image8>{noisy};

  write_gif((dir / "a.gif").string(), frames, 15);
  const auto g = decode_gif(read_file(dir / "a.gif"));
  EXPECT_EQ(g.width, 40);
  EXPECT_EQ(g.height, 30);
  EXPECT_EQ(g.loop, 0);
  ASSERT_EQ(g.frames.size(), 5u);
  for (std::size_t f = 0; f < 5; ++f) {
    EXPECT_EQ(g.delays[f], 15);
    for (int y = 0; y < 30; ++y) {
      for (int x = 0; x < 40; ++x) {
        for (int c = 0; c < 3; ++c) ASSERT_EQ(g.frames[f].at(y, x, c), frames[f].at(y, x)) << f << " " << y << " " << x;
      }
    }
  }

  write_gif((dir / "b.gif").string(), frames2);
  const auto n = decode_gif(read_file(dir / "b.gif"));
  ASSERT_EQ(n.frames.size(), 1u);
  for (int k = 0; k < 120 * 90; ++k) ASSERT_EQ(n.frames[0].pixels[static_cast<std::size_t>(k) * 3], noisy.pixels[static_cast<std::size_t>(k)]);
}

TEST(ImageIo, GifRgbFramesQuantizeClosely) {
  const auto dir = temp_dir();
  const auto img = gradient(16, 16, 3);
  write_gif((dir / "c.gif").string(), {img});
  const auto g = decode_gif(read_file(dir / "c.gif"));
  ASSERT_EQ(g.frames.size(), 1u);
  for (std::size_t k = 0; k < img.pixels.size(); ++k) {
    EXPECT_LE(std::abs(int(g.frames[0].pixels[k]) - int(img.pixels[k])), 26) << k;
  }
  EXPECT_THROW(write_gif((dir / "d.gif").string(), {}), std::invalid_argument);
}

TEST(ImageIo, TileGridLayout) {
  const auto a = gradient(4, 3, 1), b = gradient(4, 3, 3);
  const auto grid = tile_grid({a, a, a}, 2, 2, 1);
  EXPECT_EQ(grid.width, 4 * 2 + 3);
  EXPECT_EQ(grid.height, 3 * 2 + 3);
  EXPECT_EQ(grid.channels, 1);
  EXPECT_EQ(grid.at(0, 0), 255);
  EXPECT_EQ(grid.at(1, 1), a.at(0, 0));
  EXPECT_EQ(grid.at(1 + 3 + 1 + 2, 1 + 3), a.at(2, 3));
  EXPECT_EQ(grid.at(5, 6), 255);  // unused fourth slot stays white
  const auto mixed = tile_grid({a, b}, 1, 2, 0);
  EXPECT_EQ(mixed.channels, 3);
  EXPECT_EQ(mixed.at(1, 1, 2), a.at(1, 1));
  EXPECT_EQ(mixed.at(1, 5, 2), b.at(1, 1, 2));
  EXPECT_THROW(tile_grid({a, a, a}, 1, 2), std::invalid_argument);
  EXPECT_THROW(tile_grid({a, gradient(5, 3, 1)}, 1, 2), std::invalid_argument);
}

TEST(ImageIo, OverlayTintsMaskedPixelsOnly) {
  Image8 gray{4, 4, 1, std::vector<std::uint8_t>(16, 100)};
  Tensor<float> mask({2, 2}, {1.0f, 0.0f, 0.0f, 0.0f});
  const auto out = overlay_mask(gray, mask, 0.5);
  EXPECT_EQ(out.channels, 3);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const bool in = y < 2 && x < 2;
      EXPECT_EQ(out.at(y, x, 0), in ? 178 : 100);
      EXPECT_EQ(out.at(y, x, 1), in ? 50 : 100);
      EXPECT_EQ(out.at(y, x, 2), in ? 50 : 100);
    }
  }
}

TEST(ImageIo, PlotCurveDrawsSomething) {
  const auto img = plot_curve({0, 1, 2, 3}, {1, 0, 1, 0}, 200, 120);
  EXPECT_EQ(img.width, 200);
  EXPECT_EQ(img.channels, 3);
  int red = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) red += img.at(y, x, 0) >= 200 && img.at(y, x, 1) < 80;
  }
  EXPECT_GT(red, 100);
  EXPECT_THROW(plot_curve({0}, {0}), std::invalid_argument);
}
