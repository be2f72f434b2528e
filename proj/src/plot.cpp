#include "phaseforge/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>

#include "phaseforge/errors.hpp"

namespace phaseforge {

namespace fs = std::filesystem;

namespace {

// 5x7 bitmap glyphs, one byte per row, low 5 bits used.
const std::map<char, std::array<std::uint8_t, 7>>& glyphs() {
  static const std::map<char, std::array<std::uint8_t, 7>> table = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
      {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
  };
  return table;
}

struct Canvas {
  std::size_t w, h;
  std::vector<std::uint8_t> rgb;

  Canvas(std::size_t width, std::size_t height)
      : w(width), h(height), rgb(width * height * 3, 0xFF) {}

  void set(std::size_t x, std::size_t y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x >= w || y >= h) return;
    std::uint8_t* px = rgb.data() + (y * w + x) * 3;
    px[0] = r;
    px[1] = g;
    px[2] = b;
  }

  void fill_rect(long x0, long y0, long x1, long y1, std::uint8_t r, std::uint8_t g,
                 std::uint8_t b) {
    for (long y = std::max(0L, y0); y < y1; ++y)
      for (long x = std::max(0L, x0); x < x1; ++x)
        set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), r, g, b);
  }

  void text(long x, long y, const std::string& s, int scale = 1) {
    long cx = x;
    for (char raw : s) {
      const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      auto it = glyphs().find(c);
      if (it != glyphs().end()) {
        for (int row = 0; row < 7; ++row)
          for (int col = 0; col < 5; ++col)
            if (it->second[static_cast<std::size_t>(row)] & (0x10 >> col))
              fill_rect(cx + col * scale, y + row * scale, cx + (col + 1) * scale,
                        y + (row + 1) * scale, 0, 0, 0);
      }
      cx += 6 * scale;
    }
  }
};

void write_png(const fs::path& path, const Canvas& canvas) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw io_error("cannot write plot " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw io_error("libpng failure writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(canvas.w),
               static_cast<png_uint_32>(canvas.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(canvas.h);
  for (std::size_t y = 0; y < canvas.h; ++y)
    rows[y] = const_cast<png_bytep>(canvas.rgb.data() + y * canvas.w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

const std::uint8_t kPalette[][3] = {
    {66, 133, 244}, {219, 68, 55}, {244, 180, 0}, {15, 157, 88},
    {171, 71, 188}, {0, 172, 193},
};

std::string format_tick(double v) {
  char buf[32];
  if (v == 0.0) return "0";
  if (std::abs(v) >= 100.0)
    std::snprintf(buf, sizeof(buf), "%.0f", v);
  else if (std::abs(v) >= 1.0)
    std::snprintf(buf, sizeof(buf), "%.2f", v);
  else
    std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

void write_bar_chart_png(const fs::path& path, const std::string& title,
                         const std::vector<std::string>& group_labels,
                         const std::vector<BarSeries>& series) {
  if (group_labels.empty() || series.empty())
    throw contract_error("write_bar_chart_png: nothing to draw");
  for (const auto& s : series)
    if (s.values.size() != group_labels.size())
      throw contract_error("write_bar_chart_png: series length mismatch");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());

  double vmax = 0.0;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  vmax *= 1.12;

  const std::size_t width = 640, height = 420;
  const long left = 70, right = 20, top = 58, bottom = 46;
  const long plot_w = static_cast<long>(width) - left - right;
  const long plot_h = static_cast<long>(height) - top - bottom;
  Canvas canvas(width, height);

  canvas.text(left, 10, title, 2);

  // legend
  long lx = left;
  const long ly = 34;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto* color = kPalette[s % 6];
    canvas.fill_rect(lx, ly, lx + 10, ly + 10, color[0], color[1], color[2]);
    canvas.text(lx + 14, ly + 1, series[s].name, 1);
    lx += 14 + 6 * static_cast<long>(series[s].name.size()) + 16;
  }

  // axes
  canvas.fill_rect(left - 1, top, left, top + plot_h + 1, 0, 0, 0);
  canvas.fill_rect(left - 1, top + plot_h, left + plot_w, top + plot_h + 1, 0, 0, 0);

  // horizontal grid + ticks
  for (int tick = 0; tick <= 4; ++tick) {
    const double tv = vmax * tick / 4.0;
    const long y = top + plot_h - static_cast<long>(std::llround(tv / vmax * plot_h));
    if (tick > 0) canvas.fill_rect(left, y, left + plot_w, y + 1, 220, 220, 220);
    const std::string label = format_tick(tv);
    canvas.text(left - 6 - 6 * static_cast<long>(label.size()), y - 3, label, 1);
  }

  const std::size_t groups = group_labels.size();
  const long group_w = plot_w / static_cast<long>(groups);
  const long bar_w =
      std::max(2L, (group_w - 12) / static_cast<long>(series.size()));
  for (std::size_t g = 0; g < groups; ++g) {
    const long gx = left + static_cast<long>(g) * group_w;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = series[s].values[g];
      if (!std::isfinite(v)) continue;
      const long bh = static_cast<long>(std::llround(std::max(0.0, v) / vmax * plot_h));
      const long x0 = gx + 6 + static_cast<long>(s) * bar_w;
      const auto* color = kPalette[s % 6];
      canvas.fill_rect(x0, top + plot_h - bh, x0 + bar_w - 2, top + plot_h, color[0],
                       color[1], color[2]);
    }
    const std::string& label = group_labels[g];
    canvas.text(gx + group_w / 2 - 3 * static_cast<long>(label.size()),
                top + plot_h + 8, label, 1);
  }

  write_png(path, canvas);
}

}  // namespace phaseforge
