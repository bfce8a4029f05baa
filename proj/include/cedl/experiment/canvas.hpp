#pragma once

// Minimal 2-D drawing surface that records primitives and renders them to SVG
// text or to an RGB PNG with a built-in 5x7 bitmap font.

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>

namespace cedl::plot {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  std::string hex() const { return fmt::format("#{:02x}{:02x}{:02x}", r, g, b); }
};

inline constexpr Color kBlack{0, 0, 0};
inline constexpr Color kGrey{150, 150, 150};
inline constexpr Color kLightGrey{225, 225, 225};
inline constexpr Color kWhite{255, 255, 255};
inline constexpr std::array<Color, 6> kPalette{{{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                               {214, 39, 40},  {148, 103, 189}, {140, 86, 75}}};

enum class Anchor { kStart, kMiddle, kEnd };

struct LineOp {
  double x0, y0, x1, y1, width;
  Color color;
  bool dashed;
};
struct RectOp {
  double x, y, w, h;
  Color fill;
  bool filled;
  Color stroke;
};
struct CircleOp {
  double cx, cy, r;
  Color fill;
};
struct TextOp {
  double x, y;
  std::string text;
  int scale;
  Anchor anchor;
  Color color;
};
using Op = std::variant<LineOp, RectOp, CircleOp, TextOp>;

namespace detail {

// 5x7 glyphs, one byte per row, bit 4 = leftmost column.
inline const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> glyphs{
      {' ', {0, 0, 0, 0, 0, 0, 0}},
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
      {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},
      {',', {0, 0, 0, 0, 0x0C, 0x04, 0x08}},
      {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
      {'+', {0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
      {':', {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0}},
      {'=', {0, 0, 0x1F, 0, 0x1F, 0, 0}},
      {'/', {0, 0x01, 0x02, 0x04, 0x08, 0x10, 0}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
  };
  return glyphs;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

class Canvas {
 public:
  Canvas(int width, int height) : width_(width), height_(height) {}

  int width() const { return width_; }
  int height() const { return height_; }

  void line(double x0, double y0, double x1, double y1, Color c = kBlack, double w = 1.0, bool dashed = false) {
    ops_.push_back(LineOp{x0, y0, x1, y1, w, c, dashed});
  }
  void rect(double x, double y, double w, double h, Color fill, bool filled = true, Color stroke = kBlack) {
    ops_.push_back(RectOp{x, y, w, h, fill, filled, stroke});
  }
  void circle(double cx, double cy, double r, Color fill) { ops_.push_back(CircleOp{cx, cy, r, fill}); }
  void text(double x, double y, std::string s, int scale = 1, Anchor a = Anchor::kStart, Color c = kBlack) {
    ops_.push_back(TextOp{x, y, std::move(s), scale, a, c});
  }

  /// Width in pixels of `s` at `scale` in the bitmap font.
  static double text_width(const std::string& s, int scale) { return static_cast<double>(s.size() * 6 * scale); }

  std::string svg() const {
    std::string out = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
        "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\" fill=\"#ffffff\"/>\n",
        width_, height_);
    for (const auto& op : ops_) {
      if (const auto* l = std::get_if<LineOp>(&op)) {
        out += fmt::format(
            "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\" stroke-width=\"{:.2f}\"{}/>\n",
            l->x0, l->y0, l->x1, l->y1, l->color.hex(), l->width, l->dashed ? " stroke-dasharray=\"4 3\"" : "");
      } else if (const auto* r = std::get_if<RectOp>(&op)) {
        out += fmt::format(
            "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" stroke=\"{}\"/>\n", r->x,
            r->y, r->w, r->h, r->filled ? r->fill.hex() : std::string("none"), r->stroke.hex());
      } else if (const auto* c = std::get_if<CircleOp>(&op)) {
        out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{:.2f}\" fill=\"{}\"/>\n", c->cx, c->cy, c->r,
                           c->fill.hex());
      } else if (const auto* t = std::get_if<TextOp>(&op)) {
        const char* anchor = t->anchor == Anchor::kStart ? "start" : t->anchor == Anchor::kMiddle ? "middle" : "end";
        out += fmt::format(
            "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"monospace\" font-size=\"{}\" text-anchor=\"{}\" "
            "fill=\"{}\">{}</text>\n",
            t->x, t->y + 7.0 * t->scale, 9 * t->scale, anchor, t->color.hex(), detail::xml_escape(t->text));
      }
    }
    out += "</svg>\n";
    return out;
  }

  /// Rasterises the display list into row-major RGB bytes.
  std::vector<std::uint8_t> raster() const {
    std::vector<std::uint8_t> px(static_cast<std::size_t>(width_ * height_ * 3), 255);
    auto put = [&](long x, long y, Color c) {
      if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
      const auto i = static_cast<std::size_t>((y * width_ + x) * 3);
      px[i] = c.r;
      px[i + 1] = c.g;
      px[i + 2] = c.b;
    };
    for (const auto& op : ops_) {
      if (const auto* l = std::get_if<LineOp>(&op)) {
        const double len = std::hypot(l->x1 - l->x0, l->y1 - l->y0);
        const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
        const long half = std::max(0L, std::lround(l->width / 2.0) - 1);
        for (int s = 0; s <= steps; ++s) {
          const double f = static_cast<double>(s) / steps;
          if (l->dashed && static_cast<int>(f * len) % 7 >= 4) continue;
          const long x = std::lround(l->x0 + f * (l->x1 - l->x0));
          const long y = std::lround(l->y0 + f * (l->y1 - l->y0));
          for (long dy = -half; dy <= half; ++dy) {
            for (long dx = -half; dx <= half; ++dx) put(x + dx, y + dy, l->color);
          }
        }
      } else if (const auto* r = std::get_if<RectOp>(&op)) {
        const long x0 = std::lround(r->x), y0 = std::lround(r->y);
        const long x1 = std::lround(r->x + r->w), y1 = std::lround(r->y + r->h);
        for (long y = y0; y <= y1; ++y) {
          for (long x = x0; x <= x1; ++x) {
            const bool edge = x == x0 || x == x1 || y == y0 || y == y1;
            if (edge) put(x, y, r->stroke);
            else if (r->filled) put(x, y, r->fill);
          }
        }
      } else if (const auto* c = std::get_if<CircleOp>(&op)) {
        const long rr = std::max(1L, std::lround(c->r));
        const long cx = std::lround(c->cx), cy = std::lround(c->cy);
        for (long dy = -rr; dy <= rr; ++dy) {
          for (long dx = -rr; dx <= rr; ++dx) {
            if (dx * dx + dy * dy <= rr * rr) put(cx + dx, cy + dy, c->fill);
          }
        }
      } else if (const auto* t = std::get_if<TextOp>(&op)) {
        const double w = text_width(t->text, t->scale);
        double x = t->x - (t->anchor == Anchor::kMiddle ? w / 2.0 : t->anchor == Anchor::kEnd ? w : 0.0);
        const auto& glyphs = detail::font();
        for (char ch : t->text) {
          const auto it = glyphs.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
          if (it != glyphs.end()) {
            for (int row = 0; row < 7; ++row) {
              for (int col = 0; col < 5; ++col) {
                if (!(it->second[static_cast<std::size_t>(row)] & (0x10 >> col))) continue;
                for (int sy = 0; sy < t->scale; ++sy) {
                  for (int sx = 0; sx < t->scale; ++sx) {
                    put(std::lround(x) + col * t->scale + sx, std::lround(t->y) + row * t->scale + sy, t->color);
                  }
                }
              }
            }
          }
          x += 6.0 * t->scale;
        }
      }
    }
    return px;
  }

  void write_svg(const std::filesystem::path& path) const {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write " + path.string());
    const auto s = svg();
    std::fwrite(s.data(), 1, s.size(), f);
    std::fclose(f);
  }

  void write_png(const std::filesystem::path& path) const {
    const auto px = raster();
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(f);
      throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width_), static_cast<png_uint_32>(height_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height_; ++y) {
      png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(y * width_ * 3)));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
  }

  /// Writes <stem>.svg and <stem>.png.
  void save(const std::filesystem::path& stem) const {
    write_svg(stem.string() + ".svg");
    write_png(stem.string() + ".png");
  }

 private:
  int width_, height_;
  std::vector<Op> ops_;
};

/// Linear map from a data interval onto a pixel interval.
struct Scale {
  double d0, d1, p0, p1;
  double operator()(double v) const { return d1 == d0 ? (p0 + p1) / 2.0 : p0 + (v - d0) / (d1 - d0) * (p1 - p0); }
};

/// Plot frame with axes, ticks, title and labels; returns the data scales.
struct Axes {
  Scale x, y;
};

inline Axes draw_axes(Canvas& c, double left, double top, double width, double height, double x0, double x1,
                      double y0, double y1, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, int x_ticks = 5, int y_ticks = 5, bool integer_x = false) {
  Axes a{{x0, x1, left, left + width}, {y0, y1, top + height, top}};
  for (int i = 0; i <= y_ticks; ++i) {
    const double v = y0 + (y1 - y0) * i / y_ticks;
    const double py = a.y(v);
    c.line(left, py, left + width, py, kLightGrey);
    c.line(left - 4, py, left, py);
    c.text(left - 6, py - 3, fmt::format("{:.2f}", v), 1, Anchor::kEnd);
  }
  for (int i = 0; i <= x_ticks; ++i) {
    const double v = x0 + (x1 - x0) * i / x_ticks;
    const double px = a.x(v);
    c.line(px, top + height, px, top + height + 4);
    c.text(px, top + height + 7, integer_x ? fmt::format("{}", std::lround(v)) : fmt::format("{:.1f}", v), 1,
           Anchor::kMiddle);
  }
  c.rect(left, top, width, height, kWhite, false, kBlack);
  c.text(left + width / 2, top - 16, title, 1, Anchor::kMiddle);
  c.text(left + width / 2, top + height + 20, xlabel, 1, Anchor::kMiddle);
  c.text(left - 44, top - 16, ylabel, 1, Anchor::kStart);
  return a;
}

}  // namespace cedl::plot
