#include "mflow/svg.hpp"

#include "mflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mflow::svg {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string class_color(int label) {
  static const char* palette[] = {"#e8871e", "#808080", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b"};
  if (label < 0) return "#000000";
  return palette[static_cast<std::size_t>(label) % std::size(palette)];
}

void Canvas::fit(const std::vector<Point>& pts) {
  if (pts.empty()) return;
  x0_ = y0_ = INFINITY;
  x1_ = y1_ = -INFINITY;
  for (const auto& p : pts) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
    x0_ = std::min(x0_, p.x);
    x1_ = std::max(x1_, p.x);
    y0_ = std::min(y0_, p.y);
    y1_ = std::max(y1_, p.y);
  }
  // Square aspect so that arrow directions are not distorted.
  const double span = std::max({x1_ - x0_, y1_ - y0_, 1e-9});
  const double cx = 0.5 * (x0_ + x1_), cy = 0.5 * (y0_ + y1_);
  const double half = 0.5 * span * 1.1;
  x0_ = cx - half;
  x1_ = cx + half;
  y0_ = cy - half;
  y1_ = cy + half;
}

Point Canvas::map(Point p) const {
  return {(p.x - x0_) / (x1_ - x0_) * kSize, kSize - (p.y - y0_) / (y1_ - y0_) * kSize};
}

void Canvas::title(const std::string& text) {
  items_.push_back("<text x=\"12\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" + escape(text) + "</text>");
}

void Canvas::polyline(const std::vector<Point>& pts, const std::string& color, double width, double opacity) {
  std::string s = "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" + num(width) +
                  "\" stroke-opacity=\"" + num(opacity) + "\" points=\"";
  for (const auto& p : pts) {
    const Point q = map(p);
    s += num(q.x) + "," + num(q.y) + " ";
  }
  s += "\"/>";
  items_.push_back(std::move(s));
}

void Canvas::circle(Point p, double radius_px, const std::string& color, double opacity, bool hollow) {
  const Point q = map(p);
  std::string s = "<circle cx=\"" + num(q.x) + "\" cy=\"" + num(q.y) + "\" r=\"" + num(radius_px) + "\" ";
  if (hollow) s += "fill=\"none\" stroke=\"" + color + "\" stroke-opacity=\"" + num(opacity) + "\"/>";
  else s += "fill=\"" + color + "\" fill-opacity=\"" + num(opacity) + "\"/>";
  items_.push_back(std::move(s));
}

void Canvas::arrow(Point from, Point to, const std::string& color, double width) {
  const Point a = map(from), b = map(to);
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len = std::hypot(dx, dy);
  std::string s = "<line x1=\"" + num(a.x) + "\" y1=\"" + num(a.y) + "\" x2=\"" + num(b.x) + "\" y2=\"" +
                  num(b.y) + "\" stroke=\"" + color + "\" stroke-width=\"" + num(width) + "\"/>";
  if (len > 1e-6) {
    const double ux = dx / len, uy = dy / len, head = std::min(6.0, 0.4 * len);
    const Point l{b.x - head * (ux - 0.5 * uy), b.y - head * (uy + 0.5 * ux)};
    const Point r{b.x - head * (ux + 0.5 * uy), b.y - head * (uy - 0.5 * ux)};
    s += "<polygon fill=\"" + color + "\" points=\"" + num(b.x) + "," + num(b.y) + " " + num(l.x) + "," +
         num(l.y) + " " + num(r.x) + "," + num(r.y) + "\"/>";
  }
  items_.push_back(std::move(s));
}

void Canvas::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n";
  out << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  for (const auto& item : items_) out << item << '\n';
  out << "</svg>\n";
}

}  // namespace mflow::svg
