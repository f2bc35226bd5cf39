#pragma once

#include <string>
#include <vector>

namespace mflow::svg {

struct Point {
  double x, y;
};

// Fixed 800x800 canvas; data bounds are fitted to the points passed to
// fit() with a 5% margin on each side.
class Canvas {
 public:
  static constexpr double kSize = 800.0;

  void fit(const std::vector<Point>& pts);
  void title(const std::string& text);
  void polyline(const std::vector<Point>& pts, const std::string& color, double width = 1.0,
                double opacity = 0.6);
  void circle(Point p, double radius_px, const std::string& color, double opacity = 0.9,
              bool hollow = false);
  void arrow(Point from, Point to, const std::string& color, double width = 1.2);
  void write(const std::string& path) const;

 private:
  Point map(Point p) const;

  double x0_ = -1, x1_ = 1, y0_ = -1, y1_ = 1;
  std::vector<std::string> items_;
};

// Class 0 orange, class 1 gray, further classes from a fixed palette.
std::string class_color(int label);

}  // namespace mflow::svg
