#include "survtx/svg.hpp"

#include <algorithm>
#include <cstdio>

namespace survtx::svg {

namespace {

constexpr const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                                    "#66a61e", "#e6ab02", "#a6761d", "#666666"};

const char* color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Plot frame with margins; maps data coordinates into pixels.
struct Frame {
  double left = 70, right = 150, top = 40, bottom = 50, width = 640, height = 420;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }

  void axes(Canvas& c, std::string_view title, std::string_view xl, std::string_view yl) const {
    c.text(width / 2, 22, title, 15, "middle");
    c.line(px(x0), py(y0), px(x1), py(y0), "#000");
    c.line(px(x0), py(y0), px(x0), py(y1), "#000");
    for (int i = 0; i <= 5; ++i) {
      const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
      c.line(px(xv), py(y0), px(xv), py(y0) + 4, "#000");
      c.text(px(xv), py(y0) + 18, tick(xv), 11, "middle");
      c.line(px(x0) - 4, py(yv), px(x0), py(yv), "#000");
      c.text(px(x0) - 8, py(yv) + 4, tick(yv), 11, "end");
    }
    c.text((px(x0) + px(x1)) / 2, height - 10, xl, 12, "middle");
    c.text(18, (py(y0) + py(y1)) / 2, yl, 12, "middle", -90);
  }

  void legend(Canvas& c, const std::vector<std::string>& names) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double y = top + 10 + 20.0 * static_cast<double>(i);
      c.rect(width - right + 15, y - 9, 12, 12, color(i));
      c.text(width - right + 33, y + 2, names[i], 11);
    }
  }
};

}  // namespace

std::string escape(std::string_view text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

Canvas::Canvas(double width, double height) : w_(width), h_(height) {}

void Canvas::line(double x1, double y1, double x2, double y2, std::string_view stroke,
                  double width, std::string_view dash) {
  body_ += "<line x1=\"" + fmt(x1) + "\" y1=\"" + fmt(y1) + "\" x2=\"" + fmt(x2) + "\" y2=\"" +
           fmt(y2) + "\" stroke=\"" + std::string(stroke) + "\" stroke-width=\"" + fmt(width) + "\"";
  if (!dash.empty()) body_ += " stroke-dasharray=\"" + std::string(dash) + "\"";
  body_ += "/>\n";
}

void Canvas::polyline(const std::vector<std::pair<double, double>>& pts, std::string_view stroke,
                      double width) {
  body_ += "<polyline fill=\"none\" stroke=\"" + std::string(stroke) + "\" stroke-width=\"" +
           fmt(width) + "\" points=\"";
  for (const auto& [x, y] : pts) body_ += fmt(x) + "," + fmt(y) + " ";
  body_ += "\"/>\n";
}

void Canvas::rect(double x, double y, double w, double h, std::string_view fill) {
  body_ += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) + "\" height=\"" +
           fmt(h) + "\" fill=\"" + std::string(fill) + "\"/>\n";
}

void Canvas::circle(double x, double y, double r, std::string_view fill) {
  body_ += "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"" + fmt(r) + "\" fill=\"" +
           std::string(fill) + "\"/>\n";
}

void Canvas::text(double x, double y, std::string_view s, double size, std::string_view anchor,
                  double rotate) {
  body_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-size=\"" + fmt(size) +
           "\" font-family=\"sans-serif\" text-anchor=\"" + std::string(anchor) + "\"";
  if (rotate != 0.0)
    body_ += " transform=\"rotate(" + fmt(rotate) + " " + fmt(x) + " " + fmt(y) + ")\"";
  body_ += ">" + escape(s) + "</text>\n";
}

std::string Canvas::str() const {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w_) + "\" height=\"" + fmt(h_) +
         "\" viewBox=\"0 0 " + fmt(w_) + " " + fmt(h_) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n" +
         body_ + "</svg>\n";
}

std::string step_plot(const std::vector<Series>& series, std::string_view title,
                      std::string_view x_label, std::string_view y_label, double x_max) {
  Frame f;
  f.x1 = x_max > 0 ? x_max : 1.0;
  Canvas c(f.width, f.height);
  f.axes(c, title, x_label, y_label);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    names.push_back(s.name);
    std::vector<std::pair<double, double>> pts{{f.px(0), f.py(1)}};
    double prev = 1.0;
    for (std::size_t k = 0; k < s.x.size() && s.x[k] <= f.x1; ++k) {
      pts.emplace_back(f.px(s.x[k]), f.py(prev));
      pts.emplace_back(f.px(s.x[k]), f.py(s.y[k]));
      prev = s.y[k];
    }
    pts.emplace_back(f.px(f.x1), f.py(prev));
    c.polyline(pts, color(i));
  }
  f.legend(c, names);
  return c.str();
}

std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      std::string_view title, std::string_view y_label) {
  Frame f;
  f.right = 30;
  f.x1 = static_cast<double>(std::max<std::size_t>(labels.size(), 1));
  double top = 0.0;
  for (double v : values) top = std::max(top, v);
  f.y1 = top > 0 ? top * 1.1 : 1.0;
  Canvas c(f.width, f.height);
  c.text(f.width / 2, 22, title, 15, "middle");
  c.line(f.px(0), f.py(0), f.px(f.x1), f.py(0), "#000");
  c.line(f.px(0), f.py(0), f.px(0), f.py(f.y1), "#000");
  for (int i = 0; i <= 5; ++i) {
    const double yv = f.y1 * i / 5.0;
    c.text(f.px(0) - 8, f.py(yv) + 4, tick(yv), 11, "end");
  }
  c.text(18, (f.py(0) + f.py(f.y1)) / 2, y_label, 12, "middle", -90);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = static_cast<double>(i);
    const double l = f.px(x + 0.15), r = f.px(x + 0.85);
    c.rect(l, f.py(values[i]), r - l, f.py(0) - f.py(values[i]), color(0));
    c.text((l + r) / 2, f.py(0) + 16, labels[i], 11, "middle");
    c.text((l + r) / 2, f.py(values[i]) - 4, tick(values[i]), 10, "middle");
  }
  return c.str();
}

std::string hbar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                       std::string_view title) {
  const double row = 22.0, left = 220.0, width = 720.0;
  const double height = 60.0 + row * static_cast<double>(labels.size());
  double top = 0.0;
  for (double v : values) top = std::max(top, v);
  if (top <= 0.0) top = 1.0;
  Canvas c(width, height);
  c.text(width / 2, 22, title, 15, "middle");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double y = 40.0 + row * static_cast<double>(i);
    const double w = values[i] / top * (width - left - 80);
    c.text(left - 8, y + 13, labels[i], 11, "end");
    c.rect(left, y + 2, w, row - 6, color(1));
    c.text(left + w + 5, y + 13, tick(values[i]), 10);
  }
  return c.str();
}

std::string reliability_plot(const std::vector<Series>& series, std::string_view title) {
  Frame f;
  Canvas c(f.width, f.height);
  f.axes(c, title, "predicted risk", "observed rate");
  c.line(f.px(0), f.py(0), f.px(1), f.py(1), "#999", 1.0, "4,4");
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    names.push_back(series[i].name);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 0; k < series[i].x.size(); ++k) {
      pts.emplace_back(f.px(series[i].x[k]), f.py(series[i].y[k]));
      c.circle(pts.back().first, pts.back().second, 3.5, color(i));
    }
    if (pts.size() > 1) c.polyline(pts, color(i), 1.0);
  }
  f.legend(c, names);
  return c.str();
}

}  // namespace survtx::svg
