#pragma once

// Minimal SVG text emitter for the report figures.

#include <string>
#include <string_view>
#include <vector>

namespace survtx::svg {

std::string escape(std::string_view text);

class Canvas {
 public:
  Canvas(double width, double height);

  void line(double x1, double y1, double x2, double y2, std::string_view stroke,
            double width = 1.0, std::string_view dash = {});
  void polyline(const std::vector<std::pair<double, double>>& pts, std::string_view stroke,
                double width = 1.5);
  void rect(double x, double y, double w, double h, std::string_view fill);
  void circle(double x, double y, double r, std::string_view fill);
  void text(double x, double y, std::string_view s, double size = 12.0,
            std::string_view anchor = "start", double rotate = 0.0);

  std::string str() const;

 private:
  double w_, h_;
  std::string body_;
};

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Right-continuous step curves (e.g. survival) on [0, x_max] x [0, 1].
std::string step_plot(const std::vector<Series>& series, std::string_view title,
                      std::string_view x_label, std::string_view y_label, double x_max);

/// Vertical bars, one per label.
std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      std::string_view title, std::string_view y_label);

/// Horizontal bars sorted as given (top to bottom).
std::string hbar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                       std::string_view title);

/// Predicted vs observed points per series with the identity diagonal.
std::string reliability_plot(const std::vector<Series>& series, std::string_view title);

}  // namespace survtx::svg
