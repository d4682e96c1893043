#include "svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace clel::plot {
namespace {

constexpr double kSize = 480.0;
constexpr double kMargin = 40.0;

struct Frame {
  double x_lo, x_hi, y_lo, y_hi;

  double px(double x) const { return kMargin + (x - x_lo) / (x_hi - x_lo) * (kSize - 2 * kMargin); }
  double py(double y) const {
    return kSize - kMargin - (y - y_lo) / (y_hi - y_lo) * (kSize - 2 * kMargin);
  }
};

Frame frame_of(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys) {
  Frame f{xs.minCoeff(), xs.maxCoeff(), ys.minCoeff(), ys.maxCoeff()};
  if (f.x_hi <= f.x_lo) f.x_hi = f.x_lo + 1;
  if (f.y_hi <= f.y_lo) f.y_hi = f.y_lo + 1;
  return f;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void write(const std::filesystem::path& out, const Frame& f, const std::string& title,
           const std::string& body) {
  std::ofstream os(out);
  if (!os) throw DataError("cannot write " + out.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kSize / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
     << "</text>\n"
     << body << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\""
     << kSize - 2 * kMargin << "\" height=\"" << kSize - 2 * kMargin
     << "\" fill=\"none\" stroke=\"black\"/>\n"
     << "<text x=\"" << kMargin << "\" y=\"" << kSize - kMargin + 14 << "\">" << num(f.x_lo)
     << "</text>\n"
     << "<text x=\"" << kSize - kMargin << "\" y=\"" << kSize - kMargin + 14
     << "\" text-anchor=\"end\">" << num(f.x_hi) << "</text>\n"
     << "<text x=\"" << kMargin - 4 << "\" y=\"" << kSize - kMargin
     << "\" text-anchor=\"end\">" << num(f.y_lo) << "</text>\n"
     << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 10 << "\" text-anchor=\"end\">"
     << num(f.y_hi) << "</text>\n"
     << "</svg>\n";
}

void require_columns(const Matrix& m, Eigen::Index cols, const char* what) {
  if (m.rows() == 0 || m.cols() < cols) {
    throw ArgumentError(std::string(what) + " needs at least " + std::to_string(cols) +
                        " columns and one row");
  }
}

}  // namespace

void scatter(const Matrix& points, const std::string& title, const std::filesystem::path& out) {
  require_columns(points, 2, "scatter");
  const Frame f = frame_of(points.col(0), points.col(1));
  std::ostringstream body;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    body << "<circle cx=\"" << num(f.px(points(i, 0))) << "\" cy=\"" << num(f.py(points(i, 1)))
         << "\" r=\"1.2\" fill=\"#1f4e9c\" fill-opacity=\"0.5\"/>\n";
  }
  write(out, f, title, body.str());
}

void heatmap(const Matrix& grid, const std::string& title, const std::filesystem::path& out) {
  require_columns(grid, 3, "heatmap");
  std::set<double> xs(grid.col(0).begin(), grid.col(0).end());
  std::set<double> ys(grid.col(1).begin(), grid.col(1).end());
  const Frame f = frame_of(grid.col(0), grid.col(1));
  const double w = (kSize - 2 * kMargin) / static_cast<double>(std::max<std::size_t>(1, xs.size() - 1));
  const double h = (kSize - 2 * kMargin) / static_cast<double>(std::max<std::size_t>(1, ys.size() - 1));
  // Color by exp(−E) normalized to the grid maximum.
  const double e_min = grid.col(2).minCoeff();
  std::ostringstream body;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const double t = std::exp(-(grid(i, 2) - e_min));
    const int shade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    body << "<rect x=\"" << num(f.px(grid(i, 0)) - w / 2) << "\" y=\"" << num(f.py(grid(i, 1)) - h / 2)
         << "\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" fill=\"rgb(" << shade << ","
         << shade << ",255)\"/>\n";
  }
  write(out, f, title, body.str());
}

void histogram(const Matrix& bins, const std::string& title, const std::filesystem::path& out) {
  require_columns(bins, 2, "histogram");
  Eigen::VectorXd edges(bins.rows() + 1);
  edges.head(bins.rows()) = bins.col(0);
  edges(bins.rows()) = bins.rows() > 1 ? 2 * bins(bins.rows() - 1, 0) - bins(bins.rows() - 2, 0) : 1.0;
  Eigen::VectorXd heights(2);
  heights << 0.0, bins.col(1).maxCoeff();
  const Frame f = frame_of(edges, heights);
  std::ostringstream body;
  for (Eigen::Index i = 0; i < bins.rows(); ++i) {
    const double x0 = f.px(edges(i)), x1 = f.px(edges(i + 1));
    const double y = f.py(bins(i, 1));
    body << "<rect x=\"" << num(x0) << "\" y=\"" << num(y) << "\" width=\"" << num(x1 - x0)
         << "\" height=\"" << num(f.py(0) - y) << "\" fill=\"#c0504d\"/>\n";
  }
  write(out, f, title, body.str());
}

void line(const Matrix& rows, int x, int y, const std::string& title,
          const std::filesystem::path& out) {
  require_columns(rows, std::max(x, y) + 1, "line");
  const Frame f = frame_of(rows.col(x), rows.col(y));
  std::ostringstream body;
  body << "<polyline fill=\"none\" stroke=\"#1f4e9c\" points=\"";
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    body << num(f.px(rows(i, x))) << ',' << num(f.py(rows(i, y))) << ' ';
  }
  body << "\"/>\n";
  write(out, f, title, body.str());
}

}  // namespace clel::plot
