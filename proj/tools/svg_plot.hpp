#pragma once

#include <filesystem>
#include <string>

#include "clel/common.hpp"

namespace clel::plot {

/// Scatter of the first two columns.
void scatter(const Matrix& points, const std::string& title, const std::filesystem::path& out);
/// Grid heatmap from (x, y, value) rows laid out on a regular lattice.
void heatmap(const Matrix& grid, const std::string& title, const std::filesystem::path& out);
/// Bars from (bin_edge, count) rows; the last bin ends at 1.
void histogram(const Matrix& bins, const std::string& title, const std::filesystem::path& out);
/// Line of column y against column x.
void line(const Matrix& rows, int x, int y, const std::string& title,
          const std::filesystem::path& out);

}  // namespace clel::plot
