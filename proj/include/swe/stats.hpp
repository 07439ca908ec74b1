#pragma once

#include <span>
#include <vector>

namespace swe {

/// Median; the mean of the two middle order statistics for even counts.
double median(std::vector<double> values);

/// Linear-interpolated quantile, q ∈ [0, 1].
double quantile(std::vector<double> values, double q);

/// Ordinary least-squares slope of y against x.
double least_squares_slope(std::span<const double> x, std::span<const double> y);

}  // namespace swe
