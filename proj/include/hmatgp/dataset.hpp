#pragma once

#include "hmatgp/types.hpp"

namespace hmatgp {

struct Dataset {
  Matrix features;       ///< d x n, max-normalized
  Vector targets;        ///< max-normalized
  Vector feature_scale;  ///< divisor applied to each feature column
  double target_scale = 1.0;
  Index dropped_invalid = 0;   ///< non-numeric or NaN rows
  Index dropped_negative = 0;  ///< rows with a negative value (clean mode)
};

/// Reads a headed, comma-separated file and max-normalizes each selected column.
Dataset ingest_csv(const std::string& path, const std::vector<std::string>& feature_columns,
                   const std::string& target_column, bool clean);

/// Uniform points in the unit cube, d x n.
Matrix uniform_points(Index n, Index d, std::uint64_t seed);

/// sin(2 pi x1) cos(2 pi x2); remaining coordinates are ignored.
Vector smooth_target(const Matrix& points);

/// Writes a taxi-schema CSV (trip_distance, payment_type, fare_amount, tip_amount, total_amount)
/// with a handful of NaN and negative rows.
void write_synthetic_taxi_csv(const std::string& path, Index n, std::uint64_t seed);

}  // namespace hmatgp
