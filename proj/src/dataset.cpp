#include "hmatgp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace hmatgp {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_number(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && ptr == end && std::isfinite(v);
}

}  // namespace

Dataset ingest_csv(const std::string& path, const std::vector<std::string>& feature_columns,
                   const std::string& target_column, bool clean) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("empty file " + path);
  const auto header = split_csv_line(line);
  auto find = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InvalidArgument("missing column " + name);
  };
  std::vector<std::size_t> cols;
  for (const auto& f : feature_columns) cols.push_back(find(f));
  cols.push_back(find(target_column));

  Dataset ds;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    std::vector<double> row(cols.size());
    bool ok = true;
    for (std::size_t c = 0; c < cols.size() && ok; ++c)
      ok = cols[c] < cells.size() && parse_number(cells[cols[c]], row[c]);
    if (!ok) {
      ++ds.dropped_invalid;
      continue;
    }
    if (clean && std::any_of(row.begin(), row.end(), [](double v) { return v < 0; })) {
      ++ds.dropped_negative;
      continue;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidArgument("dataset is empty after cleaning");
  const Index n = static_cast<Index>(rows.size()), d = static_cast<Index>(feature_columns.size());
  ds.features.resize(d, n);
  ds.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index p = 0; p < d; ++p) ds.features(p, i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)];
    ds.targets[i] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
  }
  auto scale_of = [](double m) { return m > 0 ? m : 1.0; };
  ds.feature_scale.resize(d);
  for (Index p = 0; p < d; ++p) {
    ds.feature_scale[p] = scale_of(ds.features.row(p).cwiseAbs().maxCoeff());
    ds.features.row(p) /= ds.feature_scale[p];
  }
  ds.target_scale = scale_of(ds.targets.cwiseAbs().maxCoeff());
  ds.targets /= ds.target_scale;
  return ds;
}

Matrix uniform_points(Index n, Index d, std::uint64_t seed) {
  Rng rng = block_stream(seed, 0x9A7AULL, 0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix X(d, n);
  for (Index j = 0; j < n; ++j)
    for (Index p = 0; p < d; ++p) X(p, j) = u(rng);
  return X;
}

Vector smooth_target(const Matrix& points) {
  Vector y(points.cols());
  for (Index j = 0; j < points.cols(); ++j) {
    const double x2 = points.rows() > 1 ? points(1, j) : 0.0;
    y[j] = std::sin(2 * std::numbers::pi * points(0, j)) * std::cos(2 * std::numbers::pi * x2);
  }
  return y;
}

void write_synthetic_taxi_csv(const std::string& path, Index n, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path);
  Rng rng = block_stream(seed, 0x7A11ULL, 0);
  std::exponential_distribution<double> dist(1.0 / 3.0);
  std::uniform_int_distribution<int> pay(1, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  out << "trip_distance,payment_type,fare_amount,tip_amount,total_amount\n";
  for (Index i = 0; i < n; ++i) {
    const double distance = dist(rng);
    const int payment = pay(rng);
    const double fare = 2.5 + 2.5 * distance + u(rng);
    const double tip = payment == 1 ? 0.2 * fare * u(rng) : 0.0;
    double total = fare + tip + 0.8;
    if (i % 97 == 13) {
      out << distance << ',' << payment << ",NaN," << tip << ',' << total << '\n';
      continue;
    }
    if (i % 89 == 7) total = -total;
    out << distance << ',' << payment << ',' << fare << ',' << tip << ',' << total << '\n';
  }
}

}  // namespace hmatgp
