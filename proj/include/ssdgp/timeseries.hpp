#pragma once

#include <ssdgp/discretise.hpp>

#include <Eigen/Core>

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdgp {

// Measurement record: strictly increasing times; an empty value vector means
// "no observation at this time" (the filter then only predicts there).
// noise_covs, when non-empty, override the measurement model's default
// covariance step by step.
struct TimeSeries {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> values;
  std::vector<Eigen::MatrixXd> noise_covs;

  std::size_t size() const { return times.size(); }

  void validate() const {
    if (times.size() != values.size())
      throw std::invalid_argument("time series: times and values differ in length");
    if (!noise_covs.empty() && noise_covs.size() != times.size())
      throw std::invalid_argument("time series: per-step noise covariances mismatch length");
    for (std::size_t k = 1; k < times.size(); ++k)
      if (!(times[k] > times[k - 1]))
        throw std::invalid_argument("time series: times must strictly increase at row " +
                                    std::to_string(k + 1));
    for (std::size_t k = 0; k < values.size(); ++k)
      if (values[k].size() > 0 && !values[k].allFinite())
        throw std::invalid_argument("time series: non-finite value at row " + std::to_string(k + 1));
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace detail

// Reads a CSV with header `t,y...`; every data row must be complete, finite,
// and strictly later than the previous one. Errors name the offending row
// (1-based, counting the header as row 1).
inline TimeSeries load_timeseries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_timeseries: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_timeseries: no data rows in " + path);
  const std::size_t n_cols = detail::split_csv_line(line).size();
  if (n_cols < 2)
    throw std::runtime_error("load_timeseries: header must be t,y... in " + path);

  TimeSeries ts;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != n_cols)
      throw std::runtime_error("load_timeseries: row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(n_cols));
    double t;
    Eigen::VectorXd y(n_cols - 1);
    try {
      t = std::stod(cells[0]);
      for (std::size_t j = 1; j < n_cols; ++j) y[j - 1] = std::stod(cells[j]);
    } catch (const std::exception&) {
      throw std::runtime_error("load_timeseries: unparsable cell at row " + std::to_string(row));
    }
    if (!std::isfinite(t) || !y.allFinite())
      throw std::runtime_error("load_timeseries: non-finite cell at row " + std::to_string(row));
    if (!ts.times.empty() && !(t > ts.times.back()))
      throw std::runtime_error("load_timeseries: time not increasing at row " +
                               std::to_string(row));
    ts.times.push_back(t);
    ts.values.push_back(std::move(y));
  }
  if (ts.times.empty()) throw std::runtime_error("load_timeseries: no data rows in " + path);
  return ts;
}

namespace detail {

inline std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Header: t,x1..xd,seed.
inline void write_path_csv(const PathSample& path, const std::string& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("write_path_csv: cannot open " + file);
  const int d = path.states.empty() ? 0 : static_cast<int>(path.states[0].size());
  out << "t";
  for (int i = 1; i <= d; ++i) out << ",x" << i;
  out << ",seed\n";
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    out << detail::csv_number(path.times[k]);
    for (int i = 0; i < d; ++i) out << "," << detail::csv_number(path.states[k][i]);
    out << "," << path.seed << "\n";
  }
}

}  // namespace ssdgp
