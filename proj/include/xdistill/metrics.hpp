// Copyright 2026 The xdistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xdistill/errors.hpp"
#include "xdistill/io.hpp"

namespace xdistill {

// Percentage of samples strictly below the threshold.
inline double compute_outage(const std::vector<double>& rates_mbps, double threshold_mbps) {
  if (rates_mbps.empty()) throw std::invalid_argument("outage over an empty rate log");
  std::size_t below = 0;
  for (double r : rates_mbps) {
    if (r < threshold_mbps) ++below;
  }
  return 100.0 * static_cast<double>(below) / static_cast<double>(rates_mbps.size());
}

struct Histogram {
  std::vector<double> edges;      // n+1 strictly increasing bin edges
  std::vector<double> density;    // n entries; integrates to 1
  std::size_t clamped_low = 0;    // samples below edges.front(), counted in bin 0
  std::size_t clamped_high = 0;   // samples >= edges.back(), counted in the last bin
  std::size_t samples = 0;
};

// PDF estimate: counts normalized by (total samples * bin width).
// Out-of-range samples land in the nearest end bin and are flagged.
inline Histogram throughput_histogram(const std::vector<double>& rates_mbps,
                                      const std::vector<double>& edges) {
  if (edges.size() < 2) throw std::invalid_argument("histogram needs at least 2 bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (edges[i] <= edges[i - 1]) {
      throw std::invalid_argument("histogram edges must be strictly increasing");
    }
  }
  if (rates_mbps.empty()) throw std::invalid_argument("histogram over an empty rate log");
  Histogram h;
  h.edges = edges;
  h.samples = rates_mbps.size();
  std::vector<std::size_t> counts(edges.size() - 1, 0);
  for (double r : rates_mbps) {
    if (r < edges.front()) {
      ++counts.front();
      ++h.clamped_low;
    } else if (r >= edges.back()) {
      ++counts.back();
      ++h.clamped_high;
    } else {
      std::size_t bin = static_cast<std::size_t>(
          std::upper_bound(edges.begin(), edges.end(), r) - edges.begin() - 1);
      ++counts[bin];
    }
  }
  h.density.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    double width = edges[i + 1] - edges[i];
    h.density[i] = static_cast<double>(counts[i]) / (static_cast<double>(h.samples) * width);
  }
  return h;
}

struct PfSummary {
  double mean = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline PfSummary summarize(std::vector<double> series) {
  if (series.empty()) throw std::invalid_argument("summary of empty series");
  PfSummary s;
  double sum = 0.0;
  for (double v : series) sum += v;
  s.mean = sum / static_cast<double>(series.size());
  std::sort(series.begin(), series.end());
  s.min = series.front();
  s.max = series.back();
  std::size_t n = series.size();
  s.median = n % 2 ? series[n / 2] : 0.5 * (series[n / 2 - 1] + series[n / 2]);
  return s;
}

inline double median_of(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Stage-4 output for one (scheme, seed) evaluation run.
struct EvalMetrics {
  std::string scheme;
  std::uint64_t seed = 0;
  Histogram histogram;
  std::vector<std::pair<double, double>> outage;  // (threshold Mbps, percent)
  long direct_conflict_interrupts = 0;
  long rollback_interrupts = 0;
  long total_interrupts = 0;
  PfSummary pf;
  std::size_t rate_samples = 0;
};

inline std::string outage_csv(const EvalMetrics& m) {
  std::ostringstream os;
  os << "threshold_mbps,outage_pct\n";
  for (const auto& [thr, pct] : m.outage) os << csv_num(thr) << ',' << csv_num(pct) << '\n';
  return os.str();
}

inline std::string histogram_csv(const EvalMetrics& m) {
  std::ostringstream os;
  os << "# clamped_low=" << m.histogram.clamped_low
     << " clamped_high=" << m.histogram.clamped_high << " samples=" << m.histogram.samples << '\n';
  os << "bin_lo_mbps,bin_hi_mbps,density\n";
  for (std::size_t i = 0; i + 1 < m.histogram.edges.size(); ++i) {
    os << csv_num(m.histogram.edges[i]) << ',' << csv_num(m.histogram.edges[i + 1]) << ','
       << csv_num(m.histogram.density[i]) << '\n';
  }
  return os.str();
}

inline std::string summary_csv(const EvalMetrics& m) {
  std::ostringstream os;
  os << "scheme,seed,rate_samples,pf_mean,pf_median,pf_min,pf_max,"
        "direct_conflict_interrupts,rollback_interrupts,total_interrupts\n";
  os << m.scheme << ',' << m.seed << ',' << m.rate_samples << ',' << csv_num(m.pf.mean) << ','
     << csv_num(m.pf.median) << ',' << csv_num(m.pf.min) << ',' << csv_num(m.pf.max) << ','
     << m.direct_conflict_interrupts << ',' << m.rollback_interrupts << ','
     << m.total_interrupts << '\n';
  return os.str();
}

// --- report aggregation -------------------------------------------------

struct OutageRow {
  std::string scheme;
  std::uint64_t seed = 0;
  double threshold_mbps = 0.0;
  double outage_pct = 0.0;
};

// Parses an outage CSV written by outage_csv().
inline std::vector<std::pair<double, double>> parse_outage_csv(const std::string& text) {
  std::vector<std::pair<double, double>> out;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::size_t comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("malformed outage CSV row: " + line);
    out.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return out;
}

// One row per (scheme, seed, threshold).
inline std::string report_csv(const std::vector<OutageRow>& rows) {
  std::ostringstream os;
  os << "scheme,seed,threshold_mbps,outage_pct\n";
  for (const OutageRow& r : rows) {
    os << r.scheme << ',' << r.seed << ',' << csv_num(r.threshold_mbps) << ','
       << csv_num(r.outage_pct) << '\n';
  }
  return os.str();
}

// Median-across-seeds table: one row per threshold, one column per scheme.
inline std::string median_table_csv(const std::vector<OutageRow>& rows,
                                    const std::vector<std::string>& scheme_order) {
  std::map<double, std::map<std::string, std::vector<double>>> grid;
  for (const OutageRow& r : rows) grid[r.threshold_mbps][r.scheme].push_back(r.outage_pct);
  std::vector<std::string> schemes;
  for (const std::string& s : scheme_order) {
    for (const auto& [thr, by_scheme] : grid) {
      if (by_scheme.count(s)) {
        schemes.push_back(s);
        break;
      }
    }
  }
  std::ostringstream os;
  os << "threshold_mbps";
  for (const std::string& s : schemes) os << ',' << s << "_median_outage_pct";
  os << '\n';
  for (const auto& [thr, by_scheme] : grid) {
    os << csv_num(thr);
    for (const std::string& s : schemes) {
      auto it = by_scheme.find(s);
      os << ',' << (it == by_scheme.end() ? "" : csv_num(median_of(it->second)));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace xdistill
