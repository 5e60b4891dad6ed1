#pragma once

// Learning-curve rendering: parses metrics CSVs and emits one self-contained
// vector-graphics document of test_win_rate against step, one polyline per
// input plus a pointwise-median series when there are several.

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ices/errors.hpp"

namespace ices {

struct MetricsSeries {
  std::string label;
  std::vector<long> steps;
  std::vector<double> win_rate;
};

namespace plotdetail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace plotdetail

inline MetricsSeries parse_metrics_series(const std::string& text, const std::string& label) {
  using plotdetail::split_csv_line;
  MetricsSeries s;
  s.label = label;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics csv line 1: empty document");
  const auto header = split_csv_line(line);
  int step_col = -1, win_col = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "step") step_col = (int)i;
    if (header[i] == "test_win_rate") win_col = (int)i;
  }
  if (step_col < 0) throw ConfigError("metrics csv line 1: missing column step");
  if (win_col < 0) throw ConfigError("metrics csv line 1: missing column test_win_rate");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ConfigError("metrics csv line " + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " columns, got " +
                        std::to_string(cells.size()));
    char* end = nullptr;
    const std::string& sc = cells[step_col];
    const long step = std::strtol(sc.c_str(), &end, 10);
    if (sc.empty() || end != sc.c_str() + sc.size())
      throw ConfigError("metrics csv line " + std::to_string(lineno) + ": bad step value '" +
                        sc + "'");
    const std::string& wc = cells[win_col];
    const double wr = std::strtod(wc.c_str(), &end);
    if (wc.empty() || end != wc.c_str() + wc.size())
      throw ConfigError("metrics csv line " + std::to_string(lineno) +
                        ": bad test_win_rate value '" + wc + "'");
    s.steps.push_back(step);
    s.win_rate.push_back(wr);
  }
  return s;
}

// Pointwise median over the steps present in every series.
inline MetricsSeries median_series(const std::vector<MetricsSeries>& all) {
  MetricsSeries med;
  med.label = "median";
  if (all.empty()) return med;
  std::map<long, int> counts;
  for (const auto& s : all) {
    std::set<long> uniq(s.steps.begin(), s.steps.end());
    for (long st : uniq) ++counts[st];
  }
  for (const auto& [st, c] : counts) {
    if (c != (int)all.size()) continue;
    std::vector<double> vals;
    for (const auto& s : all)
      for (size_t i = 0; i < s.steps.size(); ++i)
        if (s.steps[i] == st) {
          vals.push_back(s.win_rate[i]);
          break;
        }
    std::sort(vals.begin(), vals.end());
    const size_t n = vals.size();
    med.steps.push_back(st);
    med.win_rate.push_back(n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]));
  }
  return med;
}

inline std::string render_win_rate_svg(const std::vector<MetricsSeries>& series) {
  using plotdetail::fmt2;
  using plotdetail::xml_escape;
  const double W = 800, H = 500, L = 65, R = 170, T = 25, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  long xmin = 0, xmax = 1;
  bool any = false;
  for (const auto& s : series)
    for (long st : s.steps) {
      if (!any) {
        xmin = xmax = st;
        any = true;
      }
      xmin = std::min(xmin, st);
      xmax = std::max(xmax, st);
    }
  if (xmax == xmin) xmax = xmin + 1;
  const auto X = [&](long st) { return L + pw * (double)(st - xmin) / (double)(xmax - xmin); };
  const auto Y = [&](double wr) { return T + ph * (1.0 - wr); };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
    << "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  // frame and gridlines at 0, 0.25, ..., 1
  for (int k = 0; k <= 4; ++k) {
    const double wr = 0.25 * k;
    o << "<line x1=\"" << L << "\" y1=\"" << fmt2(Y(wr)) << "\" x2=\"" << L + pw << "\" y2=\""
      << fmt2(Y(wr)) << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << L - 8 << "\" y=\"" << fmt2(Y(wr) + 4)
      << "\" text-anchor=\"end\">" << fmt2(wr) << "</text>\n";
  }
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
    << "\" stroke=\"#333\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
    << "\" stroke=\"#333\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const long st = xmin + (long)((xmax - xmin) * (double)k / 4.0);
    o << "<text x=\"" << fmt2(X(st)) << "\" y=\"" << T + ph + 20
      << "\" text-anchor=\"middle\">" << st << "</text>\n";
  }
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10
    << "\" text-anchor=\"middle\">step</text>\n";
  o << "<text x=\"18\" y=\"" << T + ph / 2
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << T + ph / 2
    << ")\">test_win_rate</text>\n";

  size_t ci = 0;
  for (const auto& s : series) {
    const bool is_median = s.label == "median";
    const std::string color = is_median ? "#000000" : palette[ci++ % 8];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
      << (is_median ? "2.5" : "1.5") << "\"";
    if (is_median) o << " stroke-dasharray=\"7 4\"";
    o << " points=\"";
    for (size_t i = 0; i < s.steps.size(); ++i)
      o << fmt2(X(s.steps[i])) << "," << fmt2(Y(s.win_rate[i])) << " ";
    o << "\"/>\n";
  }
  // legend
  const double lx = L + pw + 12;
  double ly = T + 8;
  ci = 0;
  for (const auto& s : series) {
    const bool is_median = s.label == "median";
    const std::string color = is_median ? "#000000" : palette[ci++ % 8];
    o << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 26 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2.5\"";
    if (is_median) o << " stroke-dasharray=\"7 4\"";
    o << "/>\n";
    o << "<text x=\"" << lx + 32 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label)
      << "</text>\n";
    ly += 20;
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace ices
