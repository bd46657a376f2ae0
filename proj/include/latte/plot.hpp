#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "latte/common.hpp"

namespace latte::plot {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("no column named " + name);
    return static_cast<size_t>(it - header.begin());
  }
};

// Plain comma-separated values with a header row; no quoting.
inline Table read_csv(std::istream& in) {
  Table t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty()) {
      t.header = split(line);
      continue;
    }
    auto r = split(line);
    if (r.size() != t.header.size()) throw FormatError("csv row has " + std::to_string(r.size()) + " cells, expected " +
                                                       std::to_string(t.header.size()));
    t.rows.push_back(std::move(r));
  }
  if (t.header.empty()) throw FormatError("empty csv");
  return t;
}

struct PlotSpec {
  std::string x, y, group;  // group may be empty
  std::string y_low, y_high;  // optional error-bar columns
  bool log_x = false, log_y = false;
  std::string title;
  int width = 640, height = 420;
};

struct Series {
  std::string name;
  std::vector<double> x, y, lo, hi;
};

inline std::vector<Series> series_of(const Table& t, const PlotSpec& s) {
  size_t cx = t.column(s.x), cy = t.column(s.y);
  std::optional<size_t> cg, cl, ch;
  if (!s.group.empty()) cg = t.column(s.group);
  if (!s.y_low.empty()) cl = t.column(s.y_low);
  if (!s.y_high.empty()) ch = t.column(s.y_high);
  std::map<std::string, Series> by;
  std::vector<std::string> order;
  for (const auto& r : t.rows) {
    std::string g = cg ? r[*cg] : s.y;
    if (!by.count(g)) order.push_back(g);
    Series& se = by[g];
    se.name = cg ? s.group + "=" + g : g;
    se.x.push_back(std::stod(r[cx]));
    se.y.push_back(std::stod(r[cy]));
    se.lo.push_back(cl ? std::stod(r[*cl]) : se.y.back());
    se.hi.push_back(ch ? std::stod(r[*ch]) : se.y.back());
  }
  std::vector<Series> out;
  for (const auto& g : order) out.push_back(by[g]);
  return out;
}

// Static SVG line chart. Non-positive values are dropped on log axes.
inline std::string render_svg(const Table& t, const PlotSpec& s) {
  auto series = series_of(t, s);
  auto tx = [&](double v) { return s.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return s.log_y ? std::log10(v) : v; };
  auto ok = [&](double x, double y) { return (!s.log_x || x > 0) && (!s.log_y || y > 0); };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& se : series)
    for (size_t i = 0; i < se.x.size(); ++i) {
      if (!ok(se.x[i], se.y[i])) continue;
      x0 = std::min(x0, tx(se.x[i]));
      x1 = std::max(x1, tx(se.x[i]));
      for (double v : {se.y[i], se.lo[i], se.hi[i]})
        if (!s.log_y || v > 0) {
          y0 = std::min(y0, ty(v));
          y1 = std::max(y1, ty(v));
        }
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double ml = 70, mr = 150, mt = 40, mb = 50;
  const double pw = s.width - ml - mr, ph = s.height - mt - mb;
  auto px = [&](double v) { return ml + (tx(v) - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return mt + ph - (ty(v) - y0) / (y1 - y0) * ph; };
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

  std::ostringstream o;
  o << std::setprecision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << s.width << "\" height=\"" << s.height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (!s.title.empty()) o << "<text x=\"" << ml << "\" y=\"24\" font-size=\"14\">" << s.title << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = x0 + (x1 - x0) * i / 4, fy = y0 + (y1 - y0) * i / 4;
    double vx = s.log_x ? std::pow(10, fx) : fx, vy = s.log_y ? std::pow(10, fy) : fy;
    double gx = ml + pw * i / 4, gy = mt + ph - ph * i / 4;
    o << "<text x=\"" << gx << "\" y=\"" << mt + ph + 18 << "\" text-anchor=\"middle\">" << std::setprecision(3) << vx
      << "</text>\n";
    o << "<text x=\"" << ml - 6 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">" << vy << "</text>\n"
      << std::setprecision(6);
  }
  o << "<text x=\"" << ml + pw / 2 << "\" y=\"" << s.height - 10 << "\" text-anchor=\"middle\">" << s.x
    << (s.log_x ? " (log)" : "") << "</text>\n";
  o << "<text x=\"16\" y=\"" << mt + ph / 2 << "\" transform=\"rotate(-90 16 " << mt + ph / 2
    << ")\" text-anchor=\"middle\">" << s.y << (s.log_y ? " (log)" : "") << "</text>\n";
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& se = series[k];
    const char* c = colours[k % std::size(colours)];
    std::vector<size_t> idx(se.x.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return se.x[a] < se.x[b]; });
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i : idx)
      if (ok(se.x[i], se.y[i])) o << px(se.x[i]) << ',' << py(se.y[i]) << ' ';
    o << "\"/>\n";
    for (size_t i : idx) {
      if (!ok(se.x[i], se.y[i])) continue;
      o << "<circle cx=\"" << px(se.x[i]) << "\" cy=\"" << py(se.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
      if (se.lo[i] != se.hi[i] && (!s.log_y || se.lo[i] > 0))
        o << "<line x1=\"" << px(se.x[i]) << "\" x2=\"" << px(se.x[i]) << "\" y1=\"" << py(se.lo[i]) << "\" y2=\""
          << py(se.hi[i]) << "\" stroke=\"" << c << "\"/>\n";
    }
    double ly = mt + 16 + 18 * double(k);
    o << "<line x1=\"" << ml + pw + 12 << "\" x2=\"" << ml + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
      << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << ml + pw + 38 << "\" y=\"" << ly + 4 << "\">" << se.name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace latte::plot
