#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "qmix/experiments.hpp"

namespace qmix {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;

  double t(double v) const { return log ? std::log10(v) : v; }
  double frac(double v) const { return (t(v) - t(lo)) / (t(hi) - t(lo)); }
  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      for (double e = std::floor(std::log10(lo)); e <= std::ceil(std::log10(hi)); e += 1.0) {
        double v = std::pow(10.0, e);
        if (v >= lo * (1 - 1e-12) && v <= hi * (1 + 1e-12)) out.push_back(v);
      }
      if (out.size() < 2) out = {lo, hi};
      return out;
    }
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
      if (m * mag >= raw) {
        step = m * mag;
        break;
      }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return out;
  }
};

Axis make_axis(const std::vector<Series>& series, bool x, bool log) {
  Axis a;
  a.log = log;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series)
    for (double v : x ? s.x : s.y) {
      if (!std::isfinite(v) || (log && v <= 0.0)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) {
    lo = log ? 1.0 : 0.0;
    hi = log ? 10.0 : 1.0;
  }
  if (hi == lo) {
    if (log) {
      lo /= 2.0;
      hi *= 2.0;
    } else {
      const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
      lo -= pad;
      hi += pad;
    }
  } else if (!log) {
    const double pad = 0.05 * (hi - lo);
    if (!x) {
      lo -= pad;
      hi += pad;
    }
  }
  a.lo = lo;
  a.hi = hi;
  return a;
}

}  // namespace

std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& opt) {
  const double W = opt.width, H = opt.height;
  const double left = 70, right = 160, top = 36, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  const Axis ax = make_axis(series, true, opt.log_x);
  const Axis ay = make_axis(series, false, opt.log_y);
  auto X = [&](double v) { return left + ax.frac(v) * pw; };
  auto Y = [&](double v) { return top + (1.0 - ay.frac(v)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << coord(left + pw / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << esc(opt.title)
    << "</text>\n";
  o << "<rect x=\"" << coord(left) << "\" y=\"" << coord(top) << "\" width=\"" << coord(pw) << "\" height=\""
    << coord(ph) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (double v : ax.ticks()) {
    o << "<line x1=\"" << coord(X(v)) << "\" y1=\"" << coord(top + ph) << "\" x2=\"" << coord(X(v)) << "\" y2=\""
      << coord(top + ph + 4) << "\" stroke=\"#333\"/>";
    o << "<text x=\"" << coord(X(v)) << "\" y=\"" << coord(top + ph + 16) << "\" text-anchor=\"middle\">" << num(v)
      << "</text>\n";
  }
  for (double v : ay.ticks()) {
    o << "<line x1=\"" << coord(left - 4) << "\" y1=\"" << coord(Y(v)) << "\" x2=\"" << coord(left + pw) << "\" y2=\""
      << coord(Y(v)) << "\" stroke=\"#ddd\"/>";
    o << "<text x=\"" << coord(left - 6) << "\" y=\"" << coord(Y(v) + 4) << "\" text-anchor=\"end\">" << num(v)
      << "</text>\n";
  }
  o << "<text x=\"" << coord(left + pw / 2) << "\" y=\"" << coord(H - 12) << "\" text-anchor=\"middle\">"
    << esc(opt.xlabel) << "</text>\n";
  o << "<text transform=\"translate(16," << coord(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << esc(opt.ylabel) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % (sizeof kPalette / sizeof *kPalette)];
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if ((opt.log_x && s.x[i] <= 0) || (opt.log_y && s.y[i] <= 0)) continue;
      pts << coord(X(s.x[i])) << "," << coord(Y(s.y[i])) << " ";
      o << "<circle cx=\"" << coord(X(s.x[i])) << "\" cy=\"" << coord(Y(s.y[i])) << "\" r=\"2.5\" fill=\"" << color
        << "\"/>";
    }
    o << "\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
    const double ly = top + 10 + 16.0 * k;
    o << "<line x1=\"" << coord(left + pw + 10) << "\" y1=\"" << coord(ly) << "\" x2=\"" << coord(left + pw + 28)
      << "\" y2=\"" << coord(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>";
    o << "<text x=\"" << coord(left + pw + 32) << "\" y=\"" << coord(ly + 4) << "\">" << esc(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_line_chart(const std::string& path, const std::vector<Series>& series, const ChartOptions& opt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot write " + path);
  f << line_chart_svg(series, opt);
}

}  // namespace qmix
