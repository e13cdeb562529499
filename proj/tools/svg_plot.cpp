#include "svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "drbd/tensor.hpp"

namespace drbd::cli {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& y_label, const std::vector<std::string>& x_ticks,
                          const std::vector<Series>& series) {
  if (x_ticks.empty()) throw DomainError("plot: no x ticks");
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series) {
    if (s.y.size() != x_ticks.size()) throw DomainError("plot: series '" + s.label + "' length mismatch");
    for (double v : s.y) {
      if (!(v > 0)) throw DomainError("plot: log axis needs positive values");
      lo = std::min(lo, std::log10(v));
      hi = std::max(hi, std::log10(v));
    }
  }
  lo = std::floor(lo);
  hi = std::max(std::ceil(hi), lo + 1);

  const double W = 640, H = 420, left = 80, right = 190, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](std::size_t i) {
    return x_ticks.size() == 1 ? left + pw / 2 : left + pw * double(i) / double(x_ticks.size() - 1);
  };
  auto py = [&](double v) { return top + ph * (1.0 - (std::log10(v) - lo) / (hi - lo)); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (int e = int(lo); e <= int(hi); ++e) {
    const double y = py(std::pow(10.0, e));
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << fmt("%.2f", y) << "\" y2=\"" << fmt("%.2f", y)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << fmt("%.2f", y + 4) << "\" text-anchor=\"end\">1e" << e << "</text>\n";
  }
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < x_ticks.size(); ++i)
    o << "<text x=\"" << fmt("%.2f", px(i)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
      << escape(x_ticks[i]) << "</text>\n";
  o << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << top + ph / 2
    << ")\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
      << " points=\"";
    for (std::size_t i = 0; i < s.y.size(); ++i) o << (i ? " " : "") << fmt("%.2f", px(i)) << ',' << fmt("%.2f", py(s.y[i]));
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.y.size(); ++i)
      o << "<circle cx=\"" << fmt("%.2f", px(i)) << "\" cy=\"" << fmt("%.2f", py(s.y[i])) << "\" r=\"3\" fill=\"" << s.color
        << "\"/>\n";
    const double ly = top + 14 + 20 * double(k);
    o << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 36 << "\" y1=\"" << ly - 4 << "\" y2=\"" << ly - 4
      << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    o << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace drbd::cli
