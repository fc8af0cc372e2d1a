#include "choreo/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "choreo/errors.hpp"

namespace choreo {
namespace {

void check_series(const std::vector<PlotSeries>& series) {
  if (series.empty()) throw ShapeMismatch("no series to plot");
  const size_t n = series[0].values.size();
  if (n == 0) throw ShapeMismatch("empty series");
  for (const auto& s : series)
    if (s.values.size() != n)
      throw ShapeMismatch("series lengths differ: " + s.label);
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// text that lands inside an XML attribute or element
std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_series_csv(const std::string& path,
                      const std::vector<PlotSeries>& series,
                      const std::vector<int>& beat_frames) {
  check_series(series);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write csv: " + path);

  out << "frame";
  for (const auto& s : series) out << "," << s.label;
  if (!beat_frames.empty()) out << ",beat";
  out << "\n";

  const std::set<int> beats(beat_frames.begin(), beat_frames.end());
  const size_t n = series[0].values.size();
  for (size_t t = 0; t < n; ++t) {
    out << t;
    for (const auto& s : series) out << "," << g17(s.values[t]);
    if (!beat_frames.empty())
      out << "," << (beats.count(static_cast<int>(t)) ? 1 : 0);
    out << "\n";
  }
  out.flush();
  if (!out) throw IoFailure("write failed: " + path);
}

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::vector<PlotSeries>& series,
                          const std::vector<int>& beat_frames) {
  check_series(series);

  const double width = 960, height = 420;
  const double ml = 64, mr = 16, mt = 40, mb = 36;  // margins
  const double pw = width - ml - mr, ph = height - mt - mb;
  const size_t n = series[0].values.size();

  double lo = series[0].values[0], hi = lo;
  for (const auto& s : series)
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(std::isfinite(lo) && std::isfinite(hi)))
    throw ShapeMismatch("non-finite plot values");
  if (hi - lo < 1e-12) {  // flat data still needs a visible axis span
    hi += 0.5;
    lo -= 0.5;
  }

  const auto x_of = [&](double t) {
    return ml + (n == 1 ? 0.5 * pw : pw * t / double(n - 1));
  };
  const auto y_of = [&](double v) { return mt + ph * (1.0 - (v - lo) / (hi - lo)); };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  const int n_colors = 8;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write svg: " + path);

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << ml << "\" y=\"24\" font-family=\"sans-serif\" "
         "font-size=\"16\">"
      << xml_escape(title) << "</text>\n";

  // frame/axis box and y range labels
  out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw
      << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  out << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 10
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << g6(hi) << "</text>\n";
  out << "<text x=\"" << ml - 6 << "\" y=\"" << mt + ph
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << g6(lo) << "</text>\n";
  out << "<text x=\"" << ml << "\" y=\"" << height - 10
      << "\" font-family=\"sans-serif\" font-size=\"11\">frame 0</text>\n";
  out << "<text x=\"" << ml + pw << "\" y=\"" << height - 10
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << "frame " << (n - 1) << "</text>\n";

  for (int b : beat_frames) {
    if (b < 0 || static_cast<size_t>(b) >= n) continue;
    const double x = x_of(b);
    out << "<line x1=\"" << g6(x) << "\" y1=\"" << mt << "\" x2=\"" << g6(x)
        << "\" y2=\"" << mt + ph
        << "\" stroke=\"#999999\" stroke-width=\"1\" "
           "stroke-dasharray=\"4,3\"/>\n";
  }

  for (size_t i = 0; i < series.size(); ++i) {
    out << "<polyline fill=\"none\" stroke=\"" << kColors[i % n_colors]
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t t = 0; t < n; ++t) {
      if (t) out << " ";
      out << g6(x_of(double(t))) << "," << g6(y_of(series[i].values[t]));
    }
    out << "\"/>\n";
    out << "<text x=\"" << ml + 8 + 110.0 * double(i) << "\" y=\"" << mt - 8
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
        << kColors[i % n_colors] << "\">" << xml_escape(series[i].label)
        << "</text>\n";
  }
  out << "</svg>\n";
  out.flush();
  if (!out) throw IoFailure("write failed: " + path);
}

}  // namespace choreo
