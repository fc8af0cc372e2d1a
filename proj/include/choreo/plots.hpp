#pragma once

#include <string>
#include <vector>

namespace choreo {

// one curve over frame indices; all series in a chart share the x axis
struct PlotSeries {
  std::string label;
  std::vector<double> values;
};

// Header "frame,<label0>,...[,beat]"; the beat column (present when
// beat_frames is nonempty) is 1 on frames listed in beat_frames.  All series
// must be nonempty and share a length.  Values are written with %.17g so
// they round-trip exactly.  Throws ShapeMismatch, IoFailure.
void write_series_csv(const std::string& path,
                      const std::vector<PlotSeries>& series,
                      const std::vector<int>& beat_frames = {});

// Standalone SVG line chart: one polyline per series, a legend, y-axis
// range labels, and a dashed vertical marker per beat frame.  Output is
// deterministic text.  Throws ShapeMismatch, IoFailure.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::vector<PlotSeries>& series,
                          const std::vector<int>& beat_frames = {});

}  // namespace choreo
