#include "gcame/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "gcame/error.hpp"

namespace gcame {

bool SaliencyMap::has_flag(const std::string& f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

void validate(const SaliencyMap& map) {
  if (map.values.size() != static_cast<std::size_t>(map.height) * map.width)
    throw ConfigError("saliency map value count does not match its shape");
  for (float v : map.values)
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw ConfigError("saliency values must be finite and within [0,1]");
}

Grid resize_bilinear(const Grid& src, int height, int width) {
  Grid out(height, width);
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = src.at(y0, x0) * (1 - wx) + src.at(y0, x1) * wx;
      const double bot = src.at(y1, x0) * (1 - wx) + src.at(y1, x1) * wx;
      out.at(y, x) = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

std::vector<float> normalize_min_max(const Grid& g) {
  std::vector<float> out(g.size(), 0.0f);
  if (g.data.empty()) return out;
  const auto [lo, hi] = std::minmax_element(g.data.begin(), g.data.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = static_cast<float>(std::clamp((g.data[i] - *lo) / range, 0.0, 1.0));
  return out;
}

}  // namespace gcame
