#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace boxlm {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Axis-aligned box in normalized page coordinates, origin top-left.
struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!(in01(x0) && in01(y0) && in01(x1) && in01(y1)))
      throw CorpusError("bbox coordinate outside [0,1]: " + str());
    if (x1 < x0 || y1 < y0) throw CorpusError("bbox corners out of order: " + str());
  }

  bool contains(const BBox& inner, double tol = 1e-9) const {
    return inner.x0 >= x0 - tol && inner.y0 >= y0 - tol && inner.x1 <= x1 + tol &&
           inner.y1 <= y1 + tol;
  }

  static BBox hull(const BBox& a, const BBox& b) {
    return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
  }

  std::string str() const {
    return "(" + std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(x1) + "," +
           std::to_string(y1) + ")";
  }
};

// Quantizes one coordinate into bins {0, .., n_bins-1}; 1.0 lands in the top bin.
inline int bbox_bin(double coord, int n_bins) {
  if (n_bins <= 0) throw std::invalid_argument("bbox_bin: n_bins must be positive");
  if (coord < 0.0 || coord > 1.0)
    throw CorpusError("bbox_bin: coordinate " + std::to_string(coord) + " outside [0,1]");
  int b = static_cast<int>(coord * n_bins);
  return b < n_bins ? b : n_bins - 1;
}

// Per-coordinate bin indices (x0, y0, x1, y1).
inline std::array<int, 4> quantize_bbox(const BBox& box, int n_bins) {
  box.validate();
  return {bbox_bin(box.x0, n_bins), bbox_bin(box.y0, n_bins), bbox_bin(box.x1, n_bins),
          bbox_bin(box.y1, n_bins)};
}

}  // namespace boxlm
