#pragma once

#include <array>
#include <vector>

#include "boxlm/bbox.hpp"
#include "boxlm/rng.hpp"
#include "boxlm/tensor.hpp"

namespace boxlm {

// Learned spatial embedding: one table per box coordinate, each n_bins x d.
// A token's spatial vector is the normalized sum of its four coordinate
// lookups; without the normalization the raw sum sits orders of magnitude
// below the layer-normed text stream and the spatial scores are inert. The
// result is computed once per sequence and shared by every layer; layers
// differ only in their spatial key/query projections.
template <class Real>
struct SpatialEmbedding {
  int n_bins = 0;
  int d_model = 0;
  Tensor<Real> table_x0, table_y0, table_x1, table_y1;
  Tensor<Real> ln_g, ln_b;

  SpatialEmbedding() = default;

  SpatialEmbedding(int bins, int d, Rng& rng, Real stddev) : n_bins(bins), d_model(d) {
    table_x0 = Tensor<Real>::randn({bins, d}, rng, stddev, true);
    table_y0 = Tensor<Real>::randn({bins, d}, rng, stddev, true);
    table_x1 = Tensor<Real>::randn({bins, d}, rng, stddev, true);
    table_y1 = Tensor<Real>::randn({bins, d}, rng, stddev, true);
    ln_g = Tensor<Real>::filled({d}, Real(1), true);
    ln_b = Tensor<Real>::zeros({d}, true);
  }

  // bins: per-token (x0, y0, x1, y1) bin indices. Output is [T, d].
  Tensor<Real> encode(const std::vector<std::array<int, 4>>& bins) const {
    std::vector<int> ix0, iy0, ix1, iy1;
    ix0.reserve(bins.size());
    iy0.reserve(bins.size());
    ix1.reserve(bins.size());
    iy1.reserve(bins.size());
    for (const auto& b : bins) {
      ix0.push_back(b[0]);
      iy0.push_back(b[1]);
      ix1.push_back(b[2]);
      iy1.push_back(b[3]);
    }
    auto e0 = embedding_lookup(table_x0, ix0);
    auto e1 = embedding_lookup(table_y0, iy0);
    auto e2 = embedding_lookup(table_x1, ix1);
    auto e3 = embedding_lookup(table_y1, iy1);
    return layer_norm(add(add(e0, e1), add(e2, e3)), ln_g, ln_b);
  }

  std::vector<Tensor<Real>*> params() {
    return {&table_x0, &table_y0, &table_x1, &table_y1, &ln_g, &ln_b};
  }
};

}  // namespace boxlm
