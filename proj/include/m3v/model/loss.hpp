#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "m3v/error.hpp"
#include "m3v/model/layers.hpp"

namespace m3v::model {

// Target of one masked patch. `include` flags the components that take
// part in the loss; components of invalid trajectories are 0.
struct LossItem {
  std::span<const float> target;
  std::span<const std::uint8_t> include;
  std::size_t invalid_trajectories = 0;
};

struct LossReport {
  double loss = 0.0;               // sum of included squared errors / included count
  double sum = 0.0;                // sum of included squared errors
  std::size_t included = 0;        // number of included components
  std::vector<double> per_patch;   // mean squared error over the patch's included components
  std::size_t masked_patches = 0;  // N_p
  std::size_t excluded_trajectories = 0;
  bool nothing_included = false;   // every component excluded; loss defined as 0
};

inline std::size_t included_count(std::span<const LossItem> items) {
  std::size_t n = 0;
  for (const auto& it : items)
    for (auto f : it.include) n += f ? 1 : 0;
  return n;
}

// Masked mean squared error over the masked patches in `pred` (one row
// per item). When `grad` is given it receives dloss/dpred computed with
// denominator `denominator` (the report's own included count if 0), so a
// batch can be split across several calls that share one denominator.
template <typename T>
LossReport masked_motion_loss(const Mat<T>& pred, std::span<const LossItem> items,
                              Mat<T>* grad = nullptr, std::size_t denominator = 0) {
  if (static_cast<std::size_t>(pred.rows) != items.size()) {
    throw InvalidArgument("prediction rows do not match the number of masked patches");
  }
  LossReport r;
  r.masked_patches = items.size();
  r.per_patch.assign(items.size(), 0.0);
  for (std::size_t p = 0; p < items.size(); ++p) {
    const auto& it = items[p];
    if (it.target.size() != static_cast<std::size_t>(pred.cols) ||
        it.include.size() != it.target.size()) {
      throw InvalidArgument("prediction width does not match the target length");
    }
    r.excluded_trajectories += it.invalid_trajectories;
    double s = 0.0;
    std::size_t n = 0;
    for (int c = 0; c < pred.cols; ++c) {
      if (!it.include[c]) continue;
      const double e = static_cast<double>(pred(static_cast<int>(p), c)) - it.target[c];
      s += e * e;
      ++n;
    }
    r.per_patch[p] = n ? s / static_cast<double>(n) : 0.0;
    r.sum += s;
    r.included += n;
  }
  r.nothing_included = r.included == 0;
  r.loss = r.included ? r.sum / static_cast<double>(r.included) : 0.0;

  if (grad) {
    const std::size_t denom = denominator ? denominator : r.included;
    *grad = Mat<T>(pred.rows, pred.cols);
    if (denom) {
      const double k = 2.0 / static_cast<double>(denom);
      for (std::size_t p = 0; p < items.size(); ++p)
        for (int c = 0; c < pred.cols; ++c)
          if (items[p].include[c]) {
            const int row = static_cast<int>(p);
            (*grad)(row, c) = static_cast<T>(k * (static_cast<double>(pred(row, c)) - items[p].target[c]));
          }
    }
  }
  return r;
}

}  // namespace m3v::model
