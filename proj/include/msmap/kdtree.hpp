#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace msmap {

struct Neighbor {
  std::uint32_t id;
  double distance;
};

inline bool operator<(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

/// Exact k-d tree over a row-major snapshot of `Scalar` vectors. `Dim` > 0
/// fixes the dimension at compile time; `Dim` == 0 takes it at runtime.
/// Ties are broken by the lower point id so results match a linear scan.
template <typename Scalar, int Dim = 0>
class KdTree {
 public:
  KdTree() = default;

  KdTree(std::vector<Scalar> data, std::size_t dim) : data_(std::move(data)), dim_(dim) {
    if constexpr (Dim > 0) dim_ = Dim;
    count_ = dim_ == 0 ? 0 : data_.size() / dim_;
    order_.resize(count_);
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * count_ / kLeafSize + 2);
    if (count_ == 0) return;
    if constexpr (Dim > 0) {
      std::vector<Item> items(count_);
      for (std::size_t i = 0; i < count_; ++i) {
        std::copy_n(data_.data() + i * Dim, Dim, items[i].x);
        items[i].id = static_cast<std::uint32_t>(i);
      }
      build_fixed(items, 0, static_cast<std::uint32_t>(count_));
      for (std::size_t i = 0; i < count_; ++i) order_[i] = items[i].id;
    } else {
      build(0, static_cast<std::uint32_t>(count_));
    }
    // leaf points stored contiguously in traversal order
    leaf_data_.resize(data_.size());
    for (std::size_t i = 0; i < count_; ++i) {
      std::copy_n(data_.data() + std::size_t(order_[i]) * dim_, dim_, leaf_data_.data() + i * dim_);
    }
  }

  std::size_t size() const { return count_; }
  std::size_t dim() const {
    if constexpr (Dim > 0) return Dim;
    return dim_;
  }
  const Scalar* point(std::uint32_t id) const { return data_.data() + std::size_t(id) * dim(); }

  double squared_distance(const Scalar* a, std::uint32_t id) const { return dist2(a, point(id)); }

  /// Squared-distance nearest neighbor; requires size() > 0.
  Neighbor nearest(const Scalar* q) const { return nearest(q, std::numeric_limits<double>::infinity()); }

  /// Nearest within squared distance `max_d2` (inclusive); id is the max
  /// uint32 and distance infinite when nothing qualifies.
  Neighbor nearest(const Scalar* q, double max_d2) const {
    constexpr auto kNone = std::numeric_limits<std::uint32_t>::max();
    Neighbor best{kNone, max_d2};
    if (count_ > 0) {
      Offsets off(dim(), 0.0);
      nearest_rec(0, q, 0.0, off, best);
    }
    if (best.id == kNone) best.distance = std::numeric_limits<double>::infinity();
    return best;
  }

  /// k nearest, sorted by (squared distance, id).
  std::vector<Neighbor> knn(const Scalar* q, std::size_t k) const {
    std::vector<Neighbor> heap;
    heap.reserve(k + 1);
    if (k > 0 && count_ > 0) {
      Offsets off(dim(), 0.0);
      knn_rec(0, q, k, 0.0, off, heap);
    }
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// All points with squared distance <= r2, sorted by id.
  std::vector<std::uint32_t> radius(const Scalar* q, double r2) const {
    std::vector<std::uint32_t> out;
    if (count_ > 0) {
      Offsets off(dim(), 0.0);
      radius_rec(0, q, r2, 0.0, off, out);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  static constexpr std::uint32_t kLeafSize = 8;
  // keeps rounding in the incremental bound from pruning exact ties
  static constexpr double kSlack = 1.0 - 1e-12;

  // Nodes are laid out in preorder; the left child of an inner node follows
  // it directly.
  struct Node {
    double split = 0.0;
    std::uint32_t begin = 0, end = 0;  // range in order_
    std::uint32_t right = 0;           // 0 marks a leaf
    std::uint32_t axis = 0;
  };

  // Per-axis offset from the query to the current cell; fixed storage for
  // compile-time dimensions.
  struct Offsets {
    Offsets(std::size_t n, double v) {
      if constexpr (Dim > 0) {
        (void)n;
        std::fill(std::begin(fixed), std::end(fixed), v);
      } else {
        dynamic.assign(n, v);
      }
    }
    double& operator[](std::size_t i) {
      if constexpr (Dim > 0) return fixed[i];
      return dynamic[i];
    }
    double fixed[Dim > 0 ? Dim : 1];
    std::vector<double> dynamic;
  };

  double dist2(const Scalar* a, const Scalar* b) const {
    double acc = 0.0;
    for (std::size_t d = 0; d < dim(); ++d) {
      const double diff = double(a[d]) - double(b[d]);
      acc += diff * diff;
    }
    return acc;
  }

  const Scalar* packed(std::uint32_t slot) const { return leaf_data_.data() + std::size_t(slot) * dim(); }

  struct Item {
    Scalar x[Dim > 0 ? Dim : 1];
    std::uint32_t id;
  };

  // Same splitting rule as build(), over contiguous copies.
  void build_fixed(std::vector<Item>& items, std::uint32_t begin, std::uint32_t end) {
    const auto index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({0.0, begin, end, 0, 0});
    if (end - begin <= kLeafSize) return;
    double lo[Dim > 0 ? Dim : 1], hi[Dim > 0 ? Dim : 1];
    std::fill(std::begin(lo), std::end(lo), std::numeric_limits<double>::infinity());
    std::fill(std::begin(hi), std::end(hi), -std::numeric_limits<double>::infinity());
    for (std::uint32_t i = begin; i < end; ++i) {
      for (int d = 0; d < Dim; ++d) {
        lo[d] = std::min(lo[d], double(items[i].x[d]));
        hi[d] = std::max(hi[d], double(items[i].x[d]));
      }
    }
    std::size_t axis = 0;
    double widest = -1.0;
    for (int d = 0; d < Dim; ++d) {
      if (hi[d] - lo[d] > widest) {
        widest = hi[d] - lo[d];
        axis = std::size_t(d);
      }
    }
    if (widest <= 0.0) return;
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(items.begin() + begin, items.begin() + mid, items.begin() + end,
                     [axis](const Item& a, const Item& b) { return a.x[axis] < b.x[axis]; });
    const double split = items[mid].x[axis];
    build_fixed(items, begin, mid);
    const auto right = static_cast<std::uint32_t>(nodes_.size());
    build_fixed(items, mid, end);
    Node& node = nodes_[index];
    node.axis = static_cast<std::uint32_t>(axis);
    node.split = split;
    node.right = right;
  }

  void build(std::uint32_t begin, std::uint32_t end) {
    const auto index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({0.0, begin, end, 0, 0});
    if (end - begin <= kLeafSize) return;

    // split on the dimension with the widest extent
    std::size_t axis = 0;
    double widest = -1.0;
    for (std::size_t d = 0; d < dim(); ++d) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::uint32_t i = begin; i < end; ++i) {
        const double v = point(order_[i])[d];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        axis = d;
      }
    }
    if (widest <= 0.0) return;  // all coincident: keep as leaf

    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return point(a)[axis] < point(b)[axis]; });
    const double split = point(order_[mid])[axis];
    build(begin, mid);
    const auto right = static_cast<std::uint32_t>(nodes_.size());
    build(mid, end);
    Node& node = nodes_[index];
    node.axis = static_cast<std::uint32_t>(axis);
    node.split = split;
    node.right = right;
  }

  // `rd` is the squared distance from the query to the cell of node `ni`.
  void nearest_rec(std::uint32_t ni, const Scalar* q, double rd, Offsets& off, Neighbor& best) const {
    const Node& n = nodes_[ni];
    if (n.right == 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const double d = dist2(q, packed(i));
        if (d < best.distance || (d == best.distance && order_[i] < best.id)) best = {order_[i], d};
      }
      return;
    }
    const double diff = double(q[n.axis]) - n.split;
    const std::uint32_t first = diff < 0.0 ? ni + 1 : n.right;
    const std::uint32_t second = diff < 0.0 ? n.right : ni + 1;
    nearest_rec(first, q, rd, off, best);
    const double old = off[n.axis];
    const double far = (rd - old * old + diff * diff) * kSlack;
    if (far <= best.distance) {
      off[n.axis] = diff;
      nearest_rec(second, q, far, off, best);
      off[n.axis] = old;
    }
  }

  void knn_rec(std::uint32_t ni, const Scalar* q, std::size_t k, double rd, Offsets& off,
               std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[ni];
    if (n.right == 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const Neighbor c{order_[i], dist2(q, packed(i))};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end());
        } else if (c < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double diff = double(q[n.axis]) - n.split;
    const std::uint32_t first = diff < 0.0 ? ni + 1 : n.right;
    const std::uint32_t second = diff < 0.0 ? n.right : ni + 1;
    knn_rec(first, q, k, rd, off, heap);
    const double old = off[n.axis];
    const double far = (rd - old * old + diff * diff) * kSlack;
    if (heap.size() < k || far <= heap.front().distance) {
      off[n.axis] = diff;
      knn_rec(second, q, k, far, off, heap);
      off[n.axis] = old;
    }
  }

  void radius_rec(std::uint32_t ni, const Scalar* q, double r2, double rd, Offsets& off,
                  std::vector<std::uint32_t>& out) const {
    const Node& n = nodes_[ni];
    if (n.right == 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        if (dist2(q, packed(i)) <= r2) out.push_back(order_[i]);
      }
      return;
    }
    const double diff = double(q[n.axis]) - n.split;
    const std::uint32_t first = diff < 0.0 ? ni + 1 : n.right;
    const std::uint32_t second = diff < 0.0 ? n.right : ni + 1;
    radius_rec(first, q, r2, rd, off, out);
    const double old = off[n.axis];
    const double far = (rd - old * old + diff * diff) * kSlack;
    if (far <= r2) {
      off[n.axis] = diff;
      radius_rec(second, q, r2, far, off, out);
      off[n.axis] = old;
    }
  }

  std::vector<Scalar> data_;
  std::size_t dim_ = Dim;
  std::size_t count_ = 0;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::vector<Scalar> leaf_data_;
};

}  // namespace msmap
