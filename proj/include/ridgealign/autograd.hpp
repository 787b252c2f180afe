#pragma once

// Tape-based reverse-mode differentiation over dense double matrices. Every
// op's forward pass is a numkit kernel; nodes are recorded in creation order,
// so reverse creation order is a valid topological order for backward.

#include <functional>
#include <utility>
#include <vector>

#include "ridgealign/numkit.hpp"

namespace ridgealign::ag {

using Mat = MatrixX<double>;

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Mat& out_grad)>;

  Var constant(Mat value);
  /// Leaf whose gradient is accumulated by backward().
  Var parameter(Mat value);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  /// Gradient of the last backward() target w.r.t. node `id`; zero if the
  /// node did not influence it.
  Mat grad(Var v) const;

  /// Records an op result. `backward` runs only if some input needs a grad.
  Var record(Mat value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Mat value, const std::vector<Var>& inputs, Backward backward);

  void accumulate(int id, const Mat& contribution);
  template <typename Derived>
  void accumulate_block(int id, Index row, Index col, const Eigen::MatrixBase<Derived>& contribution) {
    if (!nodes_[id].needs_grad) return;
    ensure_grad(id);
    nodes_[id].grad.block(row, col, contribution.rows(), contribution.cols()) += contribution;
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 node and propagates to every parameter.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };

  void ensure_grad(int id);

  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return graph->value(id); }

// Arithmetic.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var cmul(Var a, Var b);
Var scale(Var a, double factor);
Var add_constant(Var a, const Mat& c);
/// Adds a 1 x C row to every row of `a`.
Var add_row(Var a, Var row);
/// Multiplies every entry by a 1 x 1 node.
Var mul_scalar(Var a, Var s);
/// Repeats a 1 x C row n times.
Var broadcast_rows(Var row, Index n);

// Elementwise nonlinearities.
Var silu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);
/// Euclidean norm of every row, returned as n x 1. The derivative at a zero
/// row is taken to be zero.
Var row_norm(Var a);

// Normalization and attention primitives.
Var layer_norm(Var x, Var gain, Var bias);
Var softmax_rows(Var x);
Var softmax_rows(Var x, const std::vector<bool>& valid);
Var log_softmax_rows(Var x);

// Reductions and indexing.
Var sum(Var a);
/// Column means, 1 x C.
Var mean_rows(Var a);
/// Sum of `weights` (same shape as `a`) times `a`, 1 x 1.
Var weighted_sum(Var a, const Mat& weights);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Index start, Index count);
Var gather_rows(Var a, const std::vector<Index>& rows);
/// Entries a(i, j) for each (i, j), returned as n x 1.
Var pick(Var a, const std::vector<std::pair<Index, Index>>& entries);

// Spatial ops on (height*width) x C grids.
Var im2col(Var x, Index height, Index width, Index kernel, Index stride, Index pad);
Var conv2d(Var x, Index height, Index width, Var kernel, Index k, Index stride, Index pad);
Var avgpool2d(Var x, Index height, Index width, Index k);
Var upsample2x(Var x, Index height, Index width);
/// Bilinear lookup at N x 2 (x, y) points; differentiable in both the grid
/// values and the point coordinates.
Var bilinear_sample(Var src, Index height, Index width, Var pts);

}  // namespace ridgealign::ag
