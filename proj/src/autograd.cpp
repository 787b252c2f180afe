#include "ridgealign/autograd.hpp"

#include <cmath>

namespace ridgealign::ag {

namespace nk = ridgealign::numkit;

Var Graph::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), false, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), true, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Mat value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::record(Mat value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || nodes_[in.id].needs_grad;
  nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(backward) : nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::ensure_grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
}

void Graph::accumulate(int id, const Mat& contribution) {
  if (!nodes_[id].needs_grad) return;
  ensure_grad(id);
  nodes_[id].grad += contribution;
}

Mat Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var out) {
  if (out.rows() != 1 || out.cols() != 1) throw DimensionError("backward: output must be 1 x 1");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[out.id].needs_grad) return;
  nodes_[out.id].grad = Mat::Ones(1, 1);
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy: the callback may accumulate into earlier nodes and reallocate
    // nothing here, but holding a reference across user code is fragile.
    const Mat g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + " differ");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  return g.record(nk::matmul(a.value(), b.value()), {a, b}, [a, b](Graph& gr, const Mat& go) {
    if (gr.needs_grad(a.id)) gr.accumulate(a.id, nk::matmul(go, b.value().transpose()));
    if (gr.needs_grad(b.id)) gr.accumulate(b.id, nk::matmul(a.value().transpose(), go));
  });
}

Var transpose(Var a) {
  return a.graph->record(a.value().transpose(), {a},
                         [a](Graph& gr, const Mat& go) { gr.accumulate(a.id, go.transpose()); });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.graph->record(a.value() + b.value(), {a, b}, [a, b](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, go);
    gr.accumulate(b.id, go);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.graph->record(a.value() - b.value(), {a, b}, [a, b](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, go);
    gr.accumulate(b.id, -go);
  });
}

Var cmul(Var a, Var b) {
  require_same_shape(a, b, "cmul");
  return a.graph->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Graph& gr, const Mat& go) {
    if (gr.needs_grad(a.id)) gr.accumulate(a.id, go.cwiseProduct(b.value()));
    if (gr.needs_grad(b.id)) gr.accumulate(b.id, go.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double factor) {
  return a.graph->record(a.value() * factor, {a},
                         [a, factor](Graph& gr, const Mat& go) { gr.accumulate(a.id, go * factor); });
}

Var add_constant(Var a, const Mat& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) throw DimensionError("add_constant: shape");
  return a.graph->record(a.value() + c, {a}, [a](Graph& gr, const Mat& go) { gr.accumulate(a.id, go); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: row must be 1 x C");
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return a.graph->record(std::move(out), {a, row}, [a, row](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, go);
    if (gr.needs_grad(row.id)) gr.accumulate(row.id, go.colwise().sum());
  });
}

Var mul_scalar(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("mul_scalar: scalar must be 1 x 1");
  return a.graph->record(a.value() * s.scalar(), {a, s}, [a, s](Graph& gr, const Mat& go) {
    if (gr.needs_grad(a.id)) gr.accumulate(a.id, go * s.scalar());
    if (gr.needs_grad(s.id)) gr.accumulate(s.id, Mat::Constant(1, 1, go.cwiseProduct(a.value()).sum()));
  });
}

Var broadcast_rows(Var row, Index n) {
  if (row.rows() != 1) throw DimensionError("broadcast_rows: input must be a row");
  Mat out = row.value().replicate(n, 1);
  return row.graph->record(std::move(out), {row},
                           [row](Graph& gr, const Mat& go) { gr.accumulate(row.id, go.colwise().sum()); });
}

Var silu(Var a) {
  const Mat& x = a.value();
  const Mat sig = (1.0 + (-x.array()).exp()).inverse().matrix();
  Mat y = x.cwiseProduct(sig);
  return a.graph->record(std::move(y), {a}, [a, sig](Graph& gr, const Mat& go) {
    const auto& xv = a.value().array();
    const Mat d = (sig.array() * (1.0 + xv * (1.0 - sig.array()))).matrix();
    gr.accumulate(a.id, go.cwiseProduct(d));
  });
}

Var exp(Var a) {
  Mat y = a.value().array().exp().matrix();
  Graph& g = *a.graph;
  const int self = static_cast<int>(g.size());
  return g.record(std::move(y), {a}, [a, self](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, go.cwiseProduct(gr.value(self)));
  });
}

Var log(Var a) {
  return a.graph->record(a.value().array().log().matrix(), {a}, [a](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, go.cwiseQuotient(a.value()));
  });
}

Var square(Var a) {
  return a.graph->record(a.value().cwiseAbs2(), {a}, [a](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, 2.0 * go.cwiseProduct(a.value()));
  });
}

Var clamp(Var a, double lo, double hi) {
  Mat y = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.graph->record(std::move(y), {a}, [a, lo, hi](Graph& gr, const Mat& go) {
    const Mat& x = a.value();
    Mat d = go;
    for (Index i = 0; i < x.size(); ++i)
      if (!(x(i) > lo && x(i) < hi)) d(i) = 0.0;
    gr.accumulate(a.id, d);
  });
}

Var row_norm(Var a) {
  Mat y = a.value().rowwise().norm();
  Graph& g = *a.graph;
  const int self = static_cast<int>(g.size());
  return g.record(std::move(y), {a}, [a, self](Graph& gr, const Mat& go) {
    const Mat& x = a.value();
    const Mat& n = gr.value(self);
    Mat d = Mat::Zero(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i)
      if (n(i, 0) > 0.0) d.row(i) = x.row(i) * (go(i, 0) / n(i, 0));
    gr.accumulate(a.id, d);
  });
}

Var layer_norm(Var x, Var gain, Var bias) {
  const Mat& xv = x.value();
  const Index n = xv.rows(), c = xv.cols();
  Mat xhat(n, c);
  Eigen::VectorXd inv(n);
  for (Index i = 0; i < n; ++i) {
    const double mean = xv.row(i).sum() / static_cast<double>(c);
    const double var = (xv.row(i).array() - mean).square().sum() / static_cast<double>(c);
    inv(i) = 1.0 / std::sqrt(var + nk::kLayerNormEpsilon);
    xhat.row(i) = (xv.row(i).array() - mean) * inv(i);
  }
  Mat y = nk::layer_norm(xv, gain.value(), bias.value());
  return x.graph->record(std::move(y), {x, gain, bias}, [x, gain, bias, xhat, inv](Graph& gr, const Mat& go) {
    const Index c = xhat.cols();
    if (gr.needs_grad(gain.id)) gr.accumulate(gain.id, go.cwiseProduct(xhat).colwise().sum());
    if (gr.needs_grad(bias.id)) gr.accumulate(bias.id, go.colwise().sum());
    if (gr.needs_grad(x.id)) {
      const Mat dxhat = go.array().rowwise() * gain.value().row(0).array();
      Mat dx(xhat.rows(), c);
      for (Index i = 0; i < xhat.rows(); ++i) {
        const double m1 = dxhat.row(i).sum() / static_cast<double>(c);
        const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).sum() / static_cast<double>(c);
        dx.row(i) = inv(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
      }
      gr.accumulate(x.id, dx);
    }
  });
}

namespace {

Var softmax_from(Var x, Mat y) {
  Graph& g = *x.graph;
  const int self = static_cast<int>(g.size());
  return g.record(std::move(y), {x}, [x, self](Graph& gr, const Mat& go) {
    const Mat& yv = gr.value(self);
    const Eigen::VectorXd dot = go.cwiseProduct(yv).rowwise().sum();
    Mat dx = go;
    dx.colwise() -= dot;
    gr.accumulate(x.id, dx.cwiseProduct(yv));
  });
}

}  // namespace

Var softmax_rows(Var x) { return softmax_from(x, nk::softmax_rows(x.value())); }

Var softmax_rows(Var x, const std::vector<bool>& valid) {
  return softmax_from(x, nk::softmax_rows(x.value(), valid));
}

Var log_softmax_rows(Var x) {
  return x.graph->record(nk::log_softmax_rows(x.value()), {x}, [x](Graph& gr, const Mat& go) {
    const Mat p = nk::softmax_rows(x.value());
    Mat dx = go;
    const Eigen::VectorXd total = go.rowwise().sum();
    for (Index i = 0; i < dx.rows(); ++i) dx.row(i) -= p.row(i) * total(i);
    gr.accumulate(x.id, dx);
  });
}

Var sum(Var a) {
  double total = 0.0;
  const Mat& v = a.value();
  for (Index j = 0; j < v.cols(); ++j)
    for (Index i = 0; i < v.rows(); ++i) total += v(i, j);
  return a.graph->record(Mat::Constant(1, 1, total), {a}, [a](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, Mat::Constant(a.rows(), a.cols(), go(0, 0)));
  });
}

Var mean_rows(Var a) {
  const double n = static_cast<double>(a.rows());
  return a.graph->record(a.value().colwise().sum() / n, {a}, [a, n](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, go.replicate(a.rows(), 1) / n);
  });
}

Var weighted_sum(Var a, const Mat& weights) {
  if (weights.rows() != a.rows() || weights.cols() != a.cols()) throw DimensionError("weighted_sum: shape");
  double total = 0.0;
  const Mat& v = a.value();
  for (Index j = 0; j < v.cols(); ++j)
    for (Index i = 0; i < v.rows(); ++i) total += weights(i, j) * v(i, j);
  return a.graph->record(Mat::Constant(1, 1, total), {a}, [a, weights](Graph& gr, const Mat& go) {
    gr.accumulate(a.id, weights * go(0, 0));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().graph->record(std::move(out), parts, [parts](Graph& gr, const Mat& go) {
    Index at = 0;
    for (const Var& p : parts) {
      if (gr.needs_grad(p.id)) gr.accumulate(p.id, go.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().graph->record(std::move(out), parts, [parts](Graph& gr, const Mat& go) {
    Index at = 0;
    for (const Var& p : parts) {
      if (gr.needs_grad(p.id)) gr.accumulate(p.id, go.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || start + count > a.cols()) throw DimensionError("slice_cols: out of range");
  return a.graph->record(a.value().middleCols(start, count), {a}, [a, start, count](Graph& gr, const Mat& go) {
    gr.accumulate_block(a.id, 0, start, go);
  });
}

Var gather_rows(Var a, const std::vector<Index>& rows) {
  Mat out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw DimensionError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return a.graph->record(std::move(out), {a}, [a, rows](Graph& gr, const Mat& go) {
    Mat d = Mat::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(rows[i]) += go.row(static_cast<Index>(i));
    gr.accumulate(a.id, d);
  });
}

Var pick(Var a, const std::vector<std::pair<Index, Index>>& entries) {
  Mat out(static_cast<Index>(entries.size()), 1);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto [i, j] = entries[k];
    if (i < 0 || i >= a.rows() || j < 0 || j >= a.cols()) throw DimensionError("pick: index out of range");
    out(static_cast<Index>(k), 0) = a.value()(i, j);
  }
  return a.graph->record(std::move(out), {a}, [a, entries](Graph& gr, const Mat& go) {
    Mat d = Mat::Zero(a.rows(), a.cols());
    for (std::size_t k = 0; k < entries.size(); ++k) d(entries[k].first, entries[k].second) += go(k, 0);
    gr.accumulate(a.id, d);
  });
}

Var im2col(Var x, Index height, Index width, Index kernel, Index stride, Index pad) {
  return x.graph->record(nk::im2col(x.value(), height, width, kernel, stride, pad), {x},
                         [=](Graph& gr, const Mat& go) {
                           gr.accumulate(x.id, nk::col2im(go, height, width, x.cols(), kernel, stride, pad));
                         });
}

Var conv2d(Var x, Index height, Index width, Var kernel, Index k, Index stride, Index pad) {
  if (kernel.rows() != k * k * x.cols()) {
    throw DimensionError("conv2d: kernel has " + std::to_string(kernel.rows()) + " rows, expected " +
                         std::to_string(k * k * x.cols()));
  }
  if (k == 1 && stride == 1 && pad == 0) return matmul(x, kernel);
  return matmul(im2col(x, height, width, k, stride, pad), kernel);
}

Var avgpool2d(Var x, Index height, Index width, Index k) {
  return x.graph->record(nk::avgpool2d(x.value(), height, width, k), {x}, [=](Graph& gr, const Mat& go) {
    const Index ow = width / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    Mat d(height * width, x.cols());
    for (Index y = 0; y < height; ++y)
      for (Index xx = 0; xx < width; ++xx) d.row(y * width + xx) = go.row((y / k) * ow + xx / k) * inv;
    gr.accumulate(x.id, d);
  });
}

Var upsample2x(Var x, Index height, Index width) {
  return x.graph->record(nk::upsample2x(x.value(), height, width), {x}, [=](Graph& gr, const Mat& go) {
    const Index oh = 2 * height, ow = 2 * width;
    Mat d = Mat::Zero(height * width, x.cols());
    for (Index oy = 0; oy < oh; ++oy) {
      const auto ty = nk::upsample_tap(oy, height);
      for (Index ox = 0; ox < ow; ++ox) {
        const auto tx = nk::upsample_tap(ox, width);
        const auto g = go.row(oy * ow + ox);
        d.row(ty.lo * width + tx.lo) += (1 - tx.t) * (1 - ty.t) * g;
        d.row(ty.lo * width + tx.hi) += tx.t * (1 - ty.t) * g;
        d.row(ty.hi * width + tx.lo) += (1 - tx.t) * ty.t * g;
        d.row(ty.hi * width + tx.hi) += tx.t * ty.t * g;
      }
    }
    gr.accumulate(x.id, d);
  });
}

Var bilinear_sample(Var src, Index height, Index width, Var pts) {
  return src.graph->record(
      nk::bilinear_sample(src.value(), height, width, pts.value()), {src, pts}, [=](Graph& gr, const Mat& go) {
        const Mat& s = src.value();
        const Mat& p = pts.value();
        const bool want_src = gr.needs_grad(src.id);
        const bool want_pts = gr.needs_grad(pts.id);
        Mat dsrc = want_src ? Mat::Zero(s.rows(), s.cols()) : Mat();
        Mat dpts = want_pts ? Mat::Zero(p.rows(), 2) : Mat();
        for (Index n = 0; n < p.rows(); ++n) {
          const auto tap = nk::bilinear_tap<double>(height, width, p(n, 0), p(n, 1));
          for (int t = 0; t < 4; ++t) {
            if (want_src) dsrc.row(tap.rows[t]) += tap.weights[t] * go.row(n);
            if (want_pts) {
              const double along = go.row(n).dot(s.row(tap.rows[t]));
              dpts(n, 0) += tap.dweights_dx[t] * along;
              dpts(n, 1) += tap.dweights_dy[t] * along;
            }
          }
        }
        if (want_src) gr.accumulate(src.id, dsrc);
        if (want_pts) gr.accumulate(pts.id, dpts);
      });
}

}  // namespace ridgealign::ag
