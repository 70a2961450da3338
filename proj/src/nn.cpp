#include "wsod/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wsod::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXf>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXf>;

void im2col(const Tensor& in, int k, std::vector<float>& col) {
  const int pad = k / 2;
  const int H = in.h;
  const int W = in.w;
  const std::size_t P = in.plane();
  col.assign(static_cast<std::size_t>(in.c) * k * k * P, 0.0f);
  for (int ci = 0; ci < in.c; ++ci) {
    const float* src = in.channel(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col.data() + ((ci * k + ky) * k + kx) * P;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(W, W - dx);
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          const float* srow = src + sy * W + dx;
          float* drow = dst + y * W;
          for (int x = x_lo; x < x_hi; ++x) drow[x] = srow[x];
        }
      }
    }
  }
}

void col2im(const std::vector<float>& col, int k, Tensor& din) {
  const int pad = k / 2;
  const int H = din.h;
  const int W = din.w;
  const std::size_t P = din.plane();
  for (int ci = 0; ci < din.c; ++ci) {
    float* dst = din.channel(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col.data() + ((ci * k + ky) * k + kx) * P;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(W, W - dx);
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          float* drow = dst + sy * W + dx;
          const float* srow = src + y * W;
          for (int x = x_lo; x < x_hi; ++x) drow[x] += srow[x];
        }
      }
    }
  }
}

struct Tap {
  int index;
  float weight;
};

// Bilinear taps for the sample at feature coordinates (y, x); empty when the
// sample falls outside the map.
int bilinear_taps(int h, int w, double y, double x, Tap taps[4]) {
  if (y < -1.0 || y > h || x < -1.0 || x > w) return 0;
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const int y0 = static_cast<int>(y);
  const int x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double ly = y - y0;
  const double lx = x - x0;
  taps[0] = {y0 * w + x0, static_cast<float>((1 - ly) * (1 - lx))};
  taps[1] = {y0 * w + x1, static_cast<float>((1 - ly) * lx)};
  taps[2] = {y1 * w + x0, static_cast<float>(ly * (1 - lx))};
  taps[3] = {y1 * w + x1, static_cast<float>(ly * lx)};
  return 4;
}

// For one box: per bin, the list of taps (already divided by the sample count).
std::vector<std::vector<Tap>> roi_taps(const RoiAlign& ra, int h, int w,
                                       const BBox& box) {
  const double x0 = box.x_min / ra.stride - 0.5;
  const double y0 = box.y_min / ra.stride - 0.5;
  const double bw = std::max(box.width() / ra.stride, 1e-3) / ra.pooled;
  const double bh = std::max(box.height() / ra.stride, 1e-3) / ra.pooled;
  const float inv = 1.0f / static_cast<float>(ra.sampling * ra.sampling);
  std::vector<std::vector<Tap>> bins(static_cast<std::size_t>(ra.pooled) *
                                     ra.pooled);
  for (int py = 0; py < ra.pooled; ++py) {
    for (int px = 0; px < ra.pooled; ++px) {
      auto& taps = bins[py * ra.pooled + px];
      for (int sy = 0; sy < ra.sampling; ++sy) {
        const double y = y0 + (py + (sy + 0.5) / ra.sampling) * bh;
        for (int sx = 0; sx < ra.sampling; ++sx) {
          const double x = x0 + (px + (sx + 0.5) / ra.sampling) * bw;
          Tap t[4];
          const int n = bilinear_taps(h, w, y, x, t);
          for (int i = 0; i < n; ++i) {
            taps.push_back({t[i].index, t[i].weight * inv});
          }
        }
      }
    }
  }
  return bins;
}

}  // namespace

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kConv:
      return "conv";
    case ParamGroup::kRpn:
      return "rpn";
    case ParamGroup::kFrcnn:
      return "frcnn";
  }
  return "?";
}

int ParameterSet::add(std::string name, std::optional<ParamGroup> group,
                      std::vector<int> shape, bool frcnn_reg) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  ParamTensor t;
  t.name = std::move(name);
  t.group = group;
  t.frcnn_reg = frcnn_reg;
  t.shape = std::move(shape);
  t.values.assign(n, 0.0f);
  tensors_.push_back(std::move(t));
  return static_cast<int>(tensors_.size()) - 1;
}

std::size_t ParameterSet::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.tensors_.size() != b.tensors_.size()) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    const auto& x = a.tensors_[i];
    const auto& y = b.tensors_[i];
    if (x.name != y.name || x.shape != y.shape || x.values != y.values) {
      return false;
    }
  }
  return true;
}

Gradients::Gradients(const ParameterSet& params) {
  grads_.reserve(params.count());
  for (const auto& t : params.tensors()) grads_.emplace_back(t.size(), 0.0f);
}

void Gradients::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0f);
}

void Gradients::add_scaled(const Gradients& other, float scale) {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto& g = grads_[i];
    const auto& o = other.grads_[i];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += scale * o[j];
  }
}

void Gradients::scale(float s) {
  for (auto& g : grads_) {
    for (auto& v : g) v *= s;
  }
}

Conv2d Conv2d::create(ParameterSet& ps, const std::string& name,
                      std::optional<ParamGroup> group, int cin, int cout,
                      int k, bool relu) {
  if (k % 2 != 1) throw std::invalid_argument("conv kernel must be odd");
  Conv2d c;
  c.cin = cin;
  c.cout = cout;
  c.k = k;
  c.relu = relu;
  c.weight = ps.add(name + ".weight", group, {cout, cin, k, k});
  c.bias = ps.add(name + ".bias", group, {cout});
  return c;
}

void Conv2d::forward(const ParameterSet& ps, const Tensor& in,
                     Tensor& out) const {
  if (in.c != cin) throw std::invalid_argument("conv: channel mismatch");
  out = Tensor(cout, in.h, in.w);
  const int P = static_cast<int>(in.plane());
  const int K = cin * k * k;
  ConstMapMat W(ps[weight].values.data(), cout, K);
  ConstMapVec b(ps[bias].values.data(), cout);
  MapMat Y(out.data.data(), cout, P);
  if (k == 1) {
    Y.noalias() = W * ConstMapMat(in.data.data(), cin, P);
  } else {
    std::vector<float> col;
    im2col(in, k, col);
    Y.noalias() = W * ConstMapMat(col.data(), K, P);
  }
  Y.colwise() += b;
  if (relu) Y = Y.cwiseMax(0.0f);
}

void Conv2d::backward(const ParameterSet& ps, const Tensor& in,
                      const Tensor& out, const Tensor& dout, Tensor* din,
                      Gradients& grads) const {
  const int P = static_cast<int>(in.plane());
  const int K = cin * k * k;
  RowMat dpre = ConstMapMat(dout.data.data(), cout, P);
  if (relu) {
    ConstMapMat Y(out.data.data(), cout, P);
    dpre = (Y.array() > 0.0f).select(dpre, 0.0f);
  }
  ConstMapMat W(ps[weight].values.data(), cout, K);
  MapMat dW(grads[weight].data(), cout, K);
  MapVec db(grads[bias].data(), cout);
  // Explicit loops: Eigen's vectorized reductions depend on buffer
  // alignment, which would make results vary between runs.
  for (int c = 0; c < cout; ++c) {
    float acc = 0.0f;
    for (int p = 0; p < P; ++p) acc += dpre(c, p);
    db[c] += acc;
  }
  if (k == 1) {
    ConstMapMat X(in.data.data(), cin, P);
    dW.noalias() += dpre * X.transpose();
    if (din) {
      *din = Tensor(cin, in.h, in.w);
      MapMat(din->data.data(), cin, P).noalias() = W.transpose() * dpre;
    }
    return;
  }
  std::vector<float> col;
  im2col(in, k, col);
  dW.noalias() += dpre * ConstMapMat(col.data(), K, P).transpose();
  if (din) {
    MapMat(col.data(), K, P).noalias() = W.transpose() * dpre;
    *din = Tensor(cin, in.h, in.w);
    col2im(col, k, *din);
  }
}

Linear Linear::create(ParameterSet& ps, const std::string& name,
                      std::optional<ParamGroup> group, int in, int out,
                      bool relu, bool frcnn_reg) {
  Linear l;
  l.in = in;
  l.out = out;
  l.relu = relu;
  l.frcnn_reg = frcnn_reg;
  l.weight = ps.add(name + ".weight", group, {out, in}, frcnn_reg);
  l.bias = ps.add(name + ".bias", group, {out}, frcnn_reg);
  return l;
}

void Linear::forward(const ParameterSet& ps, const Matrix& x,
                     Matrix& y) const {
  if (x.cols != in) throw std::invalid_argument("linear: width mismatch");
  y = Matrix(x.rows, out);
  if (x.rows == 0) return;
  ConstMapMat X(x.data.data(), x.rows, in);
  ConstMapMat W(ps[weight].values.data(), out, in);
  ConstMapVec b(ps[bias].values.data(), out);
  MapMat Y(y.data.data(), x.rows, out);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += b.transpose();
  if (relu) Y = Y.cwiseMax(0.0f);
}

void Linear::backward(const ParameterSet& ps, const Matrix& x,
                      const Matrix& y, const Matrix& dy, Matrix* dx,
                      Gradients& grads) const {
  const int n = x.rows;
  if (dx) *dx = Matrix(n, in);
  if (n == 0) return;
  RowMat dpre = ConstMapMat(dy.data.data(), n, out);
  if (relu) {
    ConstMapMat Y(y.data.data(), n, out);
    dpre = (Y.array() > 0.0f).select(dpre, 0.0f);
  }
  ConstMapMat X(x.data.data(), n, in);
  ConstMapMat W(ps[weight].values.data(), out, in);
  MapMat(grads[weight].data(), out, in).noalias() += dpre.transpose() * X;
  float* db = grads[bias].data();
  for (int j = 0; j < out; ++j) {
    float acc = 0.0f;
    for (int i = 0; i < n; ++i) acc += dpre(i, j);
    db[j] += acc;
  }
  if (dx) MapMat(dx->data.data(), n, in).noalias() = dpre * W;
}

void maxpool2_forward(const Tensor& in, Tensor& out,
                      std::vector<std::int32_t>& argmax) {
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    throw std::invalid_argument("maxpool2: odd spatial size");
  }
  out = Tensor(in.c, in.h / 2, in.w / 2);
  argmax.assign(out.data.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < in.c; ++c) {
    const float* src = in.channel(c);
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x, ++o) {
        int best = (2 * y) * in.w + 2 * x;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * y + dy) * in.w + 2 * x + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        out.data[o] = src[best];
        argmax[o] = best;
      }
    }
  }
}

void maxpool2_backward(const Tensor& dout,
                       const std::vector<std::int32_t>& argmax, Tensor& din) {
  din = Tensor(dout.c, dout.h * 2, dout.w * 2);
  std::size_t o = 0;
  for (int c = 0; c < dout.c; ++c) {
    float* dst = din.channel(c);
    for (std::size_t i = 0; i < dout.plane(); ++i, ++o) {
      dst[argmax[o]] += dout.data[o];
    }
  }
}

void RoiAlign::forward(const Tensor& feature, std::span<const BBox> boxes,
                       Matrix& out) const {
  const int bins = pooled * pooled;
  out = Matrix(static_cast<int>(boxes.size()), feature.c * bins);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto taps = roi_taps(*this, feature.h, feature.w, boxes[i]);
    float* row = out.row(static_cast<int>(i));
    for (int c = 0; c < feature.c; ++c) {
      const float* f = feature.channel(c);
      for (int b = 0; b < bins; ++b) {
        float acc = 0.0f;
        for (const Tap& t : taps[b]) acc += t.weight * f[t.index];
        row[c * bins + b] = acc;
      }
    }
  }
}

void RoiAlign::backward(const Tensor& feature_shape,
                        std::span<const BBox> boxes, const Matrix& dout,
                        Tensor& dfeature) const {
  const int bins = pooled * pooled;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto taps =
        roi_taps(*this, feature_shape.h, feature_shape.w, boxes[i]);
    const float* row = dout.row(static_cast<int>(i));
    for (int c = 0; c < feature_shape.c; ++c) {
      float* df = dfeature.channel(c);
      for (int b = 0; b < bins; ++b) {
        const float g = row[c * bins + b];
        if (g == 0.0f) continue;
        for (const Tap& t : taps[b]) df[t.index] += t.weight * g;
      }
    }
  }
}

void init_normal(ParamTensor& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values) v = static_cast<float>(dist(rng));
}

}  // namespace wsod::nn
