#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsod/geometry.hpp"
#include "wsod/rng.hpp"

namespace wsod::nn {

// Channel-major activation volume.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int channels, int height, int width)
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, 0.0f) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  float* channel(int k) { return data.data() + k * plane(); }
  const float* channel(int k) const { return data.data() + k * plane(); }
  float at(int k, int y, int x) const { return data[k * plane() + y * w + x]; }
};

// Row-major (rows x cols) matrix used for per-ROI activations.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(int r, int c)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {}
  float* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const float* row(int i) const {
    return data.data() + static_cast<std::size_t>(i) * cols;
  }
  float& operator()(int i, int j) { return row(i)[j]; }
  float operator()(int i, int j) const { return row(i)[j]; }
};

enum class ParamGroup { kConv, kRpn, kFrcnn };

std::string_view to_string(ParamGroup g);

struct ParamTensor {
  std::string name;
  std::optional<ParamGroup> group;
  bool frcnn_reg = false;  // ROI-head box-regression output layer
  std::vector<int> shape;
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
};

class ParameterSet {
 public:
  int add(std::string name, std::optional<ParamGroup> group,
          std::vector<int> shape, bool frcnn_reg = false);

  ParamTensor& operator[](int i) { return tensors_[i]; }
  const ParamTensor& operator[](int i) const { return tensors_[i]; }
  std::size_t count() const { return tensors_.size(); }
  std::size_t total_size() const;
  std::span<ParamTensor> tensors() { return tensors_; }
  std::span<const ParamTensor> tensors() const { return tensors_; }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<ParamTensor> tensors_;
};

// Gradient buffers parallel to a ParameterSet.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params);

  std::vector<float>& operator[](int i) { return grads_[i]; }
  const std::vector<float>& operator[](int i) const { return grads_[i]; }
  std::size_t count() const { return grads_.size(); }

  void zero();
  // this += scale * other
  void add_scaled(const Gradients& other, float scale);
  void scale(float s);

 private:
  std::vector<std::vector<float>> grads_;
};

// k x k convolution, stride 1, "same" padding, fused with an optional ReLU.
struct Conv2d {
  int weight = -1;  // [cout, cin, k, k]
  int bias = -1;    // [cout]
  int cin = 0;
  int cout = 0;
  int k = 3;
  bool relu = true;

  static Conv2d create(ParameterSet& ps, const std::string& name,
                       std::optional<ParamGroup> group, int cin, int cout,
                       int k, bool relu);

  void forward(const ParameterSet& ps, const Tensor& in, Tensor& out) const;
  // `out` is the forward output (needed for the ReLU mask). `din` may be null
  // when the input gradient is not needed.
  void backward(const ParameterSet& ps, const Tensor& in, const Tensor& out,
                const Tensor& dout, Tensor* din, Gradients& grads) const;
};

// y = x W^T + b, optional ReLU. Rows of the input are independent samples.
struct Linear {
  int weight = -1;  // [out, in]
  int bias = -1;    // [out]
  int in = 0;
  int out = 0;
  bool relu = false;
  bool frcnn_reg = false;

  static Linear create(ParameterSet& ps, const std::string& name,
                       std::optional<ParamGroup> group, int in, int out,
                       bool relu, bool frcnn_reg = false);

  void forward(const ParameterSet& ps, const Matrix& x, Matrix& y) const;
  void backward(const ParameterSet& ps, const Matrix& x, const Matrix& y,
                const Matrix& dy, Matrix* dx, Gradients& grads) const;
};

// 2x2 max pooling with stride 2; the argmax positions are kept for backward.
void maxpool2_forward(const Tensor& in, Tensor& out,
                      std::vector<std::int32_t>& argmax);
void maxpool2_backward(const Tensor& dout,
                       const std::vector<std::int32_t>& argmax, Tensor& din);

// RoIAlign: each box (image coordinates) is divided into pooled x pooled bins,
// each bin averages `sampling` x `sampling` bilinear samples. Output row i is
// the flattened [C, pooled, pooled] feature of box i.
struct RoiAlign {
  int pooled = 4;
  int sampling = 2;
  double stride = 8.0;

  void forward(const Tensor& feature, std::span<const BBox> boxes,
               Matrix& out) const;
  // Accumulates into dfeature (which must be sized like the feature map).
  void backward(const Tensor& feature_shape, std::span<const BBox> boxes,
                const Matrix& dout, Tensor& dfeature) const;
};

// He-normal initialization for weights, zero biases.
void init_normal(ParamTensor& t, double stddev, Rng& rng);

}  // namespace wsod::nn
