#pragma once

// Minimal layer library for the refinement blocks: 2D/3D convolution and
// transposed convolution (im2col + SGEMM), per-channel PReLU, and a named
// parameter store. Backward passes are written by hand; every layer caches
// nothing itself, callers keep the activations they need.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "flint/tensor.hpp"

namespace flint::nn {

enum class ParamKind { kWeight, kBias, kSlope };

struct Parameter {
  std::string name;
  std::vector<int> shape;
  ParamKind kind = ParamKind::kWeight;
  std::vector<float> value;
  std::vector<float> grad;

  std::size_t size() const { return value.size(); }
};

class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<int> shape, ParamKind kind);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Geometry of a strided convolution mapping grid `in` to grid `out`. For 2D
// grids the depth axis has kernel 1, stride 1 and no padding.
struct ConvGeom {
  int cin = 0;
  int cout = 0;
  Grid in;
  Grid out;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int kd() const { return in.dims == 3 ? kernel : 1; }
  int sd() const { return in.dims == 3 ? stride : 1; }
  int pd() const { return in.dims == 3 ? pad : 0; }
  int kvol() const { return kd() * kernel * kernel; }
  int patch() const { return cin * kvol(); }

  static int out_extent(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }
  static Grid conv_out(const Grid& in, int kernel, int stride, int pad);
};

// col[patch x (n1-n0)] for output positions [n0, n1).
void im2col(const float* x, const ConvGeom& g, std::size_t n0, std::size_t n1, float* col);
// Scatter-adds col back into x; inverse access pattern of im2col.
void col2im(const float* col, const ConvGeom& g, std::size_t n0, std::size_t n1, float* x);

// 3x3 (x3) convolution or transposed convolution with padding 1.
class Conv {
 public:
  Conv() = default;
  // Weights are drawn from `rng` (He initialization for PReLU slope 0.25) or
  // set to zero when `rng` is null. Biases start at zero.
  Conv(ParameterSet& params, const std::string& name, int cin, int cout, int stride, bool transposed, int dims,
       std::mt19937_64* rng, int kernel = 3);

  // `out_grid` is required for transposed layers and must be consistent
  // with the input grid; ignored otherwise.
  FieldF forward(const ParameterSet& params, const FieldF& x, const Grid* out_grid = nullptr) const;

  // Accumulates weight/bias gradients; returns d/dx when `need_input_grad`.
  FieldF backward(ParameterSet& params, const FieldF& x, const FieldF& grad_out, bool need_input_grad) const;

  Grid output_grid(const Grid& in, const Grid* out_grid) const;
  int cin() const { return cin_; }
  int cout() const { return cout_; }
  std::size_t weight_index() const { return weight_; }
  std::size_t bias_index() const { return bias_; }

 private:
  ConvGeom geometry(const Grid& in, const Grid& out) const;

  int cin_ = 0, cout_ = 0, stride_ = 1, kernel_ = 3, dims_ = 2;
  bool transposed_ = false;
  std::size_t weight_ = 0, bias_ = 0;
};

class Prelu {
 public:
  Prelu() = default;
  Prelu(ParameterSet& params, const std::string& name, int channels, float init = 0.25f);

  FieldF forward(const ParameterSet& params, const FieldF& x) const;
  FieldF backward(ParameterSet& params, const FieldF& x, const FieldF& grad_out) const;

  std::size_t slope_index() const { return slope_; }

 private:
  std::size_t slope_ = 0;
};

}  // namespace flint::nn
