#ifndef PHASEFORGE_NN_HPP
#define PHASEFORGE_NN_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "phaseforge/rng.hpp"
#include "phaseforge/tensor.hpp"

namespace phaseforge::nn {

// Reverse-mode tape. Nodes are created in forward order; backward() walks the
// reachable subgraph in reverse creation order. Parameters are long-lived leaf
// nodes; everything else dies with the root.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

// Accumulates gradients of `root` (a scalar) into every reachable
// requires_grad leaf. Leaf grads are not zeroed first.
void backward(const Var& root);
void zero_grad(const std::vector<Var>& params);

// Gradient recording is on by default; disable around inference-only passes.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Ops. Shapes follow torch conventions: activations (N, C, H, W).

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// multiply sample n (leading axis) by s[n]
Var scale_per_sample(const Var& a, const std::vector<double>& s);
Var sum(const Var& a);
Var mean(const Var& a);
Var silu(const Var& a);

Var conv2d(const Var& x, const Var& w, const Var& b, int pad);
Var linear(const Var& x, const Var& w, const Var& b);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               double eps = 1e-6);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
// add b[n][c] to every (h, w) of x[n][c]
Var channel_bias(const Var& x, const Var& b);
// uniform k x k mean filter, valid region
Var box_filter_valid(const Var& x, int k);
// (N,2,H,W) complex-as-channels centered orthonormal transforms
Var fft2c_pair(const Var& x);
Var ifft2c_pair(const Var& x);
// (N,2,H,W) -> (N,1,H,W) pointwise modulus, smoothed near zero
Var complex_magnitude(const Var& x, double eps = 1e-12);
// zero unsampled phase-encode columns (mask over the last axis)
Var mask_columns(const Var& x, const std::vector<std::uint8_t>& lines);
// multiply by a scalar parameter (learnable step size)
Var scale_by(const Var& x, const Var& s);

// ---------------------------------------------------------------------------
// Layers. Each registers its parameters into `params` under `name.*`.

struct ParamEntry {
  std::string name;
  Var var;
};
using ParamList = std::vector<ParamEntry>;

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, ParamList& params, int in_ch, int out_ch, int kernel,
         Rng& rng, bool zero_init = false);
  Var operator()(const Var& x) const;

 private:
  Var w_, b_;
  int pad_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, ParamList& params, int in_dim, int out_dim, Rng& rng,
         bool zero_init = false);
  Var operator()(const Var& x) const;

 private:
  Var w_, b_;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(std::string name, ParamList& params, int channels, int groups);
  Var operator()(const Var& x) const;

 private:
  Var gamma_, beta_;
  int groups_ = 1;
};

// Residual block with 1/sqrt(2)-scaled skip connection and optional
// per-channel time-embedding bias.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(std::string name, ParamList& params, int in_ch, int out_ch,
           int time_dim, Rng& rng);
  // temb: (N, time_dim) or nullptr when time_dim == 0
  Var operator()(const Var& x, const Var& temb) const;

 private:
  GroupNorm gn1_, gn2_;
  Conv2d conv1_, conv2_;
  std::optional<Conv2d> shortcut_;
  std::optional<Linear> time_proj_;
};

// Compact U-Net: `depth` resolution levels with channel widths
// base * 2^level, one ResBlock per level each way, bottleneck ResBlock,
// skip concatenation on the way up.
class UNet {
 public:
  UNet() = default;
  UNet(std::string name, ParamList& params, int in_ch, int out_ch, int base,
       int depth, int time_dim, Rng& rng);
  Var operator()(const Var& x, const Var& temb) const;
  int depth() const { return depth_; }

 private:
  int depth_ = 0;
  Conv2d conv_in_;
  std::vector<ResBlock> down_;
  ResBlock bottleneck_;
  std::vector<ResBlock> up_;
  GroupNorm gn_out_;
  Conv2d conv_out_;
};

// Sinusoidal featurization of diffusion times, (N, dim) constants.
Tensor time_features(const std::vector<double>& ts, int dim);

// ---------------------------------------------------------------------------
// Optimizer

class Adam {
 public:
  explicit Adam(const std::vector<Var>& params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step(double lr);

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

std::vector<Var> vars_of(const ParamList& params);

}  // namespace phaseforge::nn

#endif
