#pragma once

#include <cstddef>
#include <string>

#include "phydiff/diffusion.hpp"
#include "phydiff/graph.hpp"
#include "phydiff/params.hpp"
#include "phydiff/rng.hpp"
#include "phydiff/tensor.hpp"

namespace phydiff {

struct EncoderSpec {
  // Extents of the pre-processed condition x_c.
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t q1 = 64;
  std::size_t q2 = 64;
  std::size_t q_last = 128;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;

  void validate() const;
  // q_last + channels: the encoder concatenates its output with x_c.
  [[nodiscard]] std::size_t output_channels() const noexcept { return q_last + channels; }
};

struct TimeEmbedSpec {
  std::size_t dim = 16;
  double max_period = 1e4;
  void validate() const;
};

struct UNetSpec {
  std::size_t base_width = 32;
};

struct NpnnSpec {
  EncoderSpec encoder;
  TimeEmbedSpec time;
  UNetSpec unet;
  std::size_t sample_channels = 2;  // channels of x_t / x_0
  int max_t = 500;                  // T of the diffusion schedule
  double ln_eps = 1e-5;

  void validate() const;
  [[nodiscard]] std::size_t unet_input_channels() const noexcept {
    return encoder.output_channels() + time.dim + sample_channels;
  }
  [[nodiscard]] Shape condition_shape() const { return {encoder.height, encoder.width, encoder.channels}; }
  [[nodiscard]] Shape sample_shape() const { return {encoder.height, encoder.width, sample_channels}; }
};

// Interleaved [sin(t/r_0), cos(t/r_0), sin(t/r_1), ...] with r_k = max_period^(k/(dim/2)).
Tensor sinusoidal_features(double t, std::size_t dim, double max_period);

/// Conditional noise predictor eps_theta(x_t, x_c, t):
///   c     = concat(conv3(relu(ln(conv2(relu(ln(conv1(x_c))))))), x_c)
///   t_emb = broadcast(dense(sinusoidal(t)))
///   eps   = unet(concat(c, t_emb, x_t))
///
/// The U-Net has two encoder levels (widths w, 2w) with a bottleneck at quarter
/// resolution (4w). Each level applies two 3x3 conv + layer norm + ReLU
/// blocks, downsampling is a stride-2 3x3 conv, upsampling is nearest x2 then a
/// 3x3 conv, and skips concatenate encoder features into the matching decoder
/// level. A final 1x1 conv projects to the sample channels. Inputs whose
/// extents are not multiples of 4 are zero-padded and the output is cropped.
class NoisePredictor final : public TrainableNoiseModel {
 public:
  // Glorot-uniform kernels and weights, zero biases, unit gains.
  NoisePredictor(NpnnSpec spec, RngStream& init_rng);

  [[nodiscard]] const NpnnSpec& spec() const noexcept { return spec_; }
  ParameterSet& parameters() override { return params_; }
  [[nodiscard]] const ParameterSet& parameters() const { return params_; }

  [[nodiscard]] Shape condition_shape() const override { return spec_.condition_shape(); }
  [[nodiscard]] Shape sample_shape() const override { return spec_.sample_shape(); }

  [[nodiscard]] Tensor cond_encode(const Tensor& x_c) const;
  [[nodiscard]] Tensor time_embed(int t) const;
  [[nodiscard]] Tensor unet_forward(const Tensor& z_in) const;
  [[nodiscard]] Tensor predict_noise(const Tensor& x_t, const Tensor& x_c, int t) const;

  // ConditionalNoiseModel: prepare() runs the encoder once per sampling pass.
  [[nodiscard]] Tensor prepare(const Tensor& x_c) const override { return cond_encode(x_c); }
  [[nodiscard]] Tensor predict(const Tensor& encoded, const Tensor& x_t, int t) const override;

  NodeId build(Graph& g, const Tensor& x_t, const Tensor& x_c, int t) override;

  // Graph pieces; `bind` resolves a parameter id to a leaf node.
  struct Binder;
  NodeId encoder_nodes(Graph& g, Binder& bind, NodeId x_c) const;
  NodeId time_nodes(Graph& g, Binder& bind, int t) const;
  NodeId unet_nodes(Graph& g, Binder& bind, NodeId z_in) const;

 private:
  void add_conv(const std::string& name, std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                RngStream& rng);
  void add_norm(const std::string& name, std::size_t channels);
  void check_t(int t) const;

  NpnnSpec spec_;
  ParameterSet params_;
};

/// Resolves parameter ids to graph leaves, with or without gradient tracking.
struct NoisePredictor::Binder {
  Graph& g;
  ParameterSet* mutable_params = nullptr;
  const ParameterSet* const_params = nullptr;
  NodeId operator()(const std::string& id) const;
};

}  // namespace phydiff
