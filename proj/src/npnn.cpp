#include "phydiff/npnn.hpp"

#include <array>
#include <cmath>

#include "phydiff/errors.hpp"

namespace phydiff {

void EncoderSpec::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ConfigError("encoder input extents must be positive");
  if (q1 == 0 || q2 == 0 || q_last == 0) throw ConfigError("encoder kernel counts must be positive");
  if (q_last <= channels) throw ConfigError("encoder q_last must exceed the condition channel count");
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) throw ConfigError("encoder kernel extents must be odd");
}

void TimeEmbedSpec::validate() const {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("time embedding dimension must be even and positive");
  if (!(max_period > 0.0)) throw ConfigError("time embedding max period must be positive");
}

void NpnnSpec::validate() const {
  encoder.validate();
  time.validate();
  if (unet.base_width == 0) throw ConfigError("unet base width must be positive");
  if (sample_channels == 0) throw ConfigError("sample channel count must be positive");
  if (max_t < 1) throw ConfigError("T must be >= 1");
  if (!(ln_eps > 0.0)) throw ConfigError("layer norm epsilon must be positive");
}

Tensor sinusoidal_features(double t, std::size_t dim, double max_period) {
  if (dim == 0 || dim % 2 != 0) throw ShapeError("sinusoidal features need an even dimension");
  const std::size_t half = dim / 2;
  Tensor f({dim});
  for (std::size_t k = 0; k < half; ++k) {
    const double period = std::pow(max_period, static_cast<double>(k) / static_cast<double>(half));
    f[2 * k] = std::sin(t / period);
    f[2 * k + 1] = std::cos(t / period);
  }
  return f;
}

NodeId NoisePredictor::Binder::operator()(const std::string& id) const {
  if (mutable_params) return g.parameter(mutable_params->get(id));
  return g.parameter(const_params->get(id));
}

NoisePredictor::NoisePredictor(NpnnSpec spec, RngStream& init_rng) : spec_(std::move(spec)) {
  spec_.validate();
  const auto& e = spec_.encoder;
  add_conv("enc.conv1", e.kernel_h, e.kernel_w, e.channels, e.q1, init_rng);
  add_norm("enc.ln1", e.q1);
  add_conv("enc.conv2", e.kernel_h, e.kernel_w, e.q1, e.q2, init_rng);
  add_norm("enc.ln2", e.q2);
  add_conv("enc.conv3", e.kernel_h, e.kernel_w, e.q2, e.q_last, init_rng);

  const std::size_t q_t = spec_.time.dim;
  params_.add("time.dense.weight", glorot_uniform({q_t, q_t}, q_t, q_t, init_rng));
  params_.add("time.dense.bias", Tensor({q_t}, 0.0));

  const std::size_t w = spec_.unet.base_width;
  const std::size_t cin = spec_.unet_input_channels();
  add_conv("unet.down0.conv1", 3, 3, cin, w, init_rng);
  add_norm("unet.down0.ln1", w);
  add_conv("unet.down0.conv2", 3, 3, w, w, init_rng);
  add_norm("unet.down0.ln2", w);
  add_conv("unet.down0.pool", 3, 3, w, 2 * w, init_rng);
  add_conv("unet.down1.conv1", 3, 3, 2 * w, 2 * w, init_rng);
  add_norm("unet.down1.ln1", 2 * w);
  add_conv("unet.down1.conv2", 3, 3, 2 * w, 2 * w, init_rng);
  add_norm("unet.down1.ln2", 2 * w);
  add_conv("unet.down1.pool", 3, 3, 2 * w, 4 * w, init_rng);
  add_conv("unet.mid.conv1", 3, 3, 4 * w, 4 * w, init_rng);
  add_norm("unet.mid.ln1", 4 * w);
  add_conv("unet.mid.conv2", 3, 3, 4 * w, 4 * w, init_rng);
  add_norm("unet.mid.ln2", 4 * w);
  add_conv("unet.up1.upconv", 3, 3, 4 * w, 2 * w, init_rng);
  add_conv("unet.up1.conv1", 3, 3, 4 * w, 2 * w, init_rng);
  add_norm("unet.up1.ln1", 2 * w);
  add_conv("unet.up1.conv2", 3, 3, 2 * w, 2 * w, init_rng);
  add_norm("unet.up1.ln2", 2 * w);
  add_conv("unet.up0.upconv", 3, 3, 2 * w, w, init_rng);
  add_conv("unet.up0.conv1", 3, 3, 2 * w, w, init_rng);
  add_norm("unet.up0.ln1", w);
  add_conv("unet.up0.conv2", 3, 3, w, w, init_rng);
  add_norm("unet.up0.ln2", w);
  add_conv("unet.out", 1, 1, w, spec_.sample_channels, init_rng);
}

void NoisePredictor::add_conv(const std::string& name, std::size_t kh, std::size_t kw, std::size_t cin,
                              std::size_t cout, RngStream& rng) {
  params_.add(name + ".kernel", glorot_uniform({kh, kw, cin, cout}, kh * kw * cin, kh * kw * cout, rng));
  params_.add(name + ".bias", Tensor({cout}, 0.0));
}

void NoisePredictor::add_norm(const std::string& name, std::size_t channels) {
  params_.add(name + ".gain", Tensor({channels}, 1.0));
  params_.add(name + ".shift", Tensor({channels}, 0.0));
}

void NoisePredictor::check_t(int t) const {
  if (t < 1 || t > spec_.max_t) throw ContractError("time step " + std::to_string(t) + " outside [1, T]");
}

namespace {

NodeId conv(Graph& g, NoisePredictor::Binder& bind, const std::string& name, NodeId x, std::size_t stride = 1) {
  return conv2d(g, x, bind(name + ".kernel"), bind(name + ".bias"), stride);
}

NodeId conv_norm_relu(Graph& g, NoisePredictor::Binder& bind, const std::string& conv_name,
                      const std::string& norm_name, NodeId x, double eps) {
  const NodeId c = conv(g, bind, conv_name, x);
  const NodeId n = layer_norm(g, c, bind(norm_name + ".gain"), bind(norm_name + ".shift"), eps);
  return relu(g, n);
}

NodeId double_block(Graph& g, NoisePredictor::Binder& bind, const std::string& level, NodeId x, double eps) {
  const NodeId a = conv_norm_relu(g, bind, level + ".conv1", level + ".ln1", x, eps);
  return conv_norm_relu(g, bind, level + ".conv2", level + ".ln2", a, eps);
}

std::size_t round_up4(std::size_t n) { return (n + 3) / 4 * 4; }

}  // namespace

NodeId NoisePredictor::encoder_nodes(Graph& g, Binder& bind, NodeId x_c) const {
  const Shape expect = spec_.condition_shape();
  if (g.value(x_c).shape() != expect) {
    throw ShapeError("cond_encode: x_c has shape " + shape_str(g.value(x_c).shape()) + ", expected " +
                     shape_str(expect));
  }
  const double eps = spec_.ln_eps;
  const NodeId h1 = conv_norm_relu(g, bind, "enc.conv1", "enc.ln1", x_c, eps);
  const NodeId h2 = conv_norm_relu(g, bind, "enc.conv2", "enc.ln2", h1, eps);
  const NodeId h3 = conv(g, bind, "enc.conv3", h2);
  const std::array<NodeId, 2> parts{h3, x_c};
  return concat_channels(g, parts);
}

NodeId NoisePredictor::time_nodes(Graph& g, Binder& bind, int t) const {
  check_t(t);
  const NodeId f = g.input(sinusoidal_features(t, spec_.time.dim, spec_.time.max_period));
  const NodeId d = dense(g, f, bind("time.dense.weight"), bind("time.dense.bias"));
  return broadcast_spatial(g, d, spec_.encoder.height, spec_.encoder.width);
}

NodeId NoisePredictor::unet_nodes(Graph& g, Binder& bind, NodeId z_in) const {
  const Tensor& z = g.value(z_in);
  if (z.rank() != 3 || z.dim(2) != spec_.unet_input_channels()) {
    throw ShapeError("unet_forward: expected " + std::to_string(spec_.unet_input_channels()) + " input channels, got " +
                     shape_str(z.shape()));
  }
  const std::size_t H = z.dim(0), W = z.dim(1);
  const std::size_t Hp = round_up4(H), Wp = round_up4(W);
  const double eps = spec_.ln_eps;
  NodeId x = (Hp != H || Wp != W) ? pad_spatial(g, z_in, Hp, Wp) : z_in;

  const NodeId s0 = double_block(g, bind, "unet.down0", x, eps);
  const NodeId d0 = conv(g, bind, "unet.down0.pool", s0, 2);
  const NodeId s1 = double_block(g, bind, "unet.down1", d0, eps);
  const NodeId d1 = conv(g, bind, "unet.down1.pool", s1, 2);
  const NodeId m = double_block(g, bind, "unet.mid", d1, eps);

  const NodeId u1 = conv(g, bind, "unet.up1.upconv", upsample_nearest2x(g, m));
  const std::array<NodeId, 2> cat1{u1, s1};
  const NodeId e1 = double_block(g, bind, "unet.up1", concat_channels(g, cat1), eps);
  const NodeId u0 = conv(g, bind, "unet.up0.upconv", upsample_nearest2x(g, e1));
  const std::array<NodeId, 2> cat0{u0, s0};
  const NodeId e0 = double_block(g, bind, "unet.up0", concat_channels(g, cat0), eps);
  NodeId out = conv(g, bind, "unet.out", e0);
  if (Hp != H || Wp != W) out = crop_spatial(g, out, H, W);
  return out;
}

Tensor NoisePredictor::cond_encode(const Tensor& x_c) const {
  Graph g;
  Binder bind{g, nullptr, &params_};
  return g.value(encoder_nodes(g, bind, g.input(x_c)));
}

Tensor NoisePredictor::time_embed(int t) const {
  Graph g;
  Binder bind{g, nullptr, &params_};
  return g.value(time_nodes(g, bind, t));
}

Tensor NoisePredictor::unet_forward(const Tensor& z_in) const {
  Graph g;
  Binder bind{g, nullptr, &params_};
  return g.value(unet_nodes(g, bind, g.input(z_in)));
}

Tensor NoisePredictor::predict(const Tensor& encoded, const Tensor& x_t, int t) const {
  if (x_t.shape() != spec_.sample_shape()) {
    throw ShapeError("predict_noise: x_t has shape " + shape_str(x_t.shape()) + ", expected " +
                     shape_str(spec_.sample_shape()));
  }
  Graph g;
  Binder bind{g, nullptr, &params_};
  const NodeId c = g.input(encoded);
  const NodeId te = time_nodes(g, bind, t);
  const NodeId xt = g.input(x_t);
  const std::array<NodeId, 3> parts{c, te, xt};
  return g.value(unet_nodes(g, bind, concat_channels(g, parts)));
}

Tensor NoisePredictor::predict_noise(const Tensor& x_t, const Tensor& x_c, int t) const {
  return predict(cond_encode(x_c), x_t, t);
}

NodeId NoisePredictor::build(Graph& g, const Tensor& x_t, const Tensor& x_c, int t) {
  if (x_t.shape() != spec_.sample_shape()) throw ShapeError("predict_noise: x_t shape mismatch");
  Binder bind{g, &params_, nullptr};
  const NodeId c = encoder_nodes(g, bind, g.input(x_c));
  const NodeId te = time_nodes(g, bind, t);
  const NodeId xt = g.input(x_t);
  const std::array<NodeId, 3> parts{c, te, xt};
  return unet_nodes(g, bind, concat_channels(g, parts));
}

}  // namespace phydiff
