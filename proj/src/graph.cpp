#include "phydiff/graph.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "phydiff/errors.hpp"

namespace phydiff {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.raw();
  const double* s = src.raw();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

NodeId Graph::input(Tensor value, bool requires_grad) {
  Node n{OpKind::Input, {}, std::move(value), {}, nullptr, nullptr, requires_grad, {}};
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::parameter(Parameter& p) {
  Node n{OpKind::Parameter, {}, {}, {}, &p.value, &p.grad, true, {}};
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::parameter(const Parameter& p) {
  Node n{OpKind::Parameter, {}, {}, {}, &p.value, nullptr, false, {}};
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.external_value ? *n.external_value : n.value;
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.external_grad) return *n.external_grad;
  if (n.grad.empty()) throw ContractError("node has no gradient (not reached by backward)");
  return n.grad;
}

NodeId Graph::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn fn) {
  bool needs = false;
  for (auto i : inputs) {
    if (i >= nodes_.size()) throw ContractError("op input refers to a later node");
    needs = needs || nodes_[i].needs_grad;
  }
  Node n{kind, std::move(inputs), std::move(value), {}, nullptr, nullptr, needs, std::move(fn)};
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tensor* Graph::grad_buffer(NodeId id) {
  Node& n = nodes_.at(id);
  if (!n.needs_grad) return nullptr;
  if (n.external_grad) return n.external_grad;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

void Graph::backward(NodeId loss, double seed) {
  if (loss >= nodes_.size()) throw ContractError("backward: unknown loss node");
  if (value(loss).size() != 1) {
    throw ContractError("backward: loss node must be scalar, got shape " + shape_str(value(loss).shape()));
  }
  if (!nodes_[loss].needs_grad) return;
  // Parameter leaves accumulate externally, so the loss seed must be added,
  // not assigned, when the loss itself is a leaf.
  Tensor* g = grad_buffer(loss);
  (*g)[0] += seed;
  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------

NodeId conv2d(Graph& g, NodeId input, NodeId kernels, NodeId bias, std::size_t stride) {
  const Tensor& x = g.value(input);
  const Tensor& k = g.value(kernels);
  const Tensor& b = g.value(bias);
  require_rank(x, 3, "conv2d input");
  require_rank(k, 4, "conv2d kernels");
  require_rank(b, 1, "conv2d bias");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t kh = k.dim(0), kw = k.dim(1), Q = k.dim(3);
  if (k.dim(2) != C) {
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels but kernels expect " +
                     std::to_string(k.dim(2)));
  }
  if (b.dim(0) != Q) throw ShapeError("conv2d: bias length does not match kernel count");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
  const std::size_t Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);

  Tensor out({Ho, Wo, Q});
  const double* xd = x.raw();
  const double* kd = k.raw();
  for (std::size_t y = 0; y < Ho; ++y) {
    for (std::size_t xo = 0; xo < Wo; ++xo) {
      double* o = out.raw() + (y * Wo + xo) * Q;
      for (std::size_t q = 0; q < Q; ++q) o[q] = b[q];
      for (std::size_t dy = 0; dy < kh; ++dy) {
        const long iy = static_cast<long>(y * stride + dy) - ph;
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const long ix = static_cast<long>(xo * stride + dx) - pw;
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const double* in = xd + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C;
          const double* kk = kd + (dy * kw + dx) * C * Q;
          for (std::size_t c = 0; c < C; ++c) {
            const double v = in[c];
            const double* kr = kk + c * Q;
            for (std::size_t q = 0; q < Q; ++q) o[q] += v * kr[q];
          }
        }
      }
    }
  }

  auto fn = [input, kernels, bias, stride, ph, pw](Graph& gr, NodeId self) {
    const Tensor& x = gr.value(input);
    const Tensor& k = gr.value(kernels);
    const Tensor& gout = gr.grad(self);
    Tensor* gx = gr.grad_buffer(input);
    Tensor* gk = gr.grad_buffer(kernels);
    Tensor* gb = gr.grad_buffer(bias);
    const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
    const std::size_t kh = k.dim(0), kw = k.dim(1), Q = k.dim(3);
    const std::size_t Ho = gout.dim(0), Wo = gout.dim(1);
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t xo = 0; xo < Wo; ++xo) {
        const double* go = gout.raw() + (y * Wo + xo) * Q;
        if (gb) {
          for (std::size_t q = 0; q < Q; ++q) (*gb)[q] += go[q];
        }
        if (!gx && !gk) continue;
        for (std::size_t dy = 0; dy < kh; ++dy) {
          const long iy = static_cast<long>(y * stride + dy) - ph;
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const long ix = static_cast<long>(xo * stride + dx) - pw;
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            const std::size_t in_off = (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C;
            const std::size_t k_off = (dy * kw + dx) * C * Q;
            const double* in = x.raw() + in_off;
            const double* kk = k.raw() + k_off;
            for (std::size_t c = 0; c < C; ++c) {
              const double* kr = kk + c * Q;
              if (gx) {
                double acc = 0.0;
                for (std::size_t q = 0; q < Q; ++q) acc += kr[q] * go[q];
                gx->raw()[in_off + c] += acc;
              }
              if (gk) {
                const double v = in[c];
                double* gkr = gk->raw() + k_off + c * Q;
                for (std::size_t q = 0; q < Q; ++q) gkr[q] += v * go[q];
              }
            }
          }
        }
      }
    }
  };
  return g.record(OpKind::Conv2d, {input, kernels, bias}, std::move(out), std::move(fn));
}

NodeId dense(Graph& g, NodeId input, NodeId weights, NodeId bias) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weights);
  const Tensor& b = g.value(bias);
  require_rank(x, 1, "dense input");
  require_rank(w, 2, "dense weights");
  require_rank(b, 1, "dense bias");
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (x.dim(0) != n) throw ShapeError("dense: input length does not match weight columns");
  if (b.dim(0) != m) throw ShapeError("dense: bias length does not match weight rows");
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = b[i];
    for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * x[j];
    out[i] = acc;
  }
  auto fn = [input, weights, bias](Graph& gr, NodeId self) {
    const Tensor& x = gr.value(input);
    const Tensor& w = gr.value(weights);
    const Tensor& go = gr.grad(self);
    Tensor* gx = gr.grad_buffer(input);
    Tensor* gw = gr.grad_buffer(weights);
    Tensor* gb = gr.grad_buffer(bias);
    const std::size_t m = w.dim(0), n = w.dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      if (gb) (*gb)[i] += go[i];
      for (std::size_t j = 0; j < n; ++j) {
        if (gw) (*gw)[i * n + j] += go[i] * x[j];
        if (gx) (*gx)[j] += go[i] * w[i * n + j];
      }
    }
  };
  return g.record(OpKind::Dense, {input, weights, bias}, std::move(out), std::move(fn));
}

NodeId layer_norm(Graph& g, NodeId input, NodeId gain, NodeId shift, double eps) {
  const Tensor& x = g.value(input);
  const Tensor& gamma = g.value(gain);
  const Tensor& beta = g.value(shift);
  require_rank(x, 3, "layer_norm input");
  const std::size_t C = x.dim(2);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != C || beta.dim(0) != C) {
    throw ShapeError("layer_norm: gain/shift must have " + std::to_string(C) + " entries");
  }
  const std::size_t P = x.dim(0) * x.dim(1);
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(P);
  Tensor out(x.shape());
  for (std::size_t p = 0; p < P; ++p) {
    const double* xi = x.raw() + p * C;
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += xi[c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (xi[c] - mean) * (xi[c] - mean);
    var /= static_cast<double>(C);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[p] = inv;
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (xi[c] - mean) * inv;
      (*xhat)[p * C + c] = h;
      out[p * C + c] = gamma[c] * h + beta[c];
    }
  }
  auto fn = [input, gain, shift, xhat, inv_std, C, P](Graph& gr, NodeId self) {
    const Tensor& gamma = gr.value(gain);
    const Tensor& go = gr.grad(self);
    Tensor* gx = gr.grad_buffer(input);
    Tensor* gg = gr.grad_buffer(gain);
    Tensor* gs = gr.grad_buffer(shift);
    const double inv_c = 1.0 / static_cast<double>(C);
    for (std::size_t p = 0; p < P; ++p) {
      const double* dy = go.raw() + p * C;
      const double* h = xhat->data() + p * C;
      double sum_d = 0.0, sum_dh = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        if (gg) (*gg)[c] += dy[c] * h[c];
        if (gs) (*gs)[c] += dy[c];
        const double d = dy[c] * gamma[c];
        sum_d += d;
        sum_dh += d * h[c];
      }
      if (!gx) continue;
      double* dx = gx->raw() + p * C;
      const double inv = (*inv_std)[p];
      for (std::size_t c = 0; c < C; ++c) {
        const double d = dy[c] * gamma[c];
        dx[c] += inv * (d - inv_c * sum_d - h[c] * inv_c * sum_dh);
      }
    }
  };
  return g.record(OpKind::LayerNorm, {input, gain, shift}, std::move(out), std::move(fn));
}

NodeId relu(Graph& g, NodeId input) {
  const Tensor& x = g.value(input);
  Tensor out(x.shape());
  // NaN propagates so non-finite losses stay visible.
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] <= 0.0 ? 0.0 : x[i];
  auto fn = [input](Graph& gr, NodeId self) {
    Tensor* gx = gr.grad_buffer(input);
    if (!gx) return;
    const Tensor& x = gr.value(input);
    const Tensor& go = gr.grad(self);
    // Sub-gradient at exactly 0 is 0.
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) (*gx)[i] += go[i];
    }
  };
  return g.record(OpKind::Relu, {input}, std::move(out), std::move(fn));
}

NodeId concat_channels(Graph& g, std::span<const NodeId> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  const Tensor& first = g.value(parts[0]);
  require_rank(first, 3, "concat_channels part");
  const std::size_t H = first.dim(0), W = first.dim(1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto id : parts) {
    const Tensor& t = g.value(id);
    require_rank(t, 3, "concat_channels part");
    if (t.dim(0) != H || t.dim(1) != W) {
      throw ShapeError("concat_channels: spatial extents differ, " + shape_str(first.shape()) + " vs " +
                       shape_str(t.shape()));
    }
    widths.push_back(t.dim(2));
    total += t.dim(2);
  }
  Tensor out({H, W, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = g.value(parts[k]);
    const std::size_t ck = widths[k];
    for (std::size_t p = 0; p < H * W; ++p) {
      for (std::size_t c = 0; c < ck; ++c) out[p * total + off + c] = t[p * ck + c];
    }
    off += ck;
  }
  std::vector<NodeId> ids(parts.begin(), parts.end());
  auto fn = [ids, widths, total](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    const std::size_t P = go.dim(0) * go.dim(1);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t ck = widths[k];
      if (Tensor* gp = gr.grad_buffer(ids[k])) {
        for (std::size_t p = 0; p < P; ++p) {
          for (std::size_t c = 0; c < ck; ++c) (*gp)[p * ck + c] += go[p * total + off + c];
        }
      }
      off += ck;
    }
  };
  return g.record(OpKind::ConcatChannels, std::move(ids), std::move(out), std::move(fn));
}

NodeId slice_channels(Graph& g, NodeId input, std::size_t offset, std::size_t count) {
  const Tensor& x = g.value(input);
  require_rank(x, 3, "slice_channels input");
  const std::size_t C = x.dim(2);
  if (count == 0 || offset + count > C) throw ShapeError("slice_channels: range exceeds channel count");
  const std::size_t P = x.dim(0) * x.dim(1);
  Tensor out({x.dim(0), x.dim(1), count});
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t c = 0; c < count; ++c) out[p * count + c] = x[p * C + offset + c];
  }
  auto fn = [input, offset, count, C, P](Graph& gr, NodeId self) {
    Tensor* gx = gr.grad_buffer(input);
    if (!gx) return;
    const Tensor& go = gr.grad(self);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < count; ++c) (*gx)[p * C + offset + c] += go[p * count + c];
    }
  };
  return g.record(OpKind::SliceChannels, {input}, std::move(out), std::move(fn));
}

NodeId upsample_nearest2x(Graph& g, NodeId input) {
  const Tensor& x = g.value(input);
  require_rank(x, 3, "upsample input");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor out({2 * H, 2 * W, C});
  for (std::size_t y = 0; y < 2 * H; ++y) {
    for (std::size_t xo = 0; xo < 2 * W; ++xo) {
      const double* src = x.raw() + ((y / 2) * W + xo / 2) * C;
      double* dst = out.raw() + (y * 2 * W + xo) * C;
      for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
    }
  }
  auto fn = [input, H, W, C](Graph& gr, NodeId self) {
    Tensor* gx = gr.grad_buffer(input);
    if (!gx) return;
    const Tensor& go = gr.grad(self);
    for (std::size_t y = 0; y < 2 * H; ++y) {
      for (std::size_t xo = 0; xo < 2 * W; ++xo) {
        const double* src = go.raw() + (y * 2 * W + xo) * C;
        double* dst = gx->raw() + ((y / 2) * W + xo / 2) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
      }
    }
  };
  return g.record(OpKind::Upsample2x, {input}, std::move(out), std::move(fn));
}

NodeId pad_spatial(Graph& g, NodeId input, std::size_t out_h, std::size_t out_w) {
  const Tensor& x = g.value(input);
  require_rank(x, 3, "pad input");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (out_h < H || out_w < W) throw ShapeError("pad_spatial: target smaller than input");
  Tensor out({out_h, out_w, C}, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t xo = 0; xo < W; ++xo) {
      for (std::size_t c = 0; c < C; ++c) out.at(y, xo, c) = x.at(y, xo, c);
    }
  }
  auto fn = [input, H, W, C](Graph& gr, NodeId self) {
    Tensor* gx = gr.grad_buffer(input);
    if (!gx) return;
    const Tensor& go = gr.grad(self);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xo = 0; xo < W; ++xo) {
        for (std::size_t c = 0; c < C; ++c) gx->at(y, xo, c) += go.at(y, xo, c);
      }
    }
  };
  return g.record(OpKind::PadSpatial, {input}, std::move(out), std::move(fn));
}

NodeId crop_spatial(Graph& g, NodeId input, std::size_t out_h, std::size_t out_w) {
  const Tensor& x = g.value(input);
  require_rank(x, 3, "crop input");
  const std::size_t C = x.dim(2);
  if (out_h == 0 || out_w == 0 || out_h > x.dim(0) || out_w > x.dim(1)) {
    throw ShapeError("crop_spatial: target larger than input");
  }
  Tensor out({out_h, out_w, C});
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t xo = 0; xo < out_w; ++xo) {
      for (std::size_t c = 0; c < C; ++c) out.at(y, xo, c) = x.at(y, xo, c);
    }
  }
  auto fn = [input, out_h, out_w, C](Graph& gr, NodeId self) {
    Tensor* gx = gr.grad_buffer(input);
    if (!gx) return;
    const Tensor& go = gr.grad(self);
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        for (std::size_t c = 0; c < C; ++c) gx->at(y, xo, c) += go.at(y, xo, c);
      }
    }
  };
  return g.record(OpKind::CropSpatial, {input}, std::move(out), std::move(fn));
}

NodeId broadcast_spatial(Graph& g, NodeId vec, std::size_t h, std::size_t w) {
  const Tensor& v = g.value(vec);
  require_rank(v, 1, "broadcast_spatial input");
  const std::size_t Q = v.dim(0);
  Tensor out({h, w, Q});
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t q = 0; q < Q; ++q) out[p * Q + q] = v[q];
  }
  auto fn = [vec, Q](Graph& gr, NodeId self) {
    Tensor* gv = gr.grad_buffer(vec);
    if (!gv) return;
    const Tensor& go = gr.grad(self);
    const std::size_t P = go.dim(0) * go.dim(1);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t q = 0; q < Q; ++q) (*gv)[q] += go[p * Q + q];
    }
  };
  return g.record(OpKind::BroadcastSpatial, {vec}, std::move(out), std::move(fn));
}

NodeId reshape(Graph& g, NodeId input, Shape shape) {
  const Tensor& x = g.value(input);
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  auto fn = [input](Graph& gr, NodeId self) {
    Tensor* gx = gr.grad_buffer(input);
    if (!gx) return;
    add_into(*gx, gr.grad(self));
  };
  return g.record(OpKind::Reshape, {input}, std::move(out), std::move(fn));
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require_same_shape(x, y, "mul");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  auto fn = [a, b](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    const Tensor& x = gr.value(a);
    const Tensor& y = gr.value(b);
    // Fetch both buffers before writing: a and b may be the same node.
    Tensor* ga = gr.grad_buffer(a);
    Tensor* gb = gr.grad_buffer(b);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (ga) (*ga)[i] += go[i] * y[i];
      if (gb) (*gb)[i] += go[i] * x[i];
    }
  };
  return g.record(OpKind::Mul, {a, b}, std::move(out), std::move(fn));
}

NodeId weighted_sum(Graph& g, NodeId input, const Tensor& weights) {
  const Tensor& x = g.value(input);
  require_same_shape(x, weights, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  auto fn = [input, weights](Graph& gr, NodeId self) {
    Tensor* gx = gr.grad_buffer(input);
    if (!gx) return;
    const double go = gr.grad(self)[0];
    for (std::size_t i = 0; i < weights.size(); ++i) (*gx)[i] += go * weights[i];
  };
  return g.record(OpKind::WeightedSum, {input}, Tensor({1}, s), std::move(fn));
}

NodeId mse_loss(Graph& g, NodeId pred, const Tensor& target) {
  const Tensor& x = g.value(pred);
  require_same_shape(x, target, "mse_loss");
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - target[i];
    s += d * d;
  }
  auto fn = [pred, target, n](Graph& gr, NodeId self) {
    Tensor* gx = gr.grad_buffer(pred);
    if (!gx) return;
    const Tensor& x = gr.value(pred);
    const double go = gr.grad(self)[0];
    for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += go * 2.0 * (x[i] - target[i]) / n;
  };
  return g.record(OpKind::MseLoss, {pred}, Tensor({1}, s / n), std::move(fn));
}

std::vector<std::size_t> concat_offsets(std::span<const Tensor> parts) {
  std::vector<std::size_t> offs;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offs.push_back(off);
    off += t.dim(2);
  }
  return offs;
}

}  // namespace phydiff
