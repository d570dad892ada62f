#include "mtb/encoder/encoder.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/parallel.hpp"
#include "mtb/numerics/rng.hpp"

namespace mtb {

void EncoderConfig::validate() const {
  if (channels == 0 || image_side == 0 || patch_size == 0 || hidden_dim == 0 || embed_dim == 0) {
    throw ConfigError("encoder dimensions must all be >= 1");
  }
  if (image_side % patch_size != 0) {
    throw ConfigError(fmt::format("encoder patch_size {} does not divide image_side {}", patch_size, image_side));
  }
}

namespace {

Tensor uniform_weights(Rng& rng, std::size_t rows, std::size_t cols) {
  const double a = 1.0 / std::sqrt(static_cast<double>(cols));
  Tensor w({rows, cols});
  for (float& v : w) v = static_cast<float>(rng.uniform(-a, a));
  return w;
}

template <typename T>
void check_image(const EncoderParams& params, const BasicTensor<T>& image) {
  const Shape expected = params.config.image_shape();
  if (image.shape() != expected) {
    throw ShapeError(fmt::format("encoder expects image shape {}, got {}", shape_to_string(expected),
                                 shape_to_string(image.shape())));
  }
}

// Copies patch (py, px) into `out` in channel, row, column order.
template <typename T>
void gather_patch(const EncoderConfig& cfg, const T* img, std::size_t py, std::size_t px, T* out) {
  const std::size_t ps = cfg.patch_size, side = cfg.image_side;
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    for (std::size_t r = 0; r < ps; ++r) {
      const T* src = img + c * side * side + (py * ps + r) * side + px * ps;
      for (std::size_t q = 0; q < ps; ++q) *out++ = src[q];
    }
  }
}

template <typename T>
void scatter_patch_add(const EncoderConfig& cfg, const T* in, std::size_t py, std::size_t px, T* img) {
  const std::size_t ps = cfg.patch_size, side = cfg.image_side;
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    for (std::size_t r = 0; r < ps; ++r) {
      T* dst = img + c * side * side + (py * ps + r) * side + px * ps;
      for (std::size_t q = 0; q < ps; ++q) dst[q] += *in++;
    }
  }
}

}  // namespace

EncoderParams init_encoder(const EncoderConfig& config) {
  config.validate();
  Rng rng(config.seed);
  EncoderParams p;
  p.config = config;
  p.patch_weights = uniform_weights(rng, config.hidden_dim, config.patch_len());
  p.mix_weights = uniform_weights(rng, config.embed_dim, config.hidden_dim);
  return p;
}

EncoderParams init_encoder(std::uint64_t seed, std::size_t channels, std::size_t image_side, std::size_t patch_size,
                           std::size_t hidden_dim, std::size_t embed_dim) {
  return init_encoder(EncoderConfig{seed, channels, image_side, patch_size, hidden_dim, embed_dim});
}

template <typename T>
EncoderTape<T> encode_forward(const EncoderParams& params, const BasicTensor<T>& image) {
  check_image(params, image);
  const EncoderConfig& cfg = params.config;
  const std::size_t dh = cfg.hidden_dim, dv = cfg.embed_dim, plen = cfg.patch_len();
  const std::size_t per_side = cfg.patches_per_side(), np = cfg.num_patches();
  const float* w = params.patch_weights.data();
  const float* m = params.mix_weights.data();

  EncoderTape<T> tape;
  tape.image = image;
  tape.hidden.assign(np * dh, T{0});
  tape.pooled.assign(dh, T{0});
  std::vector<T> patch(plen);
  for (std::size_t py = 0; py < per_side; ++py) {
    for (std::size_t px = 0; px < per_side; ++px) {
      const std::size_t p = py * per_side + px;
      gather_patch(cfg, image.data(), py, px, patch.data());
      T* h = tape.hidden.data() + p * dh;
      for (std::size_t j = 0; j < dh; ++j) {
        const float* wr = w + j * plen;
        T z{0};
        for (std::size_t k = 0; k < plen; ++k) z += static_cast<T>(wr[k]) * patch[k];
        h[j] = std::tanh(z);
        tape.pooled[j] += h[j];
      }
    }
  }
  const T inv_np = T{1} / static_cast<T>(np);
  for (T& v : tape.pooled) v *= inv_np;

  tape.mixed.assign(dv, T{0});
  T norm2{0};
  for (std::size_t i = 0; i < dv; ++i) {
    const float* mr = m + i * dh;
    T y{0};
    for (std::size_t j = 0; j < dh; ++j) y += static_cast<T>(mr[j]) * tape.pooled[j];
    tape.mixed[i] = y;
    norm2 += y * y;
  }
  tape.norm = std::sqrt(norm2);
  tape.embedding = BasicTensor<T>({dv});
  if (tape.norm == T{0}) {
    tape.degenerate = true;
  } else {
    for (std::size_t i = 0; i < dv; ++i) tape.embedding[i] = tape.mixed[i] / tape.norm;
  }
  return tape;
}

namespace {

// d<u, e>/d(mixed) for e = mixed / |mixed|.
template <typename T>
std::vector<T> grad_mixed(const EncoderTape<T>& tape, const BasicTensor<T>& upstream) {
  const std::size_t dv = tape.embedding.size();
  T ue{0};
  for (std::size_t i = 0; i < dv; ++i) ue += upstream[i] * tape.embedding[i];
  std::vector<T> gy(dv);
  for (std::size_t i = 0; i < dv; ++i) gy[i] = (upstream[i] - tape.embedding[i] * ue) / tape.norm;
  return gy;
}

template <typename T>
void check_upstream(const EncoderParams& params, const BasicTensor<T>& upstream) {
  if (upstream.size() != params.config.embed_dim) {
    throw ShapeError(
        fmt::format("encoder upstream must have length {}, got {}", params.config.embed_dim, upstream.size()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> encode_backward(const EncoderParams& params, const EncoderTape<T>& tape,
                               const BasicTensor<T>& upstream) {
  check_upstream(params, upstream);
  const EncoderConfig& cfg = params.config;
  BasicTensor<T> grad(cfg.image_shape());
  if (tape.degenerate) return grad;
  const std::size_t dh = cfg.hidden_dim, dv = cfg.embed_dim, plen = cfg.patch_len();
  const std::size_t per_side = cfg.patches_per_side(), np = cfg.num_patches();
  const float* w = params.patch_weights.data();
  const float* m = params.mix_weights.data();

  const std::vector<T> gy = grad_mixed(tape, upstream);
  std::vector<T> gh(dh, T{0});
  for (std::size_t i = 0; i < dv; ++i) {
    const float* mr = m + i * dh;
    for (std::size_t j = 0; j < dh; ++j) gh[j] += static_cast<T>(mr[j]) * gy[i];
  }
  const T inv_np = T{1} / static_cast<T>(np);
  for (T& v : gh) v *= inv_np;

  std::vector<T> gz(dh), gpatch(plen);
  for (std::size_t py = 0; py < per_side; ++py) {
    for (std::size_t px = 0; px < per_side; ++px) {
      const T* h = tape.hidden.data() + (py * per_side + px) * dh;
      for (std::size_t j = 0; j < dh; ++j) gz[j] = gh[j] * (T{1} - h[j] * h[j]);
      std::fill(gpatch.begin(), gpatch.end(), T{0});
      for (std::size_t j = 0; j < dh; ++j) {
        const float* wr = w + j * plen;
        const T g = gz[j];
        for (std::size_t k = 0; k < plen; ++k) gpatch[k] += static_cast<T>(wr[k]) * g;
      }
      scatter_patch_add(cfg, gpatch.data(), py, px, grad.data());
    }
  }
  return grad;
}

template <typename T>
EncoderWeightGrad<T> encode_weight_backward(const EncoderParams& params, const EncoderTape<T>& tape,
                                            const BasicTensor<T>& upstream) {
  check_upstream(params, upstream);
  const EncoderConfig& cfg = params.config;
  const std::size_t dh = cfg.hidden_dim, dv = cfg.embed_dim, plen = cfg.patch_len();
  const std::size_t per_side = cfg.patches_per_side(), np = cfg.num_patches();
  EncoderWeightGrad<T> out{BasicTensor<T>({dh, plen}), BasicTensor<T>({dv, dh})};
  if (tape.degenerate) return out;
  const float* m = params.mix_weights.data();

  const std::vector<T> gy = grad_mixed(tape, upstream);
  std::vector<T> gh(dh, T{0});
  for (std::size_t i = 0; i < dv; ++i) {
    const float* mr = m + i * dh;
    for (std::size_t j = 0; j < dh; ++j) {
      out.mix_weights[i * dh + j] = gy[i] * tape.pooled[j];
      gh[j] += static_cast<T>(mr[j]) * gy[i];
    }
  }
  const T inv_np = T{1} / static_cast<T>(np);
  for (T& v : gh) v *= inv_np;

  std::vector<T> patch(plen);
  for (std::size_t py = 0; py < per_side; ++py) {
    for (std::size_t px = 0; px < per_side; ++px) {
      const T* h = tape.hidden.data() + (py * per_side + px) * dh;
      gather_patch(cfg, tape.image.data(), py, px, patch.data());
      for (std::size_t j = 0; j < dh; ++j) {
        const T gz = gh[j] * (T{1} - h[j] * h[j]);
        T* row = out.patch_weights.data() + j * plen;
        for (std::size_t k = 0; k < plen; ++k) row[k] += gz * patch[k];
      }
    }
  }
  return out;
}

template <typename T>
Encoding<T> encode_ex(const EncoderParams& params, const BasicTensor<T>& image) {
  EncoderTape<T> tape = encode_forward(params, image);
  return {std::move(tape.embedding), tape.degenerate};
}

template <typename T>
BasicTensor<T> encode_vjp(const EncoderParams& params, const BasicTensor<T>& image, const BasicTensor<T>& upstream) {
  check_upstream(params, upstream);
  return encode_backward(params, encode_forward(params, image), upstream);
}

Tensor encode_batch(const EncoderParams& params, const std::vector<Tensor>& images) {
  if (images.empty()) throw ShapeError("encode_batch: no images");
  const std::size_t dv = params.config.embed_dim;
  Tensor out({images.size(), dv});
  parallel_for(images.size(), [&](std::size_t i) {
    const Tensor e = encode(params, images[i]);
    std::copy(e.begin(), e.end(), out.row(i).begin());
  });
  return out;
}

double empirical_lipschitz(const EncoderParams& params, std::uint64_t seed, std::size_t probes, double delta_scale) {
  Rng rng(seed);
  double worst = 0.0;
  const Shape shape = params.config.image_shape();
  for (std::size_t t = 0; t < probes; ++t) {
    Tensor v(shape), d(shape);
    for (float& x : v) x = static_cast<float>(rng.uniform(0.1, 0.9));
    for (float& x : d) x = static_cast<float>(rng.uniform(-delta_scale, delta_scale));
    Tensor vd = v;
    for (std::size_t i = 0; i < vd.size(); ++i) vd[i] += d[i];
    const Tensor a = encode(params, v), b = encode(params, vd);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) num += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
    for (float x : d) den += double(x) * x;
    if (den > 0.0) worst = std::max(worst, std::sqrt(num / den));
  }
  return worst;
}

template EncoderTape<float> encode_forward(const EncoderParams&, const Tensor&);
template EncoderTape<double> encode_forward(const EncoderParams&, const TensorD&);
template Tensor encode_backward(const EncoderParams&, const EncoderTape<float>&, const Tensor&);
template TensorD encode_backward(const EncoderParams&, const EncoderTape<double>&, const TensorD&);
template EncoderWeightGrad<float> encode_weight_backward(const EncoderParams&, const EncoderTape<float>&,
                                                         const Tensor&);
template EncoderWeightGrad<double> encode_weight_backward(const EncoderParams&, const EncoderTape<double>&,
                                                          const TensorD&);
template Encoding<float> encode_ex(const EncoderParams&, const Tensor&);
template Encoding<double> encode_ex(const EncoderParams&, const TensorD&);
template Tensor encode_vjp(const EncoderParams&, const Tensor&, const Tensor&);
template TensorD encode_vjp(const EncoderParams&, const TensorD&, const TensorD&);

}  // namespace mtb
