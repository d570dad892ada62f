#include "mtb/evalguard/transforms.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/rng.hpp"

namespace mtb {

void TransformSpec::validate() const {
  switch (kind) {
    case TransformKind::blur:
      if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError(fmt::format("blur sigma must be > 0, got {}", sigma));
      break;
    case TransformKind::crop_resize:
      if (!(crop_fraction > 0.5 && crop_fraction <= 1.0)) {
        throw ConfigError(fmt::format("crop fraction must be in (0.5, 1], got {}", crop_fraction));
      }
      break;
    case TransformKind::quantize:
      if (bits < 2 || bits > 8) throw ConfigError(fmt::format("quantize bits must be in 2..8, got {}", bits));
      break;
  }
}

std::string TransformSpec::to_string() const {
  switch (kind) {
    case TransformKind::blur: return fmt::format("blur:{}", sigma);
    case TransformKind::crop_resize: return fmt::format("crop:{}", crop_fraction);
    case TransformKind::quantize: return fmt::format("quantize:{}", bits);
  }
  return "?";
}

TransformSpec TransformSpec::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw ConfigError(fmt::format("transform '{}' must look like kind:parameter", text));
  }
  const std::string_view kind = text.substr(0, colon);
  const std::string arg(text.substr(colon + 1));
  std::size_t used = 0;
  TransformSpec spec;
  try {
    if (kind == "blur") {
      spec = blur_spec(std::stod(arg, &used));
    } else if (kind == "crop") {
      spec = crop_spec(std::stod(arg, &used));
    } else if (kind == "quantize") {
      spec = quantize_spec(std::stoi(arg, &used));
    } else {
      throw ConfigError(fmt::format("unknown transform kind '{}'", kind));
    }
  } catch (const std::logic_error&) {
    throw ConfigError(fmt::format("transform '{}' has a malformed parameter", text));
  }
  if (used != arg.size()) throw ConfigError(fmt::format("transform '{}' has trailing characters", text));
  spec.validate();
  return spec;
}

TransformSpec blur_spec(double sigma) {
  TransformSpec s;
  s.kind = TransformKind::blur;
  s.sigma = sigma;
  return s;
}

TransformSpec crop_spec(double fraction, std::uint64_t seed) {
  TransformSpec s;
  s.kind = TransformKind::crop_resize;
  s.crop_fraction = fraction;
  s.seed = seed;
  return s;
}

TransformSpec quantize_spec(int bits) {
  TransformSpec s;
  s.kind = TransformKind::quantize;
  s.bits = bits;
  return s;
}

TransformSpec reseeded(const TransformSpec& spec, std::uint64_t stream) {
  TransformSpec s = spec;
  s.seed = mix_seed(spec.seed, stream);
  return s;
}

namespace {

struct Dims {
  std::size_t channels, height, width;
};

Dims image_dims(const Shape& shape) {
  if (shape.size() != 3) throw ShapeError(fmt::format("transform expects CxHxW, got {}", shape_to_string(shape)));
  return {shape[0], shape[1], shape[2]};
}

std::size_t reflect(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<long>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

std::vector<double> gaussian_kernel(double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (long t = -radius; t <= radius; ++t) {
    k[t + radius] = std::exp(-0.5 * (t * t) / (sigma * sigma));
    total += k[t + radius];
  }
  for (double& v : k) v /= total;
  return k;
}

// One-dimensional pass along rows (horizontal) or columns (vertical).
// adjoint=true applies the transpose.
template <typename T>
BasicTensor<T> blur_pass(const BasicTensor<T>& in, const std::vector<double>& kernel, bool horizontal, bool adjoint) {
  const Dims d = image_dims(in.shape());
  const long radius = static_cast<long>(kernel.size() / 2);
  BasicTensor<T> out(in.shape());
  const std::size_t len = horizontal ? d.width : d.height;
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (std::size_t line = 0; line < (horizontal ? d.height : d.width); ++line) {
      auto at = [&](std::size_t pos) {
        return c * d.height * d.width + (horizontal ? line * d.width + pos : pos * d.width + line);
      };
      for (std::size_t o = 0; o < len; ++o) {
        if (!adjoint) {
          double acc = 0.0;
          for (long t = -radius; t <= radius; ++t) {
            acc += kernel[t + radius] * in[at(reflect(static_cast<long>(o) + t, len))];
          }
          out[at(o)] = static_cast<T>(acc);
        } else {
          const double g = in[at(o)];
          for (long t = -radius; t <= radius; ++t) {
            const std::size_t src = reflect(static_cast<long>(o) + t, len);
            out[at(src)] += static_cast<T>(kernel[t + radius] * g);
          }
        }
      }
    }
  }
  return out;
}

struct CropWindow {
  std::size_t top, left, height, width;
};

CropWindow crop_window(const Dims& d, const TransformSpec& spec) {
  CropWindow w;
  w.height = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(spec.crop_fraction * d.height)), 1, d.height);
  w.width = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(spec.crop_fraction * d.width)), 1, d.width);
  Rng rng(spec.seed);
  w.top = rng.below(d.height - w.height + 1);
  w.left = rng.below(d.width - w.width + 1);
  return w;
}

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of hi
};

// Corner-aligned source coordinate for output index `o` of `out_len` samples
// drawn from [offset, offset + crop_len).
Tap bilinear_tap(std::size_t o, std::size_t out_len, std::size_t offset, std::size_t crop_len) {
  if (out_len == 1 || crop_len == 1) return {offset, offset, 0.0};
  const double s = static_cast<double>(o) * static_cast<double>(crop_len - 1) / static_cast<double>(out_len - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(s));
  if (lo > crop_len - 1) lo = crop_len - 1;
  const std::size_t hi = std::min(lo + 1, crop_len - 1);
  return {offset + lo, offset + hi, s - static_cast<double>(lo)};
}

template <typename T>
BasicTensor<T> crop_resize(const BasicTensor<T>& in, const TransformSpec& spec, bool adjoint) {
  const Dims d = image_dims(in.shape());
  const CropWindow w = crop_window(d, spec);
  BasicTensor<T> out(in.shape());
  for (std::size_t y = 0; y < d.height; ++y) {
    const Tap ty = bilinear_tap(y, d.height, w.top, w.height);
    for (std::size_t x = 0; x < d.width; ++x) {
      const Tap tx = bilinear_tap(x, d.width, w.left, w.width);
      const double w00 = (1 - ty.frac) * (1 - tx.frac), w01 = (1 - ty.frac) * tx.frac;
      const double w10 = ty.frac * (1 - tx.frac), w11 = ty.frac * tx.frac;
      for (std::size_t c = 0; c < d.channels; ++c) {
        const std::size_t base = c * d.height * d.width;
        const std::size_t i00 = base + ty.lo * d.width + tx.lo, i01 = base + ty.lo * d.width + tx.hi;
        const std::size_t i10 = base + ty.hi * d.width + tx.lo, i11 = base + ty.hi * d.width + tx.hi;
        const std::size_t o = base + y * d.width + x;
        if (!adjoint) {
          out[o] = static_cast<T>(w00 * in[i00] + w01 * in[i01] + w10 * in[i10] + w11 * in[i11]);
        } else {
          const double g = in[o];
          out[i00] += static_cast<T>(w00 * g);
          out[i01] += static_cast<T>(w01 * g);
          out[i10] += static_cast<T>(w10 * g);
          out[i11] += static_cast<T>(w11 * g);
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> transform_apply(const BasicTensor<T>& image, const TransformSpec& spec) {
  spec.validate();
  image_dims(image.shape());
  BasicTensor<T> out;
  switch (spec.kind) {
    case TransformKind::blur: {
      const auto k = gaussian_kernel(spec.sigma);
      out = blur_pass(blur_pass(image, k, true, false), k, false, false);
      break;
    }
    case TransformKind::crop_resize:
      out = crop_resize(image, spec, false);
      break;
    case TransformKind::quantize: {
      out = image;
      const double levels = std::ldexp(1.0, spec.bits) - 1.0;
      for (T& v : out) v = static_cast<T>(std::ceil(static_cast<double>(v) * levels - 0.5) / levels);
      break;
    }
  }
  for (T& v : out) v = std::clamp(v, T{0}, T{1});
  return out;
}

template <typename T>
BasicTensor<T> transform_vjp(const Shape& shape, const TransformSpec& spec, const BasicTensor<T>& grad_out) {
  spec.validate();
  if (grad_out.shape() != shape) {
    throw ShapeError(fmt::format("transform_vjp: gradient shape {} vs image shape {}", shape_to_string(grad_out.shape()),
                                 shape_to_string(shape)));
  }
  switch (spec.kind) {
    case TransformKind::blur: {
      const auto k = gaussian_kernel(spec.sigma);
      return blur_pass(blur_pass(grad_out, k, false, true), k, true, true);
    }
    case TransformKind::crop_resize:
      return crop_resize(grad_out, spec, true);
    case TransformKind::quantize:
      return grad_out;
  }
  return grad_out;
}

template Tensor transform_apply(const Tensor&, const TransformSpec&);
template TensorD transform_apply(const TensorD&, const TransformSpec&);
template Tensor transform_vjp(const Shape&, const TransformSpec&, const Tensor&);
template TensorD transform_vjp(const Shape&, const TransformSpec&, const TensorD&);

}  // namespace mtb
