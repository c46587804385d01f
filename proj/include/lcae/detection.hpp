#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "lcae/image.hpp"
#include "lcae/model.hpp"

namespace lcae {

// Per-pixel anomaly scores |x - x'|, row-major.
struct ResidualMap {
  int rows = 0;
  int cols = 0;
  std::vector<float> scores;

  float operator()(int r, int c) const { return scores[static_cast<std::size_t>(r * cols + c)]; }
  std::size_t size() const noexcept { return scores.size(); }
};

struct Detection {
  Image image;
  Image reconstruction;
  ResidualMap residual;
};

inline ResidualMap residual_map(const Image& x, const Image& x_prime) {
  if (!x.same_shape(x_prime)) throw ContractError("residual_map: shape mismatch");
  ResidualMap r{x.rows, x.cols, std::vector<float>(x.pixels.size())};
  for (std::size_t i = 0; i < x.pixels.size(); ++i) r.scores[i] = std::fabs(x.pixels[i] - x_prime.pixels[i]);
  for (float v : r.scores) {
    if (!std::isfinite(v)) throw NumericalError("residual_map", "non-finite residual");
  }
  return r;
}

namespace detail {

template <class T>
void check_input(const Model<T>& m, const Image& image) {
  if (image.rows != m.arch.image_size || image.cols != m.arch.image_size) {
    throw ContractError("image is " + std::to_string(image.rows) + "x" + std::to_string(image.cols) +
                        ", model expects " + std::to_string(m.arch.image_size));
  }
  if (const auto bad = count_non_finite(image.pixels)) throw DataIntegrityError("image has non-finite pixels", bad);
}

}  // namespace detail

// decode(encode(x)); the VAE decodes its posterior mean.
template <class T>
Image reconstruct(const Model<T>& m, const Image& image) {
  detail::check_input(m, image);
  const Matrix<T> z = encode_codes(m, std::span<const Image>(&image, 1));
  return decode_batch(m, z).front();
}

// Images are processed one at a time, so each output depends on its own input only.
template <class T>
std::vector<Detection> detect(const Model<T>& m, std::span<const Image> images) {
  std::vector<Detection> out;
  out.reserve(images.size());
  for (const auto& im : images) {
    Image rec = reconstruct(m, im);
    ResidualMap res = residual_map(im, rec);
    out.push_back({im, std::move(rec), std::move(res)});
  }
  return out;
}

template <class T>
std::vector<Detection> detect(const Model<T>& m, const Dataset& data) {
  return detect(m, std::span<const Image>(data.images));
}

}  // namespace lcae
