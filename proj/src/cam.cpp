#include "engraf/cam.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "engraf/error.hpp"

namespace engraf {

Head default_head(Branch b, Variant v) {
  if (v == Variant::resnet) return Head::fc0;
  switch (b) {
    case Branch::fine: return Head::fc1;
    case Branch::coarse: return Head::fc2;
    case Branch::graft_main: return Head::fc3;
    case Branch::graft_sub: return Head::fc4;
  }
  return Head::fc0;
}

Tensor<float> cam_map(const Tensor<float>& activation, const Tensor<float>& grad) {
  if (activation.rank() != 4 || activation.dim(0) != 1 || activation.shape() != grad.shape()) {
    throw Error(ErrorKind::ShapeMismatch, "Grad-CAM needs matching 1 x C x H x W activation and gradient");
  }
  const std::size_t channels = activation.dim(1), h = activation.dim(2), w = activation.dim(3), hw = h * w;
  Tensor<float> map({h, w});
  std::vector<double> acc(hw, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const float* g = grad.data() + c * hw;
    double alpha = 0.0;
    for (std::size_t i = 0; i < hw; ++i) alpha += g[i];
    alpha /= static_cast<double>(hw);
    if (alpha == 0.0) continue;
    const float* a = activation.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) acc[i] += alpha * a[i];
  }
  double peak = 0.0;
  for (auto& v : acc) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  if (peak > 0.0) {
    for (std::size_t i = 0; i < hw; ++i) map[i] = static_cast<float>(acc[i] / peak);
  }
  return map;
}

Heatmap grad_cam(const Model<float>& model, const Tensor<float>& image, Branch branch, Head head, int cls,
                 kernels::Backend backend) {
  const auto& cfg = model.config();
  const auto branches = branches_for(cfg.variant);
  if (std::find(branches.begin(), branches.end(), branch) == branches.end()) {
    throw Error(ErrorKind::UnknownBranch, "variant " + std::string(to_string(cfg.variant)) + " has no " +
                                              std::string(to_string(branch)) + " branch");
  }
  const auto& linear = model.head(head);
  if (cls < 0 || static_cast<std::size_t>(cls) >= linear.out_features()) {
    throw Error(ErrorKind::ClassOutOfRange, "class " + std::to_string(cls) + " outside [0, " +
                                                std::to_string(linear.out_features()) + ") for head " +
                                                std::string(to_string(head)));
  }
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw Error(ErrorKind::ShapeMismatch, "Grad-CAM takes a single 1 x 3 x H x W image, got " +
                                              shape_string(image.shape()));
  }

  nn::Trace<float> trace;
  trace.accumulate_param_grads = false;
  const nn::Context<float> ctx{nn::Mode::eval, backend, &trace};
  ForwardCache<float> cache;
  model.forward(image, ctx, &cache);
  HeadGrads<float> dz;
  auto& seed = dz[static_cast<std::size_t>(head)].emplace(Shape{1, linear.out_features()});
  seed[static_cast<std::size_t>(cls)] = 1.0f;
  const auto result = model.backward(cache, dz, ctx, true);

  Heatmap out;
  out.values = cam_map(cache.activation(branch), *result.activation_grads[static_cast<std::size_t>(branch)]);
  out.source_branch = branch;
  out.target_class = cls;
  out.target_head = head;
  return out;
}

Tensor<float> upsample_bilinear(const Tensor<float>& map, std::size_t height, std::size_t width) {
  const std::size_t h = map.dim(0), w = map.dim(1);
  Tensor<float> out({height, width});
  auto source = [](std::size_t i, std::size_t out_n, std::size_t in_n, std::size_t& i0, std::size_t& i1, float& t) {
    const double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    const double clamped = std::clamp(pos, 0.0, static_cast<double>(in_n - 1));
    i0 = static_cast<std::size_t>(std::floor(clamped));
    i1 = std::min(i0 + 1, in_n - 1);
    t = static_cast<float>(clamped - static_cast<double>(i0));
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    float ty;
    source(y, height, h, y0, y1, ty);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      float tx;
      source(x, width, w, x0, x1, tx);
      const float top = map.at(y0, x0) * (1 - tx) + map.at(y0, x1) * tx;
      const float bottom = map.at(y1, x0) * (1 - tx) + map.at(y1, x1) * tx;
      out.at(y, x) = top * (1 - ty) + bottom * ty;
    }
  }
  return out;
}

std::array<std::uint8_t, 3> colormap(float value) {
  const float v = std::clamp(value, 0.0f, 1.0f);
  auto channel = [v](float center) {
    const float c = std::clamp(1.5f - std::abs(4.0f * v - center), 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(255.0f * c));
  };
  return {channel(3.0f), channel(2.0f), channel(1.0f)};
}

std::vector<std::uint8_t> overlay_pixels(const Heatmap& map, const ImageRecord& image, int image_size, double alpha) {
  const auto n = static_cast<std::size_t>(image_size);
  if (image.pixels.size() != 3 * n * n) throw Error(ErrorKind::ShapeMismatch, "image does not match its size");
  const Tensor<float> up = upsample_bilinear(map.values, n, n);
  std::vector<std::uint8_t> rgb(3 * n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const auto color = colormap(up.at(y, x));
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = image.pixels[c * n * n + y * n + x];
        const double mixed = (1.0 - alpha) * base + alpha * color[c];
        rgb[3 * (y * n + x) + c] = static_cast<std::uint8_t>(std::clamp(std::lround(mixed), 0L, 255L));
      }
    }
  }
  return rgb;
}

void render_overlay(const Heatmap& map, const ImageRecord& image, int image_size, double alpha,
                    const std::filesystem::path& out) {
  const auto n = static_cast<std::size_t>(image_size);
  write_png(out, n, n, overlay_pixels(map, image, image_size, alpha));
}

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorKind::Io, "cannot write " + path.string() + ": " + msg);
  }
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(ErrorKind::Io, "cannot read " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorKind::Io, "cannot decode " + path.string() + ": " + msg);
  }
  width = img.width;
  height = img.height;
  return rgb;
}

}  // namespace engraf
