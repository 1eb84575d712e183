#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "engraf/data.hpp"
#include "engraf/model.hpp"

namespace engraf {

struct Heatmap {
  Tensor<float> values;  // H' x W', in [0, 1]
  Branch source_branch = Branch::fine;
  int target_class = 0;
  Head target_head = Head::fc0;
};

/// The head a branch feeds directly: fine -> fc1, coarse -> fc2,
/// graft-main -> fc3, graft-sub -> fc4. The resnet variant only has fc0.
Head default_head(Branch b, Variant v);

/// ReLU(sum_k alpha_k A_k) with alpha_k the spatial mean of dA_k, divided by
/// its maximum. `activation` and `grad` are 1 x C x H x W. A map whose maximum
/// is not positive is returned as all zeros.
Tensor<float> cam_map(const Tensor<float>& activation, const Tensor<float>& grad);

/// Grad-CAM of z_head[cls] with respect to the branch's last pre-pool activation.
/// Errors: UnknownBranch, MissingHead, ClassOutOfRange, ShapeMismatch.
Heatmap grad_cam(const Model<float>& model, const Tensor<float>& image, Branch branch, Head head, int cls,
                 kernels::Backend backend = kernels::Backend::parallel);

/// Bilinear (half-pixel centers) resize of an H' x W' map.
Tensor<float> upsample_bilinear(const Tensor<float>& map, std::size_t height, std::size_t width);

/// Fixed jet-style colormap, value in [0, 1] -> RGB.
std::array<std::uint8_t, 3> colormap(float value);

/// Interleaved RGB of the overlay: (1 - alpha) * image + alpha * colormap(map).
std::vector<std::uint8_t> overlay_pixels(const Heatmap& map, const ImageRecord& image, int image_size, double alpha);

/// Writes the overlay as an 8-bit RGB PNG with the image's dimensions (Io on failure).
void render_overlay(const Heatmap& map, const ImageRecord& image, int image_size, double alpha,
                    const std::filesystem::path& out);

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb);
/// Reads an 8-bit RGB PNG back (used by tests and tools).
std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::size_t& width, std::size_t& height);

}  // namespace engraf
