#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "engraf/layers.hpp"

namespace engraf {

enum class Variant { resnet, two_branch, graft, engraf };
enum class Stem { cifar, imagenet };

/// FC_0 .. FC_4. fc0 sees the concatenated features; fc1/fc3 predict fine
/// classes from the fine branch and the graft main path; fc2/fc4 predict coarse
/// classes from the coarse branch and the graft sub-network.
enum class Head { fc0 = 0, fc1, fc2, fc3, fc4 };
inline constexpr std::size_t kNumHeads = 5;
inline constexpr std::array<Head, kNumHeads> kAllHeads{Head::fc0, Head::fc1, Head::fc2, Head::fc3, Head::fc4};

enum class Branch { fine = 0, coarse, graft_main, graft_sub };
inline constexpr std::size_t kNumBranches = 4;

std::string_view to_string(Variant v);
std::string_view to_string(Stem s);
std::string_view to_string(Head h);
std::string_view to_string(Branch b);
Variant parse_variant(std::string_view s);  // InvalidConfig on unknown names
Stem parse_stem(std::string_view s);
Head parse_head(std::string_view s);
Branch parse_branch(std::string_view s);  // UnknownBranch

/// True for fc1, fc3 and fc0 (fine classes); false for fc2, fc4.
bool head_is_fine(Head h);

struct EngrafConfig {
  int backbone_depth = 18;
  Variant variant = Variant::engraf;
  int graft_size = 4;
  int hierarchy_depth = 1;
  int num_fine = 100;
  int num_coarse = 20;
  int input_size = 32;
  Stem stem = Stem::cifar;
  int base_width = 64;
  // Optional overrides for small test networks. When set they replace the
  // backbone's per-stage block counts and widths; the last two stages always
  // belong to the branches.
  std::vector<int> stage_blocks;
  std::vector<int> stage_widths;

  friend bool operator==(const EngrafConfig&, const EngrafConfig&) = default;
};

/// Throws InvalidConfig when an invariant does not hold.
void validate_config(const EngrafConfig& cfg);

std::vector<int> resolved_stage_blocks(const EngrafConfig& cfg);
std::vector<int> resolved_stage_widths(const EngrafConfig& cfg);
nn::BlockKind block_kind(const EngrafConfig& cfg);

/// Heads the variant produces, in FC index order.
std::vector<Head> heads_for(Variant v);
/// Branches whose pre-pool activation exists for the variant.
std::vector<Branch> branches_for(Variant v);

template <typename T>
struct HeadLogits {
  std::array<std::optional<Tensor<T>>, kNumHeads> z;

  bool has(Head h) const { return z[static_cast<std::size_t>(h)].has_value(); }
  const Tensor<T>& at(Head h) const;  // MissingHead when absent
  std::vector<Head> present() const;
};

template <typename T>
using HeadGrads = std::array<std::optional<Tensor<T>>, kNumHeads>;

template <typename T>
struct BranchCache {
  nn::StageCache<T> mid;   // first branch stage
  nn::StageCache<T> last;  // last stage
  nn::PoolCache pool;
  std::vector<nn::ConvUnitCache<T>> graft;
  nn::PoolCache graft_pool;
};

/// Everything backward needs from one forward pass. Also exposes the
/// pre-pool activations used by Grad-CAM.
template <typename T>
struct ForwardCache {
  nn::ConvUnitCache<T> stem;
  nn::PoolCache stem_pool;
  std::vector<nn::StageCache<T>> trunk;
  std::array<std::optional<BranchCache<T>>, 3> branches;  // fine, coarse, graft
  std::array<nn::LinearCache<T>, kNumHeads> heads;

  /// Last stage output of the branch, or the last graft block output for
  /// graft_sub. UnknownBranch when the forward pass did not produce it.
  const Tensor<T>& activation(Branch b) const;
};

template <typename T>
struct BackwardResult {
  std::array<std::optional<Tensor<T>>, kNumBranches> activation_grads;
};

template <typename T>
class Network;

/// EnGraf-Net: shared trunk, per-variant branches, graft sub-network and the
/// five linear heads. Copy is deep; moving keeps parameter addresses stable.
template <typename T>
class Model {
 public:
  Model(const EngrafConfig& cfg, std::uint64_t init_seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  Model(const Model& other);
  Model& operator=(const Model& other);

  const EngrafConfig& config() const { return cfg_; }

  /// Train mode requires ctx.trace (batch statistics are appended there).
  HeadLogits<T> forward(const Tensor<T>& x, const nn::Context<T>& ctx, ForwardCache<T>* cache = nullptr) const;

  /// Accumulates parameter gradients into ctx.trace (unless disabled there).
  /// Absent entries of `dz` contribute nothing.
  BackwardResult<T> backward(const ForwardCache<T>& cache, const HeadGrads<T>& dz, const nn::Context<T>& ctx,
                             bool want_activation_grads = false) const;

  /// Folds the batch statistics recorded in a train-mode trace into the
  /// running statistics.
  void update_running_stats(const nn::Trace<T>& trace);

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;
  std::vector<nn::Buffer<T>> buffers();
  std::vector<std::pair<std::string, const Tensor<T>*>> buffers() const;

  bool has_head(Head h) const;
  const nn::Linear<T>& head(Head h) const;
  nn::Linear<T>& head(Head h);
  std::size_t fine_feature_dim() const;   // D_f
  std::size_t graft_feature_dim() const;  // D_g

  /// Converts weights and running statistics to another precision.
  template <typename U>
  Model<U> cast() const;

 private:
  EngrafConfig cfg_;
  std::unique_ptr<Network<T>> net_;
};

template <typename T>
Model<T> build_model(const EngrafConfig& cfg, std::uint64_t init_seed) {
  return Model<T>(cfg, init_seed);
}

/// Scalar parameters: conv weights, batch-norm affine terms, linear weights and biases.
template <typename T>
std::size_t param_count(const Model<T>& model);

}  // namespace engraf

namespace engraf {

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out(cfg_, 0);
  const auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
  const auto src_buf = buffers();
  auto dst_buf = out.buffers();
  for (std::size_t i = 0; i < src_buf.size(); ++i) *dst_buf[i].value = src_buf[i].second->template cast<U>();
  return out;
}

}  // namespace engraf
