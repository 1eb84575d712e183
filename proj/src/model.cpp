#include "engraf/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "engraf/error.hpp"

namespace engraf {

// Names --------------------------------------------------------------------------

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::resnet: return "resnet";
    case Variant::two_branch: return "two_branch";
    case Variant::graft: return "graft";
    case Variant::engraf: return "engraf";
  }
  return "?";
}

std::string_view to_string(Stem s) { return s == Stem::cifar ? "cifar" : "imagenet"; }

std::string_view to_string(Head h) {
  static constexpr std::array<std::string_view, kNumHeads> names{"fc0", "fc1", "fc2", "fc3", "fc4"};
  return names[static_cast<std::size_t>(h)];
}

std::string_view to_string(Branch b) {
  static constexpr std::array<std::string_view, kNumBranches> names{"fine", "coarse", "graft-main", "graft-sub"};
  return names[static_cast<std::size_t>(b)];
}

Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::resnet, Variant::two_branch, Variant::graft, Variant::engraf}) {
    if (s == to_string(v)) return v;
  }
  if (s == "two-branch") return Variant::two_branch;
  throw Error(ErrorKind::InvalidConfig, "unknown variant '" + std::string(s) + "'");
}

Stem parse_stem(std::string_view s) {
  if (s == "cifar") return Stem::cifar;
  if (s == "imagenet") return Stem::imagenet;
  throw Error(ErrorKind::InvalidConfig, "unknown stem '" + std::string(s) + "'");
}

Head parse_head(std::string_view s) {
  for (auto h : kAllHeads) {
    if (s == to_string(h)) return h;
  }
  throw Error(ErrorKind::MissingHead, "unknown head '" + std::string(s) + "'");
}

Branch parse_branch(std::string_view s) {
  for (std::size_t i = 0; i < kNumBranches; ++i) {
    const auto b = static_cast<Branch>(i);
    std::string underscored(to_string(b));
    for (auto& c : underscored) c = c == '-' ? '_' : c;
    if (s == to_string(b) || s == underscored) return b;
  }
  throw Error(ErrorKind::UnknownBranch, "unknown branch '" + std::string(s) + "'");
}

bool head_is_fine(Head h) { return h == Head::fc0 || h == Head::fc1 || h == Head::fc3; }

// Config -------------------------------------------------------------------------

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); }

bool known_depth(int d) { return d == 18 || d == 50 || d == 101 || d == 152; }

}  // namespace

void validate_config(const EngrafConfig& cfg) {
  if (!known_depth(cfg.backbone_depth)) invalid("backbone depth must be 18, 50, 101 or 152");
  if ((cfg.variant == Variant::graft || cfg.variant == Variant::engraf) && cfg.graft_size < 1) {
    invalid("variant " + std::string(to_string(cfg.variant)) + " needs graft size >= 1");
  }
  if (cfg.graft_size < 0) invalid("graft size must be non-negative");
  if (cfg.hierarchy_depth != 1) invalid("only hierarchy depth 1 is supported");
  if (cfg.num_coarse < 1 || cfg.num_fine <= cfg.num_coarse) invalid("class counts need 1 <= coarse < fine");
  if (cfg.input_size < 1) invalid("input size must be positive");
  if (cfg.base_width < 1) invalid("base width must be positive");
  if (cfg.stage_blocks.size() != cfg.stage_widths.size()) invalid("stage_blocks and stage_widths differ in length");
  if (!cfg.stage_blocks.empty()) {
    if (cfg.stage_blocks.size() < 2) invalid("at least two stages are needed");
    for (std::size_t i = 0; i < cfg.stage_blocks.size(); ++i) {
      if (cfg.stage_blocks[i] < 1 || cfg.stage_widths[i] < 1) invalid("stage blocks and widths must be positive");
    }
  }
}

std::vector<int> resolved_stage_blocks(const EngrafConfig& cfg) {
  if (!cfg.stage_blocks.empty()) return cfg.stage_blocks;
  switch (cfg.backbone_depth) {
    case 18: return {2, 2, 2, 2};
    case 50: return {3, 4, 6, 3};
    case 101: return {3, 4, 23, 3};
    case 152: return {3, 8, 36, 3};
    default: invalid("backbone depth must be 18, 50, 101 or 152");
  }
}

std::vector<int> resolved_stage_widths(const EngrafConfig& cfg) {
  if (!cfg.stage_widths.empty()) return cfg.stage_widths;
  const int w = cfg.base_width;
  return {w, 2 * w, 4 * w, 8 * w};
}

nn::BlockKind block_kind(const EngrafConfig& cfg) {
  return cfg.backbone_depth == 18 ? nn::BlockKind::basic : nn::BlockKind::bottleneck;
}

std::vector<Head> heads_for(Variant v) {
  switch (v) {
    case Variant::resnet: return {Head::fc0};
    case Variant::two_branch: return {Head::fc0, Head::fc1, Head::fc2};
    case Variant::graft: return {Head::fc0, Head::fc3, Head::fc4};
    case Variant::engraf: return {Head::fc0, Head::fc1, Head::fc2, Head::fc3, Head::fc4};
  }
  return {};
}

std::vector<Branch> branches_for(Variant v) {
  switch (v) {
    case Variant::resnet: return {Branch::fine};
    case Variant::two_branch: return {Branch::fine, Branch::coarse};
    case Variant::graft: return {Branch::graft_main, Branch::graft_sub};
    case Variant::engraf: return {Branch::fine, Branch::coarse, Branch::graft_main, Branch::graft_sub};
  }
  return {};
}

template <typename T>
const Tensor<T>& HeadLogits<T>::at(Head h) const {
  if (!has(h)) throw Error(ErrorKind::MissingHead, "head " + std::string(to_string(h)) + " is not present");
  return *z[static_cast<std::size_t>(h)];
}

template <typename T>
std::vector<Head> HeadLogits<T>::present() const {
  std::vector<Head> out;
  for (auto h : kAllHeads) {
    if (has(h)) out.push_back(h);
  }
  return out;
}

template <typename T>
const Tensor<T>& ForwardCache<T>::activation(Branch b) const {
  const std::size_t slot = b == Branch::graft_sub ? 2 : static_cast<std::size_t>(b);
  const auto& bc = branches[slot];
  if (!bc || bc->last.blocks.empty() || (b == Branch::graft_sub && bc->graft.empty())) {
    throw Error(ErrorKind::UnknownBranch, "branch " + std::string(to_string(b)) + " was not evaluated");
  }
  if (b == Branch::graft_sub) return bc->graft.back().relu.output;
  return bc->last.blocks.back().out.output;
}

// Network ----------------------------------------------------------------------

namespace {

// Branch slots inside the network: fine, coarse, graft.
constexpr std::size_t kFineSlot = 0, kCoarseSlot = 1, kGraftSlot = 2;

// Feature index feeding each single-feature head: fc1 <- f1, fc2 <- f2, fc3 <- f3, fc4 <- f4.
constexpr std::array<std::size_t, kNumHeads> kHeadFeature{0, 0, 1, 2, 3};

template <typename T>
Tensor<T> concat_columns(const std::vector<const Tensor<T>*>& parts) {
  const std::size_t rows = parts.front()->dim(0);
  std::size_t cols = 0;
  for (const auto* p : parts) cols += p->dim(1);
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const std::size_t w = p->dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) out.at(r, offset + c) = p->at(r, c);
    }
    offset += w;
  }
  return out;
}

template <typename T>
Tensor<T> column_slice(const Tensor<T>& t, std::size_t begin, std::size_t width) {
  const std::size_t rows = t.dim(0);
  Tensor<T> out({rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out.at(r, c) = t.at(r, begin + c);
  }
  return out;
}

template <typename T>
void add_into(std::optional<Tensor<T>>& acc, Tensor<T>&& g) {
  if (acc) {
    *acc += g;
  } else {
    acc = std::move(g);
  }
}

}  // namespace

template <typename T>
struct BranchNet {
  nn::Stage<T> mid;
  nn::Stage<T> last;
  std::vector<nn::ConvUnit<T>> graft;
};

template <typename T>
class Network {
 public:
  explicit Network(const EngrafConfig& cfg) {
    const auto blocks = resolved_stage_blocks(cfg);
    const auto widths = resolved_stage_widths(cfg);
    const auto kind = block_kind(cfg);
    const std::size_t expansion = nn::ResidualBlock<T>::expansion(kind);
    const std::size_t n_stages = blocks.size();
    const std::size_t stem_width = static_cast<std::size_t>(widths.front());

    if (cfg.stem == Stem::cifar) {
      stem = nn::ConvUnit<T>("stem", 3, stem_width, 3, 1, 1, true);
    } else {
      stem = nn::ConvUnit<T>("stem", 3, stem_width, 7, 2, 3, true);
      stem_pool = true;
    }

    auto stage_name = [](std::size_t i) { return "layer" + std::to_string(i + 1); };
    std::size_t channels = stem_width;
    for (std::size_t i = 0; i + 2 < n_stages; ++i) {
      trunk.emplace_back(stage_name(i), kind, channels, widths[i], blocks[i], i == 0 ? 1 : 2);
      channels = trunk.back().out_channels();
    }
    const std::size_t mid_i = n_stages - 2, last_i = n_stages - 1;
    d_g = static_cast<std::size_t>(widths[mid_i]) * expansion;
    d_f = static_cast<std::size_t>(widths[last_i]) * expansion;

    auto make_branch = [&](const std::string& prefix, bool with_graft) {
      BranchNet<T> b;
      b.mid = nn::Stage<T>(prefix + "." + stage_name(mid_i), kind, channels, widths[mid_i], blocks[mid_i],
                           mid_i == 0 ? 1 : 2);
      b.last = nn::Stage<T>(prefix + "." + stage_name(last_i), kind, d_g, widths[last_i], blocks[last_i], 2);
      if (with_graft) {
        for (int g = 0; g < cfg.graft_size; ++g) {
          b.graft.emplace_back(prefix + ".graft" + std::to_string(g), d_g, d_g, 3, 1, 1, true);
        }
      }
      return b;
    };

    const auto present = branches_for(cfg.variant);
    auto has = [&](Branch b) { return std::find(present.begin(), present.end(), b) != present.end(); };
    if (has(Branch::fine)) branches[kFineSlot] = make_branch("fine", false);
    if (has(Branch::coarse)) branches[kCoarseSlot] = make_branch("coarse", false);
    if (has(Branch::graft_main)) branches[kGraftSlot] = make_branch("graft", true);

    feature_dims = {branches[kFineSlot] ? d_f : 0, branches[kCoarseSlot] ? d_f : 0,
                    branches[kGraftSlot] ? d_f : 0, branches[kGraftSlot] ? d_g : 0};
    std::size_t concat_dim = 0;
    for (auto d : feature_dims) concat_dim += d;

    const auto fine = static_cast<std::size_t>(cfg.num_fine);
    const auto coarse = static_cast<std::size_t>(cfg.num_coarse);
    for (auto h : heads_for(cfg.variant)) {
      const auto i = static_cast<std::size_t>(h);
      const std::size_t in = h == Head::fc0 ? concat_dim : feature_dims[kHeadFeature[i]];
      heads[i] = nn::Linear<T>(std::string(to_string(h)), in, head_is_fine(h) ? fine : coarse);
    }
  }

  template <typename P>
  void collect(std::vector<P>& params) {
    stem.collect(params);
    for (auto& s : trunk) s.collect(params);
    for (auto& b : branches) {
      if (!b) continue;
      b->mid.collect(params);
      b->last.collect(params);
      for (auto& g : b->graft) g.collect(params);
    }
    for (auto& h : heads) {
      if (h) h->collect(params);
    }
  }

  void collect(std::vector<const nn::Parameter<T>*>& params) const {
    stem.collect(params);
    for (const auto& s : trunk) s.collect(params);
    for (const auto& b : branches) {
      if (!b) continue;
      b->mid.collect(params);
      b->last.collect(params);
      for (const auto& g : b->graft) g.collect(params);
    }
    for (const auto& h : heads) {
      if (h) h->collect(params);
    }
  }

  void collect_buffers(std::vector<nn::Buffer<T>>& out, std::vector<nn::BatchNorm2d<T>*>& layers) {
    stem.collect_buffers(out, layers);
    for (auto& s : trunk) s.collect_buffers(out, layers);
    for (auto& b : branches) {
      if (!b) continue;
      b->mid.collect_buffers(out, layers);
      b->last.collect_buffers(out, layers);
      for (auto& g : b->graft) g.collect_buffers(out, layers);
    }
  }

  nn::ConvUnit<T> stem;
  bool stem_pool = false;
  std::vector<nn::Stage<T>> trunk;
  std::array<std::optional<BranchNet<T>>, 3> branches;
  std::array<std::optional<nn::Linear<T>>, kNumHeads> heads;
  std::array<std::size_t, 4> feature_dims{};
  std::size_t d_f = 0, d_g = 0;
};

// Model --------------------------------------------------------------------------

template <typename T>
Model<T>::Model(const EngrafConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  validate_config(cfg_);
  net_ = std::make_unique<Network<T>>(cfg_);

  std::mt19937_64 rng(init_seed);
  auto params = parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    p.index = i;
    const double fan_in = static_cast<double>(p.fan_in);
    switch (p.init) {
      case nn::InitKind::he_normal: {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
        break;
      }
      case nn::InitKind::fan_in_uniform: {
        const double bound = 1.0 / std::sqrt(fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
        break;
      }
      case nn::InitKind::ones: p.value.fill(T(1)); break;
      case nn::InitKind::zeros: p.value.fill(T(0)); break;
    }
  }
  buffers();  // assigns batch-norm indices
}

template <typename T>
Model<T>::~Model() = default;
template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;

template <typename T>
Model<T>::Model(const Model& other) : cfg_(other.cfg_), net_(std::make_unique<Network<T>>(*other.net_)) {}

template <typename T>
Model<T>& Model<T>::operator=(const Model& other) {
  if (this != &other) {
    cfg_ = other.cfg_;
    net_ = std::make_unique<Network<T>>(*other.net_);
  }
  return *this;
}

template <typename T>
HeadLogits<T> Model<T>::forward(const Tensor<T>& x, const nn::Context<T>& ctx, ForwardCache<T>* cache) const {
  const auto n = static_cast<std::size_t>(cfg_.input_size);
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != n || x.dim(3) != n || x.dim(0) == 0) {
    throw Error(ErrorKind::ShapeMismatch, "expected B x 3 x " + std::to_string(n) + " x " + std::to_string(n) +
                                              " input, got " + shape_string(x.shape()));
  }
  const Network<T>& net = *net_;
  if (cache != nullptr) *cache = ForwardCache<T>{};

  Tensor<T> h = net.stem.forward(x, ctx, cache ? &cache->stem : nullptr);
  if (net.stem_pool) h = nn::max_pool_forward(h, ctx, cache ? &cache->stem_pool : nullptr);
  if (cache != nullptr) cache->trunk.resize(net.trunk.size());
  for (std::size_t i = 0; i < net.trunk.size(); ++i) {
    h = net.trunk[i].forward(h, ctx, cache ? &cache->trunk[i] : nullptr);
  }

  std::array<std::optional<Tensor<T>>, 4> feats;
  for (std::size_t slot = 0; slot < 3; ++slot) {
    const auto& b = net.branches[slot];
    if (!b) continue;
    BranchCache<T>* bc = cache ? &cache->branches[slot].emplace() : nullptr;
    Tensor<T> mid = b->mid.forward(h, ctx, bc ? &bc->mid : nullptr);
    Tensor<T> last = b->last.forward(mid, ctx, bc ? &bc->last : nullptr);
    feats[slot] = nn::global_avg_pool_forward(last, ctx, bc ? &bc->pool : nullptr);
    if (!b->graft.empty()) {
      if (bc != nullptr) bc->graft.resize(b->graft.size());
      Tensor<T> g = std::move(mid);
      for (std::size_t i = 0; i < b->graft.size(); ++i) g = b->graft[i].forward(g, ctx, bc ? &bc->graft[i] : nullptr);
      feats[3] = nn::global_max_pool_forward(g, ctx, bc ? &bc->graft_pool : nullptr);
    }
  }

  HeadLogits<T> out;
  for (auto head : kAllHeads) {
    const auto i = static_cast<std::size_t>(head);
    if (!net.heads[i]) continue;
    auto* lc = cache ? &cache->heads[i] : nullptr;
    if (head == Head::fc0) {
      std::vector<const Tensor<T>*> parts;
      for (const auto& f : feats) {
        if (f) parts.push_back(&*f);
      }
      out.z[i] = net.heads[i]->forward(concat_columns(parts), ctx, lc);
    } else {
      out.z[i] = net.heads[i]->forward(*feats[kHeadFeature[i]], ctx, lc);
    }
  }
  return out;
}

template <typename T>
BackwardResult<T> Model<T>::backward(const ForwardCache<T>& cache, const HeadGrads<T>& dz, const nn::Context<T>& ctx,
                                     bool want_activation_grads) const {
  if (ctx.trace == nullptr) throw Error(ErrorKind::InvalidConfig, "backward needs a trace");
  const Network<T>& net = *net_;
  BackwardResult<T> result;

  std::array<std::optional<Tensor<T>>, 4> dfeat;
  for (auto head : kAllHeads) {
    const auto i = static_cast<std::size_t>(head);
    if (!dz[i]) continue;
    if (!net.heads[i]) throw Error(ErrorKind::MissingHead, "no head " + std::string(to_string(head)));
    Tensor<T> d = net.heads[i]->backward(cache.heads[i], *dz[i], ctx);
    if (head == Head::fc0) {
      std::size_t offset = 0;
      for (std::size_t f = 0; f < 4; ++f) {
        if (net.feature_dims[f] == 0) continue;
        add_into(dfeat[f], column_slice(d, offset, net.feature_dims[f]));
        offset += net.feature_dims[f];
      }
    } else {
      add_into(dfeat[kHeadFeature[i]], std::move(d));
    }
  }

  std::optional<Tensor<T>> dtrunk;
  for (std::size_t slot = 0; slot < 3; ++slot) {
    const auto& b = net.branches[slot];
    if (!b) continue;
    const BranchCache<T>& bc = *cache.branches[slot];
    const bool graft_live = !b->graft.empty() && dfeat[3].has_value();
    if (!dfeat[slot] && !graft_live && !want_activation_grads) continue;

    Tensor<T> da = dfeat[slot] ? nn::global_avg_pool_backward(bc.pool, *dfeat[slot], ctx)
                               : Tensor<T>(bc.pool.input_shape);
    if (want_activation_grads) result.activation_grads[slot] = da;
    Tensor<T> dmid = b->last.backward(bc.last, da, ctx, true);
    if (!b->graft.empty()) {
      Tensor<T> dg = dfeat[3] ? nn::global_max_pool_backward(bc.graft_pool, *dfeat[3], ctx)
                              : Tensor<T>(bc.graft_pool.input_shape);
      if (want_activation_grads) result.activation_grads[static_cast<std::size_t>(Branch::graft_sub)] = dg;
      for (std::size_t i = b->graft.size(); i-- > 0;) dg = b->graft[i].backward(bc.graft[i], dg, ctx, true);
      dmid += dg;
    }
    add_into(dtrunk, b->mid.backward(bc.mid, dmid, ctx, true));
  }
  if (!dtrunk) return result;

  Tensor<T> d = std::move(*dtrunk);
  for (std::size_t i = net.trunk.size(); i-- > 0;) d = net.trunk[i].backward(cache.trunk[i], d, ctx, true);
  if (net.stem_pool) d = nn::max_pool_backward(cache.stem_pool, d, ctx);
  net.stem.backward(cache.stem, d, ctx, false);
  return result;
}

template <typename T>
void Model<T>::update_running_stats(const nn::Trace<T>& trace) {
  std::vector<nn::Buffer<T>> bufs;
  std::vector<nn::BatchNorm2d<T>*> layers;
  net_->collect_buffers(bufs, layers);
  for (const auto& stats : trace.batch_stats) layers.at(stats.layer)->update_running(stats);
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  net_->collect(out);
  return out;
}

template <typename T>
std::vector<const nn::Parameter<T>*> Model<T>::parameters() const {
  std::vector<const nn::Parameter<T>*> out;
  net_->collect(out);
  return out;
}

template <typename T>
std::vector<nn::Buffer<T>> Model<T>::buffers() {
  std::vector<nn::Buffer<T>> out;
  std::vector<nn::BatchNorm2d<T>*> layers;
  net_->collect_buffers(out, layers);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Model<T>::buffers() const {
  std::vector<nn::Buffer<T>> bufs;
  std::vector<nn::BatchNorm2d<T>*> layers;
  net_->collect_buffers(bufs, layers);  // only reads addresses; indices are unchanged
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& b : bufs) out.emplace_back(b.name, b.value);
  return out;
}

template <typename T>
bool Model<T>::has_head(Head h) const {
  return net_->heads[static_cast<std::size_t>(h)].has_value();
}

template <typename T>
const nn::Linear<T>& Model<T>::head(Head h) const {
  if (!has_head(h)) throw Error(ErrorKind::MissingHead, "no head " + std::string(to_string(h)));
  return *net_->heads[static_cast<std::size_t>(h)];
}

template <typename T>
nn::Linear<T>& Model<T>::head(Head h) {
  if (!has_head(h)) throw Error(ErrorKind::MissingHead, "no head " + std::string(to_string(h)));
  return *net_->heads[static_cast<std::size_t>(h)];
}

template <typename T>
std::size_t Model<T>::fine_feature_dim() const {
  return net_->d_f;
}

template <typename T>
std::size_t Model<T>::graft_feature_dim() const {
  return net_->d_g;
}

template <typename T>
std::size_t param_count(const Model<T>& model) {
  std::size_t total = 0;
  for (const auto* p : model.parameters()) total += p->value.size();
  return total;
}

template struct HeadLogits<float>;
template struct HeadLogits<double>;
template struct ForwardCache<float>;
template struct ForwardCache<double>;
template class Model<float>;
template class Model<double>;
template std::size_t param_count(const Model<float>&);
template std::size_t param_count(const Model<double>&);

}  // namespace engraf
