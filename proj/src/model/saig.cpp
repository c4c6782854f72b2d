#include "saig/model/saig.hpp"

#include <cmath>
#include <random>

namespace saig::model {

namespace {

template <typename T>
Tensor<T> param(nn::Shape shape, T fill = T{0}) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

// Normal(0, std) truncated at three standard deviations (sample std stays within 2% of `std`).
template <typename T>
Tensor<T> trunc_normal(nn::Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor<T> t = param<T>(std::move(shape));
  for (auto& v : t.mutable_data()) {
    double x;
    do {
      x = dist(rng);
    } while (std::abs(x) > 3.0 * std);
    v = static_cast<T>(x);
  }
  return t;
}

std::string idx(const char* prefix, std::size_t i, const char* suffix) {
  return std::string(prefix) + std::to_string(i) + suffix;
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> BranchParams<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < stem.conv.size(); ++i) {
    out.push_back({idx("stem.conv", i, ".weight"), stem.conv[i]});
    out.push_back({idx("stem.bn", i, ".gamma"), stem.bn_gamma[i]});
    out.push_back({idx("stem.bn", i, ".beta"), stem.bn_beta[i]});
  }
  out.push_back({"stem.proj.weight", stem.proj_w});
  out.push_back({"stem.proj.bias", stem.proj_b});
  out.push_back({"pos_embed", stem.pos_embed});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    out.push_back({p + "ln.gamma", l.ln_gamma});
    out.push_back({p + "ln.beta", l.ln_beta});
    out.push_back({p + "attn.wq", l.wq});
    out.push_back({p + "attn.bq", l.bq});
    out.push_back({p + "attn.wk", l.wk});
    out.push_back({p + "attn.bk", l.bk});
    out.push_back({p + "attn.wv", l.wv});
    out.push_back({p + "attn.bv", l.bv});
    out.push_back({p + "attn.wo", l.wo});
    out.push_back({p + "attn.bo", l.bo});
  }
  out.push_back({"norm.gamma", norm_gamma});
  out.push_back({"norm.beta", norm_beta});
  if (smd) {
    out.push_back({"smd.w1", smd->w1});
    out.push_back({"smd.b1", smd->b1});
    out.push_back({"smd.w2", smd->w2});
    out.push_back({"smd.b2", smd->b2});
    out.push_back({"smd.w3", smd->w3});
    out.push_back({"smd.b3", smd->b3});
  }
  if (local) {
    out.push_back({"local.weight", local->weight});
    out.push_back({"local.bias", local->bias});
  }
  if (cls_w.defined()) {
    out.push_back({"classifier.weight", cls_w});
    out.push_back({"classifier.bias", cls_b});
  }
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> BranchParams<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t i = 0; i < stem.bn_stats.size(); ++i) {
    out.push_back({idx("stem.bn", i, ".running_mean"), &stem.bn_stats[i].running_mean});
    out.push_back({idx("stem.bn", i, ".running_var"), &stem.bn_stats[i].running_var});
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> SiamesePair<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  for (auto& p : ground.parameters()) out.push_back({"ground." + p.name, p.tensor});
  for (auto& p : aerial.parameters()) out.push_back({"aerial." + p.name, p.tensor});
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> SiamesePair<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (auto& b : ground.buffers()) out.push_back({"ground." + b.name, b.values});
  for (auto& b : aerial.buffers()) out.push_back({"aerial." + b.name, b.values});
  return out;
}

template <typename T>
BranchParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  constexpr double kStd = 0.02;
  const std::size_t D = config.dim;
  const TokenGrid grid = token_grid(config, config.input_hw);
  const std::size_t P = grid.count();

  BranchParams<T> p;
  p.config = config.for_branch(config.input_hw);
  std::size_t in_ch = 3;
  for (std::size_t out_ch : config.stem_channels) {
    p.stem.conv.push_back(trunc_normal<T>({out_ch, in_ch, 3, 3}, std::sqrt(2.0 / (in_ch * 9.0)), rng));
    p.stem.bn_gamma.push_back(param<T>({out_ch}, T{1}));
    p.stem.bn_beta.push_back(param<T>({out_ch}));
    p.stem.bn_stats.emplace_back(out_ch);
    in_ch = out_ch;
  }
  p.stem.proj_w = trunc_normal<T>({in_ch, D}, kStd, rng);
  p.stem.proj_b = param<T>({D});
  p.stem.pos_embed = param<T>({P, D});

  for (std::size_t l = 0; l < config.depth; ++l) {
    AttentionParams<T> a;
    a.ln_gamma = param<T>({D}, T{1});
    a.ln_beta = param<T>({D});
    a.wq = trunc_normal<T>({D, D}, kStd, rng);
    a.bq = param<T>({D});
    a.wk = trunc_normal<T>({D, D}, kStd, rng);
    a.bk = param<T>({D});
    a.wv = trunc_normal<T>({D, D}, kStd, rng);
    a.bv = param<T>({D});
    a.wo = trunc_normal<T>({D, D}, kStd, rng);
    a.bo = param<T>({D});
    p.layers.push_back(std::move(a));
  }
  p.norm_gamma = param<T>({D}, T{1});
  p.norm_beta = param<T>({D});

  if (config.head == HeadType::kSmd) {
    aggregation::SmdParams<T> s;
    s.w1 = trunc_normal<T>({P, 4 * P}, kStd, rng);
    s.b1 = param<T>({4 * P});
    s.w2 = trunc_normal<T>({4 * P, P}, kStd, rng);
    s.b2 = param<T>({P});
    s.w3 = trunc_normal<T>({P, config.smd_k}, kStd, rng);
    s.b3 = param<T>({config.smd_k});
    p.smd = std::move(s);
  } else if (config.head == HeadType::kLocal) {
    if (grid.height % config.local_pool_hw.height != 0 || grid.width % config.local_pool_hw.width != 0) {
      throw DimensionError("local head: token grid " + std::to_string(grid.height) + "x" +
                           std::to_string(grid.width) + " not divisible by pool " +
                           std::to_string(config.local_pool_hw.height) + "x" +
                           std::to_string(config.local_pool_hw.width));
    }
    aggregation::LocalHeadParams<T> lh;
    lh.weight = trunc_normal<T>({D, config.local_proj_dim}, kStd, rng);
    lh.bias = param<T>({config.local_proj_dim});
    p.local = std::move(lh);
  }
  if (config.classifier_classes > 0) {
    p.cls_w = trunc_normal<T>({D, config.classifier_classes}, kStd, rng);
    p.cls_b = param<T>({config.classifier_classes});
  }
  return p;
}

template <typename T>
SiamesePair<T> init_siamese(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  // Distinct streams per branch so the two never start from identical weights.
  std::seed_seq ground_seq{seed, std::uint64_t{0}};
  std::seed_seq aerial_seq{seed, std::uint64_t{1}};
  std::uint64_t seeds[2];
  std::uint32_t words[2];
  ground_seq.generate(words, words + 2);
  seeds[0] = (std::uint64_t{words[0]} << 32) | words[1];
  aerial_seq.generate(words, words + 2);
  seeds[1] = (std::uint64_t{words[0]} << 32) | words[1];
  return {init_params<T>(config.for_branch(config.input_hw), seeds[0]),
          init_params<T>(config.for_branch(config.aerial_hw), seeds[1])};
}

template <typename T>
PatchGrid<T> conv_stem_forward(const Tensor<T>& images, StemParams<T>& stem, const ModelConfig& config,
                               BnMode mode) {
  Tensor<T> x = images;
  if (x.rank() == 3) x = nn::reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw DimensionError("conv stem expects [N, 3, H, W] images, got " + nn::shape_str(images.shape()));
  }
  const TokenGrid grid = token_grid(config, {x.dim(2), x.dim(3)});
  const std::size_t P = grid.count(), D = config.dim;
  if (stem.pos_embed.dim(0) != P) {
    throw DimensionError("position embedding holds " + std::to_string(stem.pos_embed.dim(0)) +
                         " tokens but the input produces " + std::to_string(P));
  }
  for (std::size_t i = 0; i < stem.conv.size(); ++i) {
    x = nn::conv2d(x, stem.conv[i], config.stem_strides[i], 1);
    x = nn::batch_norm(x, stem.bn_gamma[i], stem.bn_beta[i], stem.bn_stats[i], mode, static_cast<T>(config.bn_momentum),
                       static_cast<T>(config.bn_eps));
    x = nn::relu(x);
  }
  const std::size_t N = x.dim(0);
  auto tokens = nn::linear(nn::feature_map_to_tokens(x), stem.proj_w, stem.proj_b);  // [N, P, D]
  auto flat = nn::add_bias(nn::reshape(tokens, {N, P * D}), nn::reshape(stem.pos_embed, {P * D}));
  return {nn::reshape(flat, {N, P, D}), grid};
}

template <typename T>
Tensor<T> msa_layer_forward(const Tensor<T>& x, const AttentionParams<T>& params, std::size_t heads, T eps) {
  const bool unbatched = x.rank() == 2;
  const Tensor<T> input = unbatched ? nn::reshape(x, {1, x.dim(0), x.dim(1)}) : x;
  if (input.rank() != 3) throw DimensionError("msa layer expects [P, D] or [N, P, D]");
  const std::size_t D = input.dim(2);
  if (heads == 0 || D % heads != 0) throw DimensionError("msa layer: width not divisible by heads");
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(D / heads));

  auto z = nn::layer_norm(input, params.ln_gamma, params.ln_beta, eps);
  auto q = nn::split_heads(nn::linear(z, params.wq, params.bq), heads);
  auto k = nn::split_heads(nn::linear(z, params.wk, params.bk), heads);
  auto v = nn::split_heads(nn::linear(z, params.wv, params.bv), heads);
  auto attn = nn::softmax_row(nn::scale(nn::bmm_nt(q, k), inv_sqrt_dh));
  auto context = nn::merge_heads(nn::bmm(attn, v), heads);
  auto out = nn::add(input, nn::linear(context, params.wo, params.bo));
  return unbatched ? nn::reshape(out, {x.dim(0), x.dim(1)}) : out;
}

template <typename T>
PatchGrid<T> encode(const Tensor<T>& images, BranchParams<T>& params, BnMode mode) {
  const auto& cfg = params.config;
  auto grid = conv_stem_forward(images, params.stem, cfg, mode);
  nn::check_finite(grid.tokens, "conv stem");
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    grid.tokens = msa_layer_forward(grid.tokens, params.layers[l], cfg.heads, eps);
    nn::check_finite(grid.tokens, "attention layer " + std::to_string(l));
  }
  grid.tokens = nn::layer_norm(grid.tokens, params.norm_gamma, params.norm_beta, eps);
  return grid;
}

template <typename T>
Tensor<T> saig_forward(const Tensor<T>& images, BranchParams<T>& params, BnMode mode) {
  auto encoded = encode(images, params, mode);
  const auto& cfg = params.config;
  Tensor<T> desc;
  switch (cfg.head) {
    case HeadType::kGap:
      desc = aggregation::gap_head(encoded.tokens);
      break;
    case HeadType::kSmd:
      desc = aggregation::smd_head(encoded.tokens, *params.smd);
      break;
    case HeadType::kLocal:
      desc = aggregation::local_head(encoded.tokens, encoded.grid.height, encoded.grid.width,
                                     cfg.local_pool_hw.height, cfg.local_pool_hw.width, *params.local);
      break;
  }
  nn::check_finite(desc, "descriptor head");
  return images.rank() == 3 ? nn::reshape(desc, {desc.numel()}) : desc;
}

template <typename T>
Tensor<T> classify(const Tensor<T>& images, BranchParams<T>& params, BnMode mode) {
  if (!params.cls_w.defined()) throw ContractError("classify: model has no classifier head");
  auto encoded = encode(images, params, mode);
  return nn::linear(nn::mean_tokens(encoded.tokens), params.cls_w, params.cls_b);
}

std::vector<Descriptor> to_descriptors(const Tensor<float>& rows) {
  const std::size_t n = rows.rank() == 1 ? 1 : rows.dim(0);
  const std::size_t d = rows.numel() / n;
  std::vector<Descriptor> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].assign(rows.data().begin() + i * d, rows.data().begin() + (i + 1) * d);
  return out;
}

#define SAIG_INSTANTIATE_MODEL(T)                                                                            \
  template struct BranchParams<T>;                                                                          \
  template struct SiamesePair<T>;                                                                           \
  template BranchParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                               \
  template SiamesePair<T> init_siamese<T>(const ModelConfig&, std::uint64_t);                               \
  template PatchGrid<T> conv_stem_forward<T>(const Tensor<T>&, StemParams<T>&, const ModelConfig&, BnMode); \
  template Tensor<T> msa_layer_forward<T>(const Tensor<T>&, const AttentionParams<T>&, std::size_t, T);     \
  template PatchGrid<T> encode<T>(const Tensor<T>&, BranchParams<T>&, BnMode);                              \
  template Tensor<T> saig_forward<T>(const Tensor<T>&, BranchParams<T>&, BnMode);                           \
  template Tensor<T> classify<T>(const Tensor<T>&, BranchParams<T>&, BnMode);

SAIG_INSTANTIATE_MODEL(float)
SAIG_INSTANTIATE_MODEL(double)

}  // namespace saig::model
