#pragma once

#include <optional>
#include <unordered_map>

#include "agn/bytes.hpp"
#include "agn/layers.hpp"

namespace agn {

struct ModelConfig {
  std::int64_t n_joints = 22;
  std::int64_t coord_dim = 3;
  std::int64_t t_in = 10;
  std::int64_t t_out = 10;
  std::int64_t d_p = 32;
  std::vector<std::int64_t> timescales = {3, 5, 7};
  std::int64_t temporal_dim = 64;
  std::int64_t encoder_layers = 5;
  std::int64_t decoder_layers = 4;
  std::int64_t affm_ratio = 4;
  std::uint64_t seed = 1;
  bool use_mtde = true;
  bool use_gce = true;
  bool use_lie = true;
  bool use_affm = true;

  void validate() const {
    auto positive = [](std::int64_t v, const char* name) {
      if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(n_joints, "n_joints");
    positive(coord_dim, "coord_dim");
    positive(t_in, "t_in");
    positive(t_out, "t_out");
    positive(d_p, "d_p");
    positive(temporal_dim, "temporal_dim");
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(affm_ratio, "affm_ratio");
    if (t_in < 2) throw ConfigError("t_in must be >= 2 for the velocity stream");
    if (timescales.size() != 3) throw ConfigError("exactly 3 timescales required");
    for (std::size_t i = 0; i < timescales.size(); ++i) {
      if (timescales[i] < 1 || timescales[i] % 2 == 0) {
        throw ConfigError("timescales must be odd and positive");
      }
      if (i > 0 && timescales[i] <= timescales[i - 1]) {
        throw ConfigError("timescales must be strictly ascending");
      }
    }
    if (d_p % 2 != 0) throw ConfigError("d_p must be even");
    if (d_p % affm_ratio != 0) throw ConfigError("d_p must be divisible by affm_ratio");
    if (!use_gce && !use_lie) throw ConfigError("at least one of use_gce/use_lie required");
    if (use_lie && (d_p / 2) % 2 != 0) {
      throw ConfigError("d_p must be divisible by 4 when the non-local path is enabled");
    }
    if (use_affm && (d_p / 2) % affm_ratio != 0) {
      throw ConfigError("block width d_p/2 must be divisible by affm_ratio");
    }
    if (decoder_layers > encoder_layers) {
      throw ConfigError("decoder_layers must not exceed encoder_layers (skip pairing)");
    }
  }
};

// Ordered, uniquely named collection of learnable tensors.
template <typename S>
class ParamStore {
 public:
  void add(const std::string& name, TensorT<S> tensor) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(tensor));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  TensorT<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  const TensorT<S>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::int64_t total_parameters() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, TensorT<S>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ResNet-style bottleneck around the relation extractors. Input and output
// are [N x T x d_p]; the extractors run at half width.
template <typename S>
struct AjreBlock {
  TensorT<S> reduce_w, reduce_b;
  std::optional<GceParams<S>> gce;
  std::optional<LieParams<S>> lie;
  std::optional<AffmParams<S>> affm;
  TensorT<S> expand_w, expand_b;

  TensorT<S> forward(const TensorT<S>& h) const {
    auto reduced = conv_1x1(h, reduce_w, reduce_b);
    auto xb = transpose(reduced, {0, 2, 1});  // [N x D_c x T_c]
    std::vector<TensorT<S>> branches;
    if (gce) branches.push_back(gce_forward(xb, *gce));
    if (lie) {
      auto [adjacent, distant] = lie_forward(xb, *lie);
      branches.push_back(adjacent);
      branches.push_back(distant);
    }
    TensorT<S> fused;
    if (affm) {
      fused = affm_forward(branches, *affm);
    } else {
      fused = branches[0];
      for (std::size_t i = 1; i < branches.size(); ++i) fused = add(fused, branches[i]);
    }
    auto expanded = conv_1x1(transpose(fused, {0, 2, 1}), expand_w, expand_b);
    return add(h, expanded);
  }
};

// Learned linear map along the temporal axis: [N x T x C] * [T x T'] -> [N x T' x C].
template <typename S>
TensorT<S> temporal_linear(const TensorT<S>& x, const TensorT<S>& w) {
  const std::int64_t N = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  if (w.shape()[0] != T) {
    throw ShapeError("temporal_linear: input " + shape_str(x.shape()) + " vs map " +
                     shape_str(w.shape()));
  }
  auto flat = reshape(transpose(x, {0, 2, 1}), {N * C, T});
  auto mapped = matmul(flat, w);
  return transpose(reshape(mapped, {N, C, w.shape()[1]}), {0, 2, 1});
}

template <typename S>
struct ModelT {
  ModelConfig config;
  std::optional<MtdeParams<S>> mtde;
  TensorT<S> lift_w, lift_b;  // single k=1 lift when MTDE is disabled
  TensorT<S> proj_w;          // [(2T-1) x temporal_dim]
  std::vector<AjreBlock<S>> encoder;
  std::vector<AjreBlock<S>> decoder;
  TensorT<S> head_channel_w, head_channel_b;  // [d_p x coord_dim]
  TensorT<S> head_temporal_w;                 // [temporal_dim x t_out]
  ParamStore<S> params;

  // x: [N x t_in x coord_dim] -> [N x t_out x coord_dim]
  TensorT<S> forward(const TensorT<S>& x) const {
    const Shape expected{config.n_joints, config.t_in, config.coord_dim};
    if (x.shape() != expected) {
      throw InputError("model input must be " + shape_str(expected) + ", got " +
                       shape_str(x.shape()));
    }
    TensorT<S> feat;
    if (mtde) {
      feat = mtde_forward(x, *mtde);
    } else {
      auto pos = conv_temporal(x, lift_w, lift_b);
      auto vel = conv_temporal(velocity(x), lift_w, lift_b);
      feat = concat<S>({pos, vel}, 1);
    }
    auto h = temporal_linear(feat, proj_w);  // [N x temporal_dim x d_p]

    std::vector<TensorT<S>> skips;  // skips[0] = encoder input, then block outputs
    skips.push_back(h);
    for (const auto& block : encoder) {
      h = block.forward(h);
      skips.push_back(h);
    }
    const std::int64_t e = config.encoder_layers;
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      h = add(h, skips[e - 1 - static_cast<std::int64_t>(i)]);
      h = decoder[i].forward(h);
    }
    auto coords = conv_1x1(h, head_channel_w, head_channel_b);
    return temporal_linear(coords, head_temporal_w);
  }
};

namespace detail {

template <typename S>
AjreBlock<S> make_ajre_block(const ModelConfig& cfg, const std::string& prefix, Rng& rng,
                             ParamStore<S>& store) {
  const std::int64_t half = cfg.d_p / 2;
  AjreBlock<S> block;
  block.reduce_w = init_uniform<S>({cfg.d_p, half}, cfg.d_p, rng);
  block.reduce_b = init_zeros<S>({half});
  store.add(prefix + ".reduce.weight", block.reduce_w);
  store.add(prefix + ".reduce.bias", block.reduce_b);
  std::int64_t branch_count = 0;
  if (cfg.use_gce) {
    block.gce = make_gce<S>(cfg.n_joints, half, rng);
    block.gce->for_each_param(prefix + ".gce.",
                              [&](const std::string& n, TensorT<S>& t) { store.add(n, t); });
    branch_count += 1;
  }
  if (cfg.use_lie) {
    block.lie = make_lie<S>(half, rng);
    block.lie->for_each_param(prefix + ".lie.",
                              [&](const std::string& n, TensorT<S>& t) { store.add(n, t); });
    branch_count += 2;
  }
  if (cfg.use_affm) {
    block.affm = make_affm<S>(half, branch_count, cfg.affm_ratio, rng);
    block.affm->for_each_param(prefix + ".affm.",
                               [&](const std::string& n, TensorT<S>& t) { store.add(n, t); });
  }
  block.expand_w = init_uniform<S>({half, cfg.d_p}, half, rng);
  block.expand_b = init_zeros<S>({cfg.d_p});
  store.add(prefix + ".expand.weight", block.expand_w);
  store.add(prefix + ".expand.bias", block.expand_b);
  return block;
}

}  // namespace detail

// Deterministic build: the same config and seed produce identical bytes.
template <typename S>
ModelT<S> build_model(const ModelConfig& config) {
  config.validate();
  ModelT<S> m;
  m.config = config;
  Rng rng(config.seed);
  if (config.use_mtde) {
    m.mtde = make_mtde<S>(config.coord_dim, config.d_p, config.timescales, rng);
    m.mtde->for_each_param(
        [&](const std::string& n, TensorT<S>& t) { m.params.add(n, t); });
  } else {
    m.lift_w = init_uniform<S>({1, config.coord_dim, config.d_p}, config.coord_dim, rng);
    m.lift_b = init_zeros<S>({config.d_p});
    m.params.add("mtde.lift.weight", m.lift_w);
    m.params.add("mtde.lift.bias", m.lift_b);
  }
  const std::int64_t t_concat = 2 * config.t_in - 1;
  m.proj_w = init_uniform<S>({t_concat, config.temporal_dim}, t_concat, rng);
  m.params.add("proj.weight", m.proj_w);
  for (std::int64_t i = 0; i < config.encoder_layers; ++i) {
    m.encoder.push_back(detail::make_ajre_block<S>(
        config, "encoder." + std::to_string(i), rng, m.params));
  }
  for (std::int64_t i = 0; i < config.decoder_layers; ++i) {
    m.decoder.push_back(detail::make_ajre_block<S>(
        config, "decoder." + std::to_string(i), rng, m.params));
  }
  m.head_channel_w = init_uniform<S>({config.d_p, config.coord_dim}, config.d_p, rng);
  m.head_channel_b = init_zeros<S>({config.coord_dim});
  m.head_temporal_w =
      init_uniform<S>({config.temporal_dim, config.t_out}, config.temporal_dim, rng);
  m.params.add("head.channel.weight", m.head_channel_w);
  m.params.add("head.channel.bias", m.head_channel_b);
  m.params.add("head.temporal.weight", m.head_temporal_w);
  return m;
}

// Mean per-joint position error over all predicted frames.
// Non-differentiable only where a predicted joint coincides exactly with the
// truth; the subgradient there is taken as 0 and a 1e-12 epsilon guards the
// division.
template <typename S>
TensorT<S> mpjpe_loss(const TensorT<S>& pred, const TensorT<S>& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("mpjpe_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                     shape_str(truth.shape()));
  }
  if (pred.rank() != 3 || pred.shape()[2] != 3) {
    throw ShapeError("mpjpe_loss expects [N x F x 3], got " + shape_str(pred.shape()));
  }
  const std::int64_t N = pred.shape()[0], F = pred.shape()[1];
  auto pn = pred.node(), tn = truth.node();
  auto out = detail::make_node<S>(Shape{1});
  std::vector<S> dists(N * F);
  S acc = 0;
  for (std::int64_t i = 0; i < N * F; ++i) {
    S s = 0;
    for (std::int64_t d = 0; d < 3; ++d) {
      const S diff = pn->value[i * 3 + d] - tn->value[i * 3 + d];
      s += diff * diff;
    }
    dists[i] = std::sqrt(s);
    acc += dists[i];
  }
  const S inv = S(1) / S(N * F);
  out->value[0] = acc * inv;
  detail::wire<S>(out, {pn, tn}, [pn, tn, dists, inv, N, F](TensorNode<S>& self) {
    if (pn->requires_grad) pn->ensure_grad();
    if (tn->requires_grad) tn->ensure_grad();
    const S g = self.grad[0] * inv;
    for (std::int64_t i = 0; i < N * F; ++i) {
      if (dists[i] == S(0)) continue;
      const S scale = g / std::max(dists[i], S(1e-12));
      for (std::int64_t d = 0; d < 3; ++d) {
        const S diff = pn->value[i * 3 + d] - tn->value[i * 3 + d];
        if (pn->requires_grad) pn->grad[i * 3 + d] += scale * diff;
        if (tn->requires_grad) tn->grad[i * 3 + d] -= scale * diff;
      }
    }
  });
  return TensorT<S>(out);
}

// ---- checkpoint I/O ----
// Layout: "AGNC" | u32 version=1 | u32 count | per tensor
// (u16 name_len | name | u8 rank | u32 dims[rank] | f32 data...) | u32 CRC32
// over every preceding byte. All integers and floats little-endian.

template <typename S>
void save_checkpoint(const ParamStore<S>& store, const std::string& path) {
  std::string buf;
  buf += "AGNC";
  detail::put_u32(buf, 1);
  detail::put_u32(buf, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, tensor] : store) {
    if (name.size() > 0xFFFF) throw ContractError("parameter name too long: " + name);
    detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(tensor.rank()));
    for (auto d : tensor.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    for (const S v : tensor.data()) detail::put_f32(buf, static_cast<float>(v));
  }
  detail::put_u32(buf, crc32(buf.data(), buf.size()));
  detail::write_file(path, buf, "checkpoint");
}

template <typename S>
ParamStore<S> load_checkpoint(const std::string& path) {
  const std::string data = detail::read_file(path, "checkpoint");
  if (data.size() < 12 + 4) throw CheckpointError("checkpoint: file too short");
  detail::ByteReaderT<CheckpointError> r(data, "checkpoint");
  if (r.bytes(4) != "AGNC") throw CheckpointError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != 1) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  detail::check_trailing_crc<CheckpointError>(data, "checkpoint");
  const std::uint32_t count = r.u32();
  ParamStore<S> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    const std::uint8_t rank = r.u8();
    if (rank == 0) throw CheckpointError("checkpoint: zero-rank tensor " + name);
    Shape shape(rank);
    for (std::uint8_t d = 0; d < rank; ++d) shape[d] = r.u32();
    std::vector<S> values(numel(shape));
    for (auto& v : values) v = static_cast<S>(r.f32());
    auto t = TensorT<S>::from_data(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    store.add(name, std::move(t));
  }
  if (r.remaining() != 4) throw CheckpointError("checkpoint: trailing bytes after payload");
  return store;
}

// Copy values from a loaded store into the model's parameters; shapes and
// the full name set must match the built architecture.
template <typename S>
void load_state(ModelT<S>& model, const ParamStore<S>& loaded) {
  if (loaded.size() != model.params.size()) {
    throw CheckpointError("checkpoint: expected " + std::to_string(model.params.size()) +
                          " tensors, found " + std::to_string(loaded.size()));
  }
  for (auto& [name, tensor] : model.params) {
    if (!loaded.contains(name)) {
      throw CheckpointError("checkpoint: missing parameter " + name);
    }
    const auto& src = loaded.get(name);
    if (src.shape() != tensor.shape()) {
      throw CheckpointError("checkpoint: shape mismatch for " + name + ": " +
                            shape_str(src.shape()) + " vs " + shape_str(tensor.shape()));
    }
    tensor.data() = src.data();
  }
}

}  // namespace agn
