#include "drbd/train.hpp"

#include <cmath>

#include "drbd/ops.hpp"

namespace drbd {

namespace {

// Builds a same-shape sample whose voxel `out` is read from `source(out)`.
template <class F>
Sample remap(const Sample& s, const Dims3& out_dims, F source) {
  Sample r;
  r.id = s.id;
  r.dims = out_dims;
  r.channels = s.channels;
  const std::size_t v = s.voxels();
  r.image.resize(s.image.size());
  r.labels.resize(s.labels.size());
  std::size_t o = 0;
  for (std::size_t x = 0; x < out_dims[0]; ++x)
    for (std::size_t y = 0; y < out_dims[1]; ++y)
      for (std::size_t z = 0; z < out_dims[2]; ++z, ++o) {
        const auto [i, j, k] = source(x, y, z);
        const std::size_t src = (i * s.dims[1] + j) * s.dims[2] + k;
        r.labels[o] = s.labels[src];
        for (std::size_t c = 0; c < s.channels; ++c) r.image[c * v + o] = s.image[c * v + src];
      }
  return r;
}

void check_sample(const Sample& s) {
  if (s.image.size() != s.channels * s.voxels() || s.labels.size() != s.voxels()) {
    throw ShapeError("sample " + s.id + ": buffer sizes do not match dims");
  }
}

}  // namespace

Sample flip_axis(const Sample& s, std::size_t axis) {
  check_sample(s);
  if (axis > 2) throw DomainError("flip_axis: axis must be 0, 1 or 2");
  const Dims3 d = s.dims;
  return remap(s, d, [&](std::size_t x, std::size_t y, std::size_t z) {
    std::array<std::size_t, 3> p{x, y, z};
    p[axis] = d[axis] - 1 - p[axis];
    return p;
  });
}

Sample rotate90(const Sample& s, std::size_t a, std::size_t b, unsigned k) {
  check_sample(s);
  if (!(a < b && b <= 2)) throw DomainError("rotate90: need axes a < b <= 2");
  k %= 4;
  if (k == 0) return s;
  if (k == 2) return flip_axis(flip_axis(s, a), b);
  if (s.dims[a] != s.dims[b]) throw ShapeError("rotate90: quarter turns need a square plane");
  const std::size_t n = s.dims[a];
  // Quarter turn: out(p_a, p_b) = in(p_b, n - 1 - p_a).
  Sample r = remap(s, s.dims, [&](std::size_t x, std::size_t y, std::size_t z) {
    std::array<std::size_t, 3> p{x, y, z};
    const std::size_t pa = p[a], pb = p[b];
    p[a] = pb;
    p[b] = n - 1 - pa;
    return p;
  });
  return k == 1 ? r : rotate90(r, a, b, 2);
}

Sample augment(const Sample& s, const AugmentConfig& cfg, SplitMix64& rng) {
  check_sample(s);
  if (!cfg.enabled) return s;
  Sample r = s;
  for (std::size_t axis = 0; axis < 3; ++axis)
    if (rng.bernoulli(cfg.flip_p)) r = flip_axis(r, axis);
  if (rng.bernoulli(cfg.rotate_p)) {
    static constexpr std::size_t planes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    const auto& pl = planes[rng.below(3)];
    unsigned k = 1 + static_cast<unsigned>(rng.below(3));
    if (r.dims[pl[0]] != r.dims[pl[1]]) k = 2;
    r = rotate90(r, pl[0], pl[1], k);
  }
  const std::size_t v = r.voxels();
  for (std::size_t c = 0; c < r.channels; ++c) {
    float* ch = r.image.data() + c * v;
    if (rng.bernoulli(cfg.shift_p)) {
      const auto off = static_cast<float>(rng.uniform(-cfg.shift, cfg.shift));
      for (std::size_t i = 0; i < v; ++i) ch[i] += off;
    }
    if (rng.bernoulli(cfg.scale_p)) {
      const auto f = static_cast<float>(rng.uniform(cfg.scale_lo, cfg.scale_hi));
      for (std::size_t i = 0; i < v; ++i) ch[i] *= f;
    }
  }
  return r;
}

template <class T>
Tensor<T> sample_tensor(const Sample& s) {
  check_sample(s);
  std::vector<T> v(s.image.begin(), s.image.end());
  return Tensor<T>::from({s.channels, s.dims[0], s.dims[1], s.dims[2]}, std::move(v));
}

template <class T>
LossReport<T> training_objective(const Network<T>& net, const ForwardResult<T>& fwd,
                                 std::span<const std::uint8_t> labels) {
  LossReport<T> r = ce_dice_loss(fwd.logits, labels);
  if (net.config().use_vq) {
    r.total = add(r.total, mul_scalar(fwd.commit, static_cast<T>(net.config().vq.commitment)));
    r.commit = fwd.commit.item();
    r.total_value = r.total.item();
  }
  return r;
}

template <class T>
Trainer<T>::Trainer(Network<T>& net, const TrainConfig& cfg)
    : net_(net), cfg_(cfg), opt_(net.parameters(), cfg.adam) {
  if (cfg.batch_size == 0) throw DomainError("train: batch size must be positive");
}

template <class T>
std::vector<std::size_t> Trainer<T>::batch_indices(std::size_t step, std::size_t n) const {
  // Position p of the example stream falls in epoch p / n, whose order is
  // a seeded shuffle of 0..n-1.
  std::vector<std::size_t> out;
  std::size_t cached_epoch = SIZE_MAX;
  std::vector<std::size_t> order(n);
  for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
    const std::size_t p = step * cfg_.batch_size + b;
    if (p / n != cached_epoch) {
      cached_epoch = p / n;
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      SplitMix64 rng(mix_seed(cfg_.seed, 1, cached_epoch));
      rng.shuffle(std::span<std::size_t>(order));
    }
    out.push_back(order[p % n]);
  }
  return out;
}

template <class T>
TrainLogRow Trainer<T>::step(const std::vector<Sample>& data) {
  if (data.empty()) throw DomainError("train: empty dataset");
  const auto idx = batch_indices(step_, data.size());
  std::vector<Sample> batch;
  std::vector<Tensor<T>> inputs;
  for (std::size_t b = 0; b < idx.size(); ++b) {
    SplitMix64 rng(mix_seed(cfg_.seed, 2, step_ * cfg_.batch_size + b));
    batch.push_back(augment(data[idx[b]], cfg_.augment, rng));
    inputs.push_back(sample_tensor<T>(batch.back()));
  }
  if (net_.config().use_vq && !net_.codebook().initialized) {
    SplitMix64 rng(mix_seed(cfg_.seed, 3, step_));
    net_.init_codebooks(inputs, rng);
  }

  net_.zero_grad();
  TrainLogRow row;
  std::vector<T> rows, skip_rows;
  std::vector<std::uint32_t> codes, skip_codes;
  const T inv = T(1) / static_cast<T>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto fwd = net_.forward(inputs[b]);
    const auto rep = training_objective(net_, fwd, batch[b].labels);
    if (!std::isfinite(double(rep.total_value))) {
      throw NumericalError("train: non-finite loss at step " + std::to_string(step_ + 1) + " on sample " +
                           batch[b].id);
    }
    backward(mul_scalar(rep.total, inv));
    row.ce += double(rep.ce);
    row.dice_loss += double(rep.dice_loss);
    row.commit += double(rep.commit);
    row.total += double(rep.total_value);
    rows.insert(rows.end(), fwd.vq_rows.begin(), fwd.vq_rows.end());
    codes.insert(codes.end(), fwd.vq_indices.begin(), fwd.vq_indices.end());
    skip_rows.insert(skip_rows.end(), fwd.skip_vq_rows.begin(), fwd.skip_vq_rows.end());
    skip_codes.insert(skip_codes.end(), fwd.skip_vq_indices.begin(), fwd.skip_vq_indices.end());
  }
  const double ramp = cfg_.warmup_steps == 0 ? 1.0
                                             : std::min(1.0, double(step_ + 1) / double(cfg_.warmup_steps));
  opt_.step(ramp);
  if (!codes.empty()) ema_update(net_.codebook(), std::span<const T>(rows), codes);
  if (!skip_codes.empty()) ema_update(net_.skip_codebook(), std::span<const T>(skip_rows), skip_codes);

  ++step_;
  const double n = double(batch.size());
  row.step = step_;
  row.ce /= n;
  row.dice_loss /= n;
  row.commit /= n;
  row.total /= n;
  row.soft_dice = 1.0 - row.dice_loss;
  return row;
}

template <class T>
std::vector<CheckpointEntry> Trainer<T>::checkpoint() const {
  auto entries = network_checkpoint(net_);
  const auto& params = opt_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    entries.push_back({"adam/m/" + name, t.shape(), {opt_.first_moments()[i].begin(), opt_.first_moments()[i].end()}});
    entries.push_back({"adam/v/" + name, t.shape(), {opt_.second_moments()[i].begin(), opt_.second_moments()[i].end()}});
  }
  entries.push_back({"adam/step", {1}, {static_cast<float>(opt_.steps())}});
  entries.push_back({"train/step", {1}, {static_cast<float>(step_)}});
  return entries;
}

template <class T>
void Trainer<T>::restore(const std::vector<CheckpointEntry>& entries) {
  load_network_state(net_, entries);
  const auto& params = opt_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params[i].first;
    const auto& m = find_entry(entries, "adam/m/" + name);
    const auto& v = find_entry(entries, "adam/v/" + name);
    if (m.values.size() != opt_.first_moments()[i].size() || v.values.size() != m.values.size()) {
      throw IoError("checkpoint: optimizer state for " + name + " has the wrong size");
    }
    std::copy(m.values.begin(), m.values.end(), opt_.first_moments()[i].begin());
    std::copy(v.values.begin(), v.values.end(), opt_.second_moments()[i].begin());
  }
  opt_.set_steps(static_cast<std::size_t>(find_entry(entries, "adam/step").values.at(0)));
  step_ = static_cast<std::size_t>(find_entry(entries, "train/step").values.at(0));
}

template <class T>
std::vector<TrainLogRow> train(Trainer<T>& trainer, const std::vector<Sample>& data, std::size_t steps,
                               const std::function<bool(const TrainLogRow&)>& on_step) {
  std::vector<TrainLogRow> log;
  for (std::size_t i = 0; i < steps; ++i) {
    log.push_back(trainer.step(data));
    if (on_step && !on_step(log.back())) break;
  }
  return log;
}

namespace {

template <class T>
void put_codebook(std::vector<CheckpointEntry>& out, const std::string& prefix, const Codebook<T>& cb) {
  const std::size_t k = cb.codes(), d = cb.dim();
  out.push_back({prefix + "embeddings", {k, d}, {cb.embeddings.begin(), cb.embeddings.end()}});
  out.push_back({prefix + "cluster_size", {k}, {cb.cluster_size.begin(), cb.cluster_size.end()}});
  out.push_back({prefix + "embed_sum", {k, d}, {cb.embed_sum.begin(), cb.embed_sum.end()}});
  out.push_back({prefix + "initialized", {1}, {cb.initialized ? 1.0f : 0.0f}});
}

template <class T>
void get_codebook(const std::vector<CheckpointEntry>& in, const std::string& prefix, Codebook<T>& cb) {
  auto fill = [&](const std::string& name, std::vector<T>& dst) {
    const auto& e = find_entry(in, prefix + name);
    if (e.values.size() != dst.size()) throw IoError("checkpoint: " + prefix + name + " has the wrong size");
    std::copy(e.values.begin(), e.values.end(), dst.begin());
  };
  fill("embeddings", cb.embeddings);
  fill("cluster_size", cb.cluster_size);
  fill("embed_sum", cb.embed_sum);
  cb.initialized = find_entry(in, prefix + "initialized").values.at(0) != 0.0f;
}

}  // namespace

template <class T>
std::vector<CheckpointEntry> network_checkpoint(const Network<T>& net) {
  std::vector<CheckpointEntry> out;
  const std::string meta = net_config_to_json(net.config());
  out.push_back({"meta/config", {meta.size()}, {meta.begin(), meta.end()}});
  for (const auto& [name, t] : net.parameters()) {
    out.push_back({"param/" + name, t.shape(), {t.data().begin(), t.data().end()}});
  }
  put_codebook(out, "vq/bottleneck/", net.codebook());
  if (net.config().vq_on_skip) put_codebook(out, "vq/skip/", net.skip_codebook());
  return out;
}

NetConfig config_from_checkpoint(const std::vector<CheckpointEntry>& entries) {
  const auto& e = find_entry(entries, "meta/config");
  std::string text;
  for (float v : e.values) text.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return net_config_from_json(text);
}

template <class T>
void load_network_state(Network<T>& net, const std::vector<CheckpointEntry>& entries) {
  for (const auto& [name, t] : net.parameters()) {
    const auto& e = find_entry(entries, "param/" + name);
    if (e.shape != t.shape()) {
      throw IoError("checkpoint: " + name + " has shape " + to_string(e.shape) + ", network expects " +
                    to_string(t.shape()));
    }
    auto dst = net.parameter(name).mutable_data();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
  }
  get_codebook(entries, "vq/bottleneck/", net.codebook());
  if (net.config().vq_on_skip) get_codebook(entries, "vq/skip/", net.skip_codebook());
}

#define DRBD_INSTANTIATE(T)                                                                          \
  template Tensor<T> sample_tensor<T>(const Sample&);                                                \
  template LossReport<T> training_objective<T>(const Network<T>&, const ForwardResult<T>&,           \
                                               std::span<const std::uint8_t>);                       \
  template class Trainer<T>;                                                                         \
  template std::vector<TrainLogRow> train<T>(Trainer<T>&, const std::vector<Sample>&, std::size_t,   \
                                             const std::function<bool(const TrainLogRow&)>&);        \
  template std::vector<CheckpointEntry> network_checkpoint<T>(const Network<T>&);                    \
  template void load_network_state<T>(Network<T>&, const std::vector<CheckpointEntry>&);

DRBD_INSTANTIATE(float)
DRBD_INSTANTIATE(double)

#undef DRBD_INSTANTIATE

}  // namespace drbd
