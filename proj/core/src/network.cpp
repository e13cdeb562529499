#include "drbd/network.hpp"

#include <cmath>

#include "drbd/ops.hpp"

#include <nlohmann/json.hpp>

namespace drbd {

NetConfig NetConfig::full() { return NetConfig{}; }

NetConfig NetConfig::desk() {
  NetConfig cfg;
  cfg.base_channels = 4;
  cfg.vq.codes = 64;
  return cfg;
}

VqConfig NetConfig::bottleneck_vq() const {
  VqConfig v = vq;
  v.dim = bottleneck_channels();
  return v;
}

VqConfig NetConfig::skip_vq() const {
  VqConfig v = vq;
  v.dim = skip_channels();
  return v;
}

std::string net_config_to_json(const NetConfig& cfg) {
  const nlohmann::json j = {
      {"base_channels", cfg.base_channels},
      {"in_channels", cfg.in_channels},
      {"classes", cfg.classes},
      {"state", cfg.state},
      {"ssm_conv", cfg.ssm_conv},
      {"ssm_skip", cfg.ssm_skip},
      {"separate_reverse", cfg.separate_reverse},
      {"use_vq", cfg.use_vq},
      {"vq_on_skip", cfg.vq_on_skip},
      {"vq_codes", cfg.vq.codes},
      {"vq_decay", cfg.vq.decay},
      {"vq_epsilon", cfg.vq.epsilon},
      {"vq_commitment", cfg.vq.commitment},
      {"norm", cfg.norm == NormKind::instance ? "instance" : "none"},
  };
  return j.dump();
}

NetConfig net_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("network config: ") + e.what());
  }
  NetConfig cfg;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("base_channels", cfg.base_channels);
  get("in_channels", cfg.in_channels);
  get("classes", cfg.classes);
  get("state", cfg.state);
  get("ssm_conv", cfg.ssm_conv);
  get("ssm_skip", cfg.ssm_skip);
  get("separate_reverse", cfg.separate_reverse);
  get("use_vq", cfg.use_vq);
  get("vq_on_skip", cfg.vq_on_skip);
  get("vq_codes", cfg.vq.codes);
  get("vq_decay", cfg.vq.decay);
  get("vq_epsilon", cfg.vq.epsilon);
  get("vq_commitment", cfg.vq.commitment);
  if (j.contains("norm")) {
    const auto n = j.at("norm").get<std::string>();
    if (n == "instance") cfg.norm = NormKind::instance;
    else if (n == "none") cfg.norm = NormKind::none;
    else throw DomainError("network config: unknown norm " + n);
  }
  return cfg;
}

namespace {

SsmConfig ssm_config(const NetConfig& cfg, std::size_t embed) {
  SsmConfig s;
  s.embed = embed;
  s.state = cfg.state;
  s.use_conv = cfg.ssm_conv;
  s.use_skip = cfg.ssm_skip;
  s.separate_reverse = cfg.separate_reverse;
  return s;
}

void add_conv(std::vector<ParamSpec>& out, const NetConfig& cfg, const std::string& prefix,
              std::size_t cin, std::size_t cout, std::size_t k = 3) {
  out.push_back({prefix + ".w", {cout, cin, k, k, k}, ParamSpec::Init::kaiming});
  if (cfg.norm == NormKind::instance) {
    out.push_back({prefix + ".gamma", {cout, 1, 1, 1}, ParamSpec::Init::ones});
    out.push_back({prefix + ".beta", {cout, 1, 1, 1}, ParamSpec::Init::zeros});
  } else {
    out.push_back({prefix + ".b", {cout}, ParamSpec::Init::zeros});
  }
}

void add_ssm(std::vector<ParamSpec>& out, const std::string& prefix, const SsmConfig& scfg) {
  SplitMix64 rng(0);
  for (const auto& [name, t] : SsmParams<float>::init(scfg, rng).named_parameters()) {
    out.push_back({prefix + "." + name, t.shape(), ParamSpec::Init::ssm});
  }
}

std::string stage_name(const char* kind, std::size_t i) { return kind + std::to_string(i); }

}  // namespace

std::vector<ParamSpec> parameter_layout(const NetConfig& cfg) {
  if (cfg.base_channels == 0 || cfg.in_channels == 0 || cfg.classes < 2) {
    throw DomainError("NetConfig: need positive widths and at least two classes");
  }
  std::vector<ParamSpec> out;
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 1; i <= kStages; ++i) {
    const std::size_t c = cfg.channels(i);
    add_conv(out, cfg, stage_name("enc", i) + ".conv1", cin, c);
    add_conv(out, cfg, stage_name("enc", i) + ".conv2", c, c);
    cin = c;
  }
  add_ssm(out, "bottleneck", ssm_config(cfg, cfg.bottleneck_channels()));
  add_ssm(out, "skip", ssm_config(cfg, cfg.skip_channels()));
  for (std::size_t j = kStages - 1; j >= 1; --j) {
    const std::size_t c = cfg.channels(j);
    const std::string p = stage_name("dec", j);
    add_conv(out, cfg, p + ".up", cfg.channels(j + 1), c);
    add_conv(out, cfg, p + ".conv1", 2 * c, c);
    add_conv(out, cfg, p + ".conv2", c, c);
  }
  out.push_back({"head.w", {cfg.classes, cfg.channels(1), 1, 1, 1}, ParamSpec::Init::kaiming});
  out.push_back({"head.b", {cfg.classes}, ParamSpec::Init::zeros});
  return out;
}

std::size_t parameter_count(const NetConfig& cfg) {
  std::size_t n = 0;
  for (const auto& p : parameter_layout(cfg)) n += numel(p.shape);
  return n;
}

template <class T>
LossReport<T> ce_dice_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  if (logits.rank() != 4) throw ShapeError("ce_dice_loss: expected [C,X,Y,Z] logits");
  const std::size_t classes = logits.dim(0);
  const std::size_t voxels = logits.numel() / classes;
  if (labels.size() != voxels) throw ShapeError("ce_dice_loss: label volume size mismatch");
  std::vector<T> onehot(classes * voxels, T(0));
  std::vector<T> counts(classes, T(0));
  for (std::size_t v = 0; v < voxels; ++v) {
    const std::size_t c = labels[v];
    if (c >= classes) throw DomainError("ce_dice_loss: label " + std::to_string(c) + " out of range");
    onehot[c * voxels + v] = T(1);
    counts[c] += T(1);
  }
  const Tensor<T> target = Tensor<T>::from({classes, voxels}, std::move(onehot));
  const Tensor<T> flat = reshape(logits, {classes, voxels});

  const Tensor<T> ce = mul_scalar(sum(mul(log_softmax(flat, 0), target)), T(-1) / static_cast<T>(voxels));

  const Tensor<T> prob = softmax(flat, 0);
  const Tensor<T> inter = sum_axis(mul(prob, target), 1);
  const Tensor<T> denom = add(sum_axis(prob, 1), Tensor<T>::from({classes}, std::move(counts)));
  const T eps = static_cast<T>(kDiceSmooth);
  const Tensor<T> dice = div(add_scalar(mul_scalar(inter, T(2)), eps), add_scalar(denom, eps));
  const Tensor<T> fg = slice(dice, 0, 1, classes);
  const Tensor<T> dice_loss = add_scalar(neg(mean(fg)), T(1));

  LossReport<T> r;
  r.total = add(ce, dice_loss);
  r.ce = ce.item();
  r.dice_loss = dice_loss.item();
  r.total_value = r.total.item();
  return r;
}

template <class T>
Network<T>::Network(const NetConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), codebook_(cfg.bottleneck_vq()), skip_codebook_(cfg.skip_vq()) {
  SplitMix64 rng(seed);
  bool bottleneck_done = false, skip_done = false;
  for (const auto& spec : parameter_layout(cfg_)) {
    switch (spec.init) {
      case ParamSpec::Init::kaiming: {
        // He-uniform for relu: bound sqrt(6 / fan_in).
        const std::size_t fan_in = numel(spec.shape) / spec.shape[0];
        const double bound = std::sqrt(6.0 / double(fan_in));
        std::vector<T> v(numel(spec.shape));
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
        params_.emplace_back(spec.name, Tensor<T>::from(spec.shape, std::move(v), true));
        break;
      }
      case ParamSpec::Init::ones:
        params_.emplace_back(spec.name, Tensor<T>::full(spec.shape, T(1), true));
        break;
      case ParamSpec::Init::zeros:
        params_.emplace_back(spec.name, Tensor<T>::zeros(spec.shape, true));
        break;
      case ParamSpec::Init::ssm: {
        const bool bottleneck = spec.name.starts_with("bottleneck.");
        bool& done = bottleneck ? bottleneck_done : skip_done;
        if (done) break;
        done = true;
        auto& block = bottleneck ? bottleneck_ssm_ : skip_ssm_;
        block = SsmParams<T>::init(
            ssm_config(cfg_, bottleneck ? cfg_.bottleneck_channels() : cfg_.skip_channels()), rng);
        const std::string prefix = bottleneck ? "bottleneck." : "skip.";
        for (auto& [name, t] : block.named_parameters()) params_.emplace_back(prefix + name, t);
        break;
      }
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].first] = i;
}

template <class T>
Tensor<T>& Network<T>::parameter(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("network: no parameter named " + name);
  return params_[it->second].second;
}

template <class T>
const Tensor<T>& Network<T>::parameter(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("network: no parameter named " + name);
  return params_[it->second].second;
}

template <class T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <class T>
void Network<T>::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

template <class T>
const MortonPermutation& Network<T>::permutation(const Dims3& dims) const {
  auto& slot = perms_[dims];
  if (!slot) slot = std::make_shared<const MortonPermutation>(dims);
  return *slot;
}

template <class T>
Tensor<T> Network<T>::conv_block(const std::string& prefix, const Tensor<T>& x, std::size_t stride) const {
  const Tensor<T>& w = parameter(prefix + ".w");
  if (cfg_.norm == NormKind::none) return relu(conv3d(x, w, parameter(prefix + ".b"), stride));
  const Tensor<T> y = conv3d(x, w, Tensor<T>{}, stride);
  const Shape shape = y.shape();
  const Tensor<T> normed = reshape(layer_norm(reshape(y, {shape[0], y.numel() / shape[0]}), 1), shape);
  return relu(add(mul(normed, parameter(prefix + ".gamma")), parameter(prefix + ".beta")));
}

template <class T>
Tensor<T> Network<T>::encode_to_bottleneck(const Tensor<T>& volume, std::vector<Tensor<T>>& skips) const {
  if (volume.rank() != 4 || volume.dim(0) != cfg_.in_channels) {
    throw ShapeError("network: expected [" + std::to_string(cfg_.in_channels) + ",X,Y,Z] input, got " +
                     to_string(volume.shape()));
  }
  for (std::size_t a = 1; a < 4; ++a) {
    if (volume.dim(a) == 0 || volume.dim(a) % kDownsampleFactor != 0) {
      throw ShapeError("network: spatial extents must be positive multiples of 16, got " +
                       to_string(volume.shape()));
    }
  }
  skips.clear();
  Tensor<T> x = volume;
  for (std::size_t i = 1; i <= kStages; ++i) {
    const std::size_t stride = (i == 1 || i == kStages) ? 1 : 2;
    x = conv_block(stage_name("enc", i) + ".conv1", x, stride);
    x = conv_block(stage_name("enc", i) + ".conv2", x, 1);
    if (i < kStages) skips.push_back(x);
  }
  skips[3] = bimamba_block(skips[3], skip_ssm_, permutation({skips[3].dim(1), skips[3].dim(2), skips[3].dim(3)}));
  return bimamba_block(x, bottleneck_ssm_, permutation({x.dim(1), x.dim(2), x.dim(3)}));
}

namespace {

template <class T>
struct Quantized {
  Tensor<T> feat;
  Tensor<T> commit;
  std::vector<T> rows;
  std::vector<std::uint32_t> indices;
};

// Quantizes every voxel's channel vector. An uninitialised codebook is
// bypassed so a fresh network can still run inference.
template <class T>
Quantized<T> quantize_volume(const Tensor<T>& feat, const Codebook<T>& cb, const MortonPermutation& perm) {
  Quantized<T> out;
  if (!cb.initialized) {
    out.feat = feat;
    out.commit = Tensor<T>::scalar(T(0));
    return out;
  }
  const Tensor<T> seq = gather_sequence(feat, perm);
  auto q = quantize(seq, cb);
  out.feat = scatter_back(q.quantized, perm);
  out.commit = q.commit_loss;
  out.rows = seq.to_vector();
  out.indices = std::move(q.indices);
  return out;
}

}  // namespace

template <class T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& volume) const {
  std::vector<Tensor<T>> skips;
  Tensor<T> x = encode_to_bottleneck(volume, skips);
  ForwardResult<T> out;
  out.commit = Tensor<T>::scalar(T(0));
  if (cfg_.use_vq) {
    auto q = quantize_volume(x, codebook_, permutation({x.dim(1), x.dim(2), x.dim(3)}));
    x = q.feat;
    out.commit = q.commit;
    out.vq_rows = std::move(q.rows);
    out.vq_indices = std::move(q.indices);
  }
  if (cfg_.use_vq && cfg_.vq_on_skip) {
    const Tensor<T>& s = skips[3];
    auto q = quantize_volume(s, skip_codebook_, permutation({s.dim(1), s.dim(2), s.dim(3)}));
    skips[3] = q.feat;
    out.commit = add(out.commit, q.commit);
    out.skip_vq_rows = std::move(q.rows);
    out.skip_vq_indices = std::move(q.indices);
  }
  for (std::size_t j = kStages - 1; j >= 1; --j) {
    const std::string p = stage_name("dec", j);
    if (j < kStages - 1) x = upsample_nearest3d(x, 2);
    x = conv_block(p + ".up", x, 1);
    x = concat<T>({x, skips[j - 1]}, 0);
    x = conv_block(p + ".conv1", x, 1);
    x = conv_block(p + ".conv2", x, 1);
  }
  out.logits = conv3d(x, parameter("head.w"), parameter("head.b"), 1);
  return out;
}

template <class T>
Tensor<T> Network<T>::predict(const Tensor<T>& volume) const {
  NoGradGuard guard;
  return forward(volume).logits;
}

template <class T>
void Network<T>::init_codebooks(const std::vector<Tensor<T>>& batch, SplitMix64& rng) {
  if (!cfg_.use_vq || batch.empty()) return;
  NoGradGuard guard;
  std::vector<T> rows, skip_rows;
  for (const auto& volume : batch) {
    std::vector<Tensor<T>> skips;
    const Tensor<T> x = encode_to_bottleneck(volume, skips);
    const auto seq = gather_sequence(x, permutation({x.dim(1), x.dim(2), x.dim(3)}));
    rows.insert(rows.end(), seq.data().begin(), seq.data().end());
    if (cfg_.vq_on_skip) {
      const auto& s = skips[3];
      const auto sseq = gather_sequence(s, permutation({s.dim(1), s.dim(2), s.dim(3)}));
      skip_rows.insert(skip_rows.end(), sseq.data().begin(), sseq.data().end());
    }
  }
  if (!codebook_.initialized) codebook_.init_from_batch(rows, rows.size() / codebook_.dim(), rng);
  if (cfg_.vq_on_skip && !skip_codebook_.initialized) {
    skip_codebook_.init_from_batch(skip_rows, skip_rows.size() / skip_codebook_.dim(), rng);
  }
}

template LossReport<float> ce_dice_loss<float>(const Tensor<float>&, std::span<const std::uint8_t>);
template LossReport<double> ce_dice_loss<double>(const Tensor<double>&, std::span<const std::uint8_t>);
template class Network<float>;
template class Network<double>;

}  // namespace drbd
