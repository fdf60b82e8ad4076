#pragma once

// Gated attention-based multiple instance learning.
//
// Per-instance embedding feeds a two-branch attention head:
//   e_i = dropout(relu(W_e x_i + b_e))
//   s_i = w . dropout(tanh(V e_i + b_V) * sigmoid(U e_i + b_U)) + b_w
//   a   = softmax(s),  z = sum_i a_i e_i,  probs = softmax(W_h z + b_h)
// Class 1 is the event (BCR) branch; the risk score is probs[1].
//
// The backward pass is analytic and exercised against central finite
// differences. Training math defaults to f64; the float instantiation passes
// the same suites at relaxed tolerance.
//
// Checkpoint layout (little-endian):
//   magic "MSMP", version u16 = 1, dim u32, embed u32, attn u32,
//   then per tensor (fixed order: w_embed, b_embed, attn_v, b_v, attn_u, b_u,
//   attn_w, b_w, w_head, b_head): length u64 followed by that many f64.

#include <cmath>
#include <cstring>
#include <limits>

#include "msbcr/cohort.hpp"
#include "msbcr/common.hpp"

namespace msbcr {

template <typename T>
struct PatientBagT {
  Mat<T> instances;  // m x dim
  Endpoint label = Endpoint::excluded;

  std::size_t size() const { return instances.rows; }
};

using PatientBag = PatientBagT<double>;

struct Dropout {
  double rate = 0.0;
  std::uint64_t seed = 0;
  bool enabled = false;

  static Dropout off() { return {}; }
  static Dropout with(double rate, std::uint64_t seed) {
    require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0,1)");
    return {rate, seed, rate > 0.0};
  }
};

template <typename T>
struct MilParamsT {
  std::size_t dim = 0;        // input embedding width
  std::size_t embed_dim = 0;  // E
  std::size_t attn_dim = 0;   // A

  Mat<T> w_embed;          // E x dim
  std::vector<T> b_embed;  // E
  Mat<T> attn_v;           // A x E, tanh branch
  std::vector<T> b_v;      // A
  Mat<T> attn_u;           // A x E, sigmoid gate
  std::vector<T> b_u;      // A
  std::vector<T> attn_w;   // A
  T b_w{};                 // attention score bias
  Mat<T> w_head;           // 2 x E
  std::vector<T> b_head;   // 2

  static MilParamsT zeros(std::size_t dim, std::size_t embed_dim, std::size_t attn_dim) {
    require(dim >= 1 && embed_dim >= 1 && attn_dim >= 1, "mil: dims must be >= 1");
    MilParamsT p;
    p.dim = dim;
    p.embed_dim = embed_dim;
    p.attn_dim = attn_dim;
    p.w_embed = Mat<T>(embed_dim, dim);
    p.b_embed.assign(embed_dim, T{});
    p.attn_v = Mat<T>(attn_dim, embed_dim);
    p.b_v.assign(attn_dim, T{});
    p.attn_u = Mat<T>(attn_dim, embed_dim);
    p.b_u.assign(attn_dim, T{});
    p.attn_w.assign(attn_dim, T{});
    p.b_w = T{};
    p.w_head = Mat<T>(2, embed_dim);
    p.b_head.assign(2, T{});
    return p;
  }

  // Fixed tensor order shared by Adam, serialization, and reductions.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(w_embed.data.data(), w_embed.data.size());
    fn(b_embed.data(), b_embed.size());
    fn(attn_v.data.data(), attn_v.data.size());
    fn(b_v.data(), b_v.size());
    fn(attn_u.data.data(), attn_u.data.size());
    fn(b_u.data(), b_u.size());
    fn(attn_w.data(), attn_w.size());
    fn(&b_w, 1);
    fn(w_head.data.data(), w_head.data.size());
    fn(b_head.data(), b_head.size());
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<MilParamsT*>(this)->for_each_tensor(
        [&](T* data, std::size_t len) { fn(const_cast<const T*>(data), len); });
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for_each_tensor([&](const T*, std::size_t len) { total += len; });
    return total;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const T* data, std::size_t len) {
      for (std::size_t i = 0; i < len; ++i)
        if (!std::isfinite(static_cast<double>(data[i]))) ok = false;
    });
    return ok;
  }

  bool operator==(const MilParamsT& o) const {
    return dim == o.dim && embed_dim == o.embed_dim && attn_dim == o.attn_dim && w_embed == o.w_embed &&
           b_embed == o.b_embed && attn_v == o.attn_v && b_v == o.b_v && attn_u == o.attn_u && b_u == o.b_u &&
           attn_w == o.attn_w && b_w == o.b_w && w_head == o.w_head && b_head == o.b_head;
  }
};

using MilParams = MilParamsT<double>;

// Xavier-uniform weights, zero biases.
template <typename T = double>
MilParamsT<T> init_mil_params(std::size_t dim, std::size_t embed_dim, std::size_t attn_dim, std::uint64_t seed) {
  MilParamsT<T> p = MilParamsT<T>::zeros(dim, embed_dim, attn_dim);
  Rng rng(derive_seed(seed, 0x1417ull));
  auto fill = [&](Mat<T>& w, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (T& v : w.data) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  };
  fill(p.w_embed, dim, embed_dim);
  fill(p.attn_v, embed_dim, attn_dim);
  fill(p.attn_u, embed_dim, attn_dim);
  const double wb = std::sqrt(6.0 / static_cast<double>(attn_dim + 1));
  for (T& v : p.attn_w) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * wb);
  fill(p.w_head, embed_dim, 2);
  return p;
}

namespace detail {

template <typename T>
void matvec(const Mat<T>& w, const T* x, T* out) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const T* row = w.row(r);
    T acc{};
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

// out (cols) += w^T y
template <typename T>
void matvec_transposed_add(const Mat<T>& w, const T* y, T* out) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const T* row = w.row(r);
    const T yr = y[r];
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += yr * row[c];
  }
}

// grad (rows x cols) += u (rows) outer v (cols)
template <typename T>
void outer_add(Mat<T>& grad, const T* u, const T* v) {
  for (std::size_t r = 0; r < grad.rows; ++r) {
    T* row = grad.row(r);
    const T ur = u[r];
    for (std::size_t c = 0; c < grad.cols; ++c) row[c] += ur * v[c];
  }
}

template <typename T>
void softmax_inplace(std::vector<T>& v) {
  T hi = v[0];
  for (T x : v) hi = std::max(hi, x);
  T total{};
  for (T& x : v) {
    x = std::exp(x - hi);
    total += x;
  }
  for (T& x : v) x /= total;
}

// Everything the backward pass needs from one forward evaluation.
template <typename T>
struct MilTrace {
  Mat<T> pre_embed;      // m x E, before relu
  Mat<T> embed;          // m x E, after relu and dropout
  Mat<T> tanh_act;       // m x A
  Mat<T> gate_act;       // m x A
  Mat<T> gated;          // m x A, after dropout
  std::vector<T> attention;  // m
  std::vector<T> pooled;     // E
  std::vector<T> probs;      // 2
  Mat<T> mask_embed;     // m x E dropout keep scale (1/keep or 0); empty if off
  Mat<T> mask_attn;      // m x A
  bool dropout_on = false;
};

template <typename T>
MilTrace<T> forward_trace(const MilParamsT<T>& params, const PatientBagT<T>& bag, const Dropout& dropout) {
  require(bag.size() >= 1, "mil forward: empty bag");
  require(bag.instances.cols == params.dim,
          "mil forward: instance width " + std::to_string(bag.instances.cols) + " != model dim " +
              std::to_string(params.dim));
  if (!bag.instances.all_finite()) throw DataError("mil forward: non-finite instance values");

  const std::size_t m = bag.size();
  const std::size_t E = params.embed_dim;
  const std::size_t A = params.attn_dim;

  MilTrace<T> t;
  t.pre_embed = Mat<T>(m, E);
  t.embed = Mat<T>(m, E);
  t.tanh_act = Mat<T>(m, A);
  t.gate_act = Mat<T>(m, A);
  t.gated = Mat<T>(m, A);
  t.attention.resize(m);
  t.dropout_on = dropout.enabled && dropout.rate > 0.0;

  if (t.dropout_on) {
    // Masks are drawn in a fixed order so a (rate, seed) pair names one mask.
    Rng rng(derive_seed(dropout.seed, 0xD201ull));
    const T inv_keep = static_cast<T>(1.0 / (1.0 - dropout.rate));
    t.mask_embed = Mat<T>(m, E);
    t.mask_attn = Mat<T>(m, A);
    for (T& v : t.mask_embed.data) v = rng.uniform() < dropout.rate ? T{} : inv_keep;
    for (T& v : t.mask_attn.data) v = rng.uniform() < dropout.rate ? T{} : inv_keep;
  }

  std::vector<T> scores(m);
  for (std::size_t i = 0; i < m; ++i) {
    T* pre = t.pre_embed.row(i);
    matvec(params.w_embed, bag.instances.row(i), pre);
    T* e = t.embed.row(i);
    for (std::size_t j = 0; j < E; ++j) {
      T v = pre[j] + params.b_embed[j];
      pre[j] = v;
      v = v > T{} ? v : T{};
      e[j] = t.dropout_on ? v * t.mask_embed(i, j) : v;
    }

    T* th = t.tanh_act.row(i);
    T* gt = t.gate_act.row(i);
    matvec(params.attn_v, e, th);
    matvec(params.attn_u, e, gt);
    T* gated = t.gated.row(i);
    T score{};
    for (std::size_t j = 0; j < A; ++j) {
      th[j] = std::tanh(th[j] + params.b_v[j]);
      gt[j] = T(1) / (T(1) + std::exp(-(gt[j] + params.b_u[j])));
      T h = th[j] * gt[j];
      if (t.dropout_on) h *= t.mask_attn(i, j);
      gated[j] = h;
      score += params.attn_w[j] * h;
    }
    scores[i] = score + params.b_w;
  }

  softmax_inplace(scores);
  t.attention = scores;

  t.pooled.assign(E, T{});
  for (std::size_t i = 0; i < m; ++i) {
    const T a = t.attention[i];
    const T* e = t.embed.row(i);
    for (std::size_t j = 0; j < E; ++j) t.pooled[j] += a * e[j];
  }

  t.probs.resize(2);
  matvec(params.w_head, t.pooled.data(), t.probs.data());
  t.probs[0] += params.b_head[0];
  t.probs[1] += params.b_head[1];
  softmax_inplace(t.probs);
  return t;
}

}  // namespace detail

template <typename T>
struct MilOutput {
  std::vector<T> probs;      // 2-vector, sums to 1
  std::vector<T> attention;  // m-vector, sums to 1
};

template <typename T>
MilOutput<T> forward(const MilParamsT<T>& params, const PatientBagT<T>& bag, const Dropout& dropout = Dropout::off()) {
  auto trace = detail::forward_trace(params, bag, dropout);
  return {std::move(trace.probs), std::move(trace.attention)};
}

// Cross-entropy loss and exact gradients under the fixed dropout mask.
template <typename T>
std::pair<T, MilParamsT<T>> loss_and_grad(const MilParamsT<T>& params, const PatientBagT<T>& bag,
                                          const Dropout& dropout = Dropout::off()) {
  require(bag.label == Endpoint::positive || bag.label == Endpoint::negative,
          "loss_and_grad: bag label must be positive or negative");
  const std::size_t y = bag.label == Endpoint::positive ? 1 : 0;

  auto t = detail::forward_trace(params, bag, dropout);
  const std::size_t m = bag.size();
  const std::size_t E = params.embed_dim;
  const std::size_t A = params.attn_dim;

  MilParamsT<T> g = MilParamsT<T>::zeros(params.dim, E, A);
  const T loss = -std::log(std::max(t.probs[y], std::numeric_limits<T>::min()));

  // softmax + cross-entropy head
  std::vector<T> d_logits = {t.probs[0], t.probs[1]};
  d_logits[y] -= T(1);
  detail::outer_add(g.w_head, d_logits.data(), t.pooled.data());
  g.b_head[0] += d_logits[0];
  g.b_head[1] += d_logits[1];

  std::vector<T> d_pooled(E, T{});
  detail::matvec_transposed_add(params.w_head, d_logits.data(), d_pooled.data());

  // attention softmax: ds_i = a_i (dL/da_i - sum_j a_j dL/da_j)
  std::vector<T> d_attn(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* e = t.embed.row(i);
    T acc{};
    for (std::size_t j = 0; j < E; ++j) acc += d_pooled[j] * e[j];
    d_attn[i] = acc;
  }
  T mix{};
  for (std::size_t i = 0; i < m; ++i) mix += t.attention[i] * d_attn[i];

  std::vector<T> d_embed(E), d_pre_v(A), d_pre_u(A);
  for (std::size_t i = 0; i < m; ++i) {
    const T a = t.attention[i];
    const T d_score = a * (d_attn[i] - mix);

    g.b_w += d_score;
    const T* gated = t.gated.row(i);
    const T* th = t.tanh_act.row(i);
    const T* gt = t.gate_act.row(i);
    const T* e = t.embed.row(i);

    // pooling contribution to the embedding gradient
    for (std::size_t j = 0; j < E; ++j) d_embed[j] = a * d_pooled[j];

    for (std::size_t j = 0; j < A; ++j) {
      g.attn_w[j] += d_score * gated[j];
      T dh = d_score * params.attn_w[j];
      if (t.dropout_on) dh *= t.mask_attn(i, j);
      const T dt = dh * gt[j];
      const T dg = dh * th[j];
      d_pre_v[j] = dt * (T(1) - th[j] * th[j]);
      d_pre_u[j] = dg * gt[j] * (T(1) - gt[j]);
      g.b_v[j] += d_pre_v[j];
      g.b_u[j] += d_pre_u[j];
    }
    detail::outer_add(g.attn_v, d_pre_v.data(), e);
    detail::outer_add(g.attn_u, d_pre_u.data(), e);
    detail::matvec_transposed_add(params.attn_v, d_pre_v.data(), d_embed.data());
    detail::matvec_transposed_add(params.attn_u, d_pre_u.data(), d_embed.data());

    // back through dropout and relu
    const T* pre = t.pre_embed.row(i);
    for (std::size_t j = 0; j < E; ++j) {
      T de = d_embed[j];
      if (t.dropout_on) de *= t.mask_embed(i, j);
      d_embed[j] = pre[j] > T{} ? de : T{};
    }
    detail::outer_add(g.w_embed, d_embed.data(), bag.instances.row(i));
    for (std::size_t j = 0; j < E; ++j) g.b_embed[j] += d_embed[j];
  }

  return {loss, std::move(g)};
}

// ---------------------------------------------------------------------------
// Adam with coupled L2 weight decay (decay added to the gradient before the
// moment updates) and standard bias correction.
// ---------------------------------------------------------------------------

template <typename T>
struct AdamStateT {
  MilParamsT<T> m;  // first moments, mirrors the parameter shapes
  MilParamsT<T> v;  // second moments
  std::int64_t t = 0;
  double lr = 5e-6;
  double weight_decay = 5e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamStateT for_params(const MilParamsT<T>& p, double lr, double weight_decay) {
    AdamStateT s;
    s.m = MilParamsT<T>::zeros(p.dim, p.embed_dim, p.attn_dim);
    s.v = MilParamsT<T>::zeros(p.dim, p.embed_dim, p.attn_dim);
    s.lr = lr;
    s.weight_decay = weight_decay;
    return s;
  }
};

using AdamState = AdamStateT<double>;

template <typename T>
void adam_step(AdamStateT<T>& state, MilParamsT<T>& params, const MilParamsT<T>& grads) {
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");
  state.t += 1;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  struct Slot {
    T* p;
    const T* g;
    T* m;
    T* v;
    std::size_t len;
  };
  std::vector<Slot> slots;
  params.for_each_tensor([&](T* p, std::size_t len) { slots.push_back({p, nullptr, nullptr, nullptr, len}); });
  std::size_t k = 0;
  grads.for_each_tensor([&](const T* g, std::size_t len) {
    require(slots[k].len == len, "adam_step: shape mismatch");
    slots[k++].g = g;
  });
  k = 0;
  state.m.for_each_tensor([&](T* m, std::size_t len) {
    require(slots[k].len == len, "adam_step: moment shape mismatch");
    slots[k++].m = m;
  });
  k = 0;
  state.v.for_each_tensor([&](T* v, std::size_t) { slots[k++].v = v; });

  for (const Slot& s : slots) {
    for (std::size_t i = 0; i < s.len; ++i) {
      const double g = static_cast<double>(s.g[i]) + state.weight_decay * static_cast<double>(s.p[i]);
      const double m = state.beta1 * static_cast<double>(s.m[i]) + (1.0 - state.beta1) * g;
      const double v = state.beta2 * static_cast<double>(s.v[i]) + (1.0 - state.beta2) * g * g;
      s.m[i] = static_cast<T>(m);
      s.v[i] = static_cast<T>(v);
      const double m_hat = m / bias1;
      const double v_hat = v / bias2;
      s.p[i] = static_cast<T>(static_cast<double>(s.p[i]) - state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

// Per-bag gradients averaged over the group's actual length (invariant to the
// configured accumulation count at epoch tails), then one Adam step. The
// per-bag gradients may be computed in parallel; the pairwise reduction over
// fixed slots keeps the average independent of scheduling.
template <typename T>
T accumulate_and_step(AdamStateT<T>& state, MilParamsT<T>& params, const std::vector<PatientBagT<T>>& bags,
                      const std::vector<Dropout>& dropout_modes = {}) {
  require(!bags.empty(), "accumulate_and_step: empty bag list");
  require(dropout_modes.empty() || dropout_modes.size() == bags.size(),
          "accumulate_and_step: dropout modes must match bags");

  std::vector<MilParamsT<T>> grads(bags.size());
  std::vector<T> losses(bags.size());
  parallel_for(bags.size(), [&](std::size_t i) {
    Dropout mode = dropout_modes.empty() ? Dropout::off() : dropout_modes[i];
    auto [loss, grad] = loss_and_grad(params, bags[i], mode);
    losses[i] = loss;
    grads[i] = std::move(grad);
  });

  const T inv_n = T(1) / static_cast<T>(bags.size());
  MilParamsT<T> mean = pairwise_reduce(std::move(grads), [](MilParamsT<T>& a, MilParamsT<T>& b) {
    std::vector<std::pair<T*, std::size_t>> dst;
    a.for_each_tensor([&](T* p, std::size_t len) { dst.push_back({p, len}); });
    std::size_t k = 0;
    b.for_each_tensor([&](T* p, std::size_t len) {
      T* out = dst[k].first;
      for (std::size_t i = 0; i < len; ++i) out[i] += p[i];
      ++k;
    });
  });
  mean.for_each_tensor([&](T* p, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) p[i] *= inv_n;
  });

  adam_step(state, params, mean);
  T total{};
  for (T l : losses) total += l;
  return total * inv_n;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O (f64 payloads, bit-exact round trip).
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kModelMagic[4] = {'M', 'S', 'M', 'P'};
constexpr std::uint16_t kModelVersion = 1;
}  // namespace detail

inline void write_checkpoint(const MilParams& params, const std::filesystem::path& path) {
  std::string bytes;
  bytes.append(detail::kModelMagic, 4);
  detail::put_le<std::uint16_t>(bytes, detail::kModelVersion);
  detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(params.dim));
  detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(params.embed_dim));
  detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(params.attn_dim));
  params.for_each_tensor([&](const double* data, std::size_t len) {
    detail::put_le<std::uint64_t>(bytes, static_cast<std::uint64_t>(len));
    for (std::size_t i = 0; i < len; ++i) detail::put_le<double>(bytes, data[i]);
  });
  write_file_atomic(path, bytes);
}

inline MilParams read_checkpoint(const std::filesystem::path& path) {
  std::string bytes = read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), detail::kModelMagic, 4) != 0)
    throw FormatError(path.string() + ": bad magic, not a model checkpoint");
  std::size_t off = 4;
  auto version = detail::get_le<std::uint16_t>(bytes, off, "version");
  if (version != detail::kModelVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  auto dim = detail::get_le<std::uint32_t>(bytes, off, "dim");
  auto embed = detail::get_le<std::uint32_t>(bytes, off, "embed_dim");
  auto attn = detail::get_le<std::uint32_t>(bytes, off, "attn_dim");
  if (dim > (1u << 20) || embed > (1u << 20) || attn > (1u << 20))
    throw FormatError(path.string() + ": implausible model dimensions");
  MilParams params = MilParams::zeros(dim, embed, attn);
  params.for_each_tensor([&](double* data, std::size_t len) {
    auto stored = detail::get_le<std::uint64_t>(bytes, off, "tensor length");
    if (stored != len)
      throw FormatError(path.string() + ": tensor length mismatch (" + std::to_string(stored) + " vs " +
                        std::to_string(len) + ")");
    for (std::size_t i = 0; i < len; ++i) data[i] = detail::get_le<double>(bytes, off, "tensor payload");
  });
  if (!params.all_finite()) throw FormatError(path.string() + ": non-finite parameter values");
  return params;
}

}  // namespace msbcr
