#include "filtertwin/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "filtertwin/kernels.hpp"

namespace filtertwin {

namespace kn = kernels;

std::string_view to_string(Architecture a) { return a == Architecture::ffnn ? "ffnn" : "lstm"; }

Architecture architecture_from_string(std::string_view s) {
  if (s == "ffnn") return Architecture::ffnn;
  if (s == "lstm") return Architecture::lstm;
  throw DomainError("unknown architecture '" + std::string(s) + "' (expected ffnn|lstm)");
}

std::size_t FfnnModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  return n;
}

std::size_t FfnnModel::weight_offset(std::size_t layer) const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layer; ++l) n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  return n;
}

std::size_t LstmModel::parameter_count() const {
  return 4 * hidden_size * (input_size + hidden_size) + 4 * hidden_size + hidden_size + 1;
}

Architecture architecture_of(const Network& net) {
  return std::holds_alternative<FfnnModel>(net) ? Architecture::ffnn : Architecture::lstm;
}

std::span<double> parameters(Network& net) {
  return std::visit([](auto& m) { return std::span<double>(m.params); }, net);
}

std::span<const double> parameters(const Network& net) {
  return std::visit([](const auto& m) { return std::span<const double>(m.params); }, net);
}

std::size_t input_steps(const Network& net) {
  return std::holds_alternative<FfnnModel>(net) ? 1 : kSequenceLength;
}

namespace {

void glorot_fill(std::span<double> w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w) v = dist(rng);
}

void require_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) throw DomainError("non-finite network input");
}

}  // namespace

FfnnModel init_ffnn(std::uint64_t seed, std::vector<std::size_t> layer_sizes) {
  if (layer_sizes.size() < 2 || layer_sizes.back() != 1)
    throw DomainError("ffnn needs at least input and a single output unit");
  for (auto s : layer_sizes)
    if (s == 0) throw DomainError("ffnn layer sizes must be > 0");
  FfnnModel m;
  m.layer_sizes = std::move(layer_sizes);
  m.params.assign(m.parameter_count(), 0.0);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    const auto in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
    glorot_fill(std::span<double>(m.params).subspan(m.weight_offset(l), in * out), in, out, rng);
  }
  return m;
}

LstmModel init_lstm(std::uint64_t seed, std::size_t hidden_size, std::size_t input_size) {
  if (hidden_size == 0 || input_size == 0) throw DomainError("lstm sizes must be > 0");
  LstmModel m;
  m.hidden_size = hidden_size;
  m.input_size = input_size;
  m.params.assign(m.parameter_count(), 0.0);
  const auto h4 = 4 * hidden_size;
  std::span<double> p(m.params);
  std::mt19937_64 rng(seed);
  glorot_fill(p.subspan(m.wx_offset(), h4 * input_size), input_size, h4, rng);
  glorot_fill(p.subspan(m.wh_offset(), h4 * hidden_size), hidden_size, h4, rng);
  for (std::size_t j = 0; j < hidden_size; ++j) p[m.bias_offset() + hidden_size + j] = 1.0;
  glorot_fill(p.subspan(m.out_offset(), hidden_size), hidden_size, 1, rng);
  return m;
}

Network init_network(Architecture arch, std::uint64_t seed) {
  if (arch == Architecture::ffnn) return init_ffnn(seed);
  return init_lstm(seed);
}

// ---------------------------------------------------------------------------
// Feed-forward

namespace {

struct FfnnWorkspace {
  std::vector<std::vector<double>> pre;   // pre-activations per layer output
  std::vector<std::vector<double>> act;   // activations; act[0] is the input
  std::vector<std::vector<double>> delta;

  explicit FfnnWorkspace(const FfnnModel& m) {
    const auto L = m.layer_sizes.size();
    pre.resize(L);
    act.resize(L);
    delta.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
      pre[l].assign(m.layer_sizes[l], 0.0);
      act[l].assign(m.layer_sizes[l], 0.0);
      delta[l].assign(m.layer_sizes[l], 0.0);
    }
  }
};

double ffnn_forward(const FfnnModel& m, std::span<const double> x, FfnnWorkspace& ws) {
  std::copy(x.begin(), x.end(), ws.act[0].begin());
  const std::span<const double> p(m.params);
  const auto layers = m.layer_sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
    const auto off = m.weight_offset(l);
    kn::gemv({p.subspan(off, in * out), out, in}, ws.act[l], p.subspan(off + in * out, out), ws.pre[l + 1]);
    if (l + 1 < layers) {
      for (std::size_t j = 0; j < out; ++j) ws.act[l + 1][j] = ws.pre[l + 1][j] > 0.0 ? ws.pre[l + 1][j] : 0.0;
    } else {
      ws.act[l + 1] = ws.pre[l + 1];
    }
  }
  return ws.act[layers][0];
}

// Accumulates d(loss)/d(params) into grad given d(loss)/d(output).
void ffnn_backward(const FfnnModel& m, FfnnWorkspace& ws, double d_out, std::span<double> grad) {
  const std::span<const double> p(m.params);
  const auto layers = m.layer_sizes.size() - 1;
  ws.delta[layers][0] = d_out;
  for (std::size_t l = layers; l-- > 0;) {
    const auto in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
    const auto off = m.weight_offset(l);
    kn::ger_acc({grad.subspan(off, in * out), out, in}, ws.delta[l + 1], ws.act[l]);
    kn::axpy(1.0, ws.delta[l + 1], grad.subspan(off + in * out, out));
    if (l == 0) break;
    std::fill(ws.delta[l].begin(), ws.delta[l].end(), 0.0);
    kn::gemv_t_acc({p.subspan(off, in * out), out, in}, ws.delta[l + 1], ws.delta[l]);
    for (std::size_t j = 0; j < in; ++j)
      if (!(ws.pre[l][j] > 0.0)) ws.delta[l][j] = 0.0;
  }
}

}  // namespace

double forward_ffnn(const FfnnModel& model, std::span<const double> x) {
  if (x.size() != model.layer_sizes.front())
    throw DomainError("ffnn input has " + std::to_string(x.size()) + " components, expected " +
                      std::to_string(model.layer_sizes.front()));
  require_finite(x);
  FfnnWorkspace ws(model);
  return ffnn_forward(model, x, ws);
}

// ---------------------------------------------------------------------------
// LSTM

namespace {

// Batched LSTM state. Every per-step block is feature-major: row j holds unit
// j for all nb examples, so the gate products are matrix-matrix kernels.
struct LstmWorkspace {
  std::size_t H = 0, I = 0, steps = 0, nb = 0;
  std::vector<double> x;       // steps * I * nb
  std::vector<double> gates;   // steps * 4H * nb, post-activation (i, f, g, o)
  std::vector<double> cell;    // (steps + 1) * H * nb, block 0 is the zero initial state
  std::vector<double> hidden;  // (steps + 1) * H * nb
  std::vector<double> tanh_c;  // steps * H * nb
  std::vector<double> out;     // nb
  std::vector<double> dz, dh, dc;

  LstmWorkspace(const LstmModel& m, std::size_t n_steps) : H(m.hidden_size), I(m.input_size), steps(n_steps) {}

  void resize(std::size_t n) {
    if (n == nb) return;
    nb = n;
    x.assign(steps * I * nb, 0.0);
    gates.assign(steps * 4 * H * nb, 0.0);
    cell.assign((steps + 1) * H * nb, 0.0);
    hidden.assign((steps + 1) * H * nb, 0.0);
    tanh_c.assign(steps * H * nb, 0.0);
    out.assign(nb, 0.0);
    dz.assign(4 * H * nb, 0.0);
    dh.assign(H * nb, 0.0);
    dc.assign(H * nb, 0.0);
  }

  // Gathers example windows (steps x I each) into the per-step blocks.
  void load(const Dataset& data, std::span<const std::size_t> indices) {
    resize(indices.size());
    for (std::size_t b = 0; b < nb; ++b) {
      const auto w = data.input(indices[b]);
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t f = 0; f < I; ++f) x[(t * I + f) * nb + b] = w[t * I + f];
    }
  }

  void load(std::span<const double> window) {
    resize(1);
    std::copy(window.begin(), window.end(), x.begin());
  }
};

void lstm_forward(const LstmModel& m, LstmWorkspace& ws) {
  const auto H = m.hidden_size, I = m.input_size, nb = ws.nb, steps = ws.steps;
  const std::span<const double> p(m.params);
  const kn::ConstMatrix wx{p.subspan(m.wx_offset(), 4 * H * I), 4 * H, I};
  const kn::ConstMatrix wh{p.subspan(m.wh_offset(), 4 * H * H), 4 * H, H};
  const double* bias = p.data() + m.bias_offset();
  const std::size_t hn = H * nb;
  for (std::size_t t = 0; t < steps; ++t) {
    double* z = ws.gates.data() + t * 4 * hn;
    for (std::size_t r = 0; r < 4 * H; ++r) std::fill(z + r * nb, z + (r + 1) * nb, bias[r]);
    const kn::MutableMatrix zm{{z, 4 * hn}, 4 * H, nb};
    kn::gemm_nn_acc(wx, {{ws.x.data() + t * I * nb, I * nb}, I, nb}, zm);
    if (t > 0) kn::gemm_nn_acc(wh, {{ws.hidden.data() + t * hn, hn}, H, nb}, zm);
    kn::sigmoid_inplace({z, 2 * hn});
    kn::tanh_inplace({z + 2 * hn, hn});
    kn::sigmoid_inplace({z + 3 * hn, hn});
    const double* gi = z;
    const double* gf = gi + hn;
    const double* gg = gf + hn;
    const double* go = gg + hn;
    const double* c_prev = ws.cell.data() + t * hn;
    double* c = ws.cell.data() + (t + 1) * hn;
    double* tc = ws.tanh_c.data() + t * hn;
    for (std::size_t j = 0; j < hn; ++j) {
      c[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
      tc[j] = c[j];
    }
    kn::tanh_inplace({tc, hn});
    double* h = ws.hidden.data() + (t + 1) * hn;
    for (std::size_t j = 0; j < hn; ++j) h[j] = go[j] * tc[j];
  }
  const double* h_last = ws.hidden.data() + steps * hn;
  std::fill(ws.out.begin(), ws.out.end(), p[m.out_offset() + H]);
  for (std::size_t j = 0; j < H; ++j) kn::axpy(p[m.out_offset() + j], {h_last + j * nb, nb}, ws.out);
}

// Accumulates d(sum_b d_out[b] * y_b)/d(params) into grad.
void lstm_backward(const LstmModel& m, LstmWorkspace& ws, std::span<const double> d_out, std::span<double> grad) {
  const auto H = m.hidden_size, I = m.input_size, nb = ws.nb, steps = ws.steps;
  const std::size_t hn = H * nb;
  const std::span<const double> p(m.params);
  const kn::ConstMatrix wh{p.subspan(m.wh_offset(), 4 * H * H), 4 * H, H};
  const kn::MutableMatrix g_wx{grad.subspan(m.wx_offset(), 4 * H * I), 4 * H, I};
  const kn::MutableMatrix g_wh{grad.subspan(m.wh_offset(), 4 * H * H), 4 * H, H};
  double* g_bias = grad.data() + m.bias_offset();

  const double* h_last = ws.hidden.data() + steps * hn;
  for (std::size_t j = 0; j < H; ++j) {
    grad[m.out_offset() + j] += kn::dot(d_out, {h_last + j * nb, nb});
    const double w = p[m.out_offset() + j];
    for (std::size_t b = 0; b < nb; ++b) ws.dh[j * nb + b] = d_out[b] * w;
  }
  grad[m.out_offset() + H] += kn::sum(d_out);
  std::fill(ws.dc.begin(), ws.dc.end(), 0.0);

  for (std::size_t t = steps; t-- > 0;) {
    const double* gi = ws.gates.data() + t * 4 * hn;
    const double* gf = gi + hn;
    const double* gg = gf + hn;
    const double* go = gg + hn;
    const double* c_prev = ws.cell.data() + t * hn;
    const double* tc = ws.tanh_c.data() + t * hn;
    double* dzi = ws.dz.data();
    double* dzf = dzi + hn;
    double* dzg = dzf + hn;
    double* dzo = dzg + hn;
    for (std::size_t j = 0; j < hn; ++j) {
      const double dh = ws.dh[j];
      const double d_o = dh * tc[j];
      const double dc = ws.dc[j] + dh * go[j] * (1.0 - tc[j] * tc[j]);
      dzi[j] = dc * gg[j] * gi[j] * (1.0 - gi[j]);
      dzf[j] = dc * c_prev[j] * gf[j] * (1.0 - gf[j]);
      dzg[j] = dc * gi[j] * (1.0 - gg[j] * gg[j]);
      dzo[j] = d_o * go[j] * (1.0 - go[j]);
      ws.dc[j] = dc * gf[j];
    }
    const kn::ConstMatrix dz{ws.dz, 4 * H, nb};
    kn::gemm_nt_acc(dz, {{ws.x.data() + t * I * nb, I * nb}, I, nb}, g_wx);
    for (std::size_t r = 0; r < 4 * H; ++r) g_bias[r] += kn::sum({ws.dz.data() + r * nb, nb});
    if (t == 0) break;  // h_0 is zero
    kn::gemm_nt_acc(dz, {{ws.hidden.data() + t * hn, hn}, H, nb}, g_wh);
    std::fill(ws.dh.begin(), ws.dh.end(), 0.0);
    kn::gemm_tn_acc(wh, dz, {ws.dh, H, nb});
  }
}

void check_window(const LstmModel& m, std::span<const double> window, std::size_t steps) {
  if (steps != kSequenceLength)
    throw DomainError("lstm window must have " + std::to_string(kSequenceLength) + " steps, got " +
                      std::to_string(steps));
  if (window.size() != steps * m.input_size)
    throw DomainError("lstm window has " + std::to_string(window.size()) + " values, expected " +
                      std::to_string(steps * m.input_size));
  require_finite(window);
}

}  // namespace

double forward_lstm(const LstmModel& model, std::span<const double> window, std::size_t steps) {
  check_window(model, window, steps);
  LstmWorkspace ws(model, steps);
  ws.load(window);
  lstm_forward(model, ws);
  return ws.out[0];
}

double forward_lstm(const LstmModel& model, const SequenceWindow& window) {
  std::vector<double> flat;
  flat.reserve(window.steps.size() * kFeatureCount);
  for (const auto& row : window.steps) flat.insert(flat.end(), row.begin(), row.end());
  return forward_lstm(model, flat, window.steps.size());
}

LstmTrace trace_lstm(const LstmModel& model, std::span<const double> window, std::size_t steps) {
  check_window(model, window, steps);
  LstmWorkspace ws(model, steps);
  ws.load(window);
  lstm_forward(model, ws);
  LstmTrace tr;
  tr.output = ws.out[0];
  const auto H = model.hidden_size;
  const auto at = [](const std::vector<double>& v, std::size_t offset, std::size_t n) {
    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(offset),
                               v.begin() + static_cast<std::ptrdiff_t>(offset + n));
  };
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t z = t * 4 * H;
    tr.input_gate.push_back(at(ws.gates, z, H));
    tr.forget_gate.push_back(at(ws.gates, z + H, H));
    tr.candidate.push_back(at(ws.gates, z + 2 * H, H));
    tr.output_gate.push_back(at(ws.gates, z + 3 * H, H));
    tr.cell.push_back(at(ws.cell, (t + 1) * H, H));
    tr.hidden.push_back(at(ws.hidden, (t + 1) * H, H));
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Datasets, prediction and gradients

void Dataset::push_back(std::span<const double> x, double y) {
  if (x.size() != steps * kFeatureCount) throw DomainError("dataset row has wrong arity");
  inputs.insert(inputs.end(), x.begin(), x.end());
  targets.push_back(y);
}

double predict(const Network& net, std::span<const double> input) {
  if (const auto* f = std::get_if<FfnnModel>(&net)) return forward_ffnn(*f, input);
  const auto& l = std::get<LstmModel>(net);
  return forward_lstm(l, input, input.size() / std::max<std::size_t>(l.input_size, 1));
}

namespace {

// Examples per batched LSTM pass.
constexpr std::size_t kLstmChunk = 64;

void check_dataset(const Network& net, const Dataset& data) {
  if (data.steps != input_steps(net))
    throw DomainError("dataset has " + std::to_string(data.steps) + " steps per example, network expects " +
                      std::to_string(input_steps(net)));
}

}  // namespace

double mse_gradients(const Network& net, const Dataset& data, std::span<const std::size_t> indices,
                     std::vector<double>& grad) {
  if (indices.empty()) throw DomainError("gradient batch is empty");
  check_dataset(net, data);
  const auto params = parameters(net);
  grad.assign(params.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(indices.size());
  double loss = 0.0;
  std::visit(
      [&](const auto& model) {
        using M = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<M, FfnnModel>) {
          FfnnWorkspace ws(model);
          for (auto i : indices) {
            const double err = ffnn_forward(model, data.input(i), ws) - data.targets[i];
            loss += err * err;
            ffnn_backward(model, ws, 2.0 * err * inv_n, grad);
          }
        } else {
          LstmWorkspace ws(model, data.steps);
          std::vector<double> d_out;
          for (std::size_t start = 0; start < indices.size(); start += kLstmChunk) {
            const auto chunk = indices.subspan(start, std::min(kLstmChunk, indices.size() - start));
            ws.load(data, chunk);
            lstm_forward(model, ws);
            d_out.resize(chunk.size());
            for (std::size_t b = 0; b < chunk.size(); ++b) {
              const double err = ws.out[b] - data.targets[chunk[b]];
              loss += err * err;
              d_out[b] = 2.0 * err * inv_n;
            }
            lstm_backward(model, ws, d_out, grad);
          }
        }
      },
      net);
  return loss * inv_n;
}

double mse_gradients(const Network& net, const Dataset& data, std::vector<double>& grad) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return mse_gradients(net, data, all, grad);
}

double mse_loss(const Network& net, const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DomainError("loss batch is empty");
  check_dataset(net, data);
  double loss = 0.0;
  std::visit(
      [&](const auto& model) {
        using M = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<M, FfnnModel>) {
          FfnnWorkspace ws(model);
          for (auto i : indices) {
            const double err = ffnn_forward(model, data.input(i), ws) - data.targets[i];
            loss += err * err;
          }
        } else {
          LstmWorkspace ws(model, data.steps);
          for (std::size_t start = 0; start < indices.size(); start += kLstmChunk) {
            const auto chunk = indices.subspan(start, std::min(kLstmChunk, indices.size() - start));
            ws.load(data, chunk);
            lstm_forward(model, ws);
            for (std::size_t b = 0; b < chunk.size(); ++b) {
              const double err = ws.out[b] - data.targets[chunk[b]];
              loss += err * err;
            }
          }
        }
      },
      net);
  return loss / static_cast<double>(indices.size());
}

std::vector<double> predict_batch(const Network& net, const Dataset& data) {
  check_dataset(net, data);
  std::vector<double> out(data.size());
  std::visit(
      [&](const auto& model) {
        using M = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<M, FfnnModel>) {
          FfnnWorkspace ws(model);
          for (std::size_t i = 0; i < data.size(); ++i) out[i] = ffnn_forward(model, data.input(i), ws);
        } else {
          LstmWorkspace ws(model, data.steps);
          std::vector<std::size_t> chunk;
          for (std::size_t start = 0; start < data.size(); start += kLstmChunk) {
            chunk.resize(std::min(kLstmChunk, data.size() - start));
            std::iota(chunk.begin(), chunk.end(), start);
            ws.load(data, chunk);
            lstm_forward(model, ws);
            std::copy(ws.out.begin(), ws.out.end(), out.begin() + static_cast<std::ptrdiff_t>(start));
          }
        }
      },
      net);
  return out;
}

}  // namespace filtertwin
