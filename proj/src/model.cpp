#include "sparsephase/model.hpp"

#include "sparsephase/io.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

namespace sparsephase {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using MutVecMap = Eigen::Map<Eigen::RowVectorXd>;

std::atomic<std::uint64_t> g_next_version{1};

struct LayerLayout {
  std::size_t taps[3];
  std::size_t tap_bias;
  std::size_t mix_w;
  std::size_t mix_b;
};

struct StageLayout {
  int in_dim;
  std::size_t in_w;
  std::size_t in_b;
  std::vector<LayerLayout> layers;
  std::size_t out_w;
  std::size_t out_b;
};

struct Layout {
  std::vector<StageLayout> stages;
  std::size_t total = 0;
};

Layout make_layout(const TcnArch& arch) {
  Layout lay;
  std::size_t off = 0;
  const std::size_t ch = static_cast<std::size_t>(arch.channels);
  const std::size_t k = static_cast<std::size_t>(arch.num_outputs());
  for (int s = 0; s < arch.stages; ++s) {
    StageLayout st;
    st.in_dim = s == 0 ? arch.input_dim : arch.num_outputs();
    st.in_w = off;
    off += static_cast<std::size_t>(st.in_dim) * ch;
    st.in_b = off;
    off += ch;
    for (int l = 0; l < arch.layers; ++l) {
      LayerLayout ll{};
      for (auto& tap : ll.taps) {
        tap = off;
        off += ch * ch;
      }
      ll.tap_bias = off;
      off += ch;
      ll.mix_w = off;
      off += ch * ch;
      ll.mix_b = off;
      off += ch;
      st.layers.push_back(ll);
    }
    st.out_w = off;
    off += ch * k;
    st.out_b = off;
    off += k;
    lay.stages.push_back(std::move(st));
  }
  lay.total = off;
  return lay;
}

// Row t of the result is row clamp(t + offset) of h.
Matrix shifted(const Matrix& h, int offset) {
  const int T = static_cast<int>(h.rows());
  Matrix out(h.rows(), h.cols());
  for (int t = 0; t < T; ++t) out.row(t) = h.row(std::clamp(t + offset, 0, T - 1));
  return out;
}

void scatter_shifted(Matrix& dst, const Matrix& src, int offset) {
  const int T = static_cast<int>(src.rows());
  for (int t = 0; t < T; ++t) dst.row(std::clamp(t + offset, 0, T - 1)) += src.row(t);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double m = logits.row(t).maxCoeff();
    p.row(t) = (logits.row(t).array() - m).exp().matrix();
    p.row(t) /= p.row(t).sum();
  }
  return p;
}

}  // namespace

std::size_t TcnArch::parameter_count() const { return make_layout(*this).total; }

void TcnArch::validate() const {
  if (input_dim < 1) throw std::invalid_argument("TcnArch: input_dim must be >= 1");
  if (num_phases < 1) throw std::invalid_argument("TcnArch: num_phases must be >= 1");
  if (stages < 1 || layers < 0 || channels < 1) {
    throw std::invalid_argument("TcnArch: stages >= 1, layers >= 0, channels >= 1 required");
  }
  if (layers > 30) throw std::invalid_argument("TcnArch: dilation 2^layers would overflow");
}

void adam_update(std::span<double> values, std::span<const double> grad, AdamState& state,
                 double lr) {
  if (values.size() != grad.size() || state.m.size() != values.size()) {
    throw std::invalid_argument("adam_update: size mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < values.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    values[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

TcnParams TcnParams::initialize(const TcnArch& arch, std::uint64_t seed,
                                bool zero_output_projection) {
  arch.validate();
  const Layout lay = make_layout(arch);
  TcnParams p;
  p.arch_ = arch;
  p.values_.assign(lay.total, 0.0);
  p.adam_ = AdamState(lay.total);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto fill = [&](std::size_t off, std::size_t count, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = 0; i < count; ++i) p.values_[off + i] = bound * unit(rng);
  };
  const std::size_t ch = static_cast<std::size_t>(arch.channels);
  const std::size_t k = static_cast<std::size_t>(arch.num_outputs());
  for (const auto& st : lay.stages) {
    fill(st.in_w, static_cast<std::size_t>(st.in_dim) * ch, st.in_dim);
    fill(st.in_b, ch, st.in_dim);
    for (const auto& ll : st.layers) {
      for (auto tap : ll.taps) fill(tap, ch * ch, 3.0 * static_cast<double>(ch));
      fill(ll.tap_bias, ch, 3.0 * static_cast<double>(ch));
      fill(ll.mix_w, ch * ch, static_cast<double>(ch));
      fill(ll.mix_b, ch, static_cast<double>(ch));
    }
    fill(st.out_w, ch * k, static_cast<double>(ch));
    fill(st.out_b, k, static_cast<double>(ch));
  }
  if (zero_output_projection) {
    const auto& last = lay.stages.back();
    std::fill_n(p.values_.begin() + static_cast<std::ptrdiff_t>(last.out_w), ch * k + k, 0.0);
  }
  p.touch();
  return p;
}

TcnParams TcnParams::from_values(const TcnArch& arch, std::vector<double> values, AdamState adam) {
  arch.validate();
  const std::size_t n = arch.parameter_count();
  if (values.size() != n || adam.m.size() != n || adam.v.size() != n) {
    throw std::invalid_argument("TcnParams: parameter count does not match architecture");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("TcnParams: non-finite parameter");
  }
  TcnParams p;
  p.arch_ = arch;
  p.values_ = std::move(values);
  p.adam_ = std::move(adam);
  p.touch();
  return p;
}

void TcnParams::set_value(std::size_t index, double v) {
  values_.at(index) = v;
  touch();
}

void TcnParams::touch() { version_ = g_next_version.fetch_add(1); }

std::vector<Matrix> tcn_forward(const TcnParams& params, const FeatureSequence& feats,
                                GradTape* tape) {
  const TcnArch& arch = params.arch();
  if (feats.dim() != arch.input_dim) {
    throw std::invalid_argument("tcn_forward: feature width " + std::to_string(feats.dim()) +
                                " does not match model input width " +
                                std::to_string(arch.input_dim));
  }
  const Layout lay = make_layout(arch);
  const double* w = params.values().data();
  const int ch = arch.channels;
  const int k = arch.num_outputs();

  if (tape) {
    *tape = GradTape{};
    tape->params_version_ = params.version();
    tape->recorded_ = true;
    tape->stages_.resize(static_cast<std::size_t>(arch.stages));
  }

  std::vector<Matrix> outputs;
  outputs.reserve(static_cast<std::size_t>(arch.stages));
  Matrix input = feats.frames();
  for (int s = 0; s < arch.stages; ++s) {
    const StageLayout& st = lay.stages[static_cast<std::size_t>(s)];
    Matrix h = input * ConstMap(w + st.in_w, st.in_dim, ch);
    h.rowwise() += ConstVecMap(w + st.in_b, ch);
    GradTape::StageCache* cache = tape ? &tape->stages_[static_cast<std::size_t>(s)] : nullptr;
    if (cache) cache->input = input;

    for (int l = 0; l < arch.layers; ++l) {
      const LayerLayout& ll = st.layers[static_cast<std::size_t>(l)];
      const int d = 1 << l;
      Matrix z = h * ConstMap(w + ll.taps[1], ch, ch);
      z.noalias() += shifted(h, -d) * ConstMap(w + ll.taps[0], ch, ch);
      z.noalias() += shifted(h, d) * ConstMap(w + ll.taps[2], ch, ch);
      z.rowwise() += ConstVecMap(w + ll.tap_bias, ch);
      Matrix a = z.cwiseMax(0.0);
      Matrix o = a * ConstMap(w + ll.mix_w, ch, ch);
      o.rowwise() += ConstVecMap(w + ll.mix_b, ch);
      if (cache) {
        cache->layer_inputs.push_back(h);
        cache->layer_relu.push_back(a);
      }
      h += o;
    }
    Matrix logits = h * ConstMap(w + st.out_w, ch, k);
    logits.rowwise() += ConstVecMap(w + st.out_b, k);
    if (cache) cache->hidden = h;
    if (s + 1 < arch.stages) {
      input = softmax_rows(logits);
      if (cache) cache->output_probs = input;
    }
    outputs.push_back(std::move(logits));
  }
  return outputs;
}

std::vector<double> tcn_backward(const TcnParams& params, GradTape& tape,
                                 std::span<const Matrix> stage_logit_grads) {
  if (!tape.recorded_) throw std::logic_error("tcn_backward: tape holds no forward pass");
  if (tape.consumed_) throw std::logic_error("tcn_backward: tape already consumed");
  if (tape.params_version_ != params.version()) {
    throw std::logic_error("tcn_backward: stale tape (parameters changed since forward)");
  }
  const TcnArch& arch = params.arch();
  if (stage_logit_grads.size() != static_cast<std::size_t>(arch.stages)) {
    throw std::invalid_argument("tcn_backward: need one gradient per stage");
  }
  const Layout lay = make_layout(arch);
  const double* w = params.values().data();
  std::vector<double> grad(lay.total, 0.0);
  double* g = grad.data();
  const int ch = arch.channels;
  const int k = arch.num_outputs();

  Matrix carry;  // d loss / d (input probabilities) of the stage above
  for (int s = arch.stages - 1; s >= 0; --s) {
    const StageLayout& st = lay.stages[static_cast<std::size_t>(s)];
    const GradTape::StageCache& cache = tape.stages_[static_cast<std::size_t>(s)];
    Matrix dlogits = stage_logit_grads[static_cast<std::size_t>(s)];
    if (dlogits.rows() != cache.hidden.rows() || dlogits.cols() != k) {
      throw std::invalid_argument("tcn_backward: gradient shape does not match logits");
    }
    if (carry.size() > 0) {
      const Matrix& p = cache.output_probs;
      for (Eigen::Index t = 0; t < p.rows(); ++t) {
        const double dot = carry.row(t).dot(p.row(t));
        dlogits.row(t) += (p.row(t).array() * (carry.row(t).array() - dot)).matrix();
      }
    }

    MutMap(g + st.out_w, ch, k).noalias() += cache.hidden.transpose() * dlogits;
    MutVecMap(g + st.out_b, k) += dlogits.colwise().sum();
    Matrix dh = dlogits * ConstMap(w + st.out_w, ch, k).transpose();

    for (int l = arch.layers - 1; l >= 0; --l) {
      const LayerLayout& ll = st.layers[static_cast<std::size_t>(l)];
      const int d = 1 << l;
      const Matrix& h_in = cache.layer_inputs[static_cast<std::size_t>(l)];
      const Matrix& a = cache.layer_relu[static_cast<std::size_t>(l)];

      MutMap(g + ll.mix_w, ch, ch).noalias() += a.transpose() * dh;
      MutVecMap(g + ll.mix_b, ch) += dh.colwise().sum();
      Matrix dz = dh * ConstMap(w + ll.mix_w, ch, ch).transpose();
      dz = (a.array() > 0.0).select(dz, 0.0);

      const Matrix h_minus = shifted(h_in, -d);
      const Matrix h_plus = shifted(h_in, d);
      MutMap(g + ll.taps[0], ch, ch).noalias() += h_minus.transpose() * dz;
      MutMap(g + ll.taps[1], ch, ch).noalias() += h_in.transpose() * dz;
      MutMap(g + ll.taps[2], ch, ch).noalias() += h_plus.transpose() * dz;
      MutVecMap(g + ll.tap_bias, ch) += dz.colwise().sum();

      dh.noalias() += dz * ConstMap(w + ll.taps[1], ch, ch).transpose();
      scatter_shifted(dh, dz * ConstMap(w + ll.taps[0], ch, ch).transpose(), -d);
      scatter_shifted(dh, dz * ConstMap(w + ll.taps[2], ch, ch).transpose(), d);
    }

    MutMap(g + st.in_w, st.in_dim, ch).noalias() += cache.input.transpose() * dh;
    MutVecMap(g + st.in_b, ch) += dh.colwise().sum();
    if (s > 0) carry = dh * ConstMap(w + st.in_w, st.in_dim, ch).transpose();
  }
  tape.consumed_ = true;
  return grad;
}

void apply_adam(TcnParams& params, std::span<const double> grad, double lr) {
  adam_update(params.values_, grad, params.adam_, lr);
  params.touch();
}

void train_step(TcnParams& params, std::span<const Matrix> stage_logit_grads, GradTape& tape,
                double lr) {
  const std::vector<double> grad = tcn_backward(params, tape, stage_logit_grads);
  apply_adam(params, grad, lr);
}

double grad_check(const StageLossFn& loss, const TcnParams& params, const FeatureSequence& feats,
                  double eps, int samples, std::uint64_t seed) {
  GradTape tape;
  const auto logits = tcn_forward(params, feats, &tape);
  const StageLoss at = loss(logits);
  const std::vector<double> analytic = tcn_backward(params, tape, at.grads);

  TcnParams probe = params;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, analytic.size() - 1);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const std::size_t idx = pick(rng);
    const double orig = params.values()[idx];
    probe.set_value(idx, orig + eps);
    const double up = loss(tcn_forward(probe, feats)).value;
    probe.set_value(idx, orig - eps);
    const double down = loss(tcn_forward(probe, feats)).value;
    probe.set_value(idx, orig);
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[idx] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
  const std::string& in;
  std::size_t pos = 0;

  std::uint64_t bytes(int n) {
    if (pos + static_cast<std::size_t>(n) > in.size()) {
      throw std::runtime_error("checkpoint truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    pos += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(bytes(8)); }
};

}  // namespace

std::string serialize_checkpoint(const TcnParams& params) {
  const TcnArch& a = params.arch();
  std::string out = "PCKPT";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(a.input_dim));
  put_u32(out, static_cast<std::uint32_t>(a.num_phases));
  put_u32(out, a.blank_column ? 1u : 0u);
  put_u32(out, static_cast<std::uint32_t>(a.stages));
  put_u32(out, static_cast<std::uint32_t>(a.layers));
  put_u32(out, static_cast<std::uint32_t>(a.channels));
  const auto vals = params.values();
  put_u64(out, vals.size());
  for (double v : vals) put_f64(out, v);
  const AdamState& adam = params.adam();
  put_u64(out, adam.step);
  put_f64(out, adam.beta1);
  put_f64(out, adam.beta2);
  put_f64(out, adam.eps);
  for (double v : adam.m) put_f64(out, v);
  for (double v : adam.v) put_f64(out, v);
  return out;
}

TcnParams deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 5 || bytes.compare(0, 5, "PCKPT") != 0) {
    throw std::runtime_error("checkpoint: missing PCKPT magic");
  }
  Reader r{bytes, 5};
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  TcnArch a;
  a.input_dim = static_cast<int>(r.u32());
  a.num_phases = static_cast<int>(r.u32());
  a.blank_column = r.u32() != 0;
  a.stages = static_cast<int>(r.u32());
  a.layers = static_cast<int>(r.u32());
  a.channels = static_cast<int>(r.u32());
  a.validate();
  const std::uint64_t n = r.u64();
  if (n != a.parameter_count()) throw std::runtime_error("checkpoint: parameter count mismatch");
  std::vector<double> values(n);
  for (auto& v : values) v = r.f64();
  AdamState adam(n);
  adam.step = r.u64();
  adam.beta1 = r.f64();
  adam.beta2 = r.f64();
  adam.eps = r.f64();
  for (auto& v : adam.m) v = r.f64();
  for (auto& v : adam.v) v = r.f64();
  if (r.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return TcnParams::from_values(a, std::move(values), std::move(adam));
}

void save_checkpoint(const std::filesystem::path& path, const TcnParams& params) {
  io::write_file_atomic(path, serialize_checkpoint(params));
}

TcnParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace sparsephase
