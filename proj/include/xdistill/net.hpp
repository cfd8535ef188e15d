// Copyright 2026 The xdistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xdistill/errors.hpp"
#include "xdistill/io.hpp"
#include "xdistill/rng.hpp"

namespace xdistill {

enum class HeadRole : std::uint8_t { kHandover = 0, kRbAlloc = 1, kPower = 2 };

// One output head of the value network: `slot` is the user index for
// handover/RB heads and the BS index for power heads.
struct Head {
  std::string name;
  HeadRole role = HeadRole::kHandover;
  int slot = 0;
  int width = 0;

  bool operator==(const Head&) const = default;
};

struct HeadLayout {
  std::vector<Head> heads;

  int size() const { return static_cast<int>(heads.size()); }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < heads.size(); ++i) {
      if (heads[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  // True when every head of `other` appears here with identical shape.
  bool contains(const HeadLayout& other) const {
    for (const Head& h : other.heads) {
      int at = find(h.name);
      if (at < 0 || !(heads[at] == h)) return false;
    }
    return true;
  }

  void validate() const {
    for (std::size_t i = 0; i < heads.size(); ++i) {
      if (heads[i].width < 1) throw std::invalid_argument("head width must be >= 1");
      for (std::size_t k = i + 1; k < heads.size(); ++k) {
        if (heads[i].name == heads[k].name) {
          throw std::invalid_argument("duplicate head name: " + heads[i].name);
        }
      }
    }
  }

  bool operator==(const HeadLayout&) const = default;
};

struct DenseLayer {
  int in = 0, out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;  // out
};

struct LayerSpec {
  int input_width = 0;
  std::vector<int> hidden = {50, 100};

  bool operator==(const LayerSpec&) const = default;
};

// Feed-forward value network: ReLU trunk shared by all heads, linear heads.
// Plain value type; 64-bit parameters throughout.
struct QNet {
  LayerSpec spec;
  HeadLayout layout;
  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> heads;

  int trunk_out_width() const { return spec.hidden.empty() ? spec.input_width : spec.hidden.back(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const DenseLayer& l : trunk) n += l.w.size() + l.b.size();
    for (const DenseLayer& l : heads) n += l.w.size() + l.b.size();
    return n;
  }
};

namespace detail {

inline DenseLayer init_dense(int in, int out, Rng& rng) {
  if (in < 1 || out < 1) throw std::invalid_argument("layer widths must be >= 1");
  DenseLayer l;
  l.in = in;
  l.out = out;
  double bound = std::sqrt(6.0 / (in + out));
  l.w.resize(static_cast<std::size_t>(in) * out);
  for (double& v : l.w) v = rng.uniform(-bound, bound);
  l.b.assign(out, 0.0);
  return l;
}

inline void affine(const DenseLayer& l, std::span<const double> x, std::vector<double>& y) {
  y.assign(l.out, 0.0);
  for (int o = 0; o < l.out; ++o) {
    const double* row = l.w.data() + static_cast<std::size_t>(o) * l.in;
    double acc = l.b[o];
    for (int i = 0; i < l.in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

}  // namespace detail

inline QNet make_qnet(const LayerSpec& spec, const HeadLayout& layout, Rng& rng) {
  if (spec.input_width < 1) throw std::invalid_argument("input width must be >= 1");
  layout.validate();
  QNet net;
  net.spec = spec;
  net.layout = layout;
  int prev = spec.input_width;
  for (int h : spec.hidden) {
    net.trunk.push_back(detail::init_dense(prev, h, rng));
    prev = h;
  }
  for (const Head& head : layout.heads) {
    net.heads.push_back(detail::init_dense(prev, head.width, rng));
  }
  return net;
}

// Activations kept for backprop: acts[0] is the input, acts[l+1] the
// post-ReLU output of trunk layer l.
struct ForwardTrace {
  std::vector<std::vector<double>> acts;
};

inline std::vector<std::vector<double>> forward(const QNet& net, std::span<const double> x,
                                                ForwardTrace* trace = nullptr) {
  if (static_cast<int>(x.size()) != net.spec.input_width) {
    throw std::invalid_argument("observation width does not match network input");
  }
  std::vector<double> cur(x.begin(), x.end());
  if (trace) {
    trace->acts.clear();
    trace->acts.push_back(cur);
  }
  std::vector<double> next;
  for (const DenseLayer& l : net.trunk) {
    detail::affine(l, cur, next);
    for (double& v : next) v = std::max(v, 0.0);
    cur = next;
    if (trace) trace->acts.push_back(cur);
  }
  std::vector<std::vector<double>> out(net.heads.size());
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    detail::affine(net.heads[h], cur, out[h]);
  }
  return out;
}

// Parameter gradients, same shapes as the network.
struct Gradients {
  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> heads;
};

inline Gradients zero_gradients(const QNet& net) {
  Gradients g;
  auto zero_like = [](const DenseLayer& l) {
    DenseLayer z;
    z.in = l.in;
    z.out = l.out;
    z.w.assign(l.w.size(), 0.0);
    z.b.assign(l.b.size(), 0.0);
    return z;
  };
  for (const DenseLayer& l : net.trunk) g.trunk.push_back(zero_like(l));
  for (const DenseLayer& l : net.heads) g.heads.push_back(zero_like(l));
  return g;
}

// Accumulates dLoss/dparams for one sample. `head_grads[h]` is dLoss/dq of
// head h; an empty vector means the head does not participate and its
// parameters (and its trunk contribution) receive exactly zero gradient.
inline void accumulate_backward(const QNet& net, const ForwardTrace& trace,
                                const std::vector<std::vector<double>>& head_grads,
                                Gradients& grads) {
  if (head_grads.size() != net.heads.size()) {
    throw std::invalid_argument("head gradient count does not match layout");
  }
  const std::vector<double>& last = trace.acts.back();
  std::vector<double> d_last(last.size(), 0.0);
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    if (head_grads[h].empty()) continue;
    const DenseLayer& l = net.heads[h];
    if (static_cast<int>(head_grads[h].size()) != l.out) {
      throw std::invalid_argument("head gradient width mismatch");
    }
    DenseLayer& g = grads.heads[h];
    for (int o = 0; o < l.out; ++o) {
      double gv = head_grads[h][o];
      g.b[o] += gv;
      double* grow = g.w.data() + static_cast<std::size_t>(o) * l.in;
      const double* wrow = l.w.data() + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) {
        grow[i] += gv * last[i];
        d_last[i] += gv * wrow[i];
      }
    }
  }
  // trunk, in reverse; ReLU gate from the stored post-activation
  std::vector<double> d_act = std::move(d_last);
  for (int li = static_cast<int>(net.trunk.size()) - 1; li >= 0; --li) {
    const DenseLayer& l = net.trunk[li];
    const std::vector<double>& act = trace.acts[li + 1];
    const std::vector<double>& prev = trace.acts[li];
    std::vector<double> d_prev(prev.size(), 0.0);
    DenseLayer& g = grads.trunk[li];
    for (int o = 0; o < l.out; ++o) {
      double gv = act[o] > 0.0 ? d_act[o] : 0.0;
      if (gv == 0.0) continue;
      g.b[o] += gv;
      double* grow = g.w.data() + static_cast<std::size_t>(o) * l.in;
      const double* wrow = l.w.data() + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) {
        grow[i] += gv * prev[i];
        d_prev[i] += gv * wrow[i];
      }
    }
    d_act = std::move(d_prev);
  }
}

inline void scale_gradients(Gradients& g, double factor) {
  for (DenseLayer& l : g.trunk) {
    for (double& v : l.w) v *= factor;
    for (double& v : l.b) v *= factor;
  }
  for (DenseLayer& l : g.heads) {
    for (double& v : l.w) v *= factor;
    for (double& v : l.b) v *= factor;
  }
}

inline double gradient_norm(const Gradients& g) {
  double ss = 0.0;
  for (const DenseLayer& l : g.trunk) {
    for (double v : l.w) ss += v * v;
    for (double v : l.b) ss += v * v;
  }
  for (const DenseLayer& l : g.heads) {
    for (double v : l.w) ss += v * v;
    for (double v : l.b) ss += v * v;
  }
  return std::sqrt(ss);
}

// Rescales to `max_norm` when the global norm exceeds it.
inline void clip_gradients(Gradients& g, double max_norm) {
  if (max_norm <= 0.0) return;
  double n = gradient_norm(g);
  if (n > max_norm) scale_gradients(g, max_norm / n);
}

// theta <- theta - lr * grad. Faults on non-finite gradients.
inline void sgd_step(QNet& net, const Gradients& g, double lr) {
  auto apply = [lr](DenseLayer& p, const DenseLayer& gl) {
    for (std::size_t i = 0; i < p.w.size(); ++i) {
      if (!std::isfinite(gl.w[i])) throw NumericFault("NaN/Inf in weight gradient");
      p.w[i] -= lr * gl.w[i];
    }
    for (std::size_t i = 0; i < p.b.size(); ++i) {
      if (!std::isfinite(gl.b[i])) throw NumericFault("NaN/Inf in bias gradient");
      p.b[i] -= lr * gl.b[i];
    }
  };
  if (g.trunk.size() != net.trunk.size() || g.heads.size() != net.heads.size()) {
    throw std::invalid_argument("gradient shape does not match network");
  }
  for (std::size_t i = 0; i < net.trunk.size(); ++i) apply(net.trunk[i], g.trunk[i]);
  for (std::size_t i = 0; i < net.heads.size(); ++i) apply(net.heads[i], g.heads[i]);
}

inline void check_finite(const QNet& net) {
  for (const DenseLayer& l : net.trunk) {
    for (double v : l.w) if (!std::isfinite(v)) throw NumericFault("NaN/Inf in trunk weights");
    for (double v : l.b) if (!std::isfinite(v)) throw NumericFault("NaN/Inf in trunk biases");
  }
  for (const DenseLayer& l : net.heads) {
    for (double v : l.w) if (!std::isfinite(v)) throw NumericFault("NaN/Inf in head weights");
    for (double v : l.b) if (!std::isfinite(v)) throw NumericFault("NaN/Inf in head biases");
  }
}

// softmax(q / tau) with max subtraction.
inline std::vector<double> softmax_temp(std::span<const double> q, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");
  if (q.empty()) throw std::invalid_argument("softmax of empty vector");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : q) m = std::max(m, v / tau);
  std::vector<double> out(q.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    out[i] = std::exp(q[i] / tau - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

struct KlResult {
  double loss = 0.0;
  std::vector<double> grad;  // dLoss/d(student_q)
};

// Distillation loss between one teacher head and the matching student head:
// KL( softmax(teacher_q / tau) || softmax(student_q) ). Only the teacher side
// is temperature-softened and it is treated as a constant, so the gradient
// with respect to the student logits is softmax(student_q) - target.
inline KlResult kl_loss(std::span<const double> teacher_q, std::span<const double> student_q,
                        double tau) {
  if (teacher_q.size() != student_q.size()) {
    throw std::invalid_argument("teacher/student head width mismatch");
  }
  std::vector<double> p = softmax_temp(teacher_q, tau);
  // log softmax of the student, stable
  double m = -std::numeric_limits<double>::infinity();
  for (double v : student_q) m = std::max(m, v);
  double lse = 0.0;
  for (double v : student_q) lse += std::exp(v - m);
  lse = std::log(lse) + m;

  KlResult r;
  r.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double log_s = student_q[i] - lse;
    if (p[i] > 0.0) r.loss += p[i] * (std::log(p[i]) - log_s);
    r.grad[i] = std::exp(log_s) - p[i];
  }
  r.loss = std::max(r.loss, 0.0);  // guard tiny negative round-off
  return r;
}

// --- serialization -----------------------------------------------------
//
// Versioned little-endian binary: magic, version, layer spec, head layout,
// then all parameters in row-major order (trunk first, heads in layout
// order). Loading a file whose layout disagrees with itself is a hard
// error; callers check the layout against their expectations.

namespace detail {

constexpr std::uint32_t kQnetMagic = 0x4e514458;  // "XDQN"
constexpr std::uint32_t kQnetVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& at) {
  if (at + sizeof(T) > in.size()) throw std::runtime_error("truncated network file");
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

inline void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

inline std::string take_str(const std::string& in, std::size_t& at) {
  auto n = take<std::uint32_t>(in, at);
  if (at + n > in.size()) throw std::runtime_error("truncated network file");
  std::string s = in.substr(at, n);
  at += n;
  return s;
}

}  // namespace detail

inline std::string serialize_qnet(const QNet& net) {
  using namespace detail;
  std::string out;
  put(out, kQnetMagic);
  put(out, kQnetVersion);
  put<std::int32_t>(out, net.spec.input_width);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.spec.hidden.size()));
  for (int h : net.spec.hidden) put<std::int32_t>(out, h);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layout.heads.size()));
  for (const Head& h : net.layout.heads) {
    put_str(out, h.name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(h.role));
    put<std::int32_t>(out, h.slot);
    put<std::int32_t>(out, h.width);
  }
  auto put_layer = [&out](const DenseLayer& l) {
    for (double v : l.w) put(out, v);
    for (double v : l.b) put(out, v);
  };
  for (const DenseLayer& l : net.trunk) put_layer(l);
  for (const DenseLayer& l : net.heads) put_layer(l);
  return out;
}

inline QNet deserialize_qnet(const std::string& bytes, const std::string& origin = "<memory>") {
  using namespace detail;
  std::size_t at = 0;
  if (take<std::uint32_t>(bytes, at) != kQnetMagic) {
    throw std::runtime_error("not a network checkpoint: " + origin);
  }
  if (take<std::uint32_t>(bytes, at) != kQnetVersion) {
    throw std::runtime_error("unsupported checkpoint version: " + origin);
  }
  LayerSpec spec;
  spec.input_width = take<std::int32_t>(bytes, at);
  spec.hidden.resize(take<std::uint32_t>(bytes, at));
  for (int& h : spec.hidden) h = take<std::int32_t>(bytes, at);
  HeadLayout layout;
  layout.heads.resize(take<std::uint32_t>(bytes, at));
  for (Head& h : layout.heads) {
    h.name = take_str(bytes, at);
    h.role = static_cast<HeadRole>(take<std::uint8_t>(bytes, at));
    h.slot = take<std::int32_t>(bytes, at);
    h.width = take<std::int32_t>(bytes, at);
  }
  Rng scratch(0);
  QNet net = make_qnet(spec, layout, scratch);
  auto take_layer = [&bytes, &at](DenseLayer& l) {
    for (double& v : l.w) v = take<double>(bytes, at);
    for (double& v : l.b) v = take<double>(bytes, at);
  };
  for (DenseLayer& l : net.trunk) take_layer(l);
  for (DenseLayer& l : net.heads) take_layer(l);
  if (at != bytes.size()) throw std::runtime_error("trailing bytes in checkpoint: " + origin);
  return net;
}

inline void save_qnet(const QNet& net, const std::string& path) {
  atomic_write(path, serialize_qnet(net));
}

inline QNet load_qnet(const std::string& path) {
  return deserialize_qnet(read_file(path), path);
}

// Loads a checkpoint and insists on an exact layout match.
inline QNet load_qnet_checked(const std::string& path, const LayerSpec& spec,
                              const HeadLayout& layout) {
  QNet net = load_qnet(path);
  if (!(net.spec == spec) || !(net.layout == layout)) {
    throw std::runtime_error("checkpoint layout mismatch: " + path);
  }
  return net;
}

}  // namespace xdistill
