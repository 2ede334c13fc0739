#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "persona/numerics/tape.hpp"

namespace persona::numerics {

namespace detail {

template <std::floating_point Real>
void require_same_tape(Var<Real> a, Var<Real> b) {
  require(a.tape != nullptr && a.tape == b.tape, "operands recorded on different tapes");
}

template <std::floating_point Real>
void require_same_size(Var<Real> a, Var<Real> b, const char* op) {
  require_same_tape(a, b);
  require(a.size() == b.size(), std::string(op) + ": size mismatch");
}

}  // namespace detail

template <std::floating_point Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  detail::require_same_size(a, b, "add");
  using P = typename Tape<Real>::Pass;
  return a.tape->emit({a.id, b.id}, a.size(), [a = a.id, b = b.id](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto out = t.output(self);
      auto x = t.value(a), y = t.value(b);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
      return;
    }
    auto g = t.grad_view(self);
    if (Real* ga = t.grad(a)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (Real* gb = t.grad(b)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

template <std::floating_point Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  detail::require_same_size(a, b, "sub");
  using P = typename Tape<Real>::Pass;
  return a.tape->emit({a.id, b.id}, a.size(), [a = a.id, b = b.id](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto out = t.output(self);
      auto x = t.value(a), y = t.value(b);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
      return;
    }
    auto g = t.grad_view(self);
    if (Real* ga = t.grad(a)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (Real* gb = t.grad(b)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

// Elementwise product.
template <std::floating_point Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  detail::require_same_size(a, b, "mul");
  using P = typename Tape<Real>::Pass;
  return a.tape->emit({a.id, b.id}, a.size(), [a = a.id, b = b.id](P pass, Tape<Real>& t, std::uint32_t self) {
    auto x = t.value(a), y = t.value(b);
    if (pass == P::forward) {
      auto out = t.output(self);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
      return;
    }
    auto g = t.grad_view(self);
    if (Real* ga = t.grad(a)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    if (Real* gb = t.grad(b)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
  });
}

template <std::floating_point Real>
Var<Real> scale(Var<Real> a, Real factor) {
  using P = typename Tape<Real>::Pass;
  return a.tape->emit({a.id}, a.size(), [a = a.id, factor](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto out = t.output(self);
      auto x = t.value(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
      return;
    }
    auto g = t.grad_view(self);
    if (Real* ga = t.grad(a)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

// 1 - a, elementwise.
template <std::floating_point Real>
Var<Real> one_minus(Var<Real> a) {
  using P = typename Tape<Real>::Pass;
  return a.tape->emit({a.id}, a.size(), [a = a.id](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto out = t.output(self);
      auto x = t.value(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = Real(1) - x[i];
      return;
    }
    auto g = t.grad_view(self);
    if (Real* ga = t.grad(a)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  });
}

template <std::floating_point Real>
Var<Real> sigmoid(Var<Real> a) {
  using P = typename Tape<Real>::Pass;
  return a.tape->emit({a.id}, a.size(), [a = a.id](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto out = t.output(self);
      auto x = t.value(a);
      for (std::size_t i = 0; i < out.size(); ++i) {
        // Split on sign so exp never overflows.
        if (x[i] >= Real(0)) {
          out[i] = Real(1) / (Real(1) + std::exp(-x[i]));
        } else {
          const Real e = std::exp(x[i]);
          out[i] = e / (Real(1) + e);
        }
      }
      return;
    }
    auto g = t.grad_view(self);
    auto y = t.value(self);
    if (Real* ga = t.grad(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (Real(1) - y[i]);
  });
}

template <std::floating_point Real>
Var<Real> tanh(Var<Real> a) {
  using P = typename Tape<Real>::Pass;
  return a.tape->emit({a.id}, a.size(), [a = a.id](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto out = t.output(self);
      auto x = t.value(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
      return;
    }
    auto g = t.grad_view(self);
    auto y = t.value(self);
    if (Real* ga = t.grad(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (Real(1) - y[i] * y[i]);
  });
}

// W·x for a rank-2 parameter W (rows x cols) and a vector x of length cols.
template <std::floating_point Real>
Var<Real> matvec(Var<Real> w, Var<Real> x) {
  detail::require_same_tape(w, x);
  const Tensor<Real>* param = w.tape->param_of(w.id);
  require(param != nullptr && param->shape.size() == 2, "matvec: left operand must be a matrix parameter");
  const std::size_t rows = param->shape[0];
  const std::size_t cols = param->shape[1];
  require(x.size() == cols, "matvec: dimension mismatch");
  using P = typename Tape<Real>::Pass;
  return w.tape->emit({w.id, x.id}, rows, [w = w.id, x = x.id, rows, cols](P pass, Tape<Real>& t, std::uint32_t self) {
    auto m = t.value(w);
    auto v = t.value(x);
    if (pass == P::forward) {
      auto out = t.output(self);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = m.data() + r * cols;
        Real acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * v[c];
        out[r] = acc;
      }
      return;
    }
    auto g = t.grad_view(self);
    if (Real* gw = t.grad(w)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const Real gr = g[r];
        if (gr == Real(0)) continue;
        Real* grow = gw + r * cols;
        for (std::size_t c = 0; c < cols; ++c) grow[c] += gr * v[c];
      }
    }
    if (Real* gx = t.grad(x)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const Real gr = g[r];
        if (gr == Real(0)) continue;
        const Real* row = m.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) gx[c] += gr * row[c];
      }
    }
  });
}

// Row `index` of a rank-2 parameter (embedding lookup).
template <std::floating_point Real>
Var<Real> lookup(Var<Real> table, std::size_t index) {
  const Tensor<Real>* param = table.tape->param_of(table.id);
  require(param != nullptr && param->shape.size() == 2, "lookup: table must be a matrix parameter");
  require(index < param->shape[0], "lookup: row " + std::to_string(index) + " out of range");
  const std::size_t cols = param->shape[1];
  using P = typename Tape<Real>::Pass;
  return table.tape->emit({table.id}, cols, [tb = table.id, index, cols](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto src = t.value(tb).subspan(index * cols, cols);
      std::copy(src.begin(), src.end(), t.output(self).begin());
      return;
    }
    auto g = t.grad_view(self);
    if (Real* gt = t.grad(tb))
      for (std::size_t c = 0; c < cols; ++c) gt[index * cols + c] += g[c];
  });
}

template <std::floating_point Real>
Var<Real> concat(std::span<const Var<Real>> parts) {
  require(!parts.empty(), "concat: no inputs");
  std::vector<std::uint32_t> ids;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    ids.push_back(p.id);
    total += p.size();
  }
  using P = typename Tape<Real>::Pass;
  auto rule = [ids](P pass, Tape<Real>& t, std::uint32_t self) {
    std::size_t offset = 0;
    if (pass == P::forward) {
      auto out = t.output(self);
      for (auto id : ids) {
        auto v = t.value(id);
        std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += v.size();
      }
      return;
    }
    auto g = t.grad_view(self);
    for (auto id : ids) {
      const std::size_t n = t.value(id).size();
      if (Real* gi = t.grad(id))
        for (std::size_t i = 0; i < n; ++i) gi[i] += g[offset + i];
      offset += n;
    }
  };
  return parts.front().tape->emit(ids, total, std::move(rule));
}

template <std::floating_point Real>
Var<Real> concat(std::initializer_list<Var<Real>> parts) {
  return concat(std::span<const Var<Real>>(parts.begin(), parts.size()));
}

template <std::floating_point Real>
Var<Real> dot(Var<Real> a, Var<Real> b) {
  detail::require_same_size(a, b, "dot");
  using P = typename Tape<Real>::Pass;
  return a.tape->emit({a.id, b.id}, 1, [a = a.id, b = b.id](P pass, Tape<Real>& t, std::uint32_t self) {
    auto x = t.value(a), y = t.value(b);
    if (pass == P::forward) {
      Real acc = 0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
      t.output(self)[0] = acc;
      return;
    }
    const Real g = t.grad_view(self)[0];
    if (Real* ga = t.grad(a)) for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * y[i];
    if (Real* gb = t.grad(b)) for (std::size_t i = 0; i < x.size(); ++i) gb[i] += g * x[i];
  });
}

// Elementwise sum of equally sized vectors.
template <std::floating_point Real>
Var<Real> sum(std::span<const Var<Real>> parts) {
  require(!parts.empty(), "sum: no inputs");
  std::vector<std::uint32_t> ids;
  for (const auto& p : parts) {
    detail::require_same_size(parts.front(), p, "sum");
    ids.push_back(p.id);
  }
  using P = typename Tape<Real>::Pass;
  auto rule = [ids](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto out = t.output(self);
      std::fill(out.begin(), out.end(), Real(0));
      for (auto id : ids) {
        auto v = t.value(id);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
      }
      return;
    }
    auto g = t.grad_view(self);
    for (auto id : ids)
      if (Real* gi = t.grad(id))
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  };
  return parts.front().tape->emit(ids, parts.front().size(), std::move(rule));
}

template <std::floating_point Real>
Var<Real> mean(std::span<const Var<Real>> parts) {
  return scale(sum(parts), Real(1) / static_cast<Real>(parts.size()));
}

// sum_j weights[j] * vectors[j]
template <std::floating_point Real>
Var<Real> weighted_sum(Var<Real> weights, std::span<const Var<Real>> vectors) {
  require(!vectors.empty(), "weighted_sum: no vectors");
  require(weights.size() == vectors.size(), "weighted_sum: one weight per vector required");
  std::vector<std::uint32_t> ids{weights.id};
  for (const auto& v : vectors) {
    detail::require_same_size(vectors.front(), v, "weighted_sum");
    ids.push_back(v.id);
  }
  using P = typename Tape<Real>::Pass;
  auto rule = [ids](P pass, Tape<Real>& t, std::uint32_t self) {
    auto w = t.value(ids[0]);
    if (pass == P::forward) {
      auto out = t.output(self);
      std::fill(out.begin(), out.end(), Real(0));
      for (std::size_t j = 1; j < ids.size(); ++j) {
        auto v = t.value(ids[j]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[j - 1] * v[i];
      }
      return;
    }
    auto g = t.grad_view(self);
    Real* gw = t.grad(ids[0]);
    for (std::size_t j = 1; j < ids.size(); ++j) {
      auto v = t.value(ids[j]);
      if (gw != nullptr) {
        Real acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * v[i];
        gw[j - 1] += acc;
      }
      if (Real* gv = t.grad(ids[j]))
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += w[j - 1] * g[i];
    }
  };
  return vectors.front().tape->emit(ids, vectors.front().size(), std::move(rule));
}

// Max-subtracted softmax.
template <std::floating_point Real>
Var<Real> softmax(Var<Real> logits) {
  require(logits.size() > 0, "softmax: empty input");
  using P = typename Tape<Real>::Pass;
  return logits.tape->emit({logits.id}, logits.size(), [a = logits.id](P pass, Tape<Real>& t, std::uint32_t self) {
    if (pass == P::forward) {
      auto x = t.value(a);
      auto out = t.output(self);
      Real top = x[0];
      for (Real v : x) {
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
        top = std::max(top, v);
      }
      Real total = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - top);
        total += out[i];
      }
      for (auto& v : out) v /= total;
      return;
    }
    auto g = t.grad_view(self);
    auto y = t.value(self);
    if (Real* ga = t.grad(a)) {
      Real gy = 0;
      for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
    }
  });
}

inline constexpr double kProbabilityFloor = 1e-12;

// -ln(pred[target] + 1e-12)
template <std::floating_point Real>
Var<Real> cross_entropy(Var<Real> pred, std::size_t target) {
  require(target < pred.size(), "cross_entropy: target index " + std::to_string(target) + " out of range");
  using P = typename Tape<Real>::Pass;
  return pred.tape->emit({pred.id}, 1, [a = pred.id, target](P pass, Tape<Real>& t, std::uint32_t self) {
    const Real p = t.value(a)[target] + static_cast<Real>(kProbabilityFloor);
    if (pass == P::forward) {
      t.output(self)[0] = -std::log(p);
      return;
    }
    if (Real* ga = t.grad(a)) ga[target] -= t.grad_view(self)[0] / p;
  });
}

// Max over consecutive groups of `pool` elements. Ties route the gradient to
// the first maximal element of the group.
template <std::floating_point Real>
Var<Real> maxout(Var<Real> u, std::size_t pool) {
  require(pool >= 1 && u.size() % pool == 0, "maxout: size must be a multiple of the pool size");
  const std::size_t groups = u.size() / pool;
  using P = typename Tape<Real>::Pass;
  return u.tape->emit({u.id}, groups, [a = u.id, pool, groups](P pass, Tape<Real>& t, std::uint32_t self) {
    auto x = t.value(a);
    auto arg = [&](std::size_t k) {
      std::size_t best = k * pool;
      for (std::size_t i = best + 1; i < (k + 1) * pool; ++i)
        if (x[i] > x[best]) best = i;
      return best;
    };
    if (pass == P::forward) {
      auto out = t.output(self);
      for (std::size_t k = 0; k < groups; ++k) out[k] = x[arg(k)];
      return;
    }
    auto g = t.grad_view(self);
    if (Real* ga = t.grad(a))
      for (std::size_t k = 0; k < groups; ++k) ga[arg(k)] += g[k];
  });
}

}  // namespace persona::numerics
