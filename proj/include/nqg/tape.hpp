// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "nqg/errors.hpp"
#include "nqg/rng.hpp"
#include "nqg/tensor.hpp"

namespace nqg {

enum class Activation { tanh_fn, sigmoid_fn };

// Reverse-mode gradient tape. Every forward operation appends one node with
// its output value and a closure implementing the chain rule; backward()
// replays the nodes once, in reverse, accumulating gradients into per-node
// buffers. Leaves are introduced with lease(); their gradients are read back
// with grad() after backward() has run.
//
// A tape is built for one forward/backward pass and then discarded. It is
// single-threaded; distinct tapes may be used concurrently.
template <typename T>
class Tape {
 public:
  struct Var {
    std::uint32_t id = kInvalid;
    bool valid() const { return id != kInvalid; }
  };

  static constexpr std::uint32_t kInvalid = UINT32_MAX;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  // Introduces a leaf variable holding a copy of `value`.
  Var lease(Tensor<T> value) { return push(std::move(value), nullptr); }

  const Tensor<T>& value(Var v) const { return node(v).val; }

  const Tensor<T>& grad(Var v) const {
    if (!backward_done_) throw UsageError("grad() requires a prior backward()");
    return node(v).grad;
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor<T>& x = node(a).val;
    const Tensor<T>& y = node(b).val;
    if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) {
      throw DimensionError("matmul: incompatible shapes " + x.shape_str() +
                           " and " + y.shape_str());
    }
    const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
    Tensor<T> out = Tensor<T>::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T xv = x.at(i, p);
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += xv * y.at(p, j);
      }
    }
    return push(std::move(out), [a, b, m, k, n](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& x = t.node(a).val;
      const Tensor<T>& y = t.node(b).val;
      Tensor<T>& dx = t.node(a).grad;
      Tensor<T>& dy = t.node(b).grad;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const T gv = g.at(i, j);
          for (std::size_t p = 0; p < k; ++p) {
            dx.at(i, p) += gv * y.at(p, j);
            dy.at(p, j) += x.at(i, p) * gv;
          }
        }
      }
    });
  }

  // M[m x n] * v[n] -> [m]
  Var matvec(Var mv, Var vv) {
    const Tensor<T>& m = node(mv).val;
    const Tensor<T>& v = node(vv).val;
    if (m.rank() != 2 || v.rank() != 1 || m.cols() != v.numel()) {
      throw DimensionError("matvec: incompatible shapes " + m.shape_str() +
                           " and " + v.shape_str());
    }
    const std::size_t rows = m.rows(), cols = m.cols();
    Tensor<T> out = Tensor<T>::zeros({rows});
    for (std::size_t i = 0; i < rows; ++i) {
      T acc = 0;
      const T* row = &m.data[i * cols];
      for (std::size_t j = 0; j < cols; ++j) acc += row[j] * v.data[j];
      out.data[i] = acc;
    }
    return push(std::move(out), [mv, vv, rows, cols](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& m = t.node(mv).val;
      const Tensor<T>& v = t.node(vv).val;
      Tensor<T>& dm = t.node(mv).grad;
      Tensor<T>& dv = t.node(vv).grad;
      for (std::size_t i = 0; i < rows; ++i) {
        const T gv = g.data[i];
        const T* row = &m.data[i * cols];
        T* drow = &dm.data[i * cols];
        for (std::size_t j = 0; j < cols; ++j) {
          drow[j] += gv * v.data[j];
          dv.data[j] += row[j] * gv;
        }
      }
    });
  }

  // v[m] * M[m x n] -> [n]
  Var vecmat(Var vv, Var mv) {
    const Tensor<T>& v = node(vv).val;
    const Tensor<T>& m = node(mv).val;
    if (v.rank() != 1 || m.rank() != 2 || v.numel() != m.rows()) {
      throw DimensionError("vecmat: incompatible shapes " + v.shape_str() +
                           " and " + m.shape_str());
    }
    const std::size_t rows = m.rows(), cols = m.cols();
    Tensor<T> out = Tensor<T>::zeros({cols});
    for (std::size_t i = 0; i < rows; ++i) {
      const T vv_i = v.data[i];
      const T* row = &m.data[i * cols];
      for (std::size_t j = 0; j < cols; ++j) out.data[j] += vv_i * row[j];
    }
    return push(std::move(out), [vv, mv, rows, cols](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& v = t.node(vv).val;
      const Tensor<T>& m = t.node(mv).val;
      Tensor<T>& dv = t.node(vv).grad;
      Tensor<T>& dm = t.node(mv).grad;
      for (std::size_t i = 0; i < rows; ++i) {
        const T* row = &m.data[i * cols];
        T* drow = &dm.data[i * cols];
        T acc = 0;
        for (std::size_t j = 0; j < cols; ++j) {
          acc += row[j] * g.data[j];
          drow[j] += v.data[i] * g.data[j];
        }
        dv.data[i] += acc;
      }
    });
  }

  Var dot(Var a, Var b) {
    const Tensor<T>& x = node(a).val;
    const Tensor<T>& y = node(b).val;
    if (x.rank() != 1 || y.rank() != 1 || x.numel() != y.numel()) {
      throw DimensionError("dot: incompatible shapes");
    }
    T acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data[i] * y.data[i];
    return push(Tensor<T>::scalar(acc), [a, b](Tape& t, const Tensor<T>& g) {
      const T gv = g.data[0];
      const Tensor<T>& x = t.node(a).val;
      const Tensor<T>& y = t.node(b).val;
      Tensor<T>& dx = t.node(a).grad;
      Tensor<T>& dy = t.node(b).grad;
      for (std::size_t i = 0; i < x.numel(); ++i) {
        dx.data[i] += gv * y.data[i];
        dy.data[i] += gv * x.data[i];
      }
    });
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    const Tensor<T>& x = node(a).val;
    const Tensor<T>& y = node(b).val;
    if (!x.same_shape(y)) throw DimensionError("add: shape mismatch");
    Tensor<T> out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += y.data[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g) {
      accumulate(t.node(a).grad, g, T(1));
      accumulate(t.node(b).grad, g, T(1));
    });
  }

  Var sub(Var a, Var b) {
    const Tensor<T>& x = node(a).val;
    const Tensor<T>& y = node(b).val;
    if (!x.same_shape(y)) throw DimensionError("sub: shape mismatch");
    Tensor<T> out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= y.data[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g) {
      accumulate(t.node(a).grad, g, T(1));
      accumulate(t.node(b).grad, g, T(-1));
    });
  }

  Var mul(Var a, Var b) {
    const Tensor<T>& x = node(a).val;
    const Tensor<T>& y = node(b).val;
    if (!x.same_shape(y)) throw DimensionError("mul: shape mismatch");
    Tensor<T> out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= y.data[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& x = t.node(a).val;
      const Tensor<T>& y = t.node(b).val;
      Tensor<T>& dx = t.node(a).grad;
      Tensor<T>& dy = t.node(b).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        dx.data[i] += g.data[i] * y.data[i];
        dy.data[i] += g.data[i] * x.data[i];
      }
    });
  }

  Var scale(Var a, T c) {
    Tensor<T> out = node(a).val;
    for (T& v : out.data) v *= c;
    return push(std::move(out), [a, c](Tape& t, const Tensor<T>& g) {
      accumulate(t.node(a).grad, g, c);
    });
  }

  Var activation(Var a, Activation kind) {
    return kind == Activation::tanh_fn ? tanh_of(a) : sigmoid_of(a);
  }

  Var tanh_of(Var a) {
    Tensor<T> out = node(a).val;
    for (T& v : out.data) v = std::tanh(v);
    Var r = push(std::move(out), nullptr);
    node(r).back = [a, r](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& y = t.node(r).val;
      Tensor<T>& dx = t.node(a).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        dx.data[i] += g.data[i] * (T(1) - y.data[i] * y.data[i]);
      }
    };
    return r;
  }

  Var sigmoid_of(Var a) {
    Tensor<T> out = node(a).val;
    for (T& v : out.data) v = stable_sigmoid(v);
    Var r = push(std::move(out), nullptr);
    node(r).back = [a, r](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& y = t.node(r).val;
      Tensor<T>& dx = t.node(a).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        dx.data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
      }
    };
    return r;
  }

  // ---- shape ----

  // Concatenates rank-1 parts in order.
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw DegenerateInputError("concat: empty part list");
    std::size_t total = 0;
    for (Var p : parts) {
      if (node(p).val.rank() != 1) throw DimensionError("concat: rank-1 parts required");
      total += node(p).val.numel();
    }
    Tensor<T> out = Tensor<T>::zeros({total});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor<T>& x = node(p).val;
      std::copy(x.data.begin(), x.data.end(), out.data.begin() + off);
      off += x.numel();
    }
    std::vector<Var> owned(parts.begin(), parts.end());
    return push(std::move(out), [owned](Tape& t, const Tensor<T>& g) {
      std::size_t off = 0;
      for (Var p : owned) {
        Tensor<T>& dx = t.node(p).grad;
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += g.data[off + i];
        off += dx.data.size();
      }
    });
  }

  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }

  Var slice(Var a, std::size_t offset, std::size_t len) {
    const Tensor<T>& x = node(a).val;
    if (x.rank() != 1 || offset + len > x.numel()) {
      throw DimensionError("slice: out of range");
    }
    Tensor<T> out({len}, std::vector<T>(x.data.begin() + offset,
                                        x.data.begin() + offset + len));
    return push(std::move(out), [a, offset, len](Tape& t, const Tensor<T>& g) {
      Tensor<T>& dx = t.node(a).grad;
      for (std::size_t i = 0; i < len; ++i) dx.data[offset + i] += g.data[i];
    });
  }

  // Stacks equal-length rank-1 vectors into a [k x n] matrix.
  Var stack_rows(std::span<const Var> rowvars) {
    if (rowvars.empty()) throw DegenerateInputError("stack_rows: empty row list");
    const std::size_t n = node(rowvars.front()).val.numel();
    Tensor<T> out = Tensor<T>::zeros({rowvars.size(), n});
    for (std::size_t r = 0; r < rowvars.size(); ++r) {
      const Tensor<T>& x = node(rowvars[r]).val;
      if (x.rank() != 1 || x.numel() != n) {
        throw DimensionError("stack_rows: rows must be rank-1 of equal length");
      }
      std::copy(x.data.begin(), x.data.end(), out.data.begin() + r * n);
    }
    std::vector<Var> owned(rowvars.begin(), rowvars.end());
    return push(std::move(out), [owned, n](Tape& t, const Tensor<T>& g) {
      for (std::size_t r = 0; r < owned.size(); ++r) {
        Tensor<T>& dx = t.node(owned[r]).grad;
        for (std::size_t i = 0; i < n; ++i) dx.data[i] += g.data[r * n + i];
      }
    });
  }

  // Row r of a rank-2 matrix (embedding lookup).
  Var row(Var mv, std::size_t r) {
    const Tensor<T>& m = node(mv).val;
    if (m.rank() != 2 || r >= m.rows()) throw DimensionError("row: out of range");
    const std::size_t cols = m.cols();
    Tensor<T> out({cols}, std::vector<T>(m.data.begin() + r * cols,
                                         m.data.begin() + (r + 1) * cols));
    return push(std::move(out), [mv, r, cols](Tape& t, const Tensor<T>& g) {
      Tensor<T>& dm = t.node(mv).grad;
      for (std::size_t i = 0; i < cols; ++i) dm.data[r * cols + i] += g.data[i];
    });
  }

  // ---- normalization / reductions ----

  // Max-subtracted softmax over a rank-1 vector. A false mask entry forces an
  // exact zero in the output; at least one entry must survive.
  Var softmax(Var a, const std::vector<bool>* keep = nullptr) {
    const Tensor<T>& x = node(a).val;
    if (x.rank() != 1) throw DimensionError("softmax: rank-1 input required");
    const std::size_t n = x.numel();
    if (keep && keep->size() != n) throw DimensionError("softmax: mask length mismatch");
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (keep && !(*keep)[i]) continue;
      any = true;
      mx = std::max(mx, x.data[i]);
    }
    if (!any) throw DegenerateInputError("softmax: all positions masked");
    Tensor<T> out = Tensor<T>::zeros({n});
    T denom = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (keep && !(*keep)[i]) continue;
      out.data[i] = std::exp(x.data[i] - mx);
      denom += out.data[i];
    }
    for (std::size_t i = 0; i < n; ++i) out.data[i] /= denom;
    Var r = push(std::move(out), nullptr);
    node(r).back = [a, r](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& y = t.node(r).val;
      Tensor<T>& dx = t.node(a).grad;
      T inner = 0;
      for (std::size_t i = 0; i < g.data.size(); ++i) inner += g.data[i] * y.data[i];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        dx.data[i] += y.data[i] * (g.data[i] - inner);
      }
    };
    return r;
  }

  // log softmax over the full vector (no masking: used for output vocabulary
  // distributions, which are never padded).
  Var log_softmax(Var a) {
    const Tensor<T>& x = node(a).val;
    if (x.rank() != 1) throw DimensionError("log_softmax: rank-1 input required");
    const std::size_t n = x.numel();
    if (n == 0) throw DegenerateInputError("log_softmax: empty input");
    T mx = x.data[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x.data[i]);
    T denom = 0;
    for (std::size_t i = 0; i < n; ++i) denom += std::exp(x.data[i] - mx);
    const T lse = mx + std::log(denom);
    Tensor<T> out = Tensor<T>::zeros({n});
    for (std::size_t i = 0; i < n; ++i) out.data[i] = x.data[i] - lse;
    Var r = push(std::move(out), nullptr);
    node(r).back = [a, r](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& y = t.node(r).val;
      Tensor<T>& dx = t.node(a).grad;
      T gsum = 0;
      for (std::size_t i = 0; i < g.data.size(); ++i) gsum += g.data[i];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        dx.data[i] += g.data[i] - std::exp(y.data[i]) * gsum;
      }
    };
    return r;
  }

  Var exp_of(Var a) {
    Tensor<T> out = node(a).val;
    for (T& v : out.data) v = std::exp(v);
    Var r = push(std::move(out), nullptr);
    node(r).back = [a, r](Tape& t, const Tensor<T>& g) {
      const Tensor<T>& y = t.node(r).val;
      Tensor<T>& dx = t.node(a).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i] * y.data[i];
    };
    return r;
  }

  Var pick(Var a, std::size_t index) {
    const Tensor<T>& x = node(a).val;
    if (x.rank() != 1 || index >= x.numel()) throw DimensionError("pick: out of range");
    return push(Tensor<T>::scalar(x.data[index]), [a, index](Tape& t, const Tensor<T>& g) {
      t.node(a).grad.data[index] += g.data[0];
    });
  }

  Var sum(Var a) {
    const Tensor<T>& x = node(a).val;
    T acc = 0;
    for (T v : x.data) acc += v;
    return push(Tensor<T>::scalar(acc), [a](Tape& t, const Tensor<T>& g) {
      const T gv = g.data[0];
      for (T& d : t.node(a).grad.data) d += gv;
    });
  }

  // Inverted dropout: kept entries are scaled by 1/(1-p) so eval mode needs
  // no rescaling. The mask is drawn once here and reused on the backward pass.
  Var dropout(Var a, T p, Rng& rng) {
    if (!(p >= T(0) && p < T(1))) throw ConfigError("dropout: p must be in [0,1)");
    const Tensor<T>& x = node(a).val;
    std::vector<T> mask(x.data.size());
    const T keep_scale = T(1) / (T(1) - p);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = (static_cast<T>(rng.unit()) < p) ? T(0) : keep_scale;
    }
    Tensor<T> out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
    return push(std::move(out), [a, mask](Tape& t, const Tensor<T>& g) {
      Tensor<T>& dx = t.node(a).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i] * mask[i];
    });
  }

  // ---- backward ----

  // Seeds d(loss)/d(loss) = 1 and replays every node once in reverse order.
  // Leaves never reached from the loss keep an exactly zero gradient.
  void backward(Var loss) {
    if (!loss.valid() || loss.id >= nodes_.size()) {
      throw UsageError("backward: loss is not a variable on this tape");
    }
    if (node(loss).val.rank() != 0) {
      throw UsageError("backward: loss must be a scalar");
    }
    for (Node& n : nodes_) {
      n.grad = Tensor<T>::zeros(n.val.shape);
    }
    node(loss).grad.data[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(*this, nodes_[i].grad);
    }
    backward_done_ = true;
  }

 private:
  using BackFn = std::function<void(Tape&, const Tensor<T>&)>;

  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    BackFn back;
  };

  Node& node(Var v) { return nodes_[v.id]; }
  const Node& node(Var v) const { return nodes_[v.id]; }

  Var push(Tensor<T> val, BackFn back) {
    nodes_.push_back(Node{std::move(val), {}, std::move(back)});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  static void accumulate(Tensor<T>& dst, const Tensor<T>& g, T c) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += c * g.data[i];
  }

  static T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace nqg
