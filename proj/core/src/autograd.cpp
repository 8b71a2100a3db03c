#include "datt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>
#include <utility>

#include <Eigen/Core>

#include "datt/errors.hpp"

namespace datt::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using CVec = Eigen::Map<const Eigen::VectorXd>;
using MVec = Eigen::Map<Eigen::VectorXd>;

// Below this many multiply-adds per product, Eigen's blocked kernel costs more than it saves.
constexpr std::size_t kLazyGemm = 4096;

thread_local bool t_grad_enabled = true;

bool tracks(std::initializer_list<const Var*> inputs) {
  if (!t_grad_enabled) return false;
  for (const Var* v : inputs) {
    if (v->defined() && v->requires_grad()) return true;
  }
  return false;
}

Var finish(Tensor value, bool track, std::initializer_list<const Var*> inputs,
           std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (track) {
    node->requires_grad = true;
    for (const Var* v : inputs) {
      if (v->defined()) node->parents.push_back(v->shared());
    }
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void require_defined(const Var& v, const char* op) {
  if (!v.defined()) throw ContractError(std::string(op) + ": undefined input");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Splits a shape around an axis into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Tensor permute_tensor(const Tensor& x, std::span<const std::size_t> perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  Tensor out = Tensor::uninitialized(out_shape);
  double* dst = out.data();
  const double* src = x.data();
  const std::size_t n = out.size();
  if (r == 0) {
    dst[0] = src[0];
    return out;
  }
  // Innermost output axis is walked in a tight loop; outer axes by counters.
  const std::size_t last = r - 1;
  const std::size_t inner_n = out_shape[last];
  const std::size_t inner_stride = stride[last];
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t base = 0; base < n; base += inner_n) {
    const double* s = src + offset;
    for (std::size_t j = 0; j < inner_n; ++j) dst[base + j] = s[j * inner_stride];
    for (std::size_t ax = last; ax-- > 0;) {
      ++idx[ax];
      offset += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      offset -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

void accumulate(Node* target, const Tensor& delta) {
  Tensor& g = target->grad_buffer();
  double* gd = g.data();
  const double* dd = delta.data();
  for (std::size_t i = 0, n = g.size(); i < n; ++i) gd[i] += dd[i];
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

Tensor& Var::mutable_value() {
  if (!node_->parents.empty() || node_->backward) {
    throw ContractError("only leaf values may be mutated");
  }
  return node_->value;
}

void Var::zero_grad() { node_->grad = Tensor(); }

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Var& root) {
  require_defined(root, "backward");
  Node* r = root.node();
  if (r->value.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " +
                        shape_string(r->value.shape()));
  }
  if (r->backward_done) {
    throw ContractError("backward: already called on this root; reset gradients first");
  }
  r->backward_done = true;
  if (!r->requires_grad) return;
  const std::vector<Node*> order = topo_order(r);
  r->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void reset_graph_grads(const Var& root) {
  require_defined(root, "reset_graph_grads");
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    n->grad = Tensor();
    n->backward_done = false;
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
}

// ---- ops -------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_string(sa) + " and " +
                         shape_string(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  const bool shared_b = sb.size() == 2;
  bool ok = k == kb;
  if (ok && !shared_b) ok = sa.size() == sb.size() && std::equal(sa.begin(), sa.end() - 2, sb.begin());
  if (!ok) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(sa) + " and " +
                         shape_string(sb));
  }
  const std::size_t batch = a.value().size() / (m * k);
  Shape out_shape = sa;
  out_shape.back() = n;
  Tensor c = Tensor::uninitialized(out_shape);
  const double* ad = a.value().data();
  const double* bd = b.value().data();
  double* cd = c.data();
  const bool small = m * k * n <= kLazyGemm;
  if (shared_b) {
    MMap(cd, batch * m, n).noalias() = CMap(ad, batch * m, k) * CMap(bd, k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MMap dst(cd + i * m * n, m, n);
      CMap lhs(ad + i * m * k, m, k);
      CMap rhs(bd + i * k * n, k, n);
      if (small) {
        dst.noalias() = lhs.lazyProduct(rhs);
      } else {
        dst.noalias() = lhs * rhs;
      }
    }
  }
  const bool track = tracks({&a, &b});
  Node* na = a.node();
  Node* nb = b.node();
  return finish(std::move(c), track, {&a, &b}, [=](Node& self) {
    const double* g = self.grad.data();
    const double* av = na->value.data();
    const double* bv = nb->value.data();
    if (na->requires_grad) {
      double* ga = na->grad_buffer().data();
      if (shared_b) {
        MMap(ga, batch * m, k).noalias() += CMap(g, batch * m, n) * CMap(bv, k, n).transpose();
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          MMap dst(ga + i * m * k, m, k);
          CMap gi(g + i * m * n, m, n);
          CMap bi(bv + i * k * n, k, n);
          if (small) {
            dst.noalias() += gi.lazyProduct(bi.transpose());
          } else {
            dst.noalias() += gi * bi.transpose();
          }
        }
      }
    }
    if (nb->requires_grad) {
      double* gb = nb->grad_buffer().data();
      if (shared_b) {
        MMap(gb, k, n).noalias() += CMap(av, batch * m, k).transpose() * CMap(g, batch * m, n);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          MMap dst(gb + i * k * n, k, n);
          CMap ai(av + i * m * k, m, k);
          CMap gi(g + i * m * n, m, n);
          if (small) {
            dst.noalias() += ai.transpose().lazyProduct(gi);
          } else {
            dst.noalias() += ai.transpose() * gi;
          }
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_defined(x, "linear");
  require_defined(weight, "linear");
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.empty() || sw.size() != 2 || sw[1] != sx.back() ||
      (bias.defined() && bias.shape() != Shape{sw[0]})) {
    throw DimensionError("linear: incompatible shapes x=" + shape_string(sx) +
                         " weight=" + shape_string(sw) +
                         (bias.defined() ? " bias=" + shape_string(bias.shape()) : ""));
  }
  const std::size_t in = sw[1], out = sw[0];
  const std::size_t rows = x.value().size() / in;
  Shape out_shape = sx;
  out_shape.back() = out;
  Tensor y = Tensor::uninitialized(out_shape);
  MMap Y(y.data(), rows, out);
  Y.noalias() = CMap(x.value().data(), rows, in) * CMap(weight.value().data(), out, in).transpose();
  if (bias.defined()) Y.rowwise() += CVec(bias.value().data(), out).transpose();
  const bool track = tracks({&x, &weight, &bias});
  Node* nx = x.node();
  Node* nw = weight.node();
  Node* nb = bias.defined() ? bias.node() : nullptr;
  return finish(std::move(y), track, {&x, &weight, &bias}, [=](Node& self) {
    CMap G(self.grad.data(), rows, out);
    if (nx->requires_grad) {
      MMap(nx->grad_buffer().data(), rows, in).noalias() += G * CMap(nw->value.data(), out, in);
    }
    if (nw->requires_grad) {
      MMap(nw->grad_buffer().data(), out, in).noalias() +=
          G.transpose() * CMap(nx->value.data(), rows, in);
    }
    if (nb && nb->requires_grad) {
      MVec(nb->grad_buffer().data(), out) += G.colwise().sum().transpose();
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape(a, b, "add");
  Tensor c = a.value();
  const double* bd = b.value().data();
  double* cd = c.data();
  for (std::size_t i = 0, n = c.size(); i < n; ++i) cd[i] += bd[i];
  Node* na = a.node();
  Node* nb = b.node();
  return finish(std::move(c), tracks({&a, &b}), {&a, &b}, [=](Node& self) {
    if (na->requires_grad) accumulate(na, self.grad);
    if (nb->requires_grad) accumulate(nb, self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape(a, b, "mul");
  Tensor c = a.value();
  const double* bd = b.value().data();
  double* cd = c.data();
  for (std::size_t i = 0, n = c.size(); i < n; ++i) cd[i] *= bd[i];
  Node* na = a.node();
  Node* nb = b.node();
  return finish(std::move(c), tracks({&a, &b}), {&a, &b}, [=](Node& self) {
    const double* g = self.grad.data();
    const std::size_t n = self.grad.size();
    if (na->requires_grad) {
      double* ga = na->grad_buffer().data();
      const double* bv = nb->value.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
    }
    if (nb->requires_grad) {
      double* gb = nb->grad_buffer().data();
      const double* av = na->value.data();
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  require_defined(x, "scale");
  Tensor y = x.value();
  for (double& v : y.values()) v *= factor;
  Node* nx = x.node();
  return finish(std::move(y), tracks({&x}), {&x}, [=](Node& self) {
    double* gx = nx->grad_buffer().data();
    const double* g = self.grad.data();
    for (std::size_t i = 0, n = self.grad.size(); i < n; ++i) gx[i] += factor * g[i];
  });
}

Var relu(const Var& x) {
  require_defined(x, "relu");
  Tensor y = x.value();
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  Node* nx = x.node();
  return finish(std::move(y), tracks({&x}), {&x}, [=](Node& self) {
    double* gx = nx->grad_buffer().data();
    const double* g = self.grad.data();
    const double* xv = nx->value.data();
    for (std::size_t i = 0, n = self.grad.size(); i < n; ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var softmax_lastdim(const Var& x) {
  require_defined(x, "softmax_lastdim");
  if (x.shape().empty()) throw DimensionError("softmax_lastdim: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().size() / n;
  Tensor y = Tensor::uninitialized(x.shape());
  const double* xv = x.value().data();
  double* yv = y.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * n;
    double* yr = yv + r * n;
    const double mx = *std::max_element(xr, xr + n);
    Eigen::Map<Eigen::ArrayXd> out(yr, static_cast<Eigen::Index>(n));
    out = (Eigen::Map<const Eigen::ArrayXd>(xr, static_cast<Eigen::Index>(n)) - mx).exp();
    out *= 1.0 / out.sum();
  }
  Node* nx = x.node();
  return finish(std::move(y), tracks({&x}), {&x}, [=](Node& self) {
    double* gx = nx->grad_buffer().data();
    const double* g = self.grad.data();
    const double* yv2 = self.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g + r * n;
      const double* yr = yv2 + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      double* out = gx + r * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  if (x.shape().empty()) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: x=" + shape_string(x.shape()) + " gain=" +
                         shape_string(gain.shape()) + " bias=" + shape_string(bias.shape()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.value().size() / d;
  const bool track = tracks({&x, &gain, &bias});
  auto xhat = std::make_shared<std::vector<double>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor y = Tensor::uninitialized(x.shape());
  const double* xv = x.value().data();
  const double* gv = gain.value().data();
  const double* bv = bias.value().data();
  double* yv = y.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* hr = xhat->data() + r * d;
    double* yr = yv + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * is;
      yr[j] = gv[j] * hr[j] + bv[j];
    }
  }
  if (!track) return finish(std::move(y), false, {}, {});
  Node* nx = x.node();
  Node* ng = gain.node();
  Node* nb = bias.node();
  return finish(std::move(y), true, {&x, &gain, &bias}, [=](Node& self) {
    const double* g = self.grad.data();
    const double* gv2 = ng->value.data();
    double* gx = nx->requires_grad ? nx->grad_buffer().data() : nullptr;
    double* gg = ng->requires_grad ? ng->grad_buffer().data() : nullptr;
    double* gb = nb->requires_grad ? nb->grad_buffer().data() : nullptr;
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g + r * d;
      const double* hr = xhat->data() + r * d;
      if (gg) for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
      if (gb) for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
      if (gx) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dh[j] = gr[j] * gv2[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * hr[j];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        const double is = (*inv_std)[r];
        double* out = gx + r * d;
        for (std::size_t j = 0; j < d; ++j) out[j] += is * (dh[j] - mean_dh - hr[j] * mean_dh_h);
      }
    }
  });
}

Var mean_axis(const Var& x, int axis) {
  require_defined(x, "mean_axis");
  const std::size_t ax = normalize_axis(axis, x.shape().size(), "mean_axis");
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  Tensor y(out_shape, 0.0);
  const double* xv = x.value().data();
  double* yv = y.data();
  const double inv = 1.0 / static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = xv + (o * s.extent + e) * s.inner;
      double* dst = yv + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  for (double& v : y.values()) v *= inv;
  Node* nx = x.node();
  return finish(std::move(y), tracks({&x}), {&x}, [=](Node& self) {
    double* gx = nx->grad_buffer().data();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        double* dst = gx + (o * s.extent + e) * s.inner;
        const double* src = g + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += inv * src[i];
      }
    }
  });
}

Var sum_all(const Var& x) {
  require_defined(x, "sum_all");
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  Node* nx = x.node();
  return finish(Tensor::scalar(total), tracks({&x}), {&x}, [=](Node& self) {
    const double g = self.grad[0];
    for (double& v : nx->grad_buffer().values()) v += g;
  });
}

Var sum_lastdim(const Var& x) {
  require_defined(x, "sum_lastdim");
  if (x.shape().empty()) throw DimensionError("sum_lastdim: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().size() / n;
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  Tensor y(out_shape, 0.0);
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double t = 0.0;
    for (std::size_t j = 0; j < n; ++j) t += xv[r * n + j];
    y[r] = t;
  }
  Node* nx = x.node();
  return finish(std::move(y), tracks({&x}), {&x}, [=](Node& self) {
    double* gx = nx->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += self.grad[r];
    }
  });
}

Var broadcast_lastdim(const Var& x, std::size_t n) {
  require_defined(x, "broadcast_lastdim");
  if (x.shape().empty() || x.shape().back() != 1 || n == 0) {
    throw DimensionError("broadcast_lastdim: need trailing extent 1, got " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.value().size();
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor y = Tensor::uninitialized(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = x.value()[r];
  }
  Node* nx = x.node();
  return finish(std::move(y), tracks({&x}), {&x}, [=](Node& self) {
    double* gx = nx->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r) {
      double t = 0.0;
      for (std::size_t j = 0; j < n; ++j) t += self.grad[r * n + j];
      gx[r] += t;
    }
  });
}

Var concat_lastdim(const Var& a, const Var& b) {
  require_defined(a, "concat_lastdim");
  require_defined(b, "concat_lastdim");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw DimensionError("concat_lastdim: incompatible shapes " + shape_string(sa) + " and " +
                         shape_string(sb));
  }
  const std::size_t na_ = sa.back(), nb_ = sb.back(), n = na_ + nb_;
  const std::size_t rows = a.value().size() / na_;
  Shape out_shape = sa;
  out_shape.back() = n;
  Tensor y = Tensor::uninitialized(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * na_, na_, y.data() + r * n);
    std::copy_n(b.value().data() + r * nb_, nb_, y.data() + r * n + na_);
  }
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(std::move(y), tracks({&a, &b}), {&a, &b}, [=](Node& self) {
    const double* g = self.grad.data();
    if (pa->requires_grad) {
      double* ga = pa->grad_buffer().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < na_; ++j) ga[r * na_ + j] += g[r * n + j];
      }
    }
    if (pb->requires_grad) {
      double* gb = pb->grad_buffer().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < nb_; ++j) gb[r * nb_ + j] += g[r * n + na_ + j];
      }
    }
  });
}

Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("stack: no inputs");
  const Shape& s0 = parts[0].shape();
  for (const Var& p : parts) {
    require_defined(p, "stack");
    if (p.shape() != s0) {
      throw DimensionError("stack: shape mismatch " + shape_string(s0) + " vs " +
                           shape_string(p.shape()));
    }
  }
  const std::size_t chunk = parts[0].value().size();
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  Tensor y = Tensor::uninitialized(out_shape);
  bool track = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy_n(parts[i].value().data(), chunk, y.data() + i * chunk);
    track = track || tracks({&parts[i]});
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(y);
  if (track) {
    node->requires_grad = true;
    std::vector<Node*> raw;
    for (const Var& p : parts) {
      node->parents.push_back(p.shared());
      raw.push_back(p.node());
    }
    node->backward = [raw, chunk](Node& self) {
      for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!raw[i]->requires_grad) continue;
        double* g = raw[i]->grad_buffer().data();
        const double* src = self.grad.data() + i * chunk;
        for (std::size_t j = 0; j < chunk; ++j) g[j] += src[j];
      }
    };
  }
  return Var(std::move(node));
}

Var slice(const Var& x, int axis, std::size_t begin, std::size_t end) {
  require_defined(x, "slice");
  const std::size_t ax = normalize_axis(axis, x.shape().size(), "slice");
  const AxisSplit s = split_at(x.shape(), ax);
  if (begin >= end || end > s.extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for extent " + std::to_string(s.extent));
  }
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[ax] = len;
  Tensor y = Tensor::uninitialized(out_shape);
  const double* xv = x.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv + (o * s.extent + begin) * s.inner, len * s.inner,
                y.data() + o * len * s.inner);
  }
  Node* nx = x.node();
  return finish(std::move(y), tracks({&x}), {&x}, [=](Node& self) {
    double* gx = nx->grad_buffer().data();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = gx + (o * s.extent + begin) * s.inner;
      const double* src = g + o * len * s.inner;
      for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Var permute(const Var& x, std::span<const std::size_t> perm) {
  require_defined(x, "permute");
  const std::size_t r = x.shape().size();
  std::vector<std::size_t> p(perm.begin(), perm.end());
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted.size() != r || sorted[i] != i) {
      throw DimensionError("permute: invalid permutation for shape " + shape_string(x.shape()));
    }
  }
  std::vector<std::size_t> inverse(r);
  for (std::size_t i = 0; i < r; ++i) inverse[p[i]] = i;
  Node* nx = x.node();
  return finish(permute_tensor(x.value(), p), tracks({&x}), {&x}, [=](Node& self) {
    accumulate(nx, permute_tensor(self.grad, inverse));
  });
}

Var permute(const Var& x, std::initializer_list<std::size_t> perm) {
  return permute(x, std::span<const std::size_t>(perm.begin(), perm.size()));
}

Var reshape(const Var& x, Shape shape) {
  require_defined(x, "reshape");
  Node* nx = x.node();
  return finish(x.value().reshaped(std::move(shape)), tracks({&x}), {&x}, [=](Node& self) {
    double* gx = nx->grad_buffer().data();
    const double* g = self.grad.data();
    for (std::size_t i = 0, n = self.grad.size(); i < n; ++i) gx[i] += g[i];
  });
}

Var mse_loss(const Var& prediction, const Tensor& target) {
  require_defined(prediction, "mse_loss");
  const std::size_t n = prediction.value().size();
  if (target.size() != n) {
    throw DimensionError("mse_loss: prediction " + shape_string(prediction.shape()) +
                         " vs target " + shape_string(target.shape()));
  }
  auto diff = std::make_shared<std::vector<double>>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    (*diff)[i] = prediction.value()[i] - target[i];
    total += (*diff)[i] * (*diff)[i];
  }
  Node* np = prediction.node();
  return finish(Tensor::scalar(total / static_cast<double>(n)), tracks({&prediction}),
                {&prediction}, [=](Node& self) {
                  double* gp = np->grad_buffer().data();
                  const double f = 2.0 * self.grad[0] / static_cast<double>(n);
                  for (std::size_t i = 0; i < n; ++i) gp[i] += f * (*diff)[i];
                });
}

}  // namespace datt::ag
