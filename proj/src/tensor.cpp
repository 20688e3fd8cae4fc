#include "stgd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stgd {

namespace {

void ensure_grad(Tensor& g, const Tensor& like) {
  if (g.data.empty()) g = Tensor::zeros(like.shape);
}

std::string shape_to_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

}  // namespace

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  require(shape_numel(shape) == data.size(),
          "Tensor: data length " + std::to_string(data.size()) +
              " does not match shape " + shape_to_str(shape));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, Rng& rng, double lo, double hi) {
  std::size_t n = shape_numel(shape);
  std::vector<double> d(n);
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(d));
}

double Tensor::item() const {
  require(data.size() == 1, "Tensor::item on non-scalar " + shape_str());
  return data[0];
}

std::string Tensor::shape_str() const { return shape_to_str(shape); }

// ---------------------------------------------------------------- Tape

Var Tape::record(Tensor value, std::vector<int> parents, std::string op,
                 std::function<void(const Tape&, const Tensor&, std::vector<Tensor>&)> bw) {
  for (double v : value.data) {
    if (!std::isfinite(v))
      throw std::runtime_error("non-finite value produced by op '" + op + "'");
  }
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.op = std::move(op);
  n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Tensor& value, const std::string& name) {
  return record(value, {}, name, nullptr);
}

const Tensor& Tape::value(Var v) const {
  require(v.valid() && v.id < static_cast<int>(nodes_.size()), "Tape: invalid var");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb),
          "add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += tb.data[i];
  return record(std::move(out), {a.id, b.id}, "add",
                [pa = a.id, pb = b.id](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  ensure_grad(gr[pb], t.nodes_[pb].value);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gr[pa].data[i] += g.data[i];
                    gr[pb].data[i] += g.data[i];
                  }
                });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb),
          "sub: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= tb.data[i];
  return record(std::move(out), {a.id, b.id}, "sub",
                [pa = a.id, pb = b.id](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  ensure_grad(gr[pb], t.nodes_[pb].value);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gr[pa].data[i] += g.data[i];
                    gr[pb].data[i] -= g.data[i];
                  }
                });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb),
          "mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= tb.data[i];
  return record(std::move(out), {a.id, b.id}, "mul",
                [pa = a.id, pb = b.id](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  const Tensor& va = t.nodes_[pa].value;
                  const Tensor& vb = t.nodes_[pb].value;
                  ensure_grad(gr[pa], va);
                  ensure_grad(gr[pb], vb);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gr[pa].data[i] += g.data[i] * vb.data[i];
                    gr[pb].data[i] += g.data[i] * va.data[i];
                  }
                });
}

Var Tape::affine(Var a, double scale, double shift) {
  Tensor out = value(a);
  for (auto& v : out.data) v = scale * v + shift;
  return record(std::move(out), {a.id}, "affine",
                [pa = a.id, scale](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < g.size(); ++i) gr[pa].data[i] += scale * g.data[i];
                });
}

Var Tape::exp_op(Var a) {
  Tensor out = value(a);
  for (auto& v : out.data) v = std::exp(v);
  Tensor saved = out;
  return record(std::move(out), {a.id}, "exp",
                [pa = a.id, saved](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    gr[pa].data[i] += g.data[i] * saved.data[i];
                });
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  Tensor saved = out;
  return record(std::move(out), {a.id}, "sigmoid",
                [pa = a.id, saved](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    double s = saved.data[i];
                    gr[pa].data[i] += g.data[i] * s * (1.0 - s);
                  }
                });
}

Var Tape::tanh_op(Var a) {
  Tensor out = value(a);
  for (auto& v : out.data) v = std::tanh(v);
  Tensor saved = out;
  return record(std::move(out), {a.id}, "tanh",
                [pa = a.id, saved](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    double s = saved.data[i];
                    gr[pa].data[i] += g.data[i] * (1.0 - s * s);
                  }
                });
}

Var Tape::leaky_relu(Var a, double slope) {
  const Tensor& ta = value(a);
  Tensor out = ta;
  for (auto& v : out.data) v = v > 0.0 ? v : slope * v;
  return record(std::move(out), {a.id}, "leaky_relu",
                [pa = a.id, slope](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  const Tensor& in = t.nodes_[pa].value;
                  ensure_grad(gr[pa], in);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    gr[pa].data[i] += g.data[i] * (in.data[i] > 0.0 ? 1.0 : slope);
                });
}

Var Tape::elu(Var a) {
  const Tensor& ta = value(a);
  Tensor out = ta;
  for (auto& v : out.data) v = v > 0.0 ? v : std::expm1(v);
  Tensor saved = out;
  return record(std::move(out), {a.id}, "elu",
                [pa = a.id, saved](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  const Tensor& in = t.nodes_[pa].value;
                  ensure_grad(gr[pa], in);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    double d = in.data[i] > 0.0 ? 1.0 : saved.data[i] + 1.0;
                    gr[pa].data[i] += g.data[i] * d;
                  }
                });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(0),
          "matmul: incompatible shapes " + ta.shape_str() + " x " + tb.shape_str());
  std::size_t n = ta.dim(0), k = ta.dim(1), m = tb.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = ta.data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &tb.data[p * m];
      double* orow = &out.data[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return record(std::move(out), {a.id, b.id}, "matmul",
                [pa = a.id, pb = b.id, n, k, m](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  const Tensor& va = t.nodes_[pa].value;
                  const Tensor& vb = t.nodes_[pb].value;
                  ensure_grad(gr[pa], va);
                  ensure_grad(gr[pb], vb);
                  // dA = G * B^T ; dB = A^T * G
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < m; ++j) {
                      double gv = g.data[i * m + j];
                      if (gv == 0.0) continue;
                      for (std::size_t p = 0; p < k; ++p) {
                        gr[pa].data[i * k + p] += gv * vb.data[p * m + j];
                        gr[pb].data[p * m + j] += gv * va.data[i * k + p];
                      }
                    }
                  }
                });
}

Var Tape::linear(Var x, Var w, std::optional<Var> b) {
  Var y = matmul(x, w);
  if (!b) return y;
  const Tensor& ty = value(y);
  const Tensor& tb = value(*b);
  require(tb.rank() == 1 && tb.dim(0) == ty.dim(1),
          "linear: bias shape " + tb.shape_str() + " does not match output " + ty.shape_str());
  std::size_t n = ty.dim(0), m = ty.dim(1);
  Tensor out = ty;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] += tb.data[j];
  return record(std::move(out), {y.id, b->id}, "bias_add",
                [py = y.id, pb = b->id, n, m](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[py], t.nodes_[py].value);
                  ensure_grad(gr[pb], t.nodes_[pb].value);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                      gr[py].data[i * m + j] += g.data[i * m + j];
                      gr[pb].data[j] += g.data[i * m + j];
                    }
                });
}

Var Tape::transpose(Var a) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2, "transpose: rank-2 required, got " + ta.shape_str());
  std::size_t n = ta.dim(0), m = ta.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[j * n + i] = ta.data[i * m + j];
  return record(std::move(out), {a.id}, "transpose",
                [pa = a.id, n, m](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                      gr[pa].data[i * m + j] += g.data[j * n + i];
                });
}

Var Tape::flatten(Var a) {
  const Tensor& ta = value(a);
  Tensor out({ta.size()}, ta.data);
  return record(std::move(out), {a.id}, "flatten",
                [pa = a.id](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < g.size(); ++i) gr[pa].data[i] += g.data[i];
                });
}

Var Tape::slice_cols(Var a, std::size_t lo, std::size_t hi) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2 && lo < hi && hi <= ta.dim(1), "slice_cols: bad range");
  std::size_t n = ta.dim(0), m = ta.dim(1), c = hi - lo;
  Tensor out = Tensor::zeros({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = ta.data[i * m + lo + j];
  return record(std::move(out), {a.id}, "slice_cols",
                [pa = a.id, lo, n, m, c](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      gr[pa].data[i * m + lo + j] += g.data[i * c + j];
                });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty input");
  std::size_t n = value(parts[0]).dim(0);
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    const Tensor& tp = value(p);
    require(tp.rank() == 2 && tp.dim(0) == n, "concat_cols: row mismatch");
    widths.push_back(tp.dim(1));
    total += tp.dim(1);
    ids.push_back(p.id);
  }
  Tensor out = Tensor::zeros({n, total});
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& tp = value(parts[pi]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[pi]; ++j)
        out.data[i * total + off + j] = tp.data[i * widths[pi] + j];
    off += widths[pi];
  }
  return record(std::move(out), ids, "concat_cols",
                [ids, widths, n, total](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  std::size_t off = 0;
                  for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                    ensure_grad(gr[ids[pi]], t.nodes_[ids[pi]].value);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < widths[pi]; ++j)
                        gr[ids[pi]].data[i * widths[pi] + j] += g.data[i * total + off + j];
                    off += widths[pi];
                  }
                });
}

Var Tape::gather_rows(Var a, const std::vector<std::size_t>& rows) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2, "gather_rows: rank-2 required");
  std::size_t m = ta.dim(1);
  Tensor out = Tensor::zeros({rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < ta.dim(0), "gather_rows: index out of range");
    std::copy_n(&ta.data[rows[r] * m], m, &out.data[r * m]);
  }
  return record(std::move(out), {a.id}, "gather_rows",
                [pa = a.id, rows, m](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t r = 0; r < rows.size(); ++r)
                    for (std::size_t j = 0; j < m; ++j)
                      gr[pa].data[rows[r] * m + j] += g.data[r * m + j];
                });
}

Var Tape::row_max(Var a) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2 && ta.dim(1) > 0, "row_max: rank-2 with columns required");
  std::size_t n = ta.dim(0), m = ta.dim(1);
  Tensor out = Tensor::zeros({n});
  std::vector<std::size_t> arg(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = ta.data[i * m];
    for (std::size_t j = 1; j < m; ++j) {
      if (ta.data[i * m + j] > best) {
        best = ta.data[i * m + j];
        arg[i] = j;
      }
    }
    out.data[i] = best;
  }
  return record(std::move(out), {a.id}, "row_max",
                [pa = a.id, arg, m](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < arg.size(); ++i)
                    gr[pa].data[i * m + arg[i]] += g.data[i];
                });
}

Var Tape::sum(Var a) {
  const Tensor& ta = value(a);
  double s = 0.0;
  for (double v : ta.data) s += v;
  return record(Tensor::scalar(s), {a.id}, "sum",
                [pa = a.id](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (auto& v : gr[pa].data) v += g.data[0];
                });
}

Var Tape::mean(Var a) {
  std::size_t n = value(a).size();
  require(n > 0, "mean: empty tensor");
  return affine(sum(a), 1.0 / static_cast<double>(n), 0.0);
}

Var Tape::softmax_rows(Var a) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2, "softmax_rows: rank-2 required");
  std::size_t n = ta.dim(0), m = ta.dim(1);
  Tensor out = ta;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &out.data[i * m];
    double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < m; ++j) row[j] /= z;
  }
  Tensor saved = out;
  return record(std::move(out), {a.id}, "softmax_rows",
                [pa = a.id, saved, n, m](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  for (std::size_t i = 0; i < n; ++i) {
                    const double* y = &saved.data[i * m];
                    const double* gi = &g.data[i * m];
                    double dot = 0.0;
                    for (std::size_t j = 0; j < m; ++j) dot += gi[j] * y[j];
                    for (std::size_t j = 0; j < m; ++j)
                      gr[pa].data[i * m + j] += y[j] * (gi[j] - dot);
                  }
                });
}

Var Tape::masked_softmax(Var logits, const std::vector<char>& mask) {
  const Tensor& tl = value(logits);
  require(tl.rank() == 1 && tl.dim(0) == mask.size(),
          "masked_softmax: logits/mask length mismatch");
  bool any = false;
  double mx = -1e300;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      any = true;
      mx = std::max(mx, tl.data[i]);
    }
  }
  if (!any) throw ValidationError("masked_softmax: empty neighborhood (all entries masked)");
  Tensor out = Tensor::zeros(tl.shape);
  double z = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      out.data[i] = std::exp(tl.data[i] - mx);
      z += out.data[i];
    }
  }
  for (std::size_t i = 0; i < mask.size(); ++i) out.data[i] /= z;
  Tensor saved = out;
  return record(std::move(out), {logits.id}, "masked_softmax",
                [pl = logits.id, saved, mask](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pl], t.nodes_[pl].value);
                  double dot = 0.0;
                  for (std::size_t i = 0; i < mask.size(); ++i)
                    if (mask[i]) dot += g.data[i] * saved.data[i];
                  for (std::size_t i = 0; i < mask.size(); ++i)
                    if (mask[i]) gr[pl].data[i] += saved.data[i] * (g.data[i] - dot);
                });
}

Var Tape::segment_softmax(Var edge_vals, const std::vector<std::size_t>& offsets) {
  const Tensor& te = value(edge_vals);
  require(te.rank() == 1, "segment_softmax: rank-1 required");
  require(!offsets.empty() && offsets.back() == te.dim(0),
          "segment_softmax: offsets do not cover the edge vector");
  Tensor out = te;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    std::size_t lo = offsets[s], hi = offsets[s + 1];
    if (lo >= hi) continue;
    double mx = out.data[lo];
    for (std::size_t k = lo + 1; k < hi; ++k) mx = std::max(mx, out.data[k]);
    double z = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      out.data[k] = std::exp(out.data[k] - mx);
      z += out.data[k];
    }
    for (std::size_t k = lo; k < hi; ++k) out.data[k] /= z;
  }
  Tensor saved = out;
  return record(std::move(out), {edge_vals.id}, "segment_softmax",
                [pe = edge_vals.id, saved, offsets](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pe], t.nodes_[pe].value);
                  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                    std::size_t lo = offsets[s], hi = offsets[s + 1];
                    double dot = 0.0;
                    for (std::size_t k = lo; k < hi; ++k) dot += g.data[k] * saved.data[k];
                    for (std::size_t k = lo; k < hi; ++k)
                      gr[pe].data[k] += saved.data[k] * (g.data[k] - dot);
                  }
                });
}

Var Tape::pair_sum_gather(Var a, Var b, const std::vector<std::size_t>& ia,
                          const std::vector<std::size_t>& ib) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 1 && tb.rank() == 1, "pair_sum_gather: rank-1 inputs required");
  require(ia.size() == ib.size(), "pair_sum_gather: index arrays differ in length");
  Tensor out = Tensor::zeros({ia.size()});
  for (std::size_t k = 0; k < ia.size(); ++k) {
    require(ia[k] < ta.dim(0) && ib[k] < tb.dim(0), "pair_sum_gather: index out of range");
    out.data[k] = ta.data[ia[k]] + tb.data[ib[k]];
  }
  return record(std::move(out), {a.id, b.id}, "pair_sum_gather",
                [pa = a.id, pb = b.id, ia, ib](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[pa], t.nodes_[pa].value);
                  ensure_grad(gr[pb], t.nodes_[pb].value);
                  for (std::size_t k = 0; k < ia.size(); ++k) {
                    gr[pa].data[ia[k]] += g.data[k];
                    gr[pb].data[ib[k]] += g.data[k];
                  }
                });
}

Var Tape::segment_weighted_sum(Var weights, Var feats,
                               const std::vector<std::size_t>& src,
                               const std::vector<std::size_t>& offsets) {
  const Tensor& tw = value(weights);
  const Tensor& tf = value(feats);
  require(tw.rank() == 1 && tw.dim(0) == src.size(),
          "segment_weighted_sum: weight/edge mismatch");
  require(tf.rank() == 2, "segment_weighted_sum: feats must be rank-2");
  require(!offsets.empty() && offsets.back() == src.size(),
          "segment_weighted_sum: offsets do not cover edges");
  std::size_t n = offsets.size() - 1, c = tf.dim(1);
  Tensor out = Tensor::zeros({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) {
      double wv = tw.data[k];
      const double* fr = &tf.data[src[k] * c];
      double* orow = &out.data[i * c];
      for (std::size_t j = 0; j < c; ++j) orow[j] += wv * fr[j];
    }
  }
  return record(std::move(out), {weights.id, feats.id}, "segment_weighted_sum",
                [pw = weights.id, pf = feats.id, src, offsets, c](const Tape& t, const Tensor& g,
                                                                  std::vector<Tensor>& gr) {
                  const Tensor& vw = t.nodes_[pw].value;
                  const Tensor& vf = t.nodes_[pf].value;
                  ensure_grad(gr[pw], vw);
                  ensure_grad(gr[pf], vf);
                  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
                    const double* grow = &g.data[i * c];
                    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) {
                      const double* fr = &vf.data[src[k] * c];
                      double* gf = &gr[pf].data[src[k] * c];
                      double acc = 0.0;
                      for (std::size_t j = 0; j < c; ++j) {
                        acc += grow[j] * fr[j];
                        gf[j] += vw.data[k] * grow[j];
                      }
                      gr[pw].data[k] += acc;
                    }
                  }
                });
}

Var Tape::scale_rows(Var x, const std::vector<double>& row_scales) {
  const Tensor& tx = value(x);
  require(tx.rank() == 2 && tx.dim(0) == row_scales.size(),
          "scale_rows: mask length must match row count");
  std::size_t n = tx.dim(0), m = tx.dim(1);
  Tensor out = tx;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] *= row_scales[i];
  return record(std::move(out), {x.id}, "scale_rows",
                [px = x.id, row_scales, m](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  ensure_grad(gr[px], t.nodes_[px].value);
                  for (std::size_t i = 0; i < row_scales.size(); ++i)
                    for (std::size_t j = 0; j < m; ++j)
                      gr[px].data[i * m + j] += g.data[i * m + j] * row_scales[i];
                });
}

Var Tape::conv2d_same(Var x, Var k, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tk = value(k);
  const Tensor& tb = value(b);
  require(tx.rank() == 3, "conv2d_same: input must be [C,H,W], got " + tx.shape_str());
  require(tk.rank() == 4 && tk.dim(2) == 3 && tk.dim(3) == 3,
          "conv2d_same: kernel must be [Cout,Cin,3,3], got " + tk.shape_str());
  require(tk.dim(1) == tx.dim(0),
          "conv2d_same: kernel Cin " + tk.shape_str() + " does not match input " + tx.shape_str());
  require(tb.rank() == 1 && tb.dim(0) == tk.dim(0), "conv2d_same: bias/kernel Cout mismatch");
  std::size_t cin = tx.dim(0), hh = tx.dim(1), ww = tx.dim(2), cout = tk.dim(0);
  auto xat = [&](const Tensor& t, std::size_t c, long i, long j) -> double {
    if (i < 0 || j < 0 || i >= static_cast<long>(hh) || j >= static_cast<long>(ww)) return 0.0;
    return t.data[(c * hh + static_cast<std::size_t>(i)) * ww + static_cast<std::size_t>(j)];
  };
  Tensor out = Tensor::zeros({cout, hh, ww});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t i = 0; i < hh; ++i) {
      for (std::size_t j = 0; j < ww; ++j) {
        double acc = tb.data[co];
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (int di = 0; di < 3; ++di)
            for (int dj = 0; dj < 3; ++dj)
              acc += xat(tx, ci, static_cast<long>(i) + di - 1, static_cast<long>(j) + dj - 1) *
                     tk.data[((co * cin + ci) * 3 + di) * 3 + dj];
        out.data[(co * hh + i) * ww + j] = acc;
      }
    }
  }
  return record(std::move(out), {x.id, k.id, b.id}, "conv2d_same",
                [px = x.id, pk = k.id, pb = b.id, cin, hh, ww, cout](const Tape& t, const Tensor& g,
                                                                     std::vector<Tensor>& gr) {
                  const Tensor& vx = t.nodes_[px].value;
                  const Tensor& vk = t.nodes_[pk].value;
                  ensure_grad(gr[px], vx);
                  ensure_grad(gr[pk], vk);
                  ensure_grad(gr[pb], t.nodes_[pb].value);
                  auto in_range = [&](long i, long j) {
                    return i >= 0 && j >= 0 && i < static_cast<long>(hh) && j < static_cast<long>(ww);
                  };
                  for (std::size_t co = 0; co < cout; ++co) {
                    for (std::size_t i = 0; i < hh; ++i) {
                      for (std::size_t j = 0; j < ww; ++j) {
                        double gv = g.data[(co * hh + i) * ww + j];
                        if (gv == 0.0) continue;
                        gr[pb].data[co] += gv;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                          for (int di = 0; di < 3; ++di) {
                            for (int dj = 0; dj < 3; ++dj) {
                              long ii = static_cast<long>(i) + di - 1;
                              long jj = static_cast<long>(j) + dj - 1;
                              if (!in_range(ii, jj)) continue;
                              std::size_t xi = (ci * hh + static_cast<std::size_t>(ii)) * ww +
                                               static_cast<std::size_t>(jj);
                              std::size_t ki = ((co * cin + ci) * 3 + di) * 3 + dj;
                              gr[pk].data[ki] += gv * vx.data[xi];
                              gr[px].data[xi] += gv * vk.data[ki];
                            }
                          }
                        }
                      }
                    }
                  }
                });
}

Var Tape::dense_mhsa(Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads) {
  const Tensor& tx = value(x);
  require(tx.rank() == 2, "dense_mhsa: input must be [n,C]");
  std::size_t c = tx.dim(1);
  require(heads > 0 && c % heads == 0,
          "dense_mhsa: feature dim " + std::to_string(c) + " not divisible by " +
              std::to_string(heads) + " heads");
  std::size_t dh = c / heads;
  Var q = matmul(x, wq);
  Var kk = matmul(x, wk);
  Var v = matmul(x, wv);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(kk, h * dh, (h + 1) * dh);
    Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = affine(matmul(qh, transpose(kh)), inv_sqrt, 0.0);
    Var attn = softmax_rows(scores);
    head_outs.push_back(matmul(attn, vh));
  }
  Var merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  return add(x, matmul(merged, wo));
}

Var Tape::custom_op(Tensor value, const std::vector<Var>& parents, std::string op,
                    CustomBackward bw) {
  std::vector<int> ids;
  ids.reserve(parents.size());
  for (Var p : parents) {
    require(p.valid(), "custom_op: invalid parent var");
    ids.push_back(p.id);
  }
  return record(std::move(value), ids, std::move(op),
                [ids, bw = std::move(bw)](const Tape& t, const Tensor& g, std::vector<Tensor>& gr) {
                  std::vector<const Tensor*> values;
                  std::vector<Tensor*> grads;
                  values.reserve(ids.size());
                  grads.reserve(ids.size());
                  for (int id : ids) {
                    ensure_grad(gr[id], t.nodes_[id].value);
                    values.push_back(&t.nodes_[id].value);
                    grads.push_back(&gr[id]);
                  }
                  bw(g, values, grads);
                });
}

std::vector<Tensor> Tape::backward(Var scalar_out) const {
  const Tensor& out = value(scalar_out);
  require(out.size() == 1, "backward: output must be scalar, got " + out.shape_str());
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(scalar_out.id)] = Tensor::scalar(1.0);
  for (int i = scalar_out.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (grads[static_cast<std::size_t>(i)].data.empty() || !n.backward) continue;
    n.backward(*this, grads[static_cast<std::size_t>(i)], grads);
  }
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (grads[i].data.empty()) grads[i] = Tensor::zeros(nodes_[i].value.shape);
  return grads;
}

// ---------------------------------------------------------- ParamStore

Tensor& ParamStore::create(const std::string& name, std::vector<std::size_t> shape,
                           std::size_t fan_in) {
  require(!has(name), "ParamStore: duplicate parameter '" + name + "'");
  require(fan_in > 0, "ParamStore: fan_in must be positive");
  double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  params_[name] = Tensor::uniform(std::move(shape), rng_, -bound, bound);
  return params_[name];
}

Tensor& ParamStore::create_zeros(const std::string& name, std::vector<std::size_t> shape) {
  require(!has(name), "ParamStore: duplicate parameter '" + name + "'");
  params_[name] = Tensor::zeros(std::move(shape));
  return params_[name];
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), "ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), "ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::sgd_step(const std::map<std::string, Tensor>& grads, double lr) {
  for (const auto& [name, g] : grads) {
    Tensor& p = get(name);
    require(p.same_shape(g), "sgd_step: gradient shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) p.data[i] -= lr * g.data[i];
  }
}

// ----------------------------------------------------------- grad check

GradCheckReport grad_check(
    std::map<std::string, Tensor>& inputs,
    const std::function<Var(Tape&, const std::map<std::string, Var>&)>& build,
    double step) {
  Tape tape;
  std::map<std::string, Var> vars;
  for (const auto& [name, t] : inputs) vars[name] = tape.leaf(t, name);
  Var loss = build(tape, vars);
  auto grads = tape.backward(loss);

  auto eval = [&]() {
    Tape t2;
    std::map<std::string, Var> v2;
    for (const auto& [name, t] : inputs) v2[name] = t2.leaf(t, name);
    return t2.value(build(t2, v2)).item();
  };

  GradCheckReport rep;
  for (auto& [name, tensor] : inputs) {
    const Tensor& g_ad = grads[static_cast<std::size_t>(vars[name].id)];
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      double orig = tensor.data[i];
      tensor.data[i] = orig + step;
      double fp = eval();
      tensor.data[i] = orig - step;
      double fm = eval();
      tensor.data[i] = orig;
      double g_fd = (fp - fm) / (2.0 * step);
      double denom = std::max({1.0, std::abs(g_fd), std::abs(g_ad.data[i])});
      double rel = std::abs(g_fd - g_ad.data[i]) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

}  // namespace stgd
