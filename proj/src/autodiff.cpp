#include "lbn/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "lbn/errors.hpp"

namespace lbn::ad {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Constant: return "constant";
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddRow: return "add_row";
    case OpKind::SubRow: return "sub_row";
    case OpKind::MulRow: return "mul_row";
    case OpKind::Scale: return "scale";
    case OpKind::ScaleConst: return "scale_const";
    case OpKind::Mix: return "mix";
    case OpKind::Leaky: return "leaky";
    case OpKind::Relu: return "relu";
    case OpKind::RsqrtEps: return "rsqrt_eps";
    case OpKind::MeanRows: return "mean_rows";
    case OpKind::VarRows: return "var_rows";
    case OpKind::Reshape: return "reshape";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::EntropySum: return "entropy_sum";
    case OpKind::RangeSum: return "range_sum";
    case OpKind::NllSum: return "nll_sum";
    case OpKind::Sum: return "sum";
    case OpKind::QuerySelect: return "query_select";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->value(id_); }

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of a detached Var");
  return *tape_;
}

void GradSink::add(std::size_t k, const Tensor& g) {
  const NodeId target = inputs_[k];
  if (!present_[target]) {
    grads_[target] = g;
    present_[target] = true;
    return;
  }
  auto& acc = grads_[target];
  if (acc.shape() != g.shape()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match " +
                     shape_str(acc.shape()));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

const Tensor& Gradients::of(const Var& leaf) const { return of(leaf.id()); }

const Tensor& Gradients::of(NodeId leaf) const {
  auto it = grads_.find(leaf);
  if (it == grads_.end()) throw ContractError("node " + std::to_string(leaf) + " is not a leaf");
  return it->second;
}

bool Gradients::all_finite() const {
  return std::all_of(grads_.begin(), grads_.end(),
                     [](const auto& kv) { return kv.second.all_finite(); });
}

Var Tape::constant(Tensor value) {
  nodes_.push_back({OpKind::Constant, {}, std::move(value), {}});
  requires_grad_.push_back(false);
  return {this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back({OpKind::Leaf, {}, std::move(value), {}});
  requires_grad_.push_back(true);
  leaves_.push_back(nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(OpKind op, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  bool req = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw ContractError("node input refers to a later node");
    req = req || requires_grad_[in];
  }
  nodes_.push_back({op, std::move(inputs), std::move(value), req ? std::move(backward) : BackwardFn{}});
  requires_grad_.push_back(req);
  return {this, nodes_.size() - 1};
}

Gradients Tape::backward(const Var& loss) const {
  if (loss.id() >= nodes_.size()) throw ContractError("loss node is not on this tape");
  const auto& loss_value = nodes_[loss.id()].value;
  if (loss_value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss_value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> present(nodes_.size(), false);
  grads[loss.id()] = Tensor::full(loss_value.shape(), 1.0);
  present[loss.id()] = true;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const auto& node = nodes_[i];
    if (!present[i] || !node.backward) continue;
    GradSink sink(node.inputs, grads, present, requires_grad_);
    node.backward(grads[i], sink);
  }

  Gradients out;
  for (auto id : leaves_) {
    out.grads_[id] = present[id] ? grads[id] : Tensor::zeros(nodes_[id].value.shape());
  }
  return out;
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_row_operand(const Tensor& x, const Tensor& row, const char* what) {
  if (x.rank() != 2 || row.rank() != 1 || row.size() != x.cols()) {
    throw ShapeError(std::string(what) + ": cannot broadcast " + shape_str(row.shape()) +
                     " over " + shape_str(x.shape()));
  }
}

void require_scalar(const Tensor& s, const char* what) {
  if (s.size() != 1) throw ShapeError(std::string(what) + ": expected a single-element tensor");
}

Tensor transpose(const Tensor& a) {
  const auto r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i, j);
  return Tensor({c, r}, std::move(out));
}

Tensor col_sums(const Tensor& g) {
  const auto n = g.rows(), c = g.cols();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += g.at(i, j);
  return Tensor::vector(std::move(out));
}

template <class F>
Tensor map(const Tensor& x, F f) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return Tensor(x.shape(), std::move(out));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

template <class F>
Tensor zip_row(const Tensor& x, const Tensor& row, F f) {
  const auto n = x.rows(), c = x.cols();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = f(x.at(i, j), row[j]);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = lbn::matmul(av, bv);
  return tape.record(OpKind::MatMul, {a.id(), b.id()}, std::move(out),
                     [av, bv](const Tensor& g, GradSink& sink) {
                       if (sink.needs(0)) sink.add(0, lbn::matmul(g, transpose(bv)));
                       if (sink.needs(1)) sink.add(1, lbn::matmul(transpose(av), g));
                     });
}

Var add(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = zip(a.value(), b.value(), [](double x, double y) { return x + y; });
  return tape.record(OpKind::Add, {a.id(), b.id()}, std::move(out),
                     [](const Tensor& g, GradSink& sink) {
                       if (sink.needs(0)) sink.add(0, g);
                       if (sink.needs(1)) sink.add(1, g);
                     });
}

Var sub(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = zip(a.value(), b.value(), [](double x, double y) { return x - y; });
  return tape.record(OpKind::Sub, {a.id(), b.id()}, std::move(out),
                     [](const Tensor& g, GradSink& sink) {
                       if (sink.needs(0)) sink.add(0, g);
                       if (sink.needs(1)) sink.add(1, map(g, [](double v) { return -v; }));
                     });
}

Var mul(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = zip(av, bv, [](double x, double y) { return x * y; });
  return tape.record(OpKind::Mul, {a.id(), b.id()}, std::move(out),
                     [av, bv](const Tensor& g, GradSink& sink) {
                       auto times = [](double x, double y) { return x * y; };
                       if (sink.needs(0)) sink.add(0, zip(g, bv, times));
                       if (sink.needs(1)) sink.add(1, zip(g, av, times));
                     });
}

Var add_row(const Var& x, const Var& row) {
  auto& tape = same_tape(x, row);
  require_row_operand(x.value(), row.value(), "add_row");
  Tensor out = zip_row(x.value(), row.value(), [](double a, double r) { return a + r; });
  return tape.record(OpKind::AddRow, {x.id(), row.id()}, std::move(out),
                     [](const Tensor& g, GradSink& sink) {
                       if (sink.needs(0)) sink.add(0, g);
                       if (sink.needs(1)) sink.add(1, col_sums(g));
                     });
}

Var sub_row(const Var& x, const Var& row) {
  auto& tape = same_tape(x, row);
  require_row_operand(x.value(), row.value(), "sub_row");
  Tensor out = zip_row(x.value(), row.value(), [](double a, double r) { return a - r; });
  return tape.record(OpKind::SubRow, {x.id(), row.id()}, std::move(out),
                     [](const Tensor& g, GradSink& sink) {
                       if (sink.needs(0)) sink.add(0, g);
                       if (sink.needs(1)) sink.add(1, map(col_sums(g), [](double v) { return -v; }));
                     });
}

Var mul_row(const Var& x, const Var& row) {
  auto& tape = same_tape(x, row);
  require_row_operand(x.value(), row.value(), "mul_row");
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  Tensor out = zip_row(xv, rv, [](double a, double r) { return a * r; });
  return tape.record(OpKind::MulRow, {x.id(), row.id()}, std::move(out),
                     [xv, rv](const Tensor& g, GradSink& sink) {
                       if (sink.needs(0)) sink.add(0, zip_row(g, rv, [](double a, double r) { return a * r; }));
                       if (sink.needs(1)) sink.add(1, col_sums(zip(g, xv, [](double a, double b) { return a * b; })));
                     });
}

Var scale(const Var& x, const Var& s) {
  auto& tape = same_tape(x, s);
  require_scalar(s.value(), "scale");
  const Tensor& xv = x.value();
  const double sv = s.value()[0];
  Tensor out = map(xv, [sv](double v) { return v * sv; });
  return tape.record(OpKind::Scale, {x.id(), s.id()}, std::move(out),
                     [xv, sv](const Tensor& g, GradSink& sink) {
                       if (sink.needs(0)) sink.add(0, map(g, [sv](double v) { return v * sv; }));
                       if (sink.needs(1)) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                         sink.add(1, Tensor::scalar(acc));
                       }
                     });
}

Var scale_const(const Var& x, double k) {
  Tensor out = map(x.value(), [k](double v) { return v * k; });
  return x.tape().record(OpKind::ScaleConst, {x.id()}, std::move(out),
                         [k](const Tensor& g, GradSink& sink) {
                           sink.add(0, map(g, [k](double v) { return v * k; }));
                         });
}

Var mix(const Var& a, const Var& b, const Var& w) {
  auto& tape = same_tape(a, b);
  same_tape(a, w);
  require_same_shape(a.value(), b.value(), "mix");
  require_scalar(w.value(), "mix weight");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const double wv = w.value()[0];
  Tensor out = zip(av, bv, [wv](double x, double y) { return (1.0 - wv) * x + wv * y; });
  return tape.record(OpKind::Mix, {a.id(), b.id(), w.id()}, std::move(out),
                     [av, bv, wv](const Tensor& g, GradSink& sink) {
                       if (sink.needs(0)) sink.add(0, map(g, [wv](double v) { return (1.0 - wv) * v; }));
                       if (sink.needs(1)) sink.add(1, map(g, [wv](double v) { return wv * v; }));
                       if (sink.needs(2)) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (bv[i] - av[i]);
                         sink.add(2, Tensor::scalar(acc));
                       }
                     });
}

Var leaky(const Var& x, double negative_slope) {
  const Tensor& xv = x.value();
  Tensor out = map(xv, [negative_slope](double v) { return v > 0.0 ? v : negative_slope * v; });
  return x.tape().record(OpKind::Leaky, {x.id()}, std::move(out),
                         [xv, negative_slope](const Tensor& g, GradSink& sink) {
                           sink.add(0, zip(g, xv, [negative_slope](double gv, double v) {
                                      return v > 0.0 ? gv : negative_slope * gv;
                                    }));
                         });
}

Var relu(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out = map(xv, [](double v) { return v > 0.0 ? v : 0.0; });
  return x.tape().record(OpKind::Relu, {x.id()}, std::move(out),
                         [xv](const Tensor& g, GradSink& sink) {
                           sink.add(0, zip(g, xv, [](double gv, double v) { return v > 0.0 ? gv : 0.0; }));
                         });
}

Var rsqrt_eps(const Var& x, double eps) {
  const Tensor& xv = x.value();
  Tensor out = map(xv, [eps](double v) { return 1.0 / std::sqrt(v + eps); });
  return x.tape().record(OpKind::RsqrtEps, {x.id()}, std::move(out),
                         [xv, eps](const Tensor& g, GradSink& sink) {
                           sink.add(0, zip(g, xv, [eps](double gv, double v) {
                                      return -0.5 * gv / ((v + eps) * std::sqrt(v + eps));
                                    }));
                         });
}

Var mean_rows(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("mean_rows expects a matrix, got " + shape_str(xv.shape()));
  const std::size_t n = xv.rows();
  Tensor out = lbn::batch_stats(xv).mean;
  return x.tape().record(OpKind::MeanRows, {x.id()}, std::move(out),
                         [shape = xv.shape(), n](const Tensor& g, GradSink& sink) {
                           const auto c = shape[1];
                           std::vector<double> gi(n * c);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < c; ++j) gi[i * c + j] = g[j] / static_cast<double>(n);
                           sink.add(0, Tensor(shape, std::move(gi)));
                         });
}

Var var_rows(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("var_rows expects a matrix, got " + shape_str(xv.shape()));
  auto stats = lbn::batch_stats(xv);
  Tensor mean = stats.mean;
  return x.tape().record(OpKind::VarRows, {x.id()}, std::move(stats.var),
                         [xv, mean](const Tensor& g, GradSink& sink) {
                           const auto n = xv.rows(), c = xv.cols();
                           std::vector<double> gi(n * c);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               gi[i * c + j] = 2.0 * (xv.at(i, j) - mean[j]) / static_cast<double>(n) * g[j];
                           sink.add(0, Tensor(xv.shape(), std::move(gi)));
                         });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(OpKind::Reshape, {x.id()}, std::move(out),
                         [orig = x.value().shape()](const Tensor& g, GradSink& sink) {
                           sink.add(0, g.reshaped(orig));
                         });
}

Var softmax_rows(const Var& x) {
  Tensor p = lbn::softmax(x.value());
  Tensor saved = p;
  return x.tape().record(OpKind::SoftmaxRows, {x.id()}, std::move(p),
                         [saved](const Tensor& g, GradSink& sink) {
                           const auto q = saved.rows(), c = saved.cols();
                           std::vector<double> gi(q * c);
                           for (std::size_t i = 0; i < q; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * saved.at(i, j);
                             for (std::size_t j = 0; j < c; ++j)
                               gi[i * c + j] = saved.at(i, j) * (g.at(i, j) - dot);
                           }
                           sink.add(0, Tensor(saved.shape(), std::move(gi)));
                         });
}

Var entropy_sum(const Var& p, double clamp) {
  const Tensor& pv = p.value();
  double total = 0.0;
  for (double v : pv.data()) total += -v * std::log(std::max(v, clamp));
  return p.tape().record(OpKind::EntropySum, {p.id()}, Tensor::scalar(total),
                         [pv, clamp](const Tensor& g, GradSink& sink) {
                           const double gs = g[0];
                           sink.add(0, map(pv, [gs, clamp](double v) {
                                      return v > clamp ? -gs * (std::log(v) + 1.0) : -gs * std::log(clamp);
                                    }));
                         });
}

Var range_sum(const Var& p) {
  const Tensor& pv = p.value();
  const auto q = pv.rows();
  std::vector<std::size_t> arg_max(q), arg_min(q);
  double total = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    const auto row = pv.row(i);
    arg_max[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    arg_min[i] = static_cast<std::size_t>(std::min_element(row.begin(), row.end()) - row.begin());
    total += row[arg_max[i]] - row[arg_min[i]];
  }
  return p.tape().record(OpKind::RangeSum, {p.id()}, Tensor::scalar(total),
                         [shape = pv.shape(), arg_max, arg_min](const Tensor& g, GradSink& sink) {
                           Tensor gi = Tensor::zeros(shape);
                           for (std::size_t i = 0; i < arg_max.size(); ++i) {
                             gi.at(i, arg_max[i]) += g[0];
                             gi.at(i, arg_min[i]) -= g[0];
                           }
                           sink.add(0, gi);
                         });
}

Var nll_sum(const Var& p, std::vector<std::size_t> labels, double clamp) {
  const Tensor& pv = p.value();
  if (pv.rank() != 2 || labels.size() != pv.rows()) {
    throw ShapeError("nll_sum: " + std::to_string(labels.size()) + " labels for probabilities " +
                     shape_str(pv.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= pv.cols()) throw ContractError("nll_sum: label out of range");
    total += -std::log(std::max(pv.at(i, labels[i]), clamp));
  }
  return p.tape().record(OpKind::NllSum, {p.id()}, Tensor::scalar(total),
                         [pv, labels = std::move(labels), clamp](const Tensor& g, GradSink& sink) {
                           Tensor gi = Tensor::zeros(pv.shape());
                           for (std::size_t i = 0; i < labels.size(); ++i) {
                             const double v = pv.at(i, labels[i]);
                             if (v > clamp) gi.at(i, labels[i]) = -g[0] / v;
                           }
                           sink.add(0, gi);
                         });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(OpKind::Sum, {x.id()}, Tensor::scalar(total),
                         [shape = x.value().shape()](const Tensor& g, GradSink& sink) {
                           sink.add(0, Tensor::full(shape, g[0]));
                         });
}

Var query_select(const Var& x, std::size_t queries, std::size_t classes) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != queries * classes || xv.rows() % queries != 0) {
    throw ShapeError("query_select: " + shape_str(xv.shape()) + " is not [batch*Q x Q*C]");
  }
  const auto rows = xv.rows();
  std::vector<double> out(rows * classes);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto offset = (r % queries) * classes;
    for (std::size_t j = 0; j < classes; ++j) out[r * classes + j] = xv.at(r, offset + j);
  }
  return x.tape().record(OpKind::QuerySelect, {x.id()}, Tensor({rows, classes}, std::move(out)),
                         [shape = xv.shape(), queries, classes](const Tensor& g, GradSink& sink) {
                           Tensor gi = Tensor::zeros(shape);
                           for (std::size_t r = 0; r < shape[0]; ++r) {
                             const auto offset = (r % queries) * classes;
                             for (std::size_t j = 0; j < classes; ++j) gi.at(r, offset + j) = g.at(r, j);
                           }
                           sink.add(0, gi);
                         });
}

Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff step must be positive");
  Tensor grad = Tensor::zeros(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace lbn::ad
