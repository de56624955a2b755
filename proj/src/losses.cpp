#include "lbn/losses.hpp"

#include <algorithm>
#include <cmath>

#include "lbn/errors.hpp"

namespace lbn {

void check_probability_rows(const Tensor& p) {
  if (p.rank() != 2) throw ShapeError("probabilities must be Q x C, got " + shape_str(p.shape()));
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) {
      if (!std::isfinite(v) || v < 0.0) throw NumericError("probability row has invalid entries");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw NumericError("probability row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
}

LossValue em_loss(const ad::Var& p) {
  check_probability_rows(p.value());
  auto node = ad::entropy_sum(p, kProbClamp);
  return {node.value()[0], node};
}

LossValue gs_loss(const ad::Var& p) {
  check_probability_rows(p.value());
  auto node = ad::range_sum(p);
  return {node.value()[0], node};
}

LossValue gsem_loss(const ad::Var& p) {
  auto em = em_loss(p);
  auto gs = gs_loss(p);
  auto node = ad::add(em.node, gs.node);
  return {node.value()[0], node};
}

double em_loss(const Tensor& p) {
  ad::Tape tape;
  return em_loss(tape.constant(p)).value;
}

double gs_loss(const Tensor& p) {
  ad::Tape tape;
  return gs_loss(tape.constant(p)).value;
}

double gsem_loss(const Tensor& p) {
  ad::Tape tape;
  return gsem_loss(tape.constant(p)).value;
}

double kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape() || p.rank() != 2) {
    throw ShapeError("kl_divergence: shapes " + shape_str(p.shape()) + " and " +
                     shape_str(q.shape()) + " differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double a = std::max(p.at(i, j), kProbClamp);
      const double b = std::max(q.at(i, j), kProbClamp);
      row += a * std::log(a / b);
    }
    total += row;
  }
  return total / static_cast<double>(p.rows());
}

}  // namespace lbn
