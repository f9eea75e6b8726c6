#pragma once

// Structured design construction: B-spline bases with difference penalties,
// linear and dummy-coded factor terms, and the block-diagonal penalty matrix
// that goes with them.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "ssn/errors.hpp"
#include "ssn/linalg.hpp"
#include "ssn/table.hpp"

namespace ssn {

/// Clamped knot vector: `degree + 1` copies of each boundary and
/// `num_basis - degree - 1` equidistant interior knots.
inline std::vector<double> clamped_knots(int num_basis, int degree, double lo, double hi) {
  if (degree < 0) throw SpecError("spline degree must be non-negative");
  if (num_basis < degree + 1)
    throw SpecError("num_basis (" + std::to_string(num_basis) + ") must be at least degree + 1 (" +
                    std::to_string(degree + 1) + ")");
  if (!(lo < hi)) throw SpecError("spline knot range requires lo < hi");
  const int intervals = num_basis - degree;
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(num_basis + degree + 1));
  for (int i = 0; i < degree; ++i) knots.push_back(lo);
  for (int i = 0; i <= intervals; ++i)
    knots.push_back(i == intervals ? hi : lo + (hi - lo) * static_cast<double>(i) / intervals);
  for (int i = 0; i < degree; ++i) knots.push_back(hi);
  return knots;
}

/// Evaluates the `degree + 1` non-zero basis functions at x (already inside
/// [knots.front(), knots.back()]) and returns the index of the first one.
inline int bspline_nonzero(const std::vector<double>& knots, int num_basis, int degree, double x,
                           double* values) {
  // span: degree <= span <= num_basis - 1 with knots[span] <= x < knots[span + 1]
  int span;
  if (x >= knots[static_cast<std::size_t>(num_basis)]) {
    span = num_basis - 1;
  } else {
    const auto first = knots.begin() + degree;
    const auto last = knots.begin() + num_basis + 1;
    span = static_cast<int>(std::upper_bound(first, last, x) - knots.begin()) - 1;
    span = std::clamp(span, degree, num_basis - 1);
  }
  std::vector<double> left(static_cast<std::size_t>(degree + 1)), right(static_cast<std::size_t>(degree + 1));
  values[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - knots[static_cast<std::size_t>(span + 1 - j)];
    right[j] = knots[static_cast<std::size_t>(span + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = values[r] / (right[r + 1] + left[j - r]);
      values[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    values[j] = saved;
  }
  return span - degree;
}

/// B-spline design matrix for x on equidistant clamped knots over [lo, hi].
/// Points outside the range are clamped to the boundary; `clamped` (when
/// given) receives how many were.
inline DenseMatrix bspline_basis(const DenseVector& x, int num_basis, int degree, double lo, double hi,
                                 Index* clamped = nullptr) {
  const auto knots = clamped_knots(num_basis, degree, lo, hi);
  DenseMatrix B = DenseMatrix::Zero(x.size(), num_basis);
  std::vector<double> vals(static_cast<std::size_t>(degree + 1));
  Index n_clamped = 0;
  for (Index i = 0; i < x.size(); ++i) {
    double xi = x(i);
    if (std::isnan(xi)) throw DataError("bspline_basis: NaN evaluation point");
    if (xi < lo || xi > hi) {
      ++n_clamped;
      xi = std::clamp(xi, lo, hi);
    }
    const int first = bspline_nonzero(knots, num_basis, degree, xi, vals.data());
    for (int r = 0; r <= degree; ++r) B(i, first + r) = vals[static_cast<std::size_t>(r)];
  }
  if (clamped) *clamped = n_clamped;
  return B;
}

/// K = D'D for the order-th finite difference operator D on num_basis
/// coefficients.
inline DenseMatrix difference_penalty(int num_basis, int order) {
  if (order < 0 || order >= num_basis)
    throw SpecError("penalty order must satisfy 0 <= order < num_basis");
  DenseMatrix D = DenseMatrix::Identity(num_basis, num_basis);
  for (int k = 0; k < order; ++k) {
    DenseMatrix next = D.bottomRows(D.rows() - 1) - D.topRows(D.rows() - 1);
    D = std::move(next);
  }
  return D.transpose() * D;
}

// ---------------------------------------------------------------------------
// Term specifications

struct InterceptTerm {};
struct LinearTerm {};
struct BSplineTerm {
  int num_basis = 9;
  int degree = 3;
  int penalty_order = 2;
};
struct FactorTerm {
  std::vector<std::string> levels;  // empty: sorted distinct values of the training column
};

using TermKind = std::variant<InterceptTerm, LinearTerm, BSplineTerm, FactorTerm>;

struct TermSpec {
  std::string name;
  TermKind kind;
  std::string column;

  static TermSpec intercept(std::string name = "(Intercept)") { return {std::move(name), InterceptTerm{}, ""}; }
  static TermSpec linear(std::string column, std::string name = "") {
    if (name.empty()) name = column;
    return {std::move(name), LinearTerm{}, std::move(column)};
  }
  static TermSpec bspline(std::string column, int num_basis = 9, int degree = 3, int penalty_order = 2,
                          std::string name = "") {
    if (name.empty()) name = "s(" + column + ")";
    return {std::move(name), BSplineTerm{num_basis, degree, penalty_order}, std::move(column)};
  }
  static TermSpec factor(std::string column, std::vector<std::string> levels = {}, std::string name = "") {
    if (name.empty()) name = column;
    return {std::move(name), FactorTerm{std::move(levels)}, std::move(column)};
  }

  bool is_intercept() const { return std::holds_alternative<InterceptTerm>(kind); }
  bool is_spline() const { return std::holds_alternative<BSplineTerm>(kind); }

  void validate() const {
    if (name.empty()) throw SpecError("term without a name");
    if (const auto* s = std::get_if<BSplineTerm>(&kind)) {
      if (s->degree < 0) throw SpecError("term '" + name + "': negative degree");
      if (s->num_basis < 4) throw SpecError("term '" + name + "': num_basis must be >= 4");
      if (s->num_basis < s->degree + 1) throw SpecError("term '" + name + "': num_basis < degree + 1");
      if (s->penalty_order < 0 || s->penalty_order >= s->num_basis)
        throw SpecError("term '" + name + "': penalty_order must be < num_basis");
    }
    if (!is_intercept() && column.empty()) throw SpecError("term '" + name + "' has no source column");
  }
};

/// A term with everything fixed at training time that is needed to
/// re-evaluate it on new data.
struct TermLayout {
  TermSpec spec;
  Index first = 0;  // first column in X
  Index count = 0;  // number of columns
  double lo = 0.0, hi = 0.0;                // spline knot range
  std::vector<std::string> levels;          // factor levels, in encoding order
  bool drop_first_level = false;

  std::vector<double> knots() const {
    const auto& s = std::get<BSplineTerm>(spec.kind);
    return clamped_knots(s.num_basis, s.degree, lo, hi);
  }
};

struct DesignLayout {
  std::vector<TermLayout> terms;
  bool has_intercept = false;
  Index cols = 0;

  const TermLayout& term(const std::string& name) const {
    for (const auto& t : terms)
      if (t.spec.name == name) return t;
    throw SchemaError("unknown term '" + name + "'");
  }
  bool has_term(const std::string& name) const {
    return std::any_of(terms.begin(), terms.end(), [&](const auto& t) { return t.spec.name == name; });
  }
  std::vector<std::string> source_columns() const {
    std::vector<std::string> out;
    for (const auto& t : terms)
      if (!t.spec.column.empty() && std::find(out.begin(), out.end(), t.spec.column) == out.end())
        out.push_back(t.spec.column);
    return out;
  }
};

struct StructuredDesign {
  DesignLayout layout;
  DenseMatrix X;
  DenseMatrix K;
  Index clamped = 0;  // evaluation points clamped into a spline's knot range

  Index rows() const { return X.rows(); }
  Index cols() const { return X.cols(); }
  bool has_intercept() const { return layout.has_intercept; }

  /// K plus a rank-one penalty on the mean of every spline block when an
  /// intercept is present. Splines are partitions of unity, so without it
  /// X'X + lambda K is singular along "shift a spline, compensate in the
  /// intercept"; the extra term removes exactly that direction and leaves
  /// every fitted value unchanged.
  DenseMatrix identified_penalty() const {
    DenseMatrix out = K;
    if (!layout.has_intercept || X.rows() == 0) return out;
    for (const auto& t : layout.terms) {
      if (!t.spec.is_spline()) continue;
      DenseVector c = X.middleCols(t.first, t.count).colwise().mean().transpose();
      const double norm = c.norm();
      if (norm == 0.0) continue;
      c /= norm;
      out.block(t.first, t.first, t.count, t.count) += c * c.transpose();
    }
    return out;
  }
};

namespace detail {

inline void require_finite_column(const std::vector<double>& v, const std::string& col) {
  for (double x : v)
    if (!std::isfinite(x)) throw DataError("column '" + col + "' contains non-finite values");
}

inline void fill_term(const TermLayout& t, const DataTable& data, DenseMatrix& X, Index& clamped) {
  const Index n = X.rows();
  std::visit(
      [&](const auto& kind) {
        using K = std::decay_t<decltype(kind)>;
        if constexpr (std::is_same_v<K, InterceptTerm>) {
          X.col(t.first).setOnes();
        } else if constexpr (std::is_same_v<K, LinearTerm>) {
          const auto& v = data.numeric(t.spec.column);
          require_finite_column(v, t.spec.column);
          for (Index i = 0; i < n; ++i) X(i, t.first) = v[static_cast<std::size_t>(i)];
        } else if constexpr (std::is_same_v<K, BSplineTerm>) {
          const auto& v = data.numeric(t.spec.column);
          require_finite_column(v, t.spec.column);
          const DenseVector x = Eigen::Map<const DenseVector>(v.data(), n);
          Index c = 0;
          X.middleCols(t.first, t.count) = bspline_basis(x, kind.num_basis, kind.degree, t.lo, t.hi, &c);
          clamped += c;
        } else {
          const auto labels = data.categorical(t.spec.column);
          const std::size_t skip = t.drop_first_level ? 1 : 0;
          for (Index i = 0; i < n; ++i) {
            const auto& label = labels[static_cast<std::size_t>(i)];
            const auto it = std::find(t.levels.begin(), t.levels.end(), label);
            if (it == t.levels.end())
              throw DataError("column '" + t.spec.column + "': unknown level '" + label + "'");
            const auto level = static_cast<std::size_t>(it - t.levels.begin());
            if (level >= skip) X(i, t.first + static_cast<Index>(level - skip)) = 1.0;
          }
        }
      },
      t.spec.kind);
}

}  // namespace detail

/// Builds X on new data with a layout fixed at training time. Spline knots
/// are reused; points outside the training range are clamped and counted.
inline StructuredDesign evaluate_design(const DesignLayout& layout, const DataTable& data) {
  StructuredDesign d;
  d.layout = layout;
  d.X = DenseMatrix::Zero(static_cast<Index>(data.rows()), layout.cols);
  d.K = DenseMatrix::Zero(layout.cols, layout.cols);
  for (const auto& t : layout.terms) {
    detail::fill_term(t, data, d.X, d.clamped);
    if (const auto* s = std::get_if<BSplineTerm>(&t.spec.kind))
      d.K.block(t.first, t.first, t.count, t.count) = difference_penalty(s->num_basis, s->penalty_order);
  }
  return d;
}

/// Fixes knot ranges and factor levels from `data` and lays out the terms
/// left to right.
inline DesignLayout resolve_layout(const DataTable& data, const std::vector<TermSpec>& terms) {
  if (terms.empty()) throw SpecError("a structured design needs at least one term");
  DesignLayout layout;
  std::set<std::string> names;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& spec = terms[k];
    spec.validate();
    if (!names.insert(spec.name).second) throw SpecError("duplicate term name '" + spec.name + "'");
    if (spec.is_intercept()) {
      if (k != 0) throw SpecError("the intercept must be the first term");
      layout.has_intercept = true;
    }
  }
  for (const auto& spec : terms) {
    TermLayout t;
    t.spec = spec;
    t.first = layout.cols;
    std::visit(
        [&](const auto& kind) {
          using K = std::decay_t<decltype(kind)>;
          if constexpr (std::is_same_v<K, InterceptTerm>) {
            t.count = 1;
          } else if constexpr (std::is_same_v<K, LinearTerm>) {
            data.numeric(spec.column);
            t.count = 1;
          } else if constexpr (std::is_same_v<K, BSplineTerm>) {
            const auto& v = data.numeric(spec.column);
            detail::require_finite_column(v, spec.column);
            if (v.empty()) throw DataError("column '" + spec.column + "' is empty");
            const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
            if (!(*mn < *mx)) throw DataError("column '" + spec.column + "' is constant; cannot place knots");
            t.lo = *mn;
            t.hi = *mx;
            t.count = kind.num_basis;
          } else {
            const auto labels = data.categorical(spec.column);
            if (kind.levels.empty()) {
              std::set<std::string> distinct(labels.begin(), labels.end());
              t.levels.assign(distinct.begin(), distinct.end());
            } else {
              t.levels = kind.levels;
            }
            if (t.levels.empty()) throw DataError("factor '" + spec.name + "' has no levels");
            t.drop_first_level = layout.has_intercept;
            t.count = static_cast<Index>(t.levels.size()) - (t.drop_first_level ? 1 : 0);
          }
        },
        spec.kind);
    layout.cols += t.count;
    layout.terms.push_back(std::move(t));
  }
  return layout;
}

inline StructuredDesign build_design(const DataTable& data, const std::vector<TermSpec>& terms) {
  return evaluate_design(resolve_layout(data, terms), data);
}

}  // namespace ssn
