#include "drcc/conic.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <algorithm>
#include <limits>

namespace drcc {

std::string_view to_string(ConicStatus status) {
  switch (status) {
    case ConicStatus::Optimal: return "optimal";
    case ConicStatus::Infeasible: return "infeasible";
    case ConicStatus::Unbounded: return "unbounded";
    case ConicStatus::NumericalFailure: return "numerical-failure";
  }
  return "unknown";
}

ConicProblem::ConicProblem(Eigen::Index num_vars) : num_vars_(num_vars), c_(Vector::Zero(num_vars)) {}

Eigen::Index ConicProblem::add_variables(Eigen::Index count) {
  const Eigen::Index first = num_vars_;
  num_vars_ += count;
  c_.conservativeResize(num_vars_);
  c_.tail(count).setZero();
  return first;
}

void ConicProblem::set_objective(const Vector& c) {
  if (c.size() != num_vars_) throw Error(ErrorCode::DimensionMismatch, "objective length");
  c_ = c;
}

namespace {

void append_dense_row(std::vector<Triplet>& out, Eigen::Index row, const Vector& coef, Eigen::Index n) {
  if (coef.size() > n) throw Error(ErrorCode::DimensionMismatch, "constraint wider than problem");
  for (Eigen::Index j = 0; j < coef.size(); ++j) {
    if (coef(j) != 0.0) out.emplace_back(row, j, coef(j));
  }
}

}  // namespace

void ConicProblem::add_equality(const Vector& coef, double rhs) {
  append_dense_row(eq_, num_equalities(), coef, num_vars_);
  eq_rhs_.push_back(rhs);
}

void ConicProblem::add_inequality(const Vector& coef, double rhs) {
  append_dense_row(lin_, num_inequalities(), coef, num_vars_);
  lin_rhs_.push_back(rhs);
}

void ConicProblem::add_inequality(const std::vector<std::pair<Eigen::Index, double>>& coef, double rhs) {
  const Eigen::Index row = num_inequalities();
  for (const auto& [j, v] : coef) {
    if (j < 0 || j >= num_vars_) throw Error(ErrorCode::DimensionMismatch, "column out of range");
    if (v != 0.0) lin_.emplace_back(row, j, v);
  }
  lin_rhs_.push_back(rhs);
}

void ConicProblem::add_soc(const SocConstraint& soc) {
  if (soc.F.rows() != soc.f.size() || soc.F.cols() > num_vars_ || soc.d.size() > num_vars_) {
    throw Error(ErrorCode::DimensionMismatch, "malformed SOC constraint");
  }
  const Eigen::Index first = static_cast<Eigen::Index>(soc_rhs_.size());
  // s = h - G x with s_0 = d^T x + e and s_1 = F x + f.
  for (Eigen::Index j = 0; j < soc.d.size(); ++j) {
    if (soc.d(j) != 0.0) soc_.emplace_back(first, j, -soc.d(j));
  }
  soc_rhs_.push_back(soc.e);
  for (Eigen::Index i = 0; i < soc.F.rows(); ++i) {
    for (Eigen::Index j = 0; j < soc.F.cols(); ++j) {
      if (soc.F(i, j) != 0.0) soc_.emplace_back(first + 1 + i, j, -soc.F(i, j));
    }
    soc_rhs_.push_back(soc.f(i));
  }
  soc_dims_.push_back(soc.F.rows() + 1);
}

SparseMatrix ConicProblem::equality_matrix() const {
  SparseMatrix a(num_equalities(), num_vars_);
  a.setFromTriplets(eq_.begin(), eq_.end());
  return a;
}

Vector ConicProblem::equality_rhs() const {
  return Eigen::Map<const Vector>(eq_rhs_.data(), static_cast<Eigen::Index>(eq_rhs_.size()));
}

SparseMatrix ConicProblem::cone_matrix() const {
  const Eigen::Index ml = num_inequalities();
  std::vector<Triplet> all = lin_;
  all.reserve(lin_.size() + soc_.size());
  for (const auto& t : soc_) all.emplace_back(t.row() + ml, t.col(), t.value());
  SparseMatrix g(ml + static_cast<Eigen::Index>(soc_rhs_.size()), num_vars_);
  g.setFromTriplets(all.begin(), all.end());
  return g;
}

Vector ConicProblem::cone_rhs() const {
  Vector h(num_inequalities() + static_cast<Eigen::Index>(soc_rhs_.size()));
  for (std::size_t i = 0; i < lin_rhs_.size(); ++i) h(Eigen::Index(i)) = lin_rhs_[i];
  for (std::size_t i = 0; i < soc_rhs_.size(); ++i) h(num_inequalities() + Eigen::Index(i)) = soc_rhs_[i];
  return h;
}

namespace {

struct ConeLayout {
  Eigen::Index nonneg = 0;
  std::vector<Eigen::Index> dims;
  std::vector<Eigen::Index> offsets;
  Eigen::Index rows = 0;

  double degree() const { return static_cast<double>(nonneg + static_cast<Eigen::Index>(dims.size())); }

  Vector identity() const {
    Vector e = Vector::Zero(rows);
    e.head(nonneg).setOnes();
    for (auto off : offsets) e(off) = 1.0;
    return e;
  }
};

// u o v
Vector jordan(const ConeLayout& k, const Vector& u, const Vector& v) {
  Vector out(k.rows);
  out.head(k.nonneg) = u.head(k.nonneg).cwiseProduct(v.head(k.nonneg));
  for (std::size_t b = 0; b < k.dims.size(); ++b) {
    const Eigen::Index o = k.offsets[b], q = k.dims[b];
    out(o) = u.segment(o, q).dot(v.segment(o, q));
    out.segment(o + 1, q - 1) = u(o) * v.segment(o + 1, q - 1) + v(o) * u.segment(o + 1, q - 1);
  }
  return out;
}

// Solves lambda o u = w for u.
Vector jordan_solve(const ConeLayout& k, const Vector& lambda, const Vector& w) {
  Vector u(k.rows);
  u.head(k.nonneg) = w.head(k.nonneg).cwiseQuotient(lambda.head(k.nonneg));
  for (std::size_t b = 0; b < k.dims.size(); ++b) {
    const Eigen::Index o = k.offsets[b], q = k.dims[b];
    const double l0 = lambda(o);
    const auto l1 = lambda.segment(o + 1, q - 1);
    const auto w1 = w.segment(o + 1, q - 1);
    const double l1n = l1.norm();
    const double det = (l0 - l1n) * (l0 + l1n);
    const double u0 = (l0 * w(o) - l1.dot(w1)) / det;
    u(o) = u0;
    u.segment(o + 1, q - 1) = (w1 - u0 * l1) / l0;
  }
  return u;
}

// Largest t in [0, inf) with x + t d in the cone, assuming x interior.
double max_step(const ConeLayout& k, const Vector& x, const Vector& d) {
  double t = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k.nonneg; ++i) {
    if (d(i) < 0.0) t = std::min(t, -x(i) / d(i));
  }
  for (std::size_t b = 0; b < k.dims.size(); ++b) {
    const Eigen::Index o = k.offsets[b], q = k.dims[b];
    const auto x1 = x.segment(o + 1, q - 1);
    const auto d1 = d.segment(o + 1, q - 1);
    const double qa = d(o) * d(o) - d1.squaredNorm();
    const double qb = 2.0 * (x(o) * d(o) - x1.dot(d1));
    const double qc = x(o) * x(o) - x1.squaredNorm();
    // Smallest positive root of qa t^2 + qb t + qc (qc > 0).
    double root = std::numeric_limits<double>::infinity();
    if (qa == 0.0) {
      if (qb < 0.0) root = -qc / qb;
    } else {
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double qq = -0.5 * (qb + (qb >= 0.0 ? sq : -sq));
        const double r1 = qq / qa;
        const double r2 = qq != 0.0 ? qc / qq : std::numeric_limits<double>::infinity();
        if (r1 > 0.0) root = std::min(root, r1);
        if (r2 > 0.0) root = std::min(root, r2);
      }
    }
    // Guard the branch where x0 + t d0 hits zero first.
    if (d(o) < 0.0) root = std::min(root, -x(o) / d(o));
    t = std::min(t, root);
  }
  return t;
}

// Smallest shift a such that x + a e is on the cone boundary (negative if interior).
double interior_gap(const ConeLayout& k, const Vector& x) {
  double a = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k.nonneg; ++i) a = std::max(a, -x(i));
  for (std::size_t b = 0; b < k.dims.size(); ++b) {
    const Eigen::Index o = k.offsets[b], q = k.dims[b];
    a = std::max(a, x.segment(o + 1, q - 1).norm() - x(o));
  }
  return a;
}

// Nesterov-Todd scaling: W z = W^{-1} s = lambda.
struct Scaling {
  Vector lp;                       // diagonal w for the nonnegative orthant
  std::vector<double> eta;         // per SOC block
  std::vector<Vector> wbar;        // per SOC block, J-normalized

  void compute(const ConeLayout& k, const Vector& s, const Vector& z) {
    lp = (s.head(k.nonneg).cwiseQuotient(z.head(k.nonneg))).cwiseSqrt();
    eta.resize(k.dims.size());
    wbar.resize(k.dims.size());
    for (std::size_t b = 0; b < k.dims.size(); ++b) {
      const Eigen::Index o = k.offsets[b], q = k.dims[b];
      const auto sb = s.segment(o, q);
      const auto zb = z.segment(o, q);
      const double sn1 = sb.tail(q - 1).norm();
      const double zn1 = zb.tail(q - 1).norm();
      const double sjs = (sb(0) - sn1) * (sb(0) + sn1);
      const double zjz = (zb(0) - zn1) * (zb(0) + zn1);
      const Vector sn = sb / std::sqrt(sjs);
      const Vector zn = zb / std::sqrt(zjz);
      const double gamma = std::sqrt(0.5 * (1.0 + sn.dot(zn)));
      Vector w(q);
      w(0) = sn(0) + zn(0);
      w.tail(q - 1) = sn.tail(q - 1) - zn.tail(q - 1);
      w /= 2.0 * gamma;
      eta[b] = std::pow(sjs / zjz, 0.25);
      wbar[b] = std::move(w);
    }
  }

  // W v (inverse == false) or W^{-1} v (inverse == true), in place on a block.
  template <typename Seg>
  void apply_block(std::size_t b, Seg v, bool inverse) const {
    const Vector& w = wbar[b];
    const Eigen::Index q = w.size();
    const double a = w(0);
    const auto w1 = w.tail(q - 1);
    const double v0 = v(0);
    const double wv = w1.dot(v.tail(q - 1));
    const double sign = inverse ? -1.0 : 1.0;
    const double scale = inverse ? 1.0 / eta[b] : eta[b];
    v(0) = scale * (a * v0 + sign * wv);
    v.tail(q - 1) = scale * (v.tail(q - 1) + (sign * v0 + wv / (1.0 + a)) * w1);
  }

  Vector apply(const ConeLayout& k, const Vector& v, bool inverse) const {
    Vector out = v;
    if (inverse) out.head(k.nonneg) = v.head(k.nonneg).cwiseQuotient(lp);
    else out.head(k.nonneg) = v.head(k.nonneg).cwiseProduct(lp);
    for (std::size_t b = 0; b < k.dims.size(); ++b) {
      apply_block(b, out.segment(k.offsets[b], k.dims[b]), inverse);
    }
    return out;
  }

  // W^{-1} G with the block structure of G preserved.
  SparseMatrix scale_rows_inverse(const ConeLayout& k, const SparseMatrix& g) const {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(g.nonZeros()) * 2);
    for (Eigen::Index r = 0; r < k.nonneg; ++r) {
      for (SparseMatrix::InnerIterator it(g, r); it; ++it) trips.emplace_back(r, it.col(), it.value() / lp(r));
    }
    std::vector<Eigen::Index> cols;
    std::vector<Eigen::Index> slot(static_cast<std::size_t>(g.cols()), -1);
    for (std::size_t b = 0; b < k.dims.size(); ++b) {
      const Eigen::Index o = k.offsets[b], q = k.dims[b];
      cols.clear();
      for (Eigen::Index r = o; r < o + q; ++r) {
        for (SparseMatrix::InnerIterator it(g, r); it; ++it) {
          if (slot[std::size_t(it.col())] < 0) {
            slot[std::size_t(it.col())] = static_cast<Eigen::Index>(cols.size());
            cols.push_back(it.col());
          }
        }
      }
      Matrix block = Matrix::Zero(q, static_cast<Eigen::Index>(cols.size()));
      for (Eigen::Index r = o; r < o + q; ++r) {
        for (SparseMatrix::InnerIterator it(g, r); it; ++it) block(r - o, slot[std::size_t(it.col())]) = it.value();
      }
      for (Eigen::Index c = 0; c < block.cols(); ++c) apply_block(b, block.col(c), true);
      for (Eigen::Index c = 0; c < block.cols(); ++c) {
        for (Eigen::Index r = 0; r < q; ++r) {
          if (block(r, c) != 0.0) trips.emplace_back(o + r, cols[std::size_t(c)], block(r, c));
        }
        slot[std::size_t(cols[std::size_t(c)])] = -1;
      }
    }
    SparseMatrix out(g.rows(), g.cols());
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
  }
};

// Solves [0 A' G'; A 0 0; G 0 -W'W] [x; y; z] = [r1; r2; r3] through the
// equivalent system in (x, y, W z) with blocks W^{-1} G and -I. Both the
// normal equations and the unscaled W'W block lose accuracy once slacks
// approach zero.
class KktSystem {
 public:
  KktSystem(const SparseMatrix& a, const SparseMatrix& g, const ConeLayout& k, int refinement)
      : a_(a), g_(g), k_(k), refinement_(refinement) {}

  bool factor(const Scaling& w) {
    // A zero pivot gets a larger shift; refinement absorbs it.
    for (double reg = kStaticReg; reg <= 1e-6; reg *= 100.0)
      if (factor(w, reg)) return true;
    return false;
  }

  bool factor(const Scaling& w, double reg) {
    w_ = &w;
    const Eigen::Index n = g_.cols(), p = a_.rows(), m = g_.rows();
    const SparseMatrix gs = w.scale_rows_inverse(k_, g_);
    // [dI A' Gs'; A -dI 0; Gs 0 -I]. The shift d keeps free directions
    // from making the matrix singular; refinement removes its effect.
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(2 * (a_.nonZeros() + gs.nonZeros()) + n + p + m));
    for (Eigen::Index j = 0; j < n; ++j) trips.emplace_back(j, j, reg);
    for (Eigen::Index i = 0; i < p; ++i) {
      trips.emplace_back(n + i, n + i, -reg);
      for (SparseMatrix::InnerIterator it(a_, i); it; ++it) {
        trips.emplace_back(n + i, it.col(), it.value());
        trips.emplace_back(it.col(), n + i, it.value());
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      trips.emplace_back(n + p + i, n + p + i, -1.0);
      for (SparseMatrix::InnerIterator it(gs, i); it; ++it) {
        trips.emplace_back(n + p + i, it.col(), it.value());
        trips.emplace_back(it.col(), n + p + i, it.value());
      }
    }
    Eigen::SparseMatrix<double> kkt(n + p + m, n + p + m);
    kkt.setFromTriplets(trips.begin(), trips.end());
    kkt.makeCompressed();
    if (!analyzed_) {
      lu_.analyzePattern(kkt);
      analyzed_ = true;
    }
    lu_.factorize(kkt);
    return lu_.info() == Eigen::Success;
  }

  void solve(const Vector& r1, const Vector& r2, const Vector& r3, Vector& x, Vector& y, Vector& z) const {
    base_solve(r1, r2, r3, x, y, z);
    double last = residual_norm(r1, r2, r3, x, y, z);
    for (int it = 0; it < refinement_ && last > 0.0; ++it) {
      const Vector e1 = r1 - (a_.transpose() * y + g_.transpose() * z);
      const Vector e2 = r2 - a_ * x;
      const Vector e3 = r3 - (g_ * x - w_->apply(k_, w_->apply(k_, z, false), false));
      Vector dx, dy, dz;
      base_solve(e1, e2, e3, dx, dy, dz);
      const Vector xn = x + dx, yn = y + dy, zn = z + dz;
      const double now = residual_norm(r1, r2, r3, xn, yn, zn);
      if (!(now < last)) break;
      x = xn;
      y = yn;
      z = zn;
      last = now;
    }
  }

 private:
  double residual_norm(const Vector& r1, const Vector& r2, const Vector& r3, const Vector& x, const Vector& y,
                       const Vector& z) const {
    const double e1 = (r1 - (a_.transpose() * y + g_.transpose() * z)).squaredNorm();
    const double e2 = (r2 - a_ * x).squaredNorm();
    const double e3 = (r3 - (g_ * x - w_->apply(k_, w_->apply(k_, z, false), false))).squaredNorm();
    return std::sqrt(e1 + e2 + e3);
  }

  void base_solve(const Vector& r1, const Vector& r2, const Vector& r3, Vector& x, Vector& y, Vector& z) const {
    const Eigen::Index n = g_.cols(), p = a_.rows(), m = g_.rows();
    // Unknowns are (x, y, W z); the last block row is scaled by W^{-1}.
    Vector rhs(n + p + m);
    rhs << r1, r2, w_->apply(k_, r3, true);
    const Vector sol = lu_.solve(rhs);
    x = sol.head(n);
    y = sol.segment(n, p);
    z = w_->apply(k_, sol.tail(m), true);
  }

  const SparseMatrix& a_;
  const SparseMatrix& g_;
  const ConeLayout& k_;
  int refinement_;
  const Scaling* w_ = nullptr;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
  bool analyzed_ = false;
  static constexpr double kStaticReg = 1e-12;
};

}  // namespace

ConicSolution InteriorPointSolver::solve(const ConicProblem& problem) {
  const Eigen::Index n = problem.num_vars();
  const SparseMatrix a = problem.equality_matrix();
  const SparseMatrix g = problem.cone_matrix();
  const Vector b = problem.equality_rhs();
  const Vector h = problem.cone_rhs();
  const Vector& c = problem.objective();

  ConeLayout k;
  k.nonneg = problem.num_inequalities();
  k.dims = problem.soc_dims();
  Eigen::Index off = k.nonneg;
  for (auto q : k.dims) {
    k.offsets.push_back(off);
    off += q;
  }
  k.rows = off;
  const Vector e = k.identity();

  ConicSolution out;
  out.x = Vector::Zero(n);
  out.y = Vector::Zero(a.rows());
  out.z = Vector::Zero(k.rows);

  const double b_norm = std::max(1.0, b.norm());
  const double h_norm = std::max(1.0, h.norm());
  const double c_norm = std::max(1.0, c.norm());

  // Starting point from two least-squares solves with W = I.
  Scaling w;
  w.compute(k, e, e);
  KktSystem kkt(a, g, k, options_.refinement_steps);
  if (!kkt.factor(w)) return out;

  Vector x, y, z, s;
  {
    Vector xp, yp, zp;
    kkt.solve(Vector::Zero(n), b, h, xp, yp, zp);
    s = -zp;
    Vector xd, yd, zd;
    kkt.solve(-c, Vector::Zero(a.rows()), Vector::Zero(k.rows), xd, yd, zd);
    x = xp;
    y = yd;
    z = zd;
    const double sg = interior_gap(k, s);
    if (sg >= 0.0) s += (1.0 + sg) * e;
    const double zg = interior_gap(k, z);
    if (zg >= 0.0) z += (1.0 + zg) * e;
  }
  double tau = 1.0;
  double kappa = 1.0;
  double best_merit = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter <= options_.max_iterations; ++iter) {
    const double mu = (s.dot(z) + tau * kappa) / (k.degree() + 1.0);


    const Vector rx = a.transpose() * y + g.transpose() * z + c * tau;
    const Vector ry = a * x - b * tau;
    const Vector rz = g * x + s - h * tau;
    const double cx = c.dot(x);
    const double by_hz = b.dot(y) + h.dot(z);
    const double rt = cx + by_hz + kappa;

    const double pres = std::max(ry.norm() / tau / b_norm, rz.norm() / tau / h_norm);
    const double dres = rx.norm() / tau / c_norm;
    const double pcost = cx / tau;
    const double dcost = -by_hz / tau;
    const double gap = s.dot(z) / (tau * tau);
    double relgap = std::numeric_limits<double>::infinity();
    if (pcost < 0.0) relgap = gap / -pcost;
    else if (dcost > 0.0) relgap = gap / dcost;

    if (!std::isfinite(pres) || !std::isfinite(dres) || !std::isfinite(gap) || !(tau > 0.0)) break;

    const double merit = std::max({pres, dres, std::min(gap, relgap)});
    if (merit < best_merit) {
      best_merit = merit;
      out.iterations = iter;
      out.primal_residual = pres;
      out.dual_residual = dres;
      out.gap = gap;
      out.x = x / tau;
      out.y = y / tau;
      out.z = z / tau;
      out.objective = pcost;
    }

    if (pres <= options_.feasibility_tol && dres <= options_.feasibility_tol &&
        (gap <= options_.absolute_gap_tol || relgap <= options_.relative_gap_tol)) {
      out.status = ConicStatus::Optimal;
      return out;
    }
    if (by_hz < 0.0) {
      const double pinf = (a.transpose() * y + g.transpose() * z).norm() / c_norm / -by_hz;
      if (pinf <= options_.feasibility_tol) {
        out.status = ConicStatus::Infeasible;
        return out;
      }
    }
    if (cx < 0.0) {
      const double dinf = std::max((a * x).norm() / b_norm, (g * x + s).norm() / h_norm) / -cx;
      if (dinf <= options_.feasibility_tol) {
        out.status = ConicStatus::Unbounded;
        return out;
      }
    }
    if (iter == options_.max_iterations) break;

    w.compute(k, s, z);
    const Vector lambda = w.apply(k, z, false);
    if (!kkt.factor(w)) break;

    Vector x2, y2, z2;
    kkt.solve(-c, b, h, x2, y2, z2);
    const double denom2 = c.dot(x2) + b.dot(y2) + h.dot(z2) - kappa / tau;

    struct Step {
      Vector dx, dy, dz, ds_scaled, dz_scaled, ds;
      double dtau = 0.0, dkappa = 0.0;
    };
    auto direction = [&](double eta_res, const Vector& ds_rhs, double dkappa_rhs) {
      Step st;
      const Vector u = jordan_solve(k, lambda, ds_rhs);
      const Vector wu = w.apply(k, u, false);
      Vector x1, y1, z1;
      kkt.solve(-(1.0 - eta_res) * rx, -(1.0 - eta_res) * ry, -(1.0 - eta_res) * rz - wu, x1, y1, z1);
      const double dtau_rhs = -(1.0 - eta_res) * rt;
      st.dtau = (dtau_rhs - dkappa_rhs / tau - (c.dot(x1) + b.dot(y1) + h.dot(z1))) / denom2;
      st.dx = x1 + st.dtau * x2;
      st.dy = y1 + st.dtau * y2;
      st.dz = z1 + st.dtau * z2;
      st.dz_scaled = w.apply(k, st.dz, false);
      // From the linearized primal rows rather than W (u - W dz): the latter
      // cancels large terms on inactive rows and lets rz drift upward.
      st.ds = -(1.0 - eta_res) * rz - g * st.dx + h * st.dtau;
      st.ds_scaled = w.apply(k, st.ds, true);
      st.dkappa = (dkappa_rhs - kappa * st.dtau) / tau;
      return st;
    };
    auto step_length = [&](const Step& st) {
      // The scaled and unscaled tests agree in exact arithmetic; taking both
      // keeps rounding from pushing s or z onto the boundary.
      double t = std::min(max_step(k, lambda, st.ds_scaled), max_step(k, lambda, st.dz_scaled));
      t = std::min({t, max_step(k, s, st.ds), max_step(k, z, st.dz)});
      if (st.dtau < 0.0) t = std::min(t, -tau / st.dtau);
      if (st.dkappa < 0.0) t = std::min(t, -kappa / st.dkappa);
      return t;
    };

    // Predictor.
    const Vector ll = jordan(k, lambda, lambda);
    const Step aff = direction(0.0, -ll, -tau * kappa);
    const double t_aff = std::min(1.0, step_length(aff));
    const double sigma = std::pow(1.0 - t_aff, 3);

    // Corrector.
    const Vector ds_rhs = -ll + sigma * mu * e - jordan(k, aff.ds_scaled, aff.dz_scaled);
    const double dk_rhs = -tau * kappa + sigma * mu - aff.dtau * aff.dkappa;
    const Step st = direction(sigma, ds_rhs, dk_rhs);
    const double t = std::min(1.0, options_.step_fraction * step_length(st));
    if (!(t > 1e-14) || !std::isfinite(t)) break;

    x += t * st.dx;
    y += t * st.dy;
    z += t * st.dz;
    s += t * st.ds;
    tau += t * st.dtau;
    kappa += t * st.dkappa;
  }

  // A stalled run is accepted when its best iterate is primal feasible and
  // has closed the gap; the dual residual may lag by a few digits because
  // the objective epigraph cone loses precision near its boundary.
  const double gap_tol = std::max(options_.absolute_gap_tol, options_.relative_gap_tol * std::abs(out.objective));
  if (out.primal_residual <= 1e2 * options_.feasibility_tol && out.dual_residual <= options_.stalled_dual_tol &&
      out.gap <= 1e2 * gap_tol) {
    out.status = ConicStatus::Optimal;
    out.reduced_accuracy = true;
  } else {
    out.status = ConicStatus::NumericalFailure;
  }
  return out;
}

}  // namespace drcc
