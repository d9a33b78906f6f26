#include "drcc/master.hpp"

#include <chrono>
#include <cstdio>
#include <limits>
#include <memory>

namespace drcc {

void DrccProblem::validate() const {
  const Eigen::Index l = num_vars;
  if (l <= 0) throw Error(ErrorCode::ValidationError, "problem has no variables");
  if (linear.size() != l) throw Error(ErrorCode::DimensionMismatch, "objective length differs from num_vars");
  if (quadratic.size() != 0) {
    if (quadratic.rows() != l || quadratic.cols() != l)
      throw Error(ErrorCode::DimensionMismatch, "quadratic objective must be num_vars x num_vars");
    if ((quadratic - quadratic.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, quadratic.cwiseAbs().maxCoeff()))
      throw Error(ErrorCode::ValidationError, "quadratic objective is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(quadratic, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
      throw Error(ErrorCode::ValidationError, "quadratic objective is not positive semidefinite");
  }
  for (const auto* group : {&equalities, &inequalities})
    for (const auto& c : *group)
      if (c.coef.size() != l) throw Error(ErrorCode::DimensionMismatch, "deterministic row length differs from num_vars");
  if ((lower.size() != 0 && lower.size() != l) || (upper.size() != 0 && upper.size() != l))
    throw Error(ErrorCode::DimensionMismatch, "bound vectors must have num_vars entries");
  for (const auto& m : models) {
    m.ambiguity.validate(m.moments);
    if (m.mode_region && m.mode_region->dimension() != m.moments.dimension())
      throw Error(ErrorCode::DimensionMismatch, "mode region dimension differs from its moments");
  }
  for (const auto& r : rows) {
    r.row.validate();
    if (r.model >= models.size()) throw Error(ErrorCode::ValidationError, "row '" + r.label + "' refers to a missing model");
    if (r.row.num_vars() != l) throw Error(ErrorCode::DimensionMismatch, "row '" + r.label + "' has the wrong x length");
    if (r.row.dimension() != models[r.model].moments.dimension())
      throw Error(ErrorCode::DimensionMismatch, "row '" + r.label + "' dimension differs from its moments");
  }
}

double DrccProblem::objective_value(const Vector& x) const {
  double v = linear.dot(x) + constant;
  if (quadratic.size() != 0) v += x.dot(quadratic * x);
  return v;
}

std::size_t CutPool::total() const {
  std::size_t n = 0;
  for (const auto& c : cuts_) n += c.size();
  return n;
}

bool CutPool::add(std::size_t row, double tau, const Vector& mode, SocCut cut) {
  auto& list = cuts_.at(row);
  for (const auto& e : list) {
    const bool same_tau = std::abs(e.tau - tau) <= 1e-9 * std::max(1.0, std::abs(tau));
    const double scale = std::max(1.0, mode.cwiseAbs().maxCoeff());
    if (same_tau && (e.mode - mode).cwiseAbs().maxCoeff() <= 1e-9 * scale) return false;
  }
  list.push_back({tau, mode, std::move(cut)});
  return true;
}

namespace {

using SparseRow = std::vector<std::pair<Eigen::Index, double>>;

// Coefficients over [x; aux] mapped to global columns.
SparseRow embed(const Vector& coef, Eigen::Index l, Eigen::Index aux_offset) {
  SparseRow out;
  for (Eigen::Index j = 0; j < coef.size(); ++j)
    if (coef(j) != 0.0) out.emplace_back(j < l ? j : aux_offset + (j - l), coef(j));
  return out;
}

SocConstraint embed(const SocConstraint& soc, Eigen::Index l, Eigen::Index aux_offset, Eigen::Index total) {
  if (soc.d.size() == l) return soc;
  SocConstraint out;
  out.F = Matrix::Zero(soc.F.rows(), total);
  out.d = Vector::Zero(total);
  out.F.leftCols(l) = soc.F.leftCols(l);
  out.d.head(l) = soc.d.head(l);
  const Eigen::Index k = soc.d.size() - l;
  out.F.middleCols(aux_offset, k) = soc.F.rightCols(k);
  out.d.segment(aux_offset, k) = soc.d.tail(k);
  out.f = soc.f;
  out.e = soc.e;
  return out;
}

const ModeSupport* separation_support(const UncertaintyModel& m) {
  return m.ambiguity.needs_separation() && m.ambiguity.support ? &*m.ambiguity.support : nullptr;
}

}  // namespace

MasterModel assemble_master(const DrccProblem& p, const CutPool& pool, const AssemblyOptions& opts) {
  const Eigen::Index l = p.num_vars;
  MasterModel out;
  ConicProblem& cp = out.conic;
  cp.add_variables(l);

  // Deterministic mode constraints first: they decide how many aux columns exist.
  std::vector<std::pair<ModeFeasibility, Eigen::Index>> mode_rows;
  for (const auto& r : p.rows) {
    const auto& model = p.models[r.model];
    const ModeSupport* region = model.mode_constraint_region();
    if (!region) continue;
    ModeFeasibility mf = mode_feasibility_constraints(*region, r.row);
    const Eigen::Index off = mf.num_aux > 0 ? cp.add_variables(mf.num_aux) : l;
    mode_rows.emplace_back(std::move(mf), off);
  }

  if (p.quadratic.size() != 0 && p.quadratic.cwiseAbs().maxCoeff() > 0.0) out.epigraph_var = cp.add_variables(1);
  const Eigen::Index nv = cp.num_vars();
  Vector c = Vector::Zero(nv);
  c.head(l) = p.linear;
  if (out.epigraph_var >= 0) {
    c(out.epigraph_var) = 1.0;
    // ||(2 F x, t - 1)|| <= t + 1  <=>  ||F x||^2 <= t, with Q = F^T F.
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(p.quadratic));
    const double top = es.eigenvalues().cwiseAbs().maxCoeff();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < l; ++i)
      if (es.eigenvalues()(i) > 1e-14 * top) keep.push_back(i);
    const Eigen::Index k = static_cast<Eigen::Index>(keep.size());
    SocConstraint epi;
    epi.F = Matrix::Zero(k + 1, nv);
    epi.f = Vector::Zero(k + 1);
    for (Eigen::Index i = 0; i < k; ++i)
      epi.F.row(i).head(l) = 2.0 * std::sqrt(es.eigenvalues()(keep[i])) * es.eigenvectors().col(keep[i]).transpose();
    epi.F(k, out.epigraph_var) = 1.0;
    epi.f(k) = -1.0;
    epi.d = Vector::Zero(nv);
    epi.d(out.epigraph_var) = 1.0;
    epi.e = 1.0;
    cp.add_soc(epi);
  }
  cp.set_objective(c);

  for (const auto& e : p.equalities) {
    Vector coef = Vector::Zero(nv);
    coef.head(l) = e.coef;
    cp.add_equality(coef, e.rhs);
  }
  for (const auto& e : p.inequalities) cp.add_inequality(embed(e.coef, l, l), e.rhs);
  for (Eigen::Index j = 0; j < l; ++j) {
    if (p.lower.size() && std::isfinite(p.lower(j))) cp.add_inequality(SparseRow{{j, -1.0}}, -p.lower(j));
    if (p.upper.size() && std::isfinite(p.upper(j))) cp.add_inequality(SparseRow{{j, 1.0}}, p.upper(j));
  }
  for (const auto& [mf, off] : mode_rows) {
    for (const auto& lc : mf.linear) cp.add_inequality(embed(lc.coef, l, off), lc.rhs);
    for (const auto& soc : mf.cones) cp.add_soc(embed(soc, l, off, nv));
  }

  // Single-cut sets, then the accumulated cutting planes.
  for (std::size_t i = 0; i < p.rows.size(); ++i) {
    const auto& model = p.models[p.rows[i].model];
    if (model.ambiguity.needs_separation()) continue;
    cp.add_soc(single_cut(model.ambiguity.kind, model.moments, model.ambiguity.unimodality).realize(p.rows[i].row));
  }
  for (std::size_t i = 0; i < pool.num_rows(); ++i) {
    for (const auto& entry : pool.cuts(i)) {
      SocConstraint soc = entry.cut.realize(p.rows[i].row);
      soc.e -= opts.cut_margin;
      cp.add_soc(soc);
      ++out.num_cut_cones;
    }
  }
  return out;
}

std::string_view to_string(SolveStatus status) {
  return status == SolveStatus::Converged ? "converged" : "iteration-limit";
}

std::pair<double, long> max_violation(const DrccProblem& p, const Vector& x) {
  double worst = -std::numeric_limits<double>::infinity();
  long at = -1;
  for (std::size_t i = 0; i < p.rows.size(); ++i) {
    const auto& model = p.models[p.rows[i].model];
    const ModeSupport* support = separation_support(model);
    if (!support) continue;
    const auto& row = p.rows[i].row;
    const RowSeparation sep = separate_row(row.a(x), row.b(x), model.moments, *support, model.ambiguity.unimodality);
    if (sep.skipped) continue;
    if (sep.worst.violation > worst) worst = sep.worst.violation, at = static_cast<long>(i);
  }
  return {at < 0 ? 0.0 : worst, at};
}

SolveReport solve_drcc(const DrccProblem& p, const SolveOptions& opt, ConicSolverAdapter* solver) {
  const auto start = std::chrono::steady_clock::now();
  p.validate();
  if (opt.max_iter < 1) throw Error(ErrorCode::ConfigError, "max_iter must be at least 1");
  std::unique_ptr<ConicSolverAdapter> own;
  if (!solver) {
    own = std::make_unique<InteriorPointSolver>();
    solver = own.get();
  }

  SolveReport rep;
  rep.pool = CutPool(p.rows.size());
  CutPool& pool = rep.pool;
  for (std::size_t i = 0; i < p.rows.size(); ++i) {
    const auto& model = p.models[p.rows[i].model];
    const ModeSupport* support = separation_support(model);
    if (!support) continue;
    const auto& uni = model.ambiguity.unimodality;
    const Vector m0 = support->initial_point();
    pool.add(i, uni.tau0(), m0, cut_d2_at(model.moments, m0, uni, uni.tau0()));
  }
  const std::size_t initial_cuts = pool.total();

  auto emit = [&](std::string line) {
    if (opt.on_trace) opt.on_trace(line);
    rep.trace.push_back(std::move(line));
  };

  rep.status = SolveStatus::IterationLimit;
  for (int it = 1; it <= opt.max_iter; ++it) {
    pool.iteration = it;
    const MasterModel model = assemble_master(p, pool, {opt.cut_margin});
    const ConicSolution sol = solver->solve(model.conic);
    if (sol.status == ConicStatus::Infeasible)
      throw Error(ErrorCode::MasterInfeasible, "master problem infeasible at iteration " + std::to_string(it));
    if (sol.status != ConicStatus::Optimal)
      throw Error(ErrorCode::SolverFailure, "conic solver returned " + std::string(to_string(sol.status)) +
                                                " at iteration " + std::to_string(it));
    rep.x = sol.x.head(p.num_vars);
    rep.objective = p.objective_value(rep.x);
    rep.iterations = it;

    double worst = -std::numeric_limits<double>::infinity();
    long worst_row = -1;
    std::size_t added = 0;
    for (std::size_t i = 0; i < p.rows.size(); ++i) {
      const auto& um = p.models[p.rows[i].model];
      const ModeSupport* support = separation_support(um);
      if (!support) continue;
      const auto& row = p.rows[i].row;
      const auto& uni = um.ambiguity.unimodality;
      const RowSeparation sep = separate_row(row.a(rep.x), row.b(rep.x), um.moments, *support, uni, opt.cut_placement);
      if (sep.skipped) continue;
      if (sep.worst.violation > worst) worst = sep.worst.violation, worst_row = static_cast<long>(i);
      if (sep.worst.violation > opt.violation_tol &&
          pool.add(i, sep.cut_tau, sep.mode, cut_d2_at(um.moments, sep.mode, uni, sep.cut_tau)))
        ++added;
    }
    if (worst_row < 0) worst = 0.0;
    rep.final_max_violation = worst;
    rep.violation_trace.push_back(worst);
    rep.objective_trace.push_back(rep.objective);

    char buf[256];
    std::snprintf(buf, sizeof buf, "iter %d objective %.10g max_violation %.3e row %ld cuts_added %zu ipm_iters %d", it,
                  rep.objective, worst, worst_row, added, sol.iterations);
    std::string line = buf;
    if (worst_row >= 0 && !p.rows[worst_row].label.empty()) line += " (" + p.rows[worst_row].label + ")";
    emit(std::move(line));

    if (added == 0) {
      rep.status = SolveStatus::Converged;
      break;
    }
  }
  rep.cuts_added = pool.total() - initial_cuts;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace drcc
