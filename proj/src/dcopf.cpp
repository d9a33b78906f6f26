#include "drcc/dcopf.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace drcc {

std::size_t Network::bus_index(int id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == id) return i;
  throw Error(ErrorCode::ValidationError, "unknown bus " + std::to_string(id));
}

double Network::total_load() const {
  double s = 0.0;
  for (const auto& b : buses) s += b.load;
  return s;
}

void Network::validate() const {
  if (buses.empty()) throw Error(ErrorCode::ValidationError, "network has no buses");
  std::set<int> ids;
  for (const auto& b : buses)
    if (!ids.insert(b.id).second) throw Error(ErrorCode::ValidationError, "duplicate bus " + std::to_string(b.id));
  if (!ids.count(slack)) throw Error(ErrorCode::ValidationError, "slack bus " + std::to_string(slack) + " does not exist");
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const auto& br = branches[k];
    if (!ids.count(br.from) || !ids.count(br.to))
      throw Error(ErrorCode::ValidationError, "branch " + std::to_string(k + 1) + " refers to a missing bus");
    if (br.from == br.to) throw Error(ErrorCode::ValidationError, "branch " + std::to_string(k + 1) + " is a self loop");
    if (!(br.reactance > 0.0))
      throw Error(ErrorCode::ValidationError, "branch " + std::to_string(k + 1) + " needs a positive reactance");
    if (!(br.limit >= 0.0)) throw Error(ErrorCode::ValidationError, "branch " + std::to_string(k + 1) + " has a negative limit");
  }
  for (std::size_t g = 0; g < generators.size(); ++g) {
    const auto& gen = generators[g];
    if (!ids.count(gen.bus))
      throw Error(ErrorCode::ValidationError, "generator " + std::to_string(g + 1) + " sits on missing bus " + std::to_string(gen.bus));
    if (gen.pmin > gen.pmax)
      throw Error(ErrorCode::ValidationError, "generator " + std::to_string(g + 1) + " has pmin > pmax");
  }
  for (const auto& w : wind)
    if (!ids.count(w.bus)) throw Error(ErrorCode::ValidationError, "wind plant on missing bus " + std::to_string(w.bus));

  // Connectivity by union-find.
  std::map<int, int> parent;
  for (int id : ids) parent[id] = id;
  auto find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& br : branches) parent[find(br.from)] = find(br.to);
  const int root = find(slack);
  for (int id : ids)
    if (find(id) != root) throw Error(ErrorCode::ValidationError, "bus " + std::to_string(id) + " is not connected to the slack");
}

namespace {

struct Token {
  std::string text;
  int column;
};

std::vector<Token> tokenize(const std::string& line) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t end = std::min(line.find('#'), line.size());
  while (i < end) {
    while (i < end && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= end) break;
    const std::size_t start = i;
    while (i < end && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    out.push_back({line.substr(start, i - start), static_cast<int>(start) + 1});
  }
  return out;
}

class CaseParser {
 public:
  CaseParser(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  Network run() {
    Network net;
    bool have_slack = false;
    std::vector<std::vector<double>> costs;
    std::string line;
    while (next(line)) {
      const auto tok = tokenize(line);
      if (tok.empty()) continue;
      const std::string& key = tok[0].text;
      if (key == "baseMVA") {
        expect_count(tok, 2);
        net.base_mva = number(tok[1]);
      } else if (key == "slack") {
        expect_count(tok, 2);
        net.slack = integer(tok[1]);
        have_slack = true;
      } else if (key == "bus") {
        section(tok, [&](const std::vector<Token>& r) {
          expect_count(r, 2);
          net.buses.push_back({integer(r[0]), number(r[1])});
        });
      } else if (key == "gen") {
        section(tok, [&](const std::vector<Token>& r) {
          expect_count(r, 3);
          Generator g;
          g.bus = integer(r[0]);
          g.pmin = number(r[1]);
          g.pmax = number(r[2]);
          net.generators.push_back(g);
        });
      } else if (key == "gencost") {
        section(tok, [&](const std::vector<Token>& r) {
          if (r.size() != 3 && r.size() != 4) fail(r.back().column, "gencost rows need c2 c1 c0 [reserve]");
          std::vector<double> row;
          for (const auto& t : r) row.push_back(number(t));
          costs.push_back(row);
        });
      } else if (key == "branch") {
        section(tok, [&](const std::vector<Token>& r) {
          expect_count(r, 4);
          net.branches.push_back({integer(r[0]), integer(r[1]), number(r[2]), number(r[3])});
        });
      } else if (key == "wind") {
        section(tok, [&](const std::vector<Token>& r) {
          expect_count(r, 2);
          net.wind.push_back({integer(r[0]), number(r[1])});
        });
      } else {
        fail(tok[0].column, "unknown keyword '" + key + "'");
      }
    }
    if (!have_slack) throw Error(ErrorCode::ParseError, name_ + ": missing 'slack' line");
    if (costs.size() != net.generators.size())
      throw Error(ErrorCode::ValidationError, name_ + ": " + std::to_string(costs.size()) + " gencost rows for " +
                                                  std::to_string(net.generators.size()) + " generators");
    for (std::size_t g = 0; g < costs.size(); ++g) {
      net.generators[g].quad_cost = costs[g][0];
      net.generators[g].lin_cost = costs[g][1];
      if (costs[g].size() == 4) net.generators[g].reserve_cost = costs[g][3];
    }
    net.validate();
    return net;
  }

 private:
  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    return true;
  }

  template <class F>
  void section(const std::vector<Token>& head, F&& row) {
    expect_count(head, 1);
    const int opened = line_no_;
    std::string line;
    while (next(line)) {
      const auto tok = tokenize(line);
      if (tok.empty()) continue;
      if (tok[0].text == "end") {
        expect_count(tok, 1);
        return;
      }
      row(tok);
    }
    throw Error(ErrorCode::ParseError, name_ + ":" + std::to_string(opened) + ": section '" + head[0].text +
                                           "' is missing its 'end'");
  }

  [[noreturn]] void fail(int column, const std::string& msg) const {
    throw Error(ErrorCode::ParseError, name_ + ":" + std::to_string(line_no_) + ":" + std::to_string(column) + ": " + msg);
  }

  void expect_count(const std::vector<Token>& tok, std::size_t n) const {
    if (tok.size() < n) fail(tok.empty() ? 1 : tok.back().column, "expected " + std::to_string(n) + " fields");
    if (tok.size() > n) fail(tok[n].column, "unexpected field '" + tok[n].text + "'");
  }

  double number(const Token& t) const {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(t.text.c_str(), &end);
    if (end != t.text.c_str() + t.text.size() || errno == ERANGE || !std::isfinite(v))
      fail(t.column, "not a number: '" + t.text + "'");
    return v;
  }

  int integer(const Token& t) const {
    const double v = number(t);
    if (v != std::floor(v) || std::abs(v) > 1e9) fail(t.column, "not an integer id: '" + t.text + "'");
    return static_cast<int>(v);
  }

  std::istream& in_;
  std::string name_;
  int line_no_ = 0;
};

}  // namespace

Network parse_case(std::istream& in, const std::string& source_name) { return CaseParser(in, source_name).run(); }

Network parse_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open case file " + path.string());
  return parse_case(in, path.string());
}

void apply_overrides(Network& net, const CaseOverrides& ov) {
  if (!(ov.load_scale >= 0.0)) throw Error(ErrorCode::ValidationError, "load scale must be non-negative");
  if (!(ov.rating_scale > 0.0)) throw Error(ErrorCode::ValidationError, "rating scale must be positive");
  for (auto& b : net.buses) b.load *= ov.load_scale;
  for (auto& br : net.branches) br.limit *= ov.rating_scale;
  for (const auto& o : ov.line_limits) {
    bool found = false;
    for (auto& br : net.branches)
      if ((br.from == o.from && br.to == o.to) || (br.from == o.to && br.to == o.from)) {
        br.limit = o.limit;
        found = true;
      }
    if (!found)
      throw Error(ErrorCode::ValidationError,
                  "no branch between buses " + std::to_string(o.from) + " and " + std::to_string(o.to));
  }
  if (ov.wind) net.wind = *ov.wind;
  net.validate();
}

Matrix compute_ptdf(const Network& net) {
  net.validate();
  const Eigen::Index nb = static_cast<Eigen::Index>(net.buses.size());
  const Eigen::Index nl = static_cast<Eigen::Index>(net.branches.size());
  Matrix bf = Matrix::Zero(nl, nb);  // branch flow per unit angle
  for (Eigen::Index k = 0; k < nl; ++k) {
    const auto& br = net.branches[k];
    const double y = 1.0 / br.reactance;
    bf(k, static_cast<Eigen::Index>(net.bus_index(br.from))) += y;
    bf(k, static_cast<Eigen::Index>(net.bus_index(br.to))) -= y;
  }
  Matrix incidence = Matrix::Zero(nl, nb);
  for (Eigen::Index k = 0; k < nl; ++k) {
    incidence(k, static_cast<Eigen::Index>(net.bus_index(net.branches[k].from))) = 1.0;
    incidence(k, static_cast<Eigen::Index>(net.bus_index(net.branches[k].to))) = -1.0;
  }
  const Matrix bbus = incidence.transpose() * bf;

  const Eigen::Index s = static_cast<Eigen::Index>(net.bus_index(net.slack));
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < nb; ++i)
    if (i != s) keep.push_back(i);
  const Eigen::Index m = nb - 1;
  Matrix ptdf = Matrix::Zero(nl, nb);
  if (m == 0) return ptdf;
  Matrix red(m, m);
  Matrix bf_red(nl, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    bf_red.col(i) = bf.col(keep[i]);
    for (Eigen::Index j = 0; j < m; ++j) red(i, j) = bbus(keep[i], keep[j]);
  }
  Eigen::LLT<Matrix> llt(red);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::SingularSusceptance, "reduced susceptance matrix is singular");
  Eigen::SelfAdjointEigenSolver<Matrix> es(red, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 1e-12 * es.eigenvalues().maxCoeff())
    throw Error(ErrorCode::SingularSusceptance, "reduced susceptance matrix is numerically singular");
  // theta_red = B_red^{-1} P_red; flows = B_f theta.
  const Matrix sens = llt.solve(bf_red.transpose()).transpose();
  for (Eigen::Index i = 0; i < m; ++i) ptdf.col(keep[i]) = sens.col(i);
  return ptdf;
}

namespace {

// Column of x for block b (0 = P_G, 1 = R_up, 2 = R_dn, 3 = d_G) and generator g.
Eigen::Index col(int block, Eigen::Index g, Eigen::Index ng) { return block * ng + g; }

}  // namespace

OpfDecision OpfProblem::decode(const Vector& x) const {
  const Eigen::Index ng = num_gens();
  return {x.segment(0, ng), x.segment(ng, ng), x.segment(2 * ng, ng), x.segment(3 * ng, ng)};
}

Vector OpfProblem::encode(const OpfDecision& d) const {
  const Eigen::Index ng = num_gens();
  Vector x(4 * ng);
  x << d.pg, d.r_up, d.r_dn, d.d;
  return x;
}

double OpfProblem::generation_cost(const Vector& x) const {
  double c = 0.0;
  for (Eigen::Index g = 0; g < num_gens(); ++g) {
    const auto& gen = network.generators[g];
    c += gen.quad_cost * x(g) * x(g) + gen.lin_cost * x(g);
  }
  return c;
}

double OpfProblem::reserve_cost(const Vector& x) const {
  const Eigen::Index ng = num_gens();
  return reserve_costs.dot(x.segment(ng, ng) + x.segment(2 * ng, ng));
}

Vector OpfProblem::nominal_flows(const Vector& x) const {
  Vector inj = Vector::Zero(static_cast<Eigen::Index>(network.buses.size()));
  for (Eigen::Index g = 0; g < num_gens(); ++g)
    inj(static_cast<Eigen::Index>(network.bus_index(network.generators[g].bus))) += x(g);
  for (const auto& w : network.wind) inj(static_cast<Eigen::Index>(network.bus_index(w.bus))) += w.forecast;
  for (std::size_t i = 0; i < network.buses.size(); ++i) inj(static_cast<Eigen::Index>(i)) -= network.buses[i].load;
  return ptdf * inj;
}

OpfProblem build_problem(const Network& net, const MomentData& moments, const AmbiguityConfig& ambiguity,
                         const OpfOptions& options) {
  net.validate();
  const Eigen::Index ng = static_cast<Eigen::Index>(net.generators.size());
  const Eigen::Index nw = static_cast<Eigen::Index>(net.wind.size());
  if (ng == 0) throw Error(ErrorCode::ValidationError, "network has no generators");
  if (nw != moments.dimension())
    throw Error(ErrorCode::DimensionMismatch, std::to_string(nw) + " wind plants but moments of dimension " +
                                                  std::to_string(moments.dimension()));
  OpfProblem op;
  op.network = net;
  op.ptdf = compute_ptdf(net);
  const Matrix& a = op.ptdf;
  const Eigen::Index l = 4 * ng;
  const Eigen::Index nl = a.rows();

  op.reserve_costs.resize(ng);
  for (Eigen::Index g = 0; g < ng; ++g) {
    const auto& gen = net.generators[g];
    op.reserve_costs(g) = std::isnan(gen.reserve_cost) ? options.reserve_cost_factor * gen.lin_cost : gen.reserve_cost;
  }

  DrccProblem& p = op.problem;
  p.num_vars = l;
  p.quadratic = Matrix::Zero(l, l);
  p.linear = Vector::Zero(l);
  for (Eigen::Index g = 0; g < ng; ++g) {
    p.quadratic(col(0, g, ng), col(0, g, ng)) = net.generators[g].quad_cost;
    p.linear(col(0, g, ng)) = net.generators[g].lin_cost;
    p.linear(col(1, g, ng)) = op.reserve_costs(g);
    p.linear(col(2, g, ng)) = op.reserve_costs(g);
  }

  // 1^T d = 1 and nominal power balance.
  {
    Vector e = Vector::Zero(l);
    e.segment(3 * ng, ng).setOnes();
    p.equalities.push_back({e, 1.0});
    Vector bal = Vector::Zero(l);
    bal.head(ng).setOnes();
    double wind_total = 0.0;
    for (const auto& w : net.wind) wind_total += w.forecast;
    p.equalities.push_back({bal, net.total_load() - wind_total});
  }
  p.lower = Vector::Zero(l);

  p.models.push_back({moments, ambiguity, std::nullopt});

  // Generator and wind bus columns of the PTDF.
  Matrix a_gen(nl, ng), a_wind(nl, nw);
  for (Eigen::Index g = 0; g < ng; ++g) a_gen.col(g) = a.col(static_cast<Eigen::Index>(net.bus_index(net.generators[g].bus)));
  for (Eigen::Index k = 0; k < nw; ++k) a_wind.col(k) = a.col(static_cast<Eigen::Index>(net.bus_index(net.wind[k].bus)));
  Vector fixed_inj = Vector::Zero(static_cast<Eigen::Index>(net.buses.size()));
  for (const auto& w : net.wind) fixed_inj(static_cast<Eigen::Index>(net.bus_index(w.bus))) += w.forecast;
  for (std::size_t i = 0; i < net.buses.size(); ++i) fixed_inj(static_cast<Eigen::Index>(i)) -= net.buses[i].load;
  const Vector fixed_flow = a * fixed_inj;

  auto make_row = [&](std::string label) {
    UncertainConstraint r;
    r.row.a_matrix = Matrix::Zero(nw, l);
    r.row.a_offset = Vector::Zero(nw);
    r.row.b_coef = Vector::Zero(l);
    r.label = std::move(label);
    return r;
  };

  // Branch flows: flow_i = f0_i(P_G) + [A(C_W - C_G d 1^T)]_i w.
  for (Eigen::Index i = 0; i < nl; ++i) {
    const auto& br = net.branches[i];
    const std::string name = "line " + std::to_string(br.from) + "-" + std::to_string(br.to);
    for (double sign : {1.0, -1.0}) {
      UncertainConstraint r = make_row(name + (sign > 0 ? " +" : " -"));
      for (Eigen::Index k = 0; k < nw; ++k) {
        r.row.a_offset(k) = sign * a_wind(i, k);
        for (Eigen::Index g = 0; g < ng; ++g) r.row.a_matrix(k, col(3, g, ng)) = -sign * a_gen(i, g);
      }
      for (Eigen::Index g = 0; g < ng; ++g) r.row.b_coef(col(0, g, ng)) = -sign * a_gen(i, g);
      r.row.b_offset = br.limit - sign * fixed_flow(i);
      p.rows.push_back(std::move(r));
    }
  }

  // Generator limits and reserve capacities with R_G = -d_G 1^T w.
  for (Eigen::Index g = 0; g < ng; ++g) {
    const auto& gen = net.generators[g];
    const std::string name = "gen " + std::to_string(g + 1) + "@" + std::to_string(gen.bus);
    {
      UncertainConstraint r = make_row(name + " pmax");
      r.row.a_matrix.col(col(3, g, ng)).setConstant(-1.0);
      r.row.b_coef(col(0, g, ng)) = -1.0;
      r.row.b_offset = gen.pmax;
      p.rows.push_back(std::move(r));
    }
    {
      UncertainConstraint r = make_row(name + " pmin");
      r.row.a_matrix.col(col(3, g, ng)).setConstant(1.0);
      r.row.b_coef(col(0, g, ng)) = 1.0;
      r.row.b_offset = -gen.pmin;
      p.rows.push_back(std::move(r));
    }
    {
      UncertainConstraint r = make_row(name + " reserve up");
      r.row.a_matrix.col(col(3, g, ng)).setConstant(-1.0);
      r.row.b_coef(col(1, g, ng)) = 1.0;
      p.rows.push_back(std::move(r));
    }
    {
      UncertainConstraint r = make_row(name + " reserve down");
      r.row.a_matrix.col(col(3, g, ng)).setConstant(1.0);
      r.row.b_coef(col(2, g, ng)) = 1.0;
      p.rows.push_back(std::move(r));
    }
  }
  return op;
}

}  // namespace drcc
