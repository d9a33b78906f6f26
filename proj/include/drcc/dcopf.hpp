#ifndef DRCC_DCOPF_HPP
#define DRCC_DCOPF_HPP

#include "drcc/master.hpp"

#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace drcc {

struct Bus {
  int id = 0;
  double load = 0.0;  ///< MW
};

struct Branch {
  int from = 0;
  int to = 0;
  double reactance = 0.0;  ///< p.u.
  double limit = 0.0;      ///< MW
};

struct Generator {
  int bus = 0;
  double pmin = 0.0;
  double pmax = 0.0;
  double quad_cost = 0.0;  ///< $/MW^2h
  double lin_cost = 0.0;   ///< $/MWh
  /// $/MW of reserve capacity; NaN means "derive from lin_cost".
  double reserve_cost = std::numeric_limits<double>::quiet_NaN();
};

struct WindPlant {
  int bus = 0;
  double forecast = 0.0;  ///< MW
};

struct Network {
  double base_mva = 100.0;
  int slack = 0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<WindPlant> wind;

  /// Position of a bus id in `buses`; throws ValidationError if absent.
  std::size_t bus_index(int id) const;
  /// Unique ids, known references, positive reactances, connectivity.
  void validate() const;
  double total_load() const;
};

struct LineLimitOverride {
  int from = 0;
  int to = 0;
  double limit = 0.0;
};

struct CaseOverrides {
  double load_scale = 1.0;
  /// Multiplies every branch rating before the explicit line_limits apply.
  double rating_scale = 1.0;
  std::vector<LineLimitOverride> line_limits;
  std::optional<std::vector<WindPlant>> wind;
};

Network parse_case(std::istream& in, const std::string& source_name = "<stream>");
Network parse_case(const std::filesystem::path& path);
void apply_overrides(Network& net, const CaseOverrides& overrides);

/// Branch flow (MW) per MW injected at each bus and withdrawn at the slack.
Matrix compute_ptdf(const Network& net);

/// P_G, R_up, R_dn, d_G.
struct OpfDecision {
  Vector pg, r_up, r_dn, d;
};

struct OpfOptions {
  /// Reserve price as a multiple of the linear generation price, used where
  /// a generator has no explicit reserve cost.
  double reserve_cost_factor = 10.0;
};

/// DrccProblem over x = [P_G; R_up; R_dn; d_G] plus the data to decode it.
struct OpfProblem {
  Network network;
  Matrix ptdf;
  DrccProblem problem;
  Vector reserve_costs;

  Eigen::Index num_gens() const { return static_cast<Eigen::Index>(network.generators.size()); }
  OpfDecision decode(const Vector& x) const;
  Vector encode(const OpfDecision& d) const;
  double generation_cost(const Vector& x) const;
  double reserve_cost(const Vector& x) const;
  /// Nominal branch flows (MW) at the forecast.
  Vector nominal_flows(const Vector& x) const;
};

OpfProblem build_problem(const Network& net, const MomentData& moments, const AmbiguityConfig& ambiguity,
                         const OpfOptions& options = {});

}  // namespace drcc

#endif  // DRCC_DCOPF_HPP
