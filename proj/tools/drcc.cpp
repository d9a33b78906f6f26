#include "drcc/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

using json = nlohmann::ordered_json;
using namespace drcc;

constexpr int kUsageError = 2;
constexpr int kInternalError = 1;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, source + ": " + e.what());
  }
}

Vector to_vector(const json& j) {
  std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix to_matrix(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw Error(ErrorCode::ConfigError, "empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw Error(ErrorCode::ConfigError, "ragged matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

json from_vector(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// ------------------------------------------------------------------- solve

int cmd_solve(const std::string& config_path, const std::string& out_override, bool quiet) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (!quiet) cfg.solve.on_trace = [](const std::string& line) { std::cerr << line << '\n'; };
  const ExperimentReport rep = run_experiment(cfg);
  rep.write(cfg.output_dir);

  std::cout << std::left << std::setw(14) << "run" << std::setw(16) << "status" << std::right << std::setw(12)
            << "total" << std::setw(12) << "generation" << std::setw(10) << "reserve" << std::setw(6) << "iter"
            << std::setw(9) << "time(s)" << "  reliability min/avg/max" << '\n';
  int exit_code = 0;
  for (const auto& r : rep.runs) {
    std::cout << std::left << std::setw(14) << r.spec.name;
    if (!r.ok) {
      std::cout << "failed: " << r.error << '\n';
      if (exit_code == 0) exit_code = r.error_code ? static_cast<int>(*r.error_code) : kInternalError;
      continue;
    }
    std::ostringstream rel;
    if (r.reliability)
      rel << std::fixed << std::setprecision(2) << r.reliability->min << '/' << r.reliability->avg << '/'
          << r.reliability->max;
    std::cout << std::setw(16) << to_string(r.status) << std::right << std::fixed << std::setprecision(3)
              << std::setw(12) << r.total_cost << std::setw(12) << r.generation_cost << std::setw(10)
              << r.reserve_cost << std::setw(6) << r.iterations << std::setw(9) << std::setprecision(2)
              << r.wall_seconds << "  " << rel.str() << '\n';
    std::cout.unsetf(std::ios::fixed);
  }
  std::cout << "wrote " << (cfg.output_dir / "results.csv").string() << " and " << (cfg.output_dir / "summary.json").string()
            << '\n';
  return exit_code;
}

// ---------------------------------------------------------------- separate

int cmd_separate(const std::string& path, int brute_grid) {
  const json j = parse(read_file(path), path);
  SeparationInstance inst;
  std::optional<Vector> a;
  std::optional<MomentData> moments;
  std::optional<ModeSupport> support;
  UnimodalityConfig uni;
  try {
    uni.alpha = j.value("alpha", 1.0);
    uni.epsilon = j.value("epsilon", 0.05);
    if (j.contains("a")) {
      a = to_vector(j.at("a"));
      moments = MomentData::from_mean_covariance(to_vector(j.at("mean")), to_matrix(j.at("covariance")));
      support = parse_mode_support(j.at("support").dump());
      inst = make_instance(*a, j.at("b").get<double>(), *moments, *support, uni);
    } else {
      inst.alpha = uni.alpha;
      inst.epsilon = uni.epsilon;
      inst.r_tilde = j.at("r_tilde").get<double>();
      inst.c_tilde = j.at("c_tilde").get<double>();
      inst.h_lo = j.at("h_lo").get<double>();
      inst.h_hi = j.at("h_hi").get<double>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
  inst.validate();
  const WorstCase wc = worst_case(inst);

  json out;
  out["case"] = wc.which_case;
  out["tau"] = wc.tau;
  out["h"] = wc.h;
  out["violation"] = wc.violation;
  out["at_supremum"] = wc.at_supremum;
  out["violated"] = wc.violation > kViolationThreshold;
  out["tau0"] = inst.tau0();
  out["instance"] = {{"alpha", inst.alpha}, {"epsilon", inst.epsilon}, {"r_tilde", inst.r_tilde},
                     {"c_tilde", inst.c_tilde}, {"h_lo", inst.h_lo},   {"h_hi", inst.h_hi}};
  if (a) {
    const RowSeparation rs = separate_row(*a, j.at("b").get<double>(), *moments, *support, uni);
    if (!rs.skipped) {
      out["mode"] = from_vector(rs.mode);
      out["cut_tau"] = rs.cut_tau;
    }
  }
  if (brute_grid > 0) {
    const WorstCase bf = brute_force_worst_case(inst, brute_grid, brute_grid);
    out["brute_force"] = {{"tau", bf.tau}, {"h", bf.h}, {"violation", bf.violation}};
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

// ------------------------------------------------------------- reliability

int cmd_reliability(const std::string& solution, const std::string& scenarios, int batches, long batch_size,
                    const std::string& out_csv) {
  const SolutionFile sol = load_solution(solution);
  const ScenarioPool pool = read_pool_csv(scenarios);
  if (batches < 1) throw Error(ErrorCode::ConfigError, "--batches must be positive");
  const Eigen::Index size = batch_size > 0 ? batch_size : pool.size() / batches;
  const OpfProblem op = build_problem(sol.network, sol.moments, sol.ambiguity, sol.opf);
  const ReliabilityReport rep = evaluate_reliability(op.decode(sol.x), op, pool, batches, size);

  std::ostringstream csv;
  csv << std::setprecision(10) << "row,label,worst_violation";
  for (int b = 0; b < batches; ++b) csv << ",batch_" << b + 1;
  csv << '\n';
  const Vector worst = rep.worst_row_violation();
  for (std::size_t r = 0; r < rep.row_labels.size(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    csv << r << ',' << rep.row_labels[r] << ',' << worst(ri);
    for (int b = 0; b < batches; ++b) csv << ',' << rep.row_violation(b, ri);
    csv << '\n';
  }
  if (out_csv.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(out_csv);
    if (!f) throw Error(ErrorCode::ConfigError, "cannot write " + out_csv);
    f << csv.str();
  }

  json s;
  s["solution"] = solution;
  s["scenarios"] = scenarios;
  s["batches"] = batches;
  s["batch_size"] = size;
  s["joint"] = {{"min", rep.min}, {"avg", rep.avg}, {"max", rep.max}, {"per_batch", rep.joint}};
  s["worst_row_violation"] = worst.size() ? worst.maxCoeff() : 0.0;
  (out_csv.empty() ? std::cerr : std::cout) << s.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const std::string& spec_path, std::string out, long count, long long seed) {
  const json j = parse(read_file(spec_path), spec_path);
  const json& syn = j.contains("synthetic") ? j.at("synthetic") : j;
  const SyntheticSpec spec = parse_synthetic_spec(syn.dump(), j.value("alpha", 1.0));
  if (count <= 0) count = j.value("count", 10000L);
  const std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : j.value("seed", std::uint64_t{1});
  if (out.empty()) {
    out = j.value("output", std::string("pool.csv"));
    const std::filesystem::path p(out);
    if (p.is_relative()) out = (std::filesystem::path(spec_path).parent_path() / p).string();
  }
  const ScenarioPool pool = generate_synthetic_pool(spec, count, s);
  write_pool_csv(pool, out);

  json summary;
  summary["output"] = out;
  summary["count"] = count;
  summary["seed"] = s;
  summary["ground_truth"] = {{"mode", from_vector(spec.mode)}, {"mean", from_vector(spec.mean())}};
  json cov = json::array();
  const Matrix c = spec.covariance();
  for (Eigen::Index r = 0; r < c.rows(); ++r) cov.push_back(from_vector(c.row(r).transpose()));
  summary["ground_truth"]["covariance"] = cov;
  const MomentData est = estimate_moments(pool);
  summary["sample_mean"] = from_vector(est.mu());
  std::cout << summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributionally robust chance-constrained DC-OPF with unimodality and mode uncertainty"};
  app.require_subcommand(1);

  std::string config, out;
  bool quiet = false;
  auto* solve = app.add_subcommand("solve", "Run every configured ambiguity set and write the reports");
  solve->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  solve->add_option("-o,--out", out, "Output directory (overrides the config)");
  solve->add_flag("-q,--quiet", quiet, "Do not echo the cutting-plane trace");

  std::string instance;
  int brute = 0;
  auto* separate = app.add_subcommand("separate", "Solve one separation problem and print the worst case");
  separate->add_option("instance", instance, "Instance JSON")->required()->check(CLI::ExistingFile);
  separate->add_option("--brute", brute, "Also run a brute-force grid of this size per axis");

  std::string solution, scenarios, rel_out;
  int batches = 20;
  long batch_size = 0;
  auto* reliability = app.add_subcommand("reliability", "Out-of-sample reliability of a saved solution");
  reliability->add_option("solution", solution, "solution_<run>.json written by solve")->required()->check(CLI::ExistingFile);
  reliability->add_option("scenarios", scenarios, "Scenario CSV, one realization per line")->required()->check(CLI::ExistingFile);
  reliability->add_option("--batches", batches, "Number of batches")->capture_default_str();
  reliability->add_option("--batch-size", batch_size, "Scenarios per batch (default: pool size / batches)");
  reliability->add_option("-o,--out", rel_out, "Per-row CSV destination (default: stdout)");

  std::string gen_spec, gen_out;
  long count = 0;
  long long seed = -1;
  auto* gen = app.add_subcommand("gen-data", "Draw a synthetic scenario pool");
  gen->add_option("spec", gen_spec, "Generator spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("-o,--out", gen_out, "CSV destination (default: the spec's output)");
  gen->add_option("-n,--count", count, "Number of samples (default: the spec's count)");
  gen->add_option("--seed", seed, "Seed (default: the spec's seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }

  try {
    if (*solve) return cmd_solve(config, out, quiet);
    if (*separate) return cmd_separate(instance, brute);
    if (*reliability) return cmd_reliability(solution, scenarios, batches, batch_size, rel_out);
    if (*gen) return cmd_gen_data(gen_spec, gen_out, count, seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << e.what() << '\n';
    return kInternalError;
  }
  return kUsageError;
}
