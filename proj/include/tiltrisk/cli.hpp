#pragma once

// Batch front end: parses a command line, runs one computation, and writes a
// flat table (CSV with '#' manifest lines, or JSON {manifest, rows}).
// run() is callable in-process; tools/tiltrisk.cpp only forwards argv.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tiltrisk/error.hpp"
#include "tiltrisk/finite_sample.hpp"
#include "tiltrisk/game_engine.hpp"
#include "tiltrisk/limit_experiment.hpp"
#include "tiltrisk/tilt.hpp"

namespace tiltrisk::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_numeric = 3, exit_not_converged = 4, exit_unknown = 5 };

/// Raised for flag combinations CLI11 cannot express.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Cell = std::variant<std::monostate, double, long long, bool, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> parameters;
  std::uint64_t root_seed = 0;
  std::string tool_version = kToolVersion;
  long long wall_time_ms = 0;
};

enum class Format { csv, json };

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_cell(const Cell& c) {
  struct {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(double v) const { return format_double(v); }
    std::string operator()(long long v) const { return std::to_string(v); }
    std::string operator()(bool v) const { return v ? "true" : "false"; }
    std::string operator()(const std::string& s) const {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string q = "\"";
      for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      return q + "\"";
    }
  } visit;
  return std::visit(visit, c);
}

inline nlohmann::json json_cell(const Cell& c) {
  struct {
    nlohmann::json operator()(std::monostate) const { return nullptr; }
    nlohmann::json operator()(double v) const { return v; }
    nlohmann::json operator()(long long v) const { return v; }
    nlohmann::json operator()(bool v) const { return v; }
    nlohmann::json operator()(const std::string& s) const { return s; }
  } visit;
  return std::visit(visit, c);
}

inline void write_csv(std::ostream& os, const RunManifest& m, const Table& t) {
  os << "# command: " << m.command << '\n';
  os << "# tool_version: " << m.tool_version << '\n';
  os << "# root_seed: " << m.root_seed << '\n';
  for (const auto& [k, v] : m.parameters) os << "# parameter " << k << ": " << v << '\n';
  os << "# wall_time_ms: " << m.wall_time_ms << '\n';
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_cell(row[i]);
    os << '\n';
  }
}

inline void write_json(std::ostream& os, const RunManifest& m, const Table& t) {
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.parameters) params[k] = v;
  nlohmann::ordered_json doc;
  doc["manifest"] = {{"command", m.command},
                     {"parameters", params},
                     {"root_seed", m.root_seed},
                     {"tool_version", m.tool_version},
                     {"wall_time_ms", m.wall_time_ms}};
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json r = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) r[t.columns[i]] = json_cell(row[i]);
    doc["rows"].push_back(std::move(r));
  }
  os << doc.dump(2) << '\n';
}

/// "LO:HI:STEPS" with STEPS >= 1 equispaced points.
inline std::vector<double> parse_linspace(const std::string& s) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t pos; (pos = s.find(':', start)) != std::string::npos; start = pos + 1) {
    parts.push_back(s.substr(start, pos - start));
  }
  parts.push_back(s.substr(start));
  if (parts.size() != 3) throw UsageError("expected LO:HI:STEPS, got '" + s + "'");
  double lo = 0.0, hi = 0.0;
  long steps = 0;
  try {
    std::size_t used = 0;
    lo = std::stod(parts[0], &used);
    if (used != parts[0].size()) throw std::invalid_argument("lo");
    hi = std::stod(parts[1], &used);
    if (used != parts[1].size()) throw std::invalid_argument("hi");
    steps = std::stol(parts[2], &used);
    if (used != parts[2].size()) throw std::invalid_argument("steps");
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse range '" + s + "'");
  }
  if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo || steps < 1) {
    throw UsageError("range '" + s + "' needs finite LO <= HI and STEPS >= 1");
  }
  if (steps > 1 && hi == lo) throw UsageError("range '" + s + "' repeats one point");
  std::vector<double> out(static_cast<std::size_t>(steps));
  for (long i = 0; i < steps; ++i) {
    out[static_cast<std::size_t>(i)] = steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (steps - 1);
  }
  return out;
}

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument: return exit_usage;
    case ErrorKind::did_not_converge: return exit_not_converged;
    case ErrorKind::unknown_identifier: return exit_unknown;
    default: return exit_numeric;
  }
}

namespace detail {

struct Common {
  std::optional<std::string> out;
  std::string format = "csv";
};

inline void add_output_flags(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "Output path (default: standard output)");
  sub->add_option("--format", c.format, "Output encoding")->check(CLI::IsMember({"csv", "json"}));
}

inline std::vector<std::pair<std::string, std::string>> given_parameters(const CLI::App* sub) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string& name = opt->get_single_name();
    if (opt->count() == 0 || name == "help" || name == "threads" || name == "out" || name == "format") continue;
    std::string joined;
    for (const auto& r : opt->results()) joined += (joined.empty() ? "" : ",") + r;
    out.emplace_back(name, joined);
  }
  return out;
}

inline TiltedLossSpec make_loss(const std::string& kind, double lambda, double bound_c,
                                std::optional<double> trunc_k, std::optional<double> linex_m) {
  if (kind == "estimation") return TiltedLossSpec::estimation(lambda, bound_c);
  if (kind == "treatment") return TiltedLossSpec::treatment(lambda, trunc_k);
  if (!linex_m) throw UsageError("--loss linex needs --linex-m");
  return TiltedLossSpec::linex(lambda, *linex_m);
}

inline Cell optional_cell(const std::optional<double>& v) {
  return v ? Cell{*v} : Cell{};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each fills the table and the root seed, or throws.

struct LimitArgs {
  std::string loss;
  std::optional<double> lambda;
  double sigma = 1.0;
  double bound_c = 25.0;
  std::optional<double> linex_m;
  std::optional<std::string> sweep;
};

inline Table cmd_limit(const LimitArgs& a) {
  if (a.lambda.has_value() == a.sweep.has_value()) throw UsageError("give exactly one of --lambda and --sweep-lambda");
  require(a.sigma > 0.0 && std::isfinite(a.sigma), ErrorKind::invalid_argument, "--sigma must be positive");
  const std::vector<double> lambdas = a.sweep ? parse_linspace(*a.sweep) : std::vector<double>{*a.lambda};
  Table t;
  if (a.loss == "treatment") t.columns = {"lambda", "sigma", "delta_star", "v_star"};
  if (a.loss == "estimation") t.columns = {"lambda", "sigma", "bound_c", "v_star"};
  if (a.loss == "linex") t.columns = {"lambda", "sigma", "linex_m", "linex_shift", "excess_risk"};
  for (double lambda : lambdas) {
    const TiltedLossSpec loss = detail::make_loss(a.loss, lambda, a.bound_c, std::nullopt, a.linex_m);
    if (loss.kind == LossKind::treatment) {
      const LimitValue v = treatment_minimax_value(lambda, a.sigma);
      t.rows.push_back({lambda, a.sigma, *v.delta_star, v.value});
    } else if (loss.kind == LossKind::estimation) {
      t.rows.push_back({lambda, a.sigma, a.bound_c, estimation_minimax_value(a.sigma, loss).value});
    } else {
      const double s2 = a.sigma * a.sigma;
      const double shift = linex_optimal_shift(lambda, *a.linex_m, s2);
      t.rows.push_back({lambda, a.sigma, *a.linex_m, shift, linex_excess_risk(shift, lambda, *a.linex_m, s2)});
    }
  }
  return t;
}

struct GameArgs {
  double lambda = 1.0;
  double sigma = 1.0;
  double budget = 10.0;
  double tol = 1e-4;
  int max_iters = 50;
  double verify_tol = 1e-6;
};

/// Atom rows then one solution row. Returns false when the solver stopped
/// early; the table then holds the last iterate.
inline bool cmd_game(const GameArgs& a, Table& t) {
  require(a.max_iters >= 1, ErrorKind::invalid_argument, "--max-iters must be at least 1");
  const LimitSpec spec = LimitSpec::scalar(a.sigma);
  GameSolution sol;
  bool converged = true;
  try {
    sol = solve_treatment_game(spec, a.lambda, a.budget, a.max_iters, a.tol);
  } catch (const GameNotConverged& e) {
    sol = e.partial();
    converged = false;
  }
  std::optional<double> v_limit;
  try {
    v_limit = treatment_minimax_value(a.lambda, a.sigma).value;
  } catch (const Error&) {
  }
  std::optional<SaddlePointReport> check;
  try {
    check = verify_saddle_point(sol.rule, sol.prior, spec, a.lambda, a.verify_tol, a.budget);
  } catch (const Error&) {
  }

  t.columns = {"record",      "index",      "effect",         "weight",          "threshold",
               "direction",   "upper_value", "lower_value",   "gap",             "iterations",
               "converged",   "v_star_limit", "saddle_passed", "bayes_violation", "equalizer_violation",
               "max_risk"};
  const auto effects = tiltrisk::detail::prior_effects(sol.prior, spec);
  for (std::size_t i = 0; i < effects.size(); ++i) {
    std::vector<Cell> row(t.columns.size());
    row[0] = std::string("atom");
    row[1] = static_cast<long long>(i);
    row[2] = effects[i];
    row[3] = sol.prior.weights()[i];
    t.rows.push_back(std::move(row));
  }
  std::vector<Cell> row(t.columns.size());
  row[0] = std::string("solution");
  row[4] = sol.rule.threshold;
  row[5] = std::string(sol.rule.direction == TreatDirection::above ? "above" : "below");
  row[6] = sol.upper_value;
  row[7] = sol.lower_value;
  row[8] = sol.gap;
  row[9] = static_cast<long long>(sol.iterations);
  row[10] = converged;
  row[11] = detail::optional_cell(v_limit);
  if (check) {
    row[12] = check->passed();
    row[13] = check->bayes_violation;
    row[14] = check->equalizer_violation;
    row[15] = check->max_risk;
  }
  t.rows.push_back(std::move(row));
  return converged;
}

struct McArgs {
  std::string model;
  std::optional<double> theta0;
  double noise_sd = 1.0;
  std::vector<double> omega;
  std::string loss;
  double lambda = 1.0;
  double bound_c = 25.0;
  std::optional<double> trunc_k;
  std::vector<long> n_list;
  long reps = 10000;
  double budget_m = 3.0;
  int grid = 25;
  int refine = 3;
  std::vector<std::string> rules;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

inline ExperimentModel mc_model(const McArgs& a) {
  const long n0 = a.n_list.front();
  if (a.model == "bernoulli") return ExperimentModel::bernoulli(a.theta0.value_or(0.5), n0);
  if (a.model == "gaussian") return ExperimentModel::gaussian_location(a.theta0.value_or(0.0), a.noise_sd, n0);
  if (a.omega.size() != 4) throw UsageError("--model gmm needs --omega a,b,c,d");
  Eigen::MatrixXd m(2, 2);
  m << a.omega[0], a.omega[1], a.omega[2], a.omega[3];
  try {
    return ExperimentModel::overid_mean(a.theta0.value_or(0.0), SpdMatrix(m), n0);
  } catch (const Error& e) {
    throw UsageError(std::string("--omega must be symmetric positive definite: ") + e.what());
  }
}

inline Table cmd_mc(const McArgs& a) {
  if (a.n_list.empty()) throw UsageError("--n-list is empty");
  require(a.reps >= 2, ErrorKind::invalid_argument, "--reps must be at least 2");
  require(a.grid >= 1 && a.refine >= 1, ErrorKind::invalid_argument, "--grid and --refine must be positive");
  const ExperimentModel model = mc_model(a);
  std::vector<EstimatorSpec> rules;
  for (const auto& r : a.rules) rules.push_back(EstimatorSpec::parse(r));
  if (rules.empty()) {
    rules.push_back({model.family == ModelFamily::overid_mean ? EstimatorName::gmm_two_step : EstimatorName::mle});
  }
  for (const auto& r : rules) check_estimator_fits(model, r);
  const TiltedLossSpec loss = detail::make_loss(a.loss, a.lambda, a.bound_c, a.trunc_k, std::nullopt);
  const auto rows = risk_study(model, rules, loss, a.budget_m, a.grid, a.n_list, a.reps, {a.seed, 0},
                               {.threads = a.threads, .refine = a.refine});
  Table t;
  t.columns = {"rule", "n", "worst_risk", "stderr", "argmax_h", "v_star", "ratio"};
  for (const auto& r : rows) {
    t.rows.push_back({std::string(to_string(r.rule.name)), static_cast<long long>(r.n), r.report.value,
                      r.report.stderr_, r.report.worst_h, r.v_star, r.ratio()});
  }
  return t;
}

struct ProfileArgs {
  std::string model = "bernoulli";
  std::string loss;
  double lambda = 1.0;
  double bound_c = 25.0;
  std::string theta_grid;
  double mu_shift = 0.5;
};

inline Table cmd_profile(const ProfileArgs& a) {
  const auto grid = parse_linspace(a.theta_grid);
  const TiltedLossSpec loss = detail::make_loss(a.loss, a.lambda, a.bound_c, std::nullopt, std::nullopt);
  const double zero_tol = 1e-9 * std::max(1.0, grid.back() - grid.front());
  const ValueProfile p = reference_value_profile(
      grid, [](double th) { return 1.0 / (th * (1.0 - th)); }, [&](double th) { return th - a.mu_shift; },
      [](double) { return 1.0; }, loss, zero_tol);
  Table t;
  t.columns = {"record", "theta", "sigma_theta", "v_star_theta", "admissible"};
  for (std::size_t i = 0; i < p.theta.size(); ++i) {
    t.rows.push_back({std::string("theta"), p.theta[i], p.sigma[i], p.value[i], static_cast<bool>(p.admissible[i])});
  }
  t.rows.push_back({std::string("summary"), p.arg_sup, Cell{}, p.sup, Cell{}});
  return t;
}

// ---------------------------------------------------------------------------

/// Parses args (without the program name), runs the command and writes the
/// table to --out or to out. Messages go to err.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tilted-risk decision computations", "tiltrisk"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  detail::Common common;

  LimitArgs limit;
  CLI::App* limit_cmd = app.add_subcommand("limit", "Limit-experiment values and lambda sweeps");
  limit_cmd->add_option("--loss", limit.loss)->required()->check(CLI::IsMember({"estimation", "treatment", "linex"}));
  limit_cmd->add_option("--lambda", limit.lambda);
  limit_cmd->add_option("--sigma", limit.sigma)->required();
  limit_cmd->add_option("--bound-c", limit.bound_c)->capture_default_str();
  limit_cmd->add_option("--linex-m", limit.linex_m);
  limit_cmd->add_option("--sweep-lambda", limit.sweep, "LO:HI:STEPS");
  detail::add_output_flags(limit_cmd, common);

  GameArgs game;
  CLI::App* game_cmd = app.add_subcommand("game", "Double-oracle treatment game");
  game_cmd->add_option("--lambda", game.lambda)->required();
  game_cmd->add_option("--sigma", game.sigma)->capture_default_str();
  game_cmd->add_option("--budget", game.budget)->capture_default_str();
  game_cmd->add_option("--tol", game.tol)->capture_default_str();
  game_cmd->add_option("--max-iters", game.max_iters)->capture_default_str();
  game_cmd->add_option("--verify-tol", game.verify_tol)->capture_default_str();
  detail::add_output_flags(game_cmd, common);

  McArgs mc;
  CLI::App* mc_cmd = app.add_subcommand("mc", "Monte Carlo worst-case risk of plug-in rules");
  mc_cmd->add_option("--model", mc.model)->required()->check(CLI::IsMember({"bernoulli", "gaussian", "gmm"}));
  mc_cmd->add_option("--theta0", mc.theta0);
  mc_cmd->add_option("--noise-sd", mc.noise_sd)->capture_default_str();
  mc_cmd->add_option("--omega", mc.omega, "a,b,c,d row-major 2x2")->delimiter(',')->expected(4);
  mc_cmd->add_option("--loss", mc.loss)->required()->check(CLI::IsMember({"estimation", "treatment"}));
  mc_cmd->add_option("--lambda", mc.lambda)->required();
  mc_cmd->add_option("--bound-c", mc.bound_c)->capture_default_str();
  mc_cmd->add_option("--trunc-k", mc.trunc_k);
  mc_cmd->add_option("--n-list", mc.n_list)->required()->delimiter(',');
  mc_cmd->add_option("--reps", mc.reps)->capture_default_str();
  mc_cmd->add_option("--budget-m", mc.budget_m)->capture_default_str();
  mc_cmd->add_option("--grid", mc.grid)->capture_default_str();
  mc_cmd->add_option("--refine", mc.refine)->capture_default_str();
  mc_cmd->add_option("--rules", mc.rules)->delimiter(',');
  mc_cmd->add_option("--seed", mc.seed)->capture_default_str();
  mc_cmd->add_option("--threads", mc.threads, "Worker threads (0: all cores)");
  detail::add_output_flags(mc_cmd, common);

  ProfileArgs profile;
  CLI::App* profile_cmd = app.add_subcommand("profile", "Value profile over reference parameters");
  profile_cmd->add_option("--model", profile.model)->check(CLI::IsMember({"bernoulli"}));
  profile_cmd->add_option("--loss", profile.loss)->required()->check(CLI::IsMember({"estimation", "treatment"}));
  profile_cmd->add_option("--lambda", profile.lambda)->required();
  profile_cmd->add_option("--bound-c", profile.bound_c)->capture_default_str();
  profile_cmd->add_option("--theta-grid", profile.theta_grid, "LO:HI:STEPS")->required();
  profile_cmd->add_option("--mu-shift", profile.mu_shift)->capture_default_str();
  detail::add_output_flags(profile_cmd, common);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  const auto started = std::chrono::steady_clock::now();
  RunManifest manifest;
  Table table;
  int code = exit_ok;
  CLI::App* used = nullptr;
  try {
    if (limit_cmd->parsed()) {
      used = limit_cmd;
      table = cmd_limit(limit);
    } else if (game_cmd->parsed()) {
      used = game_cmd;
      if (!cmd_game(game, table)) {
        err << "error: " << to_string(ErrorKind::did_not_converge) << ": gap above --tol after "
            << game.max_iters << " iterations; last iterate written\n";
        code = exit_not_converged;
      }
    } else if (mc_cmd->parsed()) {
      used = mc_cmd;
      manifest.root_seed = mc.seed;
      table = cmd_mc(mc);
    } else {
      used = profile_cmd;
      table = cmd_profile(profile);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  }

  manifest.command = used->get_name();
  manifest.parameters = detail::given_parameters(used);
  manifest.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - started)
                              .count();
  const Format format = common.format == "json" ? Format::json : Format::csv;
  auto emit = [&](std::ostream& os) {
    if (format == Format::json) {
      write_json(os, manifest, table);
    } else {
      write_csv(os, manifest, table);
    }
  };
  if (common.out) {
    std::ofstream file(*common.out, std::ios::binary);
    if (!file) {
      err << "error: cannot open " << *common.out << " for writing\n";
      return exit_usage;
    }
    emit(file);
  } else {
    emit(out);
  }
  return code;
}

}  // namespace tiltrisk::cli
