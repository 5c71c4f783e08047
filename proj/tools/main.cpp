// Command-line front end: synthetic workload generation, bound calibration,
// interval queries, runtime verification, plan search, and the coverage and
// shift experiments. Every run drops a manifest.json with the resolved
// configuration and input digests so reruns are reproducible bit for bit.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "planbound/adaptive.hpp"
#include "planbound/conformal.hpp"
#include "planbound/errors.hpp"
#include "planbound/harness.hpp"
#include "planbound/rng.hpp"
#include "planbound/search.hpp"
#include "planbound/simulator.hpp"
#include "planbound/stl.hpp"
#include "planbound/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using namespace planbound;

struct GlobalOpts {
  std::uint64_t seed = 42;
  std::string output_dir = ".";
  std::string format = "json";  // trace serialization: json (jsonl) or csv
};

// json values reject infinities; encode them as null so output stays valid.
ordered_json json_number(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

std::string digest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  char hex[32];
  std::snprintf(hex, sizeof hex, "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(buf.str())));
  return hex;
}

fs::path prepare_output_dir(const GlobalOpts& g) {
  fs::path dir(g.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + g.output_dir + "'");
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const GlobalOpts& g,
                    ordered_json config, const std::vector<std::string>& inputs) {
  ordered_json m;
  m["subcommand"] = subcommand;
  m["seed"] = g.seed;
  m["format"] = g.format;
  m["config"] = std::move(config);
  m["inputs"] = ordered_json::object();
  for (const auto& path : inputs) m["inputs"][path] = digest_file(path);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::map<Pattern, double> parse_bias_flags(const std::vector<std::string>& flags) {
  std::map<Pattern, double> bias;
  for (const auto& flag : flags) {
    const auto eq = flag.rfind('=');
    if (eq == std::string::npos)
      throw ConfigError("bias '" + flag + "' must look like HJ|SS|SS=2.0");
    const Pattern p = pattern_from_string(flag.substr(0, eq));
    double factor = 0.0;
    try {
      factor = std::stod(flag.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad bias factor in '" + flag + "'");
    }
    if (factor < 0.0) throw ConfigError("bias factor must be non-negative");
    bias[p] = factor;
  }
  return bias;
}

void check_delta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
}

// ---- gen ----------------------------------------------------------------

struct GenOpts {
  std::size_t queries = 100;
  std::size_t relations = 6;
  std::uint64_t card_min = 100;
  std::uint64_t card_max = 10000;
  std::string style = "random";
  double edge_prob = 0.25;
  double noise = 0.25;
  double query_noise = 0.0;
  std::vector<std::string> model_bias;
  std::vector<std::string> predictor_bias;
  std::size_t beam = 8;
  std::size_t n_complete = 5;
};

int cmd_gen(const GlobalOpts& g, const GenOpts& o) {
  if (o.queries == 0) throw ConfigError("need at least one query");
  if (o.beam == 0) throw ConfigError("beam size must be positive");
  if (o.noise < 0.0 || o.query_noise < 0.0) throw ConfigError("noise sigma must be non-negative");

  WorkloadRecipe recipe;
  recipe.schema.relation_count = o.relations;
  recipe.schema.card_min = o.card_min;
  recipe.schema.card_max = o.card_max;
  recipe.schema.style = join_graph_style_from_string(o.style);
  recipe.schema.edge_probability = o.edge_prob;
  recipe.model.noise_sigma = o.noise;
  recipe.model.query_noise_sigma = o.query_noise;
  recipe.model.pattern_bias = parse_bias_flags(o.model_bias);
  recipe.predictor_bias = parse_bias_flags(o.predictor_bias);
  recipe.search.beam_size = o.beam;
  recipe.search.n_complete = o.n_complete;
  recipe.query_count = o.queries;

  const fs::path dir = prepare_output_dir(g);
  const Workload w = simulate_workload(recipe, g.seed);
  const std::string trace_name = g.format == "csv" ? "traces.csv" : "traces.jsonl";
  save_workload(w, (dir / trace_name).string());

  ordered_json queries = ordered_json::array();
  for (const auto& q : generate_queries(recipe.schema, o.queries, derive_seed(g.seed, "queries")))
    queries.push_back(query_to_json(q));
  write_text(dir / "queries.json", queries.dump(2) + "\n");
  write_text(dir / "model.json", latency_model_to_json(recipe.model).dump(2) + "\n");

  ordered_json cfg;
  cfg["queries"] = o.queries;
  cfg["relations"] = o.relations;
  cfg["card_min"] = o.card_min;
  cfg["card_max"] = o.card_max;
  cfg["style"] = o.style;
  cfg["edge_prob"] = o.edge_prob;
  cfg["noise"] = o.noise;
  cfg["query_noise"] = o.query_noise;
  cfg["model_bias"] = o.model_bias;
  cfg["predictor_bias"] = o.predictor_bias;
  cfg["beam"] = o.beam;
  cfg["n_complete"] = o.n_complete;
  write_manifest(dir, "gen", g, std::move(cfg), {});

  ordered_json out;
  out["queries"] = w.traces.size();
  out["steps"] = w.total_steps();
  out["traces"] = (dir / trace_name).string();
  std::cout << out.dump() << "\n";
  return 0;
}

// ---- calibrate ----------------------------------------------------------

struct CalibrateOpts {
  std::string input;
  double delta = 0.1;
  std::string mode = "pattern";
  std::string out_name = "bounds.json";
};

int cmd_calibrate(const GlobalOpts& g, const CalibrateOpts& o) {
  check_delta(o.delta);
  const BoundMode mode = bound_mode_from_string(o.mode);
  const Workload w = load_workload(o.input);

  std::vector<StepRecord> steps;
  for (const auto& t : w.traces)
    for (const auto& s : t.steps) steps.push_back(s);

  ordered_json bounds_json;
  if (mode == BoundMode::PatternBased) {
    const BoundTable table = pattern_upper_bounds(steps, o.delta);
    bounds_json = bound_table_to_json(table);
  } else {
    const ScoreSet scores = nonconformity_scores(steps);
    bounds_json = unified_bound_to_json(quantile_upper_bound(scores, o.delta));
  }

  const fs::path dir = prepare_output_dir(g);
  write_text(dir / o.out_name, bounds_json.dump(2) + "\n");

  ordered_json cfg;
  cfg["input"] = o.input;
  cfg["delta"] = o.delta;
  cfg["mode"] = o.mode;
  cfg["out"] = o.out_name;
  write_manifest(dir, "calibrate", g, std::move(cfg), {o.input});

  std::cout << bounds_json.dump() << "\n";
  return 0;
}

// ---- bound --------------------------------------------------------------

struct BoundOpts {
  std::optional<double> c;
  std::string table;
  std::optional<double> cost;
  std::string pattern;
  std::string input;
};

std::string interval_text(const LatencyInterval& iv) {
  return "[" + format_double(iv.lower) + ", " + format_double(iv.upper) + "]";
}

int cmd_bound(const GlobalOpts&, const BoundOpts& o) {
  if (!o.c && o.table.empty())
    throw ConfigError("provide --c or --table");
  if (!o.cost && o.input.empty())
    throw ConfigError("provide --cost or --input");

  std::optional<BoundTable> table;
  std::optional<UpperBound> unified;
  if (!o.table.empty()) {
    std::ifstream in(o.table);
    if (!in) throw IoError("cannot open '" + o.table + "' for reading");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("malformed bound table json in '" + o.table + "'");
    }
    if (j.value("mode", "pattern") == "unified")
      unified = unified_bound_from_json(j);
    else
      table = bound_table_from_json(j);
  }

  auto bound_for = [&](const std::optional<Pattern>& pattern) -> UpperBound {
    if (o.c) {
      UpperBound b;
      b.value = *o.c;
      return b;
    }
    if (unified) return *unified;
    UpperBound b;
    b.mode = BoundMode::PatternBased;
    if (pattern) {
      auto it = table->entries.find(*pattern);
      if (it != table->entries.end()) return it->second;
    }
    b.value = table->fallback_max();
    return b;
  };

  if (o.cost) {
    std::optional<Pattern> pattern;
    if (!o.pattern.empty()) pattern = pattern_from_string(o.pattern);
    std::cout << interval_text(latency_interval(*o.cost, bound_for(pattern))) << "\n";
    return 0;
  }

  const Workload w = load_workload(o.input);
  for (const auto& t : w.traces)
    for (const auto& s : t.steps)
      std::cout << t.query_id << " " << s.step << " "
                << interval_text(latency_interval(s.predicted_cost, bound_for(s.pattern))) << "\n";
  return 0;
}

// ---- verify -------------------------------------------------------------

struct VerifyOpts {
  std::string input;
  std::string spec;
  double delta = 0.1;
  double fraction = 0.5;
};

int cmd_verify(const GlobalOpts& g, const VerifyOpts& o) {
  check_delta(o.delta);
  const StlSpec spec = parse_spec(o.spec);
  const Workload w = load_workload(o.input);

  ExperimentConfig cfg;
  cfg.delta = o.delta;
  cfg.calibration_fraction = o.fraction;
  cfg.seed = g.seed;
  const VerificationStats stats = runtime_verification_experiment(w, spec, o.delta, cfg);

  const fs::path dir = prepare_output_dir(g);
  {
    std::ostringstream csv;
    write_verification_csv(stats, csv);
    write_text(dir / "verification.csv", csv.str());
  }

  ordered_json cfg_json;
  cfg_json["input"] = o.input;
  cfg_json["spec"] = o.spec;
  cfg_json["delta"] = o.delta;
  cfg_json["fraction"] = o.fraction;
  write_manifest(dir, "verify", g, std::move(cfg_json), {o.input});

  ordered_json out;
  out["c"] = json_number(stats.c);
  out["calibration_scores"] = stats.calibration_scores;
  out["test_queries"] = stats.test_queries;
  out["covered_fraction"] = stats.covered_fraction;
  out["guaranteed_queries"] = stats.guaranteed_queries;
  out["guaranteed_satisfied_fraction"] = stats.guaranteed_satisfied_fraction;
  out["violations"] = stats.violations;
  std::cout << out.dump() << "\n";
  return 0;
}

// ---- search -------------------------------------------------------------

struct SearchOpts {
  std::string query_file;
  std::string mode = "vanilla";
  std::size_t beam = 8;
  std::size_t n_complete = 5;
  std::string table;
  std::string model_file;
  std::vector<std::string> predictor_bias;
};

int cmd_search(const GlobalOpts& g, const SearchOpts& o) {
  if (o.beam == 0) throw ConfigError("beam size must be positive");
  const SearchMode mode = search_mode_from_string(o.mode);

  std::ifstream qin(o.query_file);
  if (!qin) throw IoError("cannot open '" + o.query_file + "' for reading");
  nlohmann::json qj;
  try {
    qin >> qj;
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("malformed query json in '" + o.query_file + "'");
  }
  const QuerySpec query = query_from_json(qj);

  LatencyModel model;
  if (!o.model_file.empty()) {
    std::ifstream min(o.model_file);
    if (!min) throw IoError("cannot open '" + o.model_file + "' for reading");
    nlohmann::json mj;
    try {
      min >> mj;
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("malformed model json in '" + o.model_file + "'");
    }
    model = latency_model_from_json(mj);
  }

  const CostPredictor predictor = make_predictor(query, model, parse_bias_flags(o.predictor_bias));
  SearchConfig cfg;
  cfg.beam_size = o.beam;
  cfg.n_complete = o.n_complete;
  cfg.mode = mode;

  SearchResult result;
  std::vector<std::string> inputs{o.query_file};
  if (mode == SearchMode::CpGuided) {
    if (o.table.empty()) throw ConfigError("cp mode needs --table");
    std::ifstream tin(o.table);
    if (!tin) throw IoError("cannot open '" + o.table + "' for reading");
    nlohmann::json tj;
    try {
      tin >> tj;
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("malformed bound table json in '" + o.table + "'");
    }
    const BoundTable table = bound_table_from_json(tj);
    result = cp_guided_search(predictor, query, cfg, table);
    inputs.push_back(o.table);
  } else {
    result = beam_search(predictor, query, cfg);
  }
  if (!o.model_file.empty()) inputs.push_back(o.model_file);

  const std::uint64_t exec_seed = derive_seed(derive_seed(g.seed, "exec"), query.id);
  double total_true = 0.0;
  for (double lat : true_latency(*result.plan, query, model, exec_seed)) total_true += lat;

  const fs::path dir = prepare_output_dir(g);
  ordered_json cfg_json;
  cfg_json["query"] = o.query_file;
  cfg_json["mode"] = o.mode;
  cfg_json["beam"] = o.beam;
  cfg_json["n_complete"] = o.n_complete;
  cfg_json["table"] = o.table;
  cfg_json["model"] = o.model_file;
  cfg_json["predictor_bias"] = o.predictor_bias;
  write_manifest(dir, "search", g, std::move(cfg_json), inputs);

  ordered_json out;
  out["mode"] = o.mode;
  out["plan"] = plan_to_text(*result.plan);
  out["predicted_cost"] = result.predicted_cost;
  out["latency_ub"] = json_number(result.latency_ub);
  out["expansions"] = result.expansions;
  out["true_latency"] = total_true;
  std::cout << out.dump() << "\n";
  return 0;
}

// ---- coverage -----------------------------------------------------------

struct CoverageOpts {
  std::string input;
  std::size_t iterations = 1000;
  double delta = 0.1;
  double fraction = 0.5;
  std::string granularity = "unified";
  bool split = false;  // disjoint splits instead of with-replacement draws
};

int cmd_coverage(const GlobalOpts& g, const CoverageOpts& o) {
  check_delta(o.delta);
  const Workload w = load_workload(o.input);

  ExperimentConfig cfg;
  cfg.iterations = o.iterations;
  cfg.delta = o.delta;
  cfg.calibration_fraction = o.fraction;
  cfg.seed = g.seed;
  cfg.granularity = granularity_from_string(o.granularity);
  cfg.sample_with_replacement = !o.split;

  const CoverageResult result = run_sampling_experiment(w, cfg);
  const DensityCurve curve = kde_density_curve(result.ec);

  const fs::path dir = prepare_output_dir(g);
  {
    std::ostringstream csv;
    write_coverage_csv(result, csv);
    write_text(dir / "coverage.csv", csv.str());
  }
  {
    std::ostringstream csv;
    write_density_csv(curve, csv);
    write_text(dir / "density.csv", csv.str());
  }

  ordered_json cfg_json;
  cfg_json["input"] = o.input;
  cfg_json["iterations"] = o.iterations;
  cfg_json["delta"] = o.delta;
  cfg_json["fraction"] = o.fraction;
  cfg_json["granularity"] = o.granularity;
  cfg_json["with_replacement"] = !o.split;
  write_manifest(dir, "coverage", g, std::move(cfg_json), {o.input});

  ordered_json out;
  out["iterations"] = result.ec.size();
  out["mean_ec"] = result.mean_ec();
  out["peak"] = curve.peak();
  out["delta"] = o.delta;
  std::cout << out.dump() << "\n";
  return 0;
}

// ---- shift --------------------------------------------------------------

struct ShiftOpts {
  std::string cal;
  std::string test;
  double delta = 0.2;
  double epsilon = 0.1;
  std::size_t iterations = 200;
};

int cmd_shift(const GlobalOpts& g, const ShiftOpts& o) {
  check_delta(o.delta);
  if (!(o.epsilon >= 0.0 && o.epsilon < 1.0)) throw ConfigError("epsilon must lie in [0, 1)");
  const Workload cal = load_workload(o.cal);
  const Workload test = load_workload(o.test);

  ExperimentConfig cfg;
  cfg.iterations = o.iterations;
  cfg.delta = o.delta;
  cfg.seed = g.seed;
  const ShiftStats stats = shift_experiment(cal, test, o.delta, o.epsilon, cfg);

  const fs::path dir = prepare_output_dir(g);
  {
    std::ostringstream csv;
    write_shift_csv(stats, csv);
    write_text(dir / "shift.csv", csv.str());
  }

  ordered_json cfg_json;
  cfg_json["cal"] = o.cal;
  cfg_json["test"] = o.test;
  cfg_json["delta"] = o.delta;
  cfg_json["epsilon"] = o.epsilon;
  cfg_json["iterations"] = o.iterations;
  write_manifest(dir, "shift", g, std::move(cfg_json), {o.cal, o.test});

  ordered_json out;
  out["tv"] = stats.tv;
  out["epsilon"] = stats.epsilon;
  out["delta"] = stats.delta;
  out["delta_tilde"] = stats.delta_tilde;
  out["c"] = json_number(stats.c);
  out["c_tilde"] = json_number(stats.c_tilde);
  std::cout << out.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal latency bounds for learned query plans"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Master random seed");
  app.add_option("--output-dir", g.output_dir, "Directory for generated files");
  app.add_option("--format", g.format, "Trace serialization: json or csv")
      ->check(CLI::IsMember({"json", "csv"}));

  GenOpts gen;
  auto* cgen = app.add_subcommand("gen", "Generate a synthetic workload");
  cgen->add_option("--queries", gen.queries, "Number of queries");
  cgen->add_option("--relations", gen.relations, "Relations per query");
  cgen->add_option("--card-min", gen.card_min, "Minimum relation cardinality");
  cgen->add_option("--card-max", gen.card_max, "Maximum relation cardinality");
  cgen->add_option("--style", gen.style, "Join graph style: chain, star, random")
      ->check(CLI::IsMember({"chain", "star", "random"}));
  cgen->add_option("--edge-prob", gen.edge_prob, "Extra edge probability (random style)");
  cgen->add_option("--noise", gen.noise, "Per-step lognormal noise sigma");
  cgen->add_option("--query-noise", gen.query_noise, "Per-query shared noise sigma");
  cgen->add_option("--model-bias", gen.model_bias, "True latency bias, e.g. NL|SS|SS=3.0");
  cgen->add_option("--predictor-bias", gen.predictor_bias, "Predictor bias, e.g. NL|SS|SS=0.2");
  cgen->add_option("--beam", gen.beam, "Beam size of the generating planner");
  cgen->add_option("--n-complete", gen.n_complete, "Complete plans collected per search");

  CalibrateOpts cal;
  auto* ccal = app.add_subcommand("calibrate", "Calibrate score bounds from traces");
  ccal->add_option("--input", cal.input, "Trace file (.jsonl or .csv)")->required();
  ccal->add_option("--delta", cal.delta, "Miscoverage level");
  ccal->add_option("--mode", cal.mode, "unified or pattern")
      ->check(CLI::IsMember({"unified", "pattern"}));
  ccal->add_option("--out", cal.out_name, "Output file name");

  BoundOpts bnd;
  auto* cbnd = app.add_subcommand("bound", "Turn predictions into latency intervals");
  cbnd->add_option("--c", bnd.c, "Bound value to apply directly");
  cbnd->add_option("--table", bnd.table, "Calibrated bound table (bounds.json)");
  cbnd->add_option("--cost", bnd.cost, "Single predicted cost");
  cbnd->add_option("--pattern", bnd.pattern, "Join pattern for --cost, e.g. HJ|SS|SS");
  cbnd->add_option("--input", bnd.input, "Trace file; prints an interval per step");

  VerifyOpts ver;
  auto* cver = app.add_subcommand("verify", "Calibrated runtime verification experiment");
  cver->add_option("--input", ver.input, "Trace file")->required();
  cver->add_option("--spec", ver.spec, "Formula, e.g. 'G(x<1000)'")->required();
  cver->add_option("--delta", ver.delta, "Miscoverage level");
  cver->add_option("--fraction", ver.fraction, "Calibration fraction");

  SearchOpts sea;
  auto* csea = app.add_subcommand("search", "Plan one query by beam search");
  csea->add_option("--query", sea.query_file, "Query description (json)")->required();
  csea->add_option("--mode", sea.mode, "vanilla or cp")->check(CLI::IsMember({"vanilla", "cp"}));
  csea->add_option("--beam", sea.beam, "Beam size");
  csea->add_option("--n", sea.n_complete, "Complete plans to collect");
  csea->add_option("--table", sea.table, "Bound table for cp mode");
  csea->add_option("--model", sea.model_file, "Latency model (json)");
  csea->add_option("--predictor-bias", sea.predictor_bias, "Predictor bias, e.g. NL|SS|SS=0.2");

  CoverageOpts cov;
  auto* ccov = app.add_subcommand("coverage", "Repeated-split coverage experiment");
  ccov->add_option("--input", cov.input, "Trace file")->required();
  ccov->add_option("--iterations", cov.iterations, "Number of iterations");
  ccov->add_option("--delta", cov.delta, "Miscoverage level");
  ccov->add_option("--fraction", cov.fraction, "Calibration fraction");
  ccov->add_option("--granularity", cov.granularity, "unified, pattern, or whole_plan")
      ->check(CLI::IsMember({"unified", "pattern", "whole_plan"}));
  ccov->add_flag("--split", cov.split, "Use disjoint splits instead of resampling");

  ShiftOpts shf;
  auto* cshf = app.add_subcommand("shift", "Distribution-shift experiment");
  cshf->add_option("--cal", shf.cal, "Calibration trace file")->required();
  cshf->add_option("--test", shf.test, "Shifted trace file")->required();
  cshf->add_option("--delta", shf.delta, "Miscoverage level");
  cshf->add_option("--epsilon", shf.epsilon, "Assumed shift budget");
  cshf->add_option("--iterations", shf.iterations, "Coverage draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (cgen->parsed()) return cmd_gen(g, gen);
    if (ccal->parsed()) return cmd_calibrate(g, cal);
    if (cbnd->parsed()) return cmd_bound(g, bnd);
    if (cver->parsed()) return cmd_verify(g, ver);
    if (csea->parsed()) return cmd_search(g, sea);
    if (ccov->parsed()) return cmd_coverage(g, cov);
    if (cshf->parsed()) return cmd_shift(g, shf);
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
