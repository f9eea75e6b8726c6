// ssn: command-line driver for training, post-hoc orthogonalization,
// decomposition, importance and the simulation experiments.
//
// Exit codes: 0 ok, 2 usage or config, 3 data or shape, 4 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ssn/config.hpp"
#include "ssn/experiments.hpp"
#include "ssn/pho.hpp"
#include "ssn/serialize.hpp"
#include "ssn/ssn.hpp"
#include "ssn/table.hpp"

namespace fs = std::filesystem;
using namespace ssn;

namespace {

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<long long> seed;
  std::optional<std::string> lambda;
  std::optional<int> threads;
  std::string pho_mode;
  std::string model;
  std::string pho;
  std::string data;
  std::string experiment;
};

RunConfig load_config(const Options& o, bool required) {
  if (o.config.empty()) {
    if (required) throw ConfigError("--config is required for this command");
    return RunConfig{};
  }
  auto cfg = RunConfig::load(o.config);
  if (o.seed) {
    cfg.set("train", "seed", std::to_string(*o.seed));
    cfg.set("experiment", "seed", std::to_string(*o.seed));
  }
  if (o.threads) cfg.set("experiment", "threads", std::to_string(*o.threads));
  if (o.lambda) cfg.set("pho", "lambda", *o.lambda);
  if (!o.pho_mode.empty()) cfg.set("pho", "mode", o.pho_mode);
  return cfg;
}

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out);
  return o.out;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write '" + p.string() + "'");
  return f;
}

DataTable load_data(const RunConfig& cfg, const std::string& override_path) {
  const fs::path p = override_path.empty() ? cfg.path("data", "path") : fs::path(override_path);
  return csv::read_file(p.string());
}

std::vector<std::string> z_columns(const RunConfig& cfg, const DataTable& data, const std::string& target) {
  auto cols = cfg.list("data", "z_columns");
  if (cols.empty()) {
    for (const auto& name : data.names())
      if (name != target && data.is_numeric(name)) cols.push_back(name);
  }
  for (const auto& c : cols) {
    if (!data.has(c)) throw ConfigError("data.z_columns: column '" + c + "' not found in data");
    if (!data.is_numeric(c)) throw DataError("data.z_columns: column '" + c + "' is not numeric");
  }
  if (cols.empty()) throw ConfigError("data.z_columns: no numeric feature columns available");
  return cols;
}

std::string model_path(const Options& o) { return o.model.empty() ? (fs::path(o.out) / "model.txt").string() : o.model; }
std::string pho_path(const Options& o) { return o.pho.empty() ? (fs::path(o.out) / "pho.txt").string() : o.pho; }

// ---------------------------------------------------------------------------

int cmd_train(const Options& o) {
  const auto cfg = load_config(o, true);
  const auto target = cfg.str("data", "target");
  const auto terms = parse_terms(cfg);
  const auto net = parse_net(cfg, NetSettings{{100, 50}, Activation::ReLU, 0.2, true, TrainConfig{}});
  const auto mode = parse_training_mode(cfg);
  const auto data = load_data(cfg, o.data);
  if (!data.has(target)) throw ConfigError("data.target: column '" + target + "' not found in data");
  const auto zcols = z_columns(cfg, data, target);
  const auto design = build_design(data, terms);
  const DenseMatrix Z = data.matrix(zcols);
  const DenseVector y = data.vector(target);

  auto model = make_ssn_model(design.layout, latent_config(net, Z.cols()), mode, net.train.seed);
  model.target = target;
  model.z_columns = zcols;
  const auto result = train_ssn(std::move(model), design.X, Z, y, net.train);

  const auto dir = out_dir(o);
  save_model((dir / "model.txt").string(), result.model);
  auto hist = open_out(dir / "history.csv");
  hist << "epoch,train_loss,val_loss\n";
  for (const auto& h : result.history)
    hist << h.epoch << ',' << csv::format(h.train_loss) << ',' << csv::format(h.val_loss) << '\n';
  std::cout << "trained " << to_string(mode) << " model: " << result.epochs_run << " epochs, best epoch "
            << result.best_epoch << '\n';
  return 0;
}

struct LoadedData {
  SSNModel model;
  StructuredDesign design;
  DenseMatrix Z;
  DataTable table;
};

LoadedData load_model_and_data(const Options& o, const RunConfig& cfg) {
  LoadedData d;
  d.model = load_model(model_path(o));
  d.table = load_data(cfg, o.data);
  d.design = evaluate_design(d.model.layout, d.table);
  for (const auto& c : d.model.z_columns)
    if (!d.table.has(c)) throw SchemaError("data lacks unstructured column '" + c + "' used by the model");
  d.Z = d.table.matrix(d.model.z_columns);
  if (d.design.X.cols() != d.model.p()) throw SchemaError("design columns do not match the model");
  return d;
}

int cmd_pho(const Options& o) {
  const auto cfg = load_config(o, true);
  const auto method = cfg.str("pho", "mode", "pho");
  if (method != "pho" && method != "phogam") throw ConfigError("pho.mode must be pho or phogam, got '" + method + "'");
  const auto lambda_text = cfg.str("pho", "lambda", "auto");
  const Lambda lambda = lambda_text == "auto" ? Lambda::automatic() : Lambda::fixed(cfg.real("pho", "lambda", 0.0));
  if (lambda.value && *lambda.value < 0.0) throw ConfigError("pho.lambda must be >= 0 or auto");
  const Index threshold = static_cast<Index>(cfg.integer("pho", "minibatch_threshold", 100000));
  const Index batch = static_cast<Index>(cfg.integer("pho", "batch_size", 1024));
  if (batch < 1) throw ConfigError("pho.batch_size must be positive");

  const auto d = load_model_and_data(o, cfg);
  PHOResult r;
  std::string path = "full";
  if (method == "phogam") {
    r = phogam_adjust(d.model, d.design, d.Z, lambda);
  } else if (d.design.rows() > threshold) {
    auto batches = MatrixBatches::uniform(d.design.X, d.Z, batch);
    r = pho_minibatch(d.model, batches, GramSolve::MinimumNorm);
    path = "minibatch";
  } else {
    r = pho_full(d.model, d.design.X, d.Z);
  }

  const auto dir = out_dir(o);
  auto pf = open_out(dir / "pho.txt");
  write_pho(pf, r, method);
  auto cf = open_out(dir / "contributions.csv");
  write_contributions(cf, r.eta_str, r.eta_unstr);
  save_model((dir / "model_pho.txt").string(), apply_pho(d.model, r));
  std::cout << method << " (" << path << "): ortho_residual " << csv::format(r.ortho_residual);
  if (r.lambda_used) std::cout << ", lambda " << csv::format(*r.lambda_used);
  if (r.has_intercept) std::cout << ", ev_structured " << csv::format(ev_structured(r));
  std::cout << '\n';
  return 0;
}

PHOResult load_pho_on(const Options& o, const LoadedData& d) {
  std::ifstream in(pho_path(o), std::ios::binary);
  if (!in) throw DataError("cannot open '" + pho_path(o) + "'");
  PHOResult r = read_pho(in);
  const auto c = decompose_out_of_sample(d.model, r, d.design.X, d.Z);
  r.eta_str = c.eta_str;
  r.eta_unstr = c.eta_unstr;
  r.has_intercept = d.model.layout.has_intercept;
  return r;
}

int cmd_decompose(const Options& o) {
  const auto cfg = load_config(o, true);
  const auto d = load_model_and_data(o, cfg);
  const auto r = load_pho_on(o, d);
  const auto dir = out_dir(o);
  auto f = open_out(dir / "decomposition.csv");
  write_contributions(f, r.eta_str, r.eta_unstr);
  std::cout << "decomposed " << d.design.rows() << " rows\n";
  return 0;
}

int cmd_importance(const Options& o) {
  const auto cfg = load_config(o, true);
  const auto d = load_model_and_data(o, cfg);
  if (d.model.target.empty() || !d.table.has(d.model.target))
    throw ConfigError("data.target: column '" + d.model.target + "' not found in data");
  const auto r = load_pho_on(o, d);
  const auto rep = importance(r, d.design, d.table.vector(d.model.target));
  const auto dir = out_dir(o);
  auto f = open_out(dir / "importance.csv");
  f << "measure,term,value\n";
  f << "ev_structured,," << csv::format(rep.ev_structured) << '\n';
  f << "ev_unstructured,," << csv::format(rep.ev_unstructured) << '\n';
  for (const auto& t : d.design.layout.terms)
    if (!t.spec.is_intercept()) f << "mcfadden_r2," << t.spec.name << ',' << csv::format(rep.r2_per_term.at(t.spec.name)) << '\n';
  std::cout << "ev_structured " << csv::format(rep.ev_structured) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

SimGrid sim_grid(const RunConfig& cfg, SimGrid g) {
  g.n_values = cfg.index_list("experiment", "n", g.n_values);
  g.p_values = cfg.index_list("experiment", "p", g.p_values);
  g.q_values = cfg.index_list("experiment", "q", g.q_values);
  g.overlap = cfg.flag("experiment", "overlap", g.overlap);
  g.noise_sd = cfg.real("experiment", "noise_sd", g.noise_sd);
  g.replicates = static_cast<int>(cfg.integer("experiment", "replicates", g.replicates));
  g.seed = static_cast<std::uint64_t>(cfg.integer("experiment", "seed", static_cast<long long>(g.seed)));
  g.threads = static_cast<int>(cfg.integer("experiment", "threads", g.threads));
  g.num_basis = static_cast<int>(cfg.integer("experiment", "num_basis", g.num_basis));
  g.net = parse_net(cfg, g.net);
  return g;
}

int cmd_experiment(const Options& o) {
  static const std::vector<std::string> names{"linear", "nonlinear", "error-rate", "convergence", "benchmark"};
  if (std::find(names.begin(), names.end(), o.experiment) == names.end())
    throw ConfigError("unknown experiment '" + o.experiment + "'");
  const auto cfg = load_config(o, false);
  std::vector<ExperimentReport> reports;
  if (o.experiment == "linear") {
    reports = run_linear_recovery(sim_grid(cfg, SimGrid{}));
  } else if (o.experiment == "nonlinear") {
    SimGrid g;
    g.p_values = {10};
    g.q_values = {10};
    reports = run_nonlinear_recovery(sim_grid(cfg, g));
  } else if (o.experiment == "convergence") {
    SimGrid g;
    g.n_values = {100, 1000};
    g.p_values = {1, 3, 10};
    g.q_values = {10};
    reports = run_convergence(sim_grid(cfg, g));
  } else if (o.experiment == "error-rate") {
    ErrorRateConfig e;
    e.n_values = cfg.index_list("experiment", "n", e.n_values);
    e.batch_sizes = cfg.index_list("experiment", "batch_sizes", e.batch_sizes);
    e.noise_sd = cfg.real("experiment", "noise_sd", e.noise_sd);
    e.replicates = static_cast<int>(cfg.integer("experiment", "replicates", e.replicates));
    e.seed = static_cast<std::uint64_t>(cfg.integer("experiment", "seed", static_cast<long long>(e.seed)));
    e.threads = static_cast<int>(cfg.integer("experiment", "threads", e.threads));
    e.net = parse_net(cfg, e.net);
    reports = run_prediction_error(e);
  } else {
    if (!cfg.has("experiment", "csv")) throw ConfigError("experiment.csv: benchmark needs a CSV path");
    BenchmarkConfig b;
    b.target = cfg.has("experiment", "target") ? cfg.str("experiment", "target") : cfg.str("data", "target", "");
    if (b.target.empty()) throw ConfigError("experiment.target: benchmark needs a target column");
    const auto data = csv::read_file(cfg.path("experiment", "csv").string());
    if (!data.has(b.target)) throw ConfigError("experiment.target: column '" + b.target + "' not found in data");
    if (cfg.entries("terms").empty()) {
      b.terms.push_back(TermSpec::intercept());
      for (const auto& name : data.names())
        if (name != b.target && data.is_numeric(name)) b.terms.push_back(TermSpec::linear(name));
    } else {
      b.terms = parse_terms(cfg);
    }
    b.z_columns = cfg.list("data", "z_columns");
    if (cfg.has("experiment", "methods")) b.methods = cfg.list("experiment", "methods");
    b.splits = static_cast<int>(cfg.integer("experiment", "splits", b.splits));
    b.test_fraction = cfg.real("experiment", "test_fraction", b.test_fraction);
    b.seed = static_cast<std::uint64_t>(cfg.integer("experiment", "seed", static_cast<long long>(b.seed)));
    b.threads = static_cast<int>(cfg.integer("experiment", "threads", b.threads));
    b.net = parse_net(cfg, b.net);
    reports = run_benchmark(data, b);
  }
  const auto dir = out_dir(o);
  const auto file = dir / (o.experiment + ".csv");
  auto f = open_out(file);
  write_reports(f, reports);
  std::cout << "wrote " << reports.size() << " reports to " << file.string() << '\n';
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SpecError*>(&e)) return 2;
  if (dynamic_cast<const SingularSystemError*>(&e) || dynamic_cast<const DegenerateError*>(&e)) return 4;
  if (dynamic_cast<const Error*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-structured networks with post-hoc orthogonalization"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI configuration file");
    sub->add_option("--out", o.out, "output directory (default: current directory)");
    sub->add_option("--seed", o.seed, "overrides train.seed and experiment.seed");
  };
  const auto model_io = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "model file (default: OUT/model.txt)");
    sub->add_option("--data", o.data, "data CSV (default: data.path)");
  };

  auto* train = app.add_subcommand("train", "train an SSN");
  common(train);
  train->add_option("--data", o.data, "data CSV (default: data.path)");

  auto* pho = app.add_subcommand("pho", "orthogonalize a trained model post hoc");
  common(pho);
  model_io(pho);
  pho->add_option("--mode", o.pho_mode, "pho or phogam")->check(CLI::IsMember({"pho", "phogam"}));
  pho->add_option("--lambda", o.lambda, "PHOGAM penalty weight or 'auto'");

  auto* dec = app.add_subcommand("decompose", "structured / unstructured contributions on a data set");
  common(dec);
  model_io(dec);
  dec->add_option("--pho", o.pho, "PHO result (default: OUT/pho.txt)");

  auto* imp = app.add_subcommand("importance", "explained variance and McFadden R2 per term");
  common(imp);
  model_io(imp);
  imp->add_option("--pho", o.pho, "PHO result (default: OUT/pho.txt)");

  auto* exp = app.add_subcommand("experiment", "run a simulation or benchmark experiment");
  common(exp);
  exp->add_option("name", o.experiment, "linear | nonlinear | error-rate | convergence | benchmark")->required();
  exp->add_option("--threads", o.threads, "worker threads for independent cells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(o);
    if (*pho) return cmd_pho(o);
    if (*dec) return cmd_decompose(o);
    if (*imp) return cmd_importance(o);
    if (*exp) return cmd_experiment(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 2;
}
