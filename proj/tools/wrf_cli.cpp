#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "wrf/eval.hpp"
#include "wrf/forest.hpp"
#include "wrf/hte.hpp"
#include "wrf/matrix.hpp"
#include "wrf/measure.hpp"
#include "wrf/serialize.hpp"
#include "wrf/synth.hpp"

namespace {

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("WRF_THREADS")) {
    const std::string text(env);
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(text, &used);
    } catch (const std::exception&) {
      throw wrf::ValidationError("WRF_THREADS must be a positive integer");
    }
    if (used != text.size() || value < 1)
      throw wrf::ValidationError("WRF_THREADS must be a positive integer");
    return value;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

std::vector<double> parse_inline_vector(const std::string& text) {
  const wrf::Matrix row = wrf::matrix_from_csv(text);
  if (row.rows != 1)
    throw wrf::ValidationError("--x expects a single comma-separated vector");
  return row.data;
}

// Query batch from --x or --x-file, validated against the model's dimension.
wrf::Matrix load_queries(const std::string& inline_x, const std::string& x_file,
                         int dim_x) {
  wrf::Matrix queries;
  if (!inline_x.empty() && !x_file.empty())
    throw wrf::ValidationError("give either --x or --x-file, not both");
  if (!inline_x.empty()) {
    const std::vector<double> q = parse_inline_vector(inline_x);
    queries = wrf::Matrix(1, q.size());
    queries.data = q;
  } else if (!x_file.empty()) {
    queries = wrf::matrix_from_csv(wrf::read_text_file(x_file));
  } else {
    throw wrf::ValidationError("one of --x or --x-file is required");
  }
  if (queries.cols != static_cast<std::size_t>(dim_x))
    throw wrf::ValidationError("query has " + std::to_string(queries.cols) +
                               " coordinates, model expects " + std::to_string(dim_x));
  return queries;
}

struct TrainFlags {
  std::string data;
  std::string criterion = "intra";
  double p = 2.0;
  int trees = 100;
  int subsample = 0;
  bool replace = false;
  int mtry = 0;
  int nodesize = 2;
  std::uint64_t seed = 0;
  bool standardize = false;
  int threads = 0;
  std::string out;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "training CSV (x1..xd,y1[,y2],t)")->required();
  cmd->add_option("--criterion", f.criterion, "split criterion")
      ->check(CLI::IsMember({"intra", "inter"}))
      ->capture_default_str();
  cmd->add_option("--p", f.p, "Wasserstein order for --criterion inter")
      ->capture_default_str();
  cmd->add_option("--trees", f.trees, "number of trees M")->capture_default_str();
  cmd->add_option("--subsample", f.subsample, "per-tree subsample size a_n")
      ->required();
  cmd->add_flag("--replace", f.replace, "subsample with replacement");
  cmd->add_option("--mtry", f.mtry, "directions tried per split")->required();
  cmd->add_option("--nodesize", f.nodesize, "minimum cell size to keep splitting")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "RNG seed")->capture_default_str();
  cmd->add_flag("--standardize", f.standardize,
                "standardize responses for split scoring");
  cmd->add_option("--threads", f.threads,
                  "worker threads (default: WRF_THREADS or all cores)");
  cmd->add_option("--out", f.out, "output model JSON")->required();
}

wrf::ForestParams params_from_flags(const TrainFlags& f) {
  wrf::ForestParams params;
  params.m_trees = f.trees;
  params.subsample_size = f.subsample;
  params.with_replacement = f.replace;
  params.mtry = f.mtry;
  params.nodesize = f.nodesize;
  params.criterion =
      f.criterion == "intra" ? wrf::SplitRule::intra_l2 : wrf::SplitRule::inter_wp;
  params.p = f.p;
  params.seed = f.seed;
  params.standardize_response = f.standardize;
  return params;
}

wrf::json train_meta(const char* command, const TrainFlags& f) {
  wrf::json flags;
  flags["data"] = f.data;
  flags["criterion"] = f.criterion;
  flags["p"] = f.p;
  flags["trees"] = f.trees;
  flags["subsample"] = f.subsample;
  flags["replace"] = f.replace;
  flags["mtry"] = f.mtry;
  flags["nodesize"] = f.nodesize;
  flags["seed"] = f.seed;
  flags["standardize"] = f.standardize;
  flags["out"] = f.out;
  wrf::json meta;
  meta["command"] = command;
  meta["flags"] = std::move(flags);
  return meta;
}

void write_json(const std::string& path, wrf::json j, wrf::json meta,
                bool compact) {
  j["meta"] = std::move(meta);
  wrf::write_text_file_atomic(path, compact ? j.dump() + "\n" : j.dump(2) + "\n");
}

std::string method_label(const TrainFlags& f) {
  if (f.criterion == "intra") return "intra";
  return "inter@" + wrf::detail::format_double(f.p);
}

wrf::HTEModel load_hte_model(const std::string& path) {
  return wrf::hte_from_json(
      wrf::parse_json_text(wrf::read_text_file(path), "hte model"));
}

std::vector<std::string> split_list(const std::string& text, const char* what) {
  std::vector<std::string> items;
  std::string item;
  for (char c : text + ",") {
    if (c == ',') {
      if (!item.empty()) items.push_back(item);
      item.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      item.push_back(c);
    }
  }
  if (items.empty())
    throw wrf::ValidationError(std::string(what) + ": empty list");
  return items;
}

int parse_int(const std::string& token, const char* what) {
  std::size_t used = 0;
  int value = 0;
  try {
    value = std::stoi(token, &used);
  } catch (const std::exception&) {
    throw wrf::ValidationError(std::string(what) + ": cannot parse '" + token + "'");
  }
  if (used != token.size())
    throw wrf::ValidationError(std::string(what) + ": cannot parse '" + token + "'");
  return value;
}

double parse_real(const std::string& token, const char* what) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(token, &used);
  } catch (const std::exception&) {
    throw wrf::ValidationError(std::string(what) + ": cannot parse '" + token + "'");
  }
  if (used != token.size())
    throw wrf::ValidationError(std::string(what) + ": cannot parse '" + token + "'");
  return value;
}

struct EvalFlags {
  std::string scenario = "main";
  int n = 1000;
  int d = 50;
  std::uint64_t seed = 0;
  std::string methods = "intra,inter1,inter2,ert,mf";
  std::string arms = "0,1";
  std::string orders = "1,2";
  bool mse = false;
  int n_test = 200;
  int m_ref = 2000;
  std::uint64_t eval_seed = 1;
  std::string out;
  std::string csv;
};

void add_eval_flags(CLI::App* cmd, EvalFlags& e, TrainFlags& f) {
  cmd->add_option("--scenario", e.scenario, "scenario name")
      ->check(CLI::IsMember({"main", "multivariate_cost", "appendix_a", "appendix_c"}))
      ->capture_default_str();
  cmd->add_option("--n", e.n, "training sample size")->capture_default_str();
  cmd->add_option("--d", e.d, "covariate dimension")->capture_default_str();
  cmd->add_option("--seed", e.seed, "training draw seed")->capture_default_str();
  cmd->add_option("--methods", e.methods,
                  "comma list of intra|inter1|inter2|inter@P|ert|mf")
      ->capture_default_str();
  cmd->add_option("--arms", e.arms, "comma list of arms to evaluate")
      ->capture_default_str();
  cmd->add_option("--orders", e.orders, "comma list of Wasserstein orders")
      ->capture_default_str();
  cmd->add_flag("--mse", e.mse, "also track conditional-mean MSE");
  cmd->add_option("--n-test", e.n_test, "evaluation points")->capture_default_str();
  cmd->add_option("--m-ref", e.m_ref, "reference sample size")->capture_default_str();
  cmd->add_option("--eval-seed", e.eval_seed, "evaluation draw seed")
      ->capture_default_str();
  cmd->add_option("--out", e.out, "output report JSON")->required();
  cmd->add_option("--csv", e.csv, "optional flattened CSV path");

  cmd->add_option("--trees", f.trees, "number of trees M")->capture_default_str();
  cmd->add_option("--subsample", f.subsample, "per-tree subsample size a_n")
      ->required();
  cmd->add_flag("--replace", f.replace, "subsample with replacement");
  cmd->add_option("--mtry", f.mtry, "directions tried per split")->required();
  cmd->add_option("--nodesize", f.nodesize, "minimum cell size to keep splitting")
      ->capture_default_str();
  cmd->add_option("--forest-seed", f.seed, "forest RNG seed")->capture_default_str();
  cmd->add_flag("--standardize", f.standardize,
                "standardize responses for split scoring");
  cmd->add_option("--threads", f.threads,
                  "worker threads (default: WRF_THREADS or all cores)");
}

wrf::json eval_meta(const char* command, const EvalFlags& e, const TrainFlags& f) {
  wrf::json flags;
  flags["scenario"] = e.scenario;
  flags["n"] = e.n;
  flags["d"] = e.d;
  flags["seed"] = e.seed;
  flags["methods"] = e.methods;
  flags["arms"] = e.arms;
  flags["orders"] = e.orders;
  flags["mse"] = e.mse;
  flags["n_test"] = e.n_test;
  flags["m_ref"] = e.m_ref;
  flags["eval_seed"] = e.eval_seed;
  flags["trees"] = f.trees;
  flags["subsample"] = f.subsample;
  flags["replace"] = f.replace;
  flags["mtry"] = f.mtry;
  flags["nodesize"] = f.nodesize;
  flags["forest_seed"] = f.seed;
  flags["standardize"] = f.standardize;
  flags["out"] = e.out;
  if (!e.csv.empty()) flags["csv"] = e.csv;
  wrf::json meta;
  meta["command"] = command;
  meta["flags"] = std::move(flags);
  return meta;
}

wrf::ScenarioSpec spec_from_flags(const EvalFlags& e) {
  wrf::ScenarioSpec spec;
  spec.kind = wrf::scenario_from_string(e.scenario);
  spec.n = e.n;
  spec.d = e.d;
  spec.seed = e.seed;
  return spec;
}

std::vector<wrf::MethodSpec> methods_from_flags(const EvalFlags& e,
                                                const TrainFlags& f) {
  std::vector<wrf::MethodSpec> methods;
  for (const std::string& name : split_list(e.methods, "--methods"))
    methods.push_back(wrf::MethodSpec{name, params_from_flags(f)});
  return methods;
}

wrf::BenchConfig bench_config_from_flags(const EvalFlags& e, int threads) {
  wrf::BenchConfig cfg;
  for (const std::string& arm : split_list(e.arms, "--arms"))
    for (const std::string& order : split_list(e.orders, "--orders"))
      cfg.metrics.push_back(
          wrf::MetricRequest{parse_int(arm, "--arms"), parse_real(order, "--orders")});
  cfg.n_test = e.n_test;
  cfg.m_ref = e.m_ref;
  cfg.eval_seed = e.eval_seed;
  cfg.threads = threads;
  cfg.include_mse = e.mse;
  return cfg;
}

void write_report(const wrf::BenchReport& report, const wrf::json& meta,
                  const std::string& out, const std::string& csv) {
  wrf::json j = wrf::bench_report_to_json(report);
  j["meta"] = meta;
  wrf::write_text_file_atomic(out, j.dump(2) + "\n");
  if (!csv.empty()) wrf::write_text_file_atomic(csv, wrf::bench_report_to_csv(report));
}

struct QueryFlags {
  std::string model;
  std::string inline_x;
  std::string x_file;
  std::string out;
};

void add_query_flags(CLI::App* cmd, QueryFlags& q, bool batch_output) {
  cmd->add_option("--model", q.model, "model JSON path")->required();
  cmd->add_option("--x", q.inline_x, "inline query vector, comma separated");
  cmd->add_option("--x-file", q.x_file, "headerless CSV of query vectors");
  cmd->add_option("--out", q.out,
                  batch_output ? "output CSV" : "output measure JSON")
      ->required();
}

wrf::json query_meta(const char* command, const QueryFlags& q) {
  wrf::json flags;
  flags["model"] = q.model;
  if (!q.inline_x.empty()) flags["x"] = q.inline_x;
  if (!q.x_file.empty()) flags["x_file"] = q.x_file;
  flags["out"] = q.out;
  wrf::json meta;
  meta["command"] = command;
  meta["flags"] = std::move(flags);
  return meta;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wasserstein random forests: conditional distributions and "
               "heterogeneous treatment effects"};
  app.require_subcommand(1);

  // simulate
  struct {
    std::string scenario = "main";
    int n = 0;
    int d = 50;
    std::uint64_t seed = 0;
    std::string out;
  } sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "draw an observational dataset");
  c_sim->add_option("--scenario", sim.scenario, "scenario name")
      ->check(CLI::IsMember({"main", "multivariate_cost", "appendix_a", "appendix_c"}))
      ->capture_default_str();
  c_sim->add_option("--n", sim.n, "sample size")->required();
  c_sim->add_option("--d", sim.d, "covariate dimension")->capture_default_str();
  c_sim->add_option("--seed", sim.seed, "RNG seed")->capture_default_str();
  c_sim->add_option("--out", sim.out, "output CSV")->required();

  // train
  TrainFlags train;
  int train_arm = -1;
  CLI::App* c_train =
      app.add_subcommand("train", "fit one forest on a dataset (optionally one arm)");
  add_train_flags(c_train, train);
  c_train->add_option("--arm", train_arm, "restrict to assignment 0 or 1")
      ->check(CLI::Range(0, 1));

  // train-hte
  TrainFlags hte;
  CLI::App* c_hte =
      app.add_subcommand("train-hte", "fit control and treated forests");
  add_train_flags(c_hte, hte);

  // predict
  QueryFlags predict;
  int predict_arm = -1;
  CLI::App* c_predict =
      app.add_subcommand("predict", "conditional distribution at query points");
  add_query_flags(c_predict, predict, false);
  c_predict->add_option("--arm", predict_arm, "arm of an HTE model")
      ->check(CLI::Range(0, 1));

  // cate
  QueryFlags cate;
  CLI::App* c_cate = app.add_subcommand("cate", "estimated CATE at query points");
  add_query_flags(c_cate, cate, true);

  // lambda
  QueryFlags lambda;
  double lambda_p_order = 2.0;
  CLI::App* c_lambda =
      app.add_subcommand("lambda", "dispersion ratio at query points");
  add_query_flags(c_lambda, lambda, true);
  c_lambda->add_option("--p", lambda_p_order, "Wasserstein order")
      ->capture_default_str();

  // oob-lambda
  struct {
    std::string model;
    double p = 2.0;
    std::string out;
  } oob;
  CLI::App* c_oob = app.add_subcommand(
      "oob-lambda", "out-of-bag dispersion ratio over the training rows");
  c_oob->add_option("--model", oob.model, "HTE model JSON path")->required();
  c_oob->add_option("--p", oob.p, "Wasserstein order")->capture_default_str();
  c_oob->add_option("--out", oob.out, "output CSV (row,lambda)")->required();

  // bench
  EvalFlags bench;
  TrainFlags bench_train;
  CLI::App* c_bench =
      app.add_subcommand("bench", "train methods on one draw and score them");
  add_eval_flags(c_bench, bench, bench_train);

  // sweep
  EvalFlags sweep;
  TrainFlags sweep_train;
  std::string sweep_axis;
  std::string sweep_values;
  CLI::App* c_sweep =
      app.add_subcommand("sweep", "rerun the benchmark along one parameter axis");
  c_sweep->add_option("--axis", sweep_axis, "mtry|nodesize|subsample_size")
      ->required();
  c_sweep->add_option("--values", sweep_values, "comma list of axis values")
      ->required();
  add_eval_flags(c_sweep, sweep, sweep_train);

  try {
    app.parse(argc, argv);

    if (c_sim->parsed()) {
      wrf::ScenarioSpec spec;
      spec.kind = wrf::scenario_from_string(sim.scenario);
      spec.n = sim.n;
      spec.d = sim.d;
      spec.seed = sim.seed;
      const wrf::HTEDataset data = wrf::generate(spec);
      wrf::write_text_file_atomic(sim.out,
                                  wrf::dataset_to_csv(data.x, data.y_observed, data.t));
      std::cout << "wrote " << data.x.rows << " rows to " << sim.out << "\n";
    } else if (c_train->parsed()) {
      const wrf::LabeledData data =
          wrf::dataset_from_csv(wrf::read_text_file(train.data));
      wrf::Dataset ds;
      if (train_arm < 0) {
        ds.x = data.x;
        ds.y = data.y;
      } else {
        std::vector<int> rows;
        for (std::size_t i = 0; i < data.t.size(); ++i)
          if (data.t[i] == train_arm) rows.push_back(static_cast<int>(i));
        if (rows.empty())
          throw wrf::ValidationError("no rows with t = " + std::to_string(train_arm));
        ds.x = wrf::Matrix(rows.size(), data.x.cols);
        ds.y = wrf::Matrix(rows.size(), data.y.cols);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const std::size_t r = static_cast<std::size_t>(rows[i]);
          for (std::size_t k = 0; k < data.x.cols; ++k) ds.x(i, k) = data.x(r, k);
          for (std::size_t k = 0; k < data.y.cols; ++k) ds.y(i, k) = data.y(r, k);
        }
      }
      wrf::Forest forest =
          wrf::fit(ds, params_from_flags(train), resolve_threads(train.threads));
      forest.method = method_label(train);
      wrf::json meta = train_meta("train", train);
      if (train_arm >= 0) meta["flags"]["arm"] = train_arm;
      write_json(train.out, wrf::forest_to_json(forest), std::move(meta), true);
      std::cout << "trained " << forest.trees.size() << " trees on " << ds.n()
                << " rows; wrote " << train.out << "\n";
    } else if (c_hte->parsed()) {
      const wrf::LabeledData data =
          wrf::dataset_from_csv(wrf::read_text_file(hte.data));
      wrf::HTEDataset hd;
      hd.x = data.x;
      hd.y_observed = data.y;
      hd.t = data.t;
      wrf::ForestParams params0 = params_from_flags(hte);
      wrf::ForestParams params1 = params0;
      params1.seed = params0.seed + 1;
      wrf::HTEModel model =
          wrf::fit_hte(hd, params0, params1, resolve_threads(hte.threads));
      model.forest0.method = method_label(hte);
      model.forest1.method = method_label(hte);
      write_json(hte.out, wrf::hte_to_json(model), train_meta("train-hte", hte), true);
      std::cout << "trained arms of " << model.group0.size() << " and "
                << model.group1.size() << " rows; wrote " << hte.out << "\n";
    } else if (c_predict->parsed()) {
      const wrf::json mj =
          wrf::parse_json_text(wrf::read_text_file(predict.model), "model");
      wrf::json meta = query_meta("predict", predict);
      std::unique_ptr<wrf::Forest> forest;
      if (mj.contains("forest0")) {
        if (predict_arm < 0)
          throw wrf::ValidationError("--arm is required for an HTE model");
        const wrf::HTEModel model = wrf::hte_from_json(mj);
        forest = std::make_unique<wrf::Forest>(wrf::arm_forest(model, predict_arm));
        meta["flags"]["arm"] = predict_arm;
      } else {
        if (predict_arm >= 0)
          throw wrf::ValidationError("--arm only applies to HTE models");
        forest = std::make_unique<wrf::Forest>(wrf::forest_from_json(mj));
      }
      const wrf::Matrix queries =
          load_queries(predict.inline_x, predict.x_file, forest->dim_x);
      if (queries.rows == 1) {
        const wrf::DiscreteMeasure mu = wrf::predict_measure(*forest, queries.row(0));
        write_json(predict.out, wrf::measure_to_json(mu), std::move(meta), false);
      } else {
        wrf::json j;
        wrf::json measures = wrf::json::array();
        for (std::size_t i = 0; i < queries.rows; ++i)
          measures.push_back(
              wrf::measure_to_json(wrf::predict_measure(*forest, queries.row(i))));
        j["measures"] = std::move(measures);
        write_json(predict.out, std::move(j), std::move(meta), false);
      }
      std::cout << "predicted " << queries.rows << " measure(s); wrote "
                << predict.out << "\n";
    } else if (c_cate->parsed()) {
      const wrf::HTEModel model = load_hte_model(cate.model);
      const wrf::Matrix queries =
          load_queries(cate.inline_x, cate.x_file, model.forest0.dim_x);
      std::string csv = "row,cate\n";
      for (std::size_t i = 0; i < queries.rows; ++i) {
        csv += std::to_string(i);
        csv += ',';
        csv += wrf::detail::format_double(wrf::estimate_cate(model, queries.row(i)));
        csv += '\n';
      }
      wrf::write_text_file_atomic(cate.out, csv);
      std::cout << "wrote " << queries.rows << " CATE value(s) to " << cate.out
                << "\n";
    } else if (c_lambda->parsed()) {
      const wrf::HTEModel model = load_hte_model(lambda.model);
      const wrf::Matrix queries =
          load_queries(lambda.inline_x, lambda.x_file, model.forest0.dim_x);
      std::string csv = "row,lambda\n";
      for (std::size_t i = 0; i < queries.rows; ++i) {
        csv += std::to_string(i);
        csv += ',';
        csv += wrf::detail::format_double(
            wrf::lambda_p(model, queries.row(i), lambda_p_order));
        csv += '\n';
      }
      wrf::write_text_file_atomic(lambda.out, csv);
      std::cout << "wrote " << queries.rows << " lambda value(s) to " << lambda.out
                << "\n";
    } else if (c_oob->parsed()) {
      const wrf::HTEModel model = load_hte_model(oob.model);
      const wrf::OOBLambdaResult result = wrf::oob_lambda(model, oob.p);
      std::string csv = "row,lambda\n";
      for (const auto& entry : result.values) {
        csv += std::to_string(entry.row);
        csv += ',';
        csv += wrf::detail::format_double(entry.lambda);
        csv += '\n';
      }
      wrf::write_text_file_atomic(oob.out, csv);
      std::cout << "wrote " << result.values.size() << " out-of-bag lambda value(s) to "
                << oob.out << "; skipped " << result.skipped.size()
                << " row(s) with no out-of-bag tree\n";
    } else if (c_bench->parsed()) {
      const wrf::BenchReport report =
          wrf::run_benchmark(methods_from_flags(bench, bench_train),
                             spec_from_flags(bench),
                             bench_config_from_flags(
                                 bench, resolve_threads(bench_train.threads)));
      write_report(report, eval_meta("bench", bench, bench_train), bench.out,
                   bench.csv);
      std::cout << "wrote " << report.cells.size() << " cell(s) to " << bench.out
                << "\n";
    } else if (c_sweep->parsed()) {
      std::vector<int> values;
      for (const std::string& token : split_list(sweep_values, "--values"))
        values.push_back(parse_int(token, "--values"));
      const wrf::BenchReport report = wrf::param_sweep(
          wrf::sweep_axis_from_string(sweep_axis), values,
          methods_from_flags(sweep, sweep_train), spec_from_flags(sweep),
          bench_config_from_flags(sweep, resolve_threads(sweep_train.threads)));
      wrf::json meta = eval_meta("sweep", sweep, sweep_train);
      meta["flags"]["axis"] = sweep_axis;
      meta["flags"]["values"] = sweep_values;
      write_report(report, meta, sweep.out, sweep.csv);
      std::cout << "wrote " << report.sweeps.size() << " sweep row(s) to " << sweep.out
                << "\n";
    }
    return 0;
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    app.exit(err);
    return 1;
  } catch (const wrf::ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const wrf::InternalError& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return 3;
  }
}
