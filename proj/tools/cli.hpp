#pragma once

// Command-line front-end. dispatch() is kept free of process state so tests
// can drive it directly.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sntf/sntf.hpp"

#ifndef SNTF_VERSION
#define SNTF_VERSION "0.0.0"
#endif

namespace sntf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Everything needed to reproduce a run. Contains no timestamps.
struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::map<std::string, std::string> flags;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string version = SNTF_VERSION;

  nlohmann::json to_json() const {
    return {{"tool", "sntf"},   {"version", version}, {"subcommand", subcommand}, {"argv", argv},
            {"flags", flags},   {"seed", seed},       {"inputs", inputs},         {"outputs", outputs}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.subcommand = j.at("subcommand").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.flags = j.value("flags", std::map<std::string, std::string>{});
    m.seed = j.value("seed", std::uint64_t{0});
    m.inputs = j.value("inputs", std::vector<std::string>{});
    m.outputs = j.value("outputs", std::vector<std::string>{});
    m.version = j.value("version", std::string{});
    return m;
  }
};

inline std::filesystem::path manifest_path(const std::filesystem::path& primary_output) {
  auto p = primary_output;
  p += ".manifest.json";
  return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, [&](std::ostream& out) { out << text; });
}

template <typename Fn>
void write_csv(const std::filesystem::path& path, Fn&& fn) {
  write_file_atomic(path, std::forward<Fn>(fn));
}

inline std::vector<double> linspace(double lo, double hi, int steps) {
  if (steps < 1) throw DataError("--steps must be at least 1");
  std::vector<double> v;
  for (int i = 0; i < steps; ++i) v.push_back(steps == 1 ? lo : lo + (hi - lo) * i / (steps - 1));
  return v;
}

/// Index list matching the model arity; a trailing value column is accepted.
inline SparseTensorData load_query_indices(const std::filesystem::path& path, std::size_t num_modes) {
  auto idx = load_index_list(path);
  if (idx.num_modes() == num_modes) return idx;
  if (idx.num_modes() == num_modes + 1) return load_tensor(path);
  throw DataError(path.string() + ": entries have " + std::to_string(idx.num_modes()) + " indices, model has " +
                  std::to_string(num_modes) + " modes");
}

inline void write_index_prefix(std::ostream& out, std::span<const std::uint32_t> idx) {
  for (auto v : idx) out << v << ',';
}

inline std::string index_header(std::size_t K) {
  std::string h;
  for (std::size_t k = 0; k < K; ++k) h += "i" + std::to_string(k + 1) + ",";
  return h;
}

struct Outputs {
  std::string primary;
  std::vector<std::string> all;
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;
};

inline int dispatch(const std::vector<std::string>& args, std::ostream& err = std::cerr);

namespace detail {

inline RunManifest collect_manifest(const CLI::App* sub, const std::vector<std::string>& args, const Outputs& o) {
  RunManifest m;
  m.subcommand = sub->get_name();
  m.argv = args;
  for (const auto* opt : sub->get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    const auto& res = opt->results();
    std::string v;
    if (res.empty()) {
      v = opt->get_default_str();
    } else {
      for (std::size_t i = 0; i < res.size(); ++i) v += (i ? "," : "") + res[i];
    }
    m.flags[name] = v;
  }
  m.seed = o.seed;
  m.inputs = o.inputs;
  m.outputs = o.all;
  return m;
}

}  // namespace detail

inline int dispatch(const std::vector<std::string>& args, std::ostream& err) {
  CLI::App app{"Sparse nonparametric tensor factorization", "sntf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SNTF_VERSION);
  unsigned threads = 1;
  Outputs out;

  // simulate
  auto* sim = app.add_subcommand("simulate", "sparsity curves of the sparse tensor process");
  int sim_r1 = 1, sim_k = 3, sim_steps = 15, sim_reps = 100, sim_max_atoms = 5000;
  std::vector<int> sim_r2{1};
  double sim_amin = 1.0, sim_amax = 15.0, sim_tol = 1e-12;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  sim->add_option("--r1", sim_r1, "number of location factors")->capture_default_str();
  sim->add_option("--r2", sim_r2, "number(s) of sociability factors, comma separated")
      ->delimiter(',')
      ->capture_default_str();
  sim->add_option("--k", sim_k, "number of modes")->capture_default_str();
  sim->add_option("--alpha-min", sim_amin)->capture_default_str();
  sim->add_option("--alpha-max", sim_amax)->capture_default_str();
  sim->add_option("--steps", sim_steps, "alpha grid points")->capture_default_str();
  sim->add_option("--reps", sim_reps, "replicates per grid point")->capture_default_str();
  sim->add_option("--truncation-tol", sim_tol)->capture_default_str();
  sim->add_option("--max-atoms", sim_max_atoms)->capture_default_str();
  sim->add_option("--seed", sim_seed)->capture_default_str();
  sim->add_option("--threads", threads)->capture_default_str();
  sim->add_option("--out", sim_out, "output CSV")->required();

  // simulate-dense
  auto* dense = app.add_subcommand("simulate-dense", "present-entry fraction of dense Bernoulli baselines");
  std::string dense_model = "both";
  std::vector<std::uint32_t> dense_sizes{10, 20, 30, 40, 50};
  int dense_k = 2, dense_rank = 3, dense_m = 100, dense_reps = 100;
  std::uint64_t dense_seed = 0;
  std::string dense_out;
  dense->add_option("--model", dense_model, "cp, gp-rff or both")
      ->check(CLI::IsMember({"cp", "gp-rff", "both"}))
      ->capture_default_str();
  dense->add_option("--sizes", dense_sizes, "per-mode sizes")->delimiter(',')->capture_default_str();
  dense->add_option("--k", dense_k, "number of modes")->capture_default_str();
  dense->add_option("--rank", dense_rank)->capture_default_str();
  dense->add_option("--m", dense_m, "random Fourier frequencies (gp-rff)")->capture_default_str();
  dense->add_option("--reps", dense_reps)->capture_default_str();
  dense->add_option("--seed", dense_seed)->capture_default_str();
  dense->add_option("--threads", threads)->capture_default_str();
  dense->add_option("--out", dense_out)->required();

  // split
  auto* split = app.add_subcommand("split", "random train/test split of an entry file");
  std::string split_data, split_train, split_test;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 0;
  split->add_option("--data", split_data)->required()->check(CLI::ExistingFile);
  split->add_option("--fraction", split_fraction, "training fraction")->capture_default_str();
  split->add_option("--seed", split_seed)->capture_default_str();
  split->add_option("--train-out", split_train)->required();
  split->add_option("--test-out", split_test)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "fit the model to an entry file");
  TrainConfig tc;
  std::string train_data, train_out, train_log, train_json;
  train_cmd->add_option("--data", train_data)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--r1", tc.r1)->capture_default_str();
  train_cmd->add_option("--r2", tc.r2)->capture_default_str();
  train_cmd->add_option("--m", tc.num_freqs, "random Fourier frequencies")->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", tc.batch_size)->capture_default_str();
  train_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
  train_cmd->add_option("--alpha", tc.alpha)->capture_default_str();
  train_cmd->add_option("--clip-norm", tc.clip_norm)->capture_default_str();
  train_cmd->add_option("--seed", tc.seed)->capture_default_str();
  train_cmd->add_option("--threads", threads)->capture_default_str();
  train_cmd->add_option("--out", train_out, "model file")->required();
  train_cmd->add_option("--log", train_log, "training-log CSV (default <out>.log.csv)");
  train_cmd->add_option("--export-json", train_json, "also dump parameters as JSON");

  // predict
  auto* pred = app.add_subcommand("predict", "predictive mean and variance of entry values");
  std::string pred_model, pred_idx, pred_out;
  pred->add_option("--model", pred_model)->required()->check(CLI::ExistingFile);
  pred->add_option("--indices", pred_idx)->required()->check(CLI::ExistingFile);
  pred->add_option("--out", pred_out)->required();

  // score-links
  auto* links = app.add_subcommand("score-links", "entry probabilities w_i for candidate links");
  std::string links_model, links_idx, links_out;
  links->add_option("--model", links_model)->required()->check(CLI::ExistingFile);
  links->add_option("--indices", links_idx)->required()->check(CLI::ExistingFile);
  links->add_option("--out", links_out)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "MSE/MAE on test values and AUC against sampled negatives");
  std::string ev_model, ev_test, ev_train, ev_out;
  std::size_t ev_ratio = 10;
  std::uint64_t ev_seed = 0;
  ev->add_option("--model", ev_model)->required()->check(CLI::ExistingFile);
  ev->add_option("--test", ev_test)->required()->check(CLI::ExistingFile);
  ev->add_option("--train", ev_train, "training entries, excluded from negatives")->check(CLI::ExistingFile);
  ev->add_option("--neg-ratio", ev_ratio)->capture_default_str();
  ev->add_option("--seed", ev_seed)->capture_default_str();
  ev->add_option("--out", ev_out)->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "validation sweep over (R1, R2) with fixed R1 + R2");
  TrainConfig sc;
  std::string sw_data, sw_out;
  int sw_total = 11;
  sw->add_option("--data", sw_data)->required()->check(CLI::ExistingFile);
  sw->add_option("--r-total", sw_total)->capture_default_str();
  sw->add_option("--m", sc.num_freqs)->capture_default_str();
  sw->add_option("--lr", sc.learning_rate)->capture_default_str();
  sw->add_option("--batch", sc.batch_size)->capture_default_str();
  sw->add_option("--epochs", sc.epochs)->capture_default_str();
  sw->add_option("--alpha", sc.alpha)->capture_default_str();
  sw->add_option("--seed", sc.seed)->capture_default_str();
  sw->add_option("--threads", threads)->capture_default_str();
  sw->add_option("--out", sw_out)->required();

  // export-factors
  auto* ex = app.add_subcommand("export-factors", "per-mode factor CSVs");
  std::string ex_model, ex_prefix;
  bool ex_pca = false;
  ex->add_option("--model", ex_model)->required()->check(CLI::ExistingFile);
  ex->add_option("--out-prefix", ex_prefix)->required();
  ex->add_flag("--pca", ex_pca, "append 2-D PCA coordinates of [theta; omega_tilde]");

  // replay
  auto* rep = app.add_subcommand("replay", "re-run a command from its manifest");
  std::string rep_manifest;
  rep->add_option("--manifest", rep_manifest)->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    err << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    err << SNTF_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == rep) {
      std::ifstream in(rep_manifest);
      const auto manifest = RunManifest::from_json(nlohmann::json::parse(in));
      return dispatch(manifest.argv, err);
    }

    if (active == sim) {
      StpConfig cfg;
      cfg.r1 = sim_r1;
      cfg.num_modes = sim_k;
      cfg.truncation_tol = sim_tol;
      cfg.max_atoms = sim_max_atoms;
      cfg.seed = sim_seed;
      const auto rows = run_sparsity_simulation(linspace(sim_amin, sim_amax, sim_steps), sim_r2, sim_reps, cfg, threads);
      write_csv(sim_out, [&](std::ostream& o) { write_simulation_csv(o, rows); });
      out = {sim_out, {sim_out}, {}, sim_seed};
    } else if (active == dense) {
      std::vector<DenseSimulationRow> rows;
      for (auto kind : {DenseModelKind::cp, DenseModelKind::gp_rff}) {
        if (dense_model != "both" && dense_model != to_string(kind)) continue;
        auto r = run_dense_simulation(kind, dense_sizes, dense_k, dense_rank, dense_m, dense_reps, dense_seed, threads);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      write_csv(dense_out, [&](std::ostream& o) { write_dense_csv(o, rows); });
      out = {dense_out, {dense_out}, {}, dense_seed};
    } else if (active == split) {
      const auto data = load_tensor(split_data);
      const auto parts = split_train_test(data, {split_fraction, split_seed});
      save_tensor(split_train, parts.train);
      save_tensor(split_test, parts.test);
      out = {split_train, {split_train, split_test}, {split_data}, split_seed};
    } else if (active == train_cmd) {
      const auto data = load_tensor(train_data);
      if (train_log.empty()) train_log = train_out + ".log.csv";
      out = {train_out, {train_out, train_log}, {train_data}, tc.seed};
      if (!train_json.empty()) out.all.push_back(train_json);
      TrainedModel model;
      try {
        model = train(data, tc);
      } catch (const TrainingError& e) {
        if (e.snapshot()) {
          const auto snap = train_out + ".last_good";
          save_model(snap, *e.snapshot(), "{}");
          err << "training failed: " << e.what() << " (last finite parameters in " << snap << ")\n";
        }
        throw;
      }
      const auto manifest = detail::collect_manifest(active, args, out);
      save_model(train_out, model, manifest.to_json().dump());
      write_csv(train_log, [&](std::ostream& o) { write_training_log(o, model.trace); });
      if (!train_json.empty()) write_text(train_json, model_to_json(model).dump(2) + "\n");
    } else if (active == pred || active == links) {
      const auto& model_path = active == pred ? pred_model : links_model;
      const auto& idx_path = active == pred ? pred_idx : links_idx;
      const auto& out_path = active == pred ? pred_out : links_out;
      const auto model = load_model(model_path).model;
      const auto K = model.nodes.num_modes();
      const auto queries = load_query_indices(idx_path, K);
      write_csv(out_path, [&](std::ostream& o) {
        o << std::setprecision(17);
        if (active == pred) {
          o << index_header(K) << "mean,variance,unseen\n";
          for (std::size_t n = 0; n < queries.size(); ++n) {
            const auto p = predict_value(model, queries.index(n));
            write_index_prefix(o, queries.index(n));
            o << p.mean << ',' << p.variance << ',' << (p.unseen ? 1 : 0) << '\n';
          }
        } else {
          std::vector<Index> cand;
          for (std::size_t n = 0; n < queries.size(); ++n) cand.emplace_back(queries.index(n).begin(), queries.index(n).end());
          const auto scores = link_scores(model, cand);
          o << index_header(K) << "score,unseen\n";
          for (std::size_t n = 0; n < cand.size(); ++n) {
            write_index_prefix(o, cand[n]);
            o << scores[n].score << ',' << (scores[n].unseen ? 1 : 0) << '\n';
          }
        }
      });
      out = {out_path, {out_path}, {model_path, idx_path}, 0};
    } else if (active == ev) {
      const auto model = load_model(ev_model).model;
      const auto test = load_tensor(ev_test);
      std::optional<SparseTensorData> train_data_opt;
      if (!ev_train.empty()) train_data_opt = load_tensor(ev_train);
      const auto report = evaluate(model, test, train_data_opt ? &*train_data_opt : nullptr, ev_ratio, ev_seed);
      write_csv(ev_out, [&](std::ostream& o) { write_eval_csv(o, report); });
      out = {ev_out, {ev_out}, {ev_model, ev_test}, ev_seed};
      if (!ev_train.empty()) out.inputs.push_back(ev_train);
    } else if (active == sw) {
      const auto data = load_tensor(sw_data);
      const auto res = sweep_r1_r2(data, sw_total, sc, sc.seed);
      write_csv(sw_out, [&](std::ostream& o) { write_sweep_csv(o, res.rows); });
      err << "best r1=" << res.best_r1 << " r2=" << res.best_r2 << '\n';
      out = {sw_out, {sw_out}, {sw_data}, sc.seed};
    } else if (active == ex) {
      const auto model = load_model(ex_model).model;
      const double alpha = model.config.alpha;
      for (std::size_t k = 0; k < model.params.modes.size(); ++k) {
        const auto& m = model.params.modes[k];
        const auto D = m.active_nodes();
        const auto R1 = m.r1(), R2 = m.r2();
        const Eigen::MatrixXd omega = m.log_omega().array().exp();
        Eigen::MatrixXd pca;
        if (ex_pca) {
          Eigen::MatrixXd feats(D, R1 + R2);
          for (Eigen::Index j = 0; j < D; ++j) {
            for (Eigen::Index c = 0; c < R1; ++c) feats(j, c) = m.theta(j, c, alpha);
            feats.row(j).tail(R2) = m.omega_tilde.col(j).transpose();
          }
          pca = pca_project(feats);
        }
        const auto path = ex_prefix + "_mode" + std::to_string(k + 1) + ".csv";
        write_csv(path, [&](std::ostream& o) {
          o << std::setprecision(17) << "node,original_id";
          for (Eigen::Index c = 0; c < R1; ++c) o << ",theta_" << c + 1;
          for (Eigen::Index r = 0; r < R2; ++r) o << ",omega_" << r + 1;
          for (Eigen::Index r = 0; r < R2; ++r) o << ",omega_tilde_" << r + 1;
          if (ex_pca) o << ",pca_1,pca_2";
          o << '\n';
          for (Eigen::Index j = 0; j < D; ++j) {
            o << j << ',' << model.nodes.to_original[k][static_cast<std::size_t>(j)];
            for (Eigen::Index c = 0; c < R1; ++c) o << ',' << m.theta(j, c, alpha);
            for (Eigen::Index r = 0; r < R2; ++r) o << ',' << omega(r, j);
            for (Eigen::Index r = 0; r < R2; ++r) o << ',' << m.omega_tilde(r, j);
            if (ex_pca) o << ',' << pca(j, 0) << ',' << pca(j, 1);
            o << '\n';
          }
        });
        out.all.push_back(path);
      }
      out.primary = ex_prefix;
      out.inputs = {ex_model};
    }

    const auto manifest = detail::collect_manifest(active, args, out);
    write_text(manifest_path(out.primary), manifest.to_json().dump(2) + "\n");
    return kOk;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const DomainError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: bad manifest: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace sntf::cli
