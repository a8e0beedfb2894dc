// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line entry point: aggregate, split, record, synth, extract, select,
// eval, sweep, cosine, report and choose-alpha.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "steerlab/annotation.hpp"
#include "steerlab/config.hpp"
#include "steerlab/container.hpp"
#include "steerlab/csv.hpp"
#include "steerlab/dataset.hpp"
#include "steerlab/direction_file.hpp"
#include "steerlab/error.hpp"
#include "steerlab/evaluation.hpp"
#include "steerlab/io.hpp"
#include "steerlab/parallel.hpp"
#include "steerlab/selection.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/synthetic.hpp"
#include "steerlab/toy_model.hpp"

namespace steerlab::cli {

namespace detail {

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      if constexpr (std::is_integral_v<T>) {
        out.push_back(static_cast<T>(std::stol(item, &used)));
      } else {
        out.push_back(static_cast<T>(std::stod(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      raise(ErrorKind::kInput, std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) raise(ErrorKind::kInput, std::string(what) + " list is empty");
  return out;
}

inline bool given(const CLI::Option* opt) { return opt && opt->count() > 0; }

struct Ids {
  std::vector<std::string> oh, eh, nh;
};

inline Ids ids_for_split(const std::vector<SampleRecord>& records, Split split) {
  Ids ids;
  for (const auto& r : records) {
    if (r.split != split) continue;
    if (r.verifiability == Verifiability::kObvious) ids.oh.push_back(r.sample_id);
    if (r.verifiability == Verifiability::kElusive) ids.eh.push_back(r.sample_id);
    if (r.verifiability == Verifiability::kNonHallucinated) ids.nh.push_back(r.sample_id);
  }
  return ids;
}

inline std::vector<SampleRecord> samples_of(const std::vector<SampleRecord>& records, Verifiability v, Split split) {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.verifiability == v && r.split == split) out.push_back(r);
  }
  return out;
}

inline std::vector<NamedSubset> eval_subsets(const std::vector<SampleRecord>& records, Split split) {
  const std::string suffix = "_" + std::string(to_string(split));
  return {{"obvious" + suffix, samples_of(records, Verifiability::kObvious, split)},
          {"elusive" + suffix, samples_of(records, Verifiability::kElusive, split)},
          {"non_hallucinated" + suffix, samples_of(records, Verifiability::kNonHallucinated, split)}};
}

inline DirType parse_type(const std::string& s) {
  if (s == "oh") return DirType::kOh;
  if (s == "eh") return DirType::kEh;
  raise(ErrorKind::kInput, "--type must be oh or eh");
}

inline Split parse_split_flag(const std::string& s) {
  auto split = parse_split(s);
  if (!split || *split == Split::kUnassigned) raise(ErrorKind::kInput, "--split must be train, val or test");
  return *split;
}

}  // namespace detail

inline std::string usage() {
  return "usage: steerlab [--config PATH] [--seed N] [--threads N] [--quiet] <subcommand> [options]\n"
         "subcommands: aggregate split record synth extract select eval sweep cosine report choose-alpha\n";
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Activation steering toolkit: annotation aggregation, direction extraction, selection and "
               "logit-based evaluation on a deterministic toy transformer."};
  app.name("steerlab");
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool quiet = false;
  auto* config_opt = app.add_option("--config", config_path, "JSON run configuration");
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed for split and synth");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads (env STEERLAB_THREADS)");
  app.add_flag("--quiet", quiet, "suppress the summary line");

  // Options shared by several subcommands are bound to these.
  std::string in, out_path, dataset, acts, grid_path, dir, dir_oh, dir_eh, type = "oh", offsets_text, mode;
  std::string alphas_text, lambdas_text, split_text, subset, table_path;
  std::vector<std::string> score_files;
  double alpha = 1.0, obvious_min = 0.8, elusive_max = 0.4, borderline_rt = 12.0;
  double layer_frac = 0.9, kl_max = 0.1, dacc_max = 0.1, delta = 1.0, sigma = 0.1, plateau = 0.005;
  std::uint64_t model_seed = 0;
  int d_model = 64, n = 200, offset = -1, num_layers = 0;

  std::map<std::string, CLI::Option*> opt;
  auto* aggregate = app.add_subcommand("aggregate", "cap response times and assign verifiability classes");
  aggregate->add_option("--in", in)->required();
  aggregate->add_option("--out", out_path)->required();
  opt["obvious-min"] = aggregate->add_option("--obvious-min", obvious_min);
  opt["elusive-max"] = aggregate->add_option("--elusive-max", elusive_max);
  opt["borderline-rt"] = aggregate->add_option("--borderline-rt", borderline_rt);

  auto* split = app.add_subcommand("split", "stratified 55/20/25 split per subset");
  split->add_option("--in", in)->required();
  split->add_option("--out", out_path)->required();

  auto* record = app.add_subcommand("record", "record pre-attention residuals of the toy model");
  opt["model-seed"] = record->add_option("--model-seed", model_seed);
  record->add_option("--dataset", dataset)->required();
  opt["offsets"] = record->add_option("--offsets", offsets_text);
  record->add_option("--out", out_path)->required();

  auto* synth = app.add_subcommand("synth", "generate planted-direction synthetic activations");
  synth->add_option("--d-model", d_model);
  synth->add_option("--delta", delta);
  synth->add_option("--sigma", sigma);
  synth->add_option("--n", n);
  synth->add_option("--out", out_path)->required();

  auto* extract = app.add_subcommand("extract", "difference-in-means candidate grid");
  extract->add_option("--acts", acts)->required();
  extract->add_option("--dataset", dataset)->required();
  extract->add_option("--type", type);
  extract->add_option("--out", out_path)->required();

  auto* select = app.add_subcommand("select", "score candidates on validation data and select one");
  select->add_option("--grid", grid_path)->required();
  select->add_option("--acts", acts);
  select->add_option("--dataset", dataset)->required();
  select->add_option("--type", type);
  opt["layer-frac"] = select->add_option("--layer-frac", layer_frac);
  opt["kl-max"] = select->add_option("--kl-max", kl_max);
  opt["dacc-max"] = select->add_option("--dacc-max", dacc_max);
  opt["select-model-seed"] = select->add_option("--model-seed", model_seed);
  select->add_option("--table", table_path, "score table CSV (default <out>.scores.csv)");
  select->add_option("--out", out_path)->required();

  auto* eval = app.add_subcommand("eval", "baseline vs intervention report");
  eval->add_option("--dir", dir)->required();
  opt["alpha"] = eval->add_option("--alpha", alpha);
  eval->add_option("--dataset", dataset)->required();
  eval->add_option("--split", split_text);
  opt["eval-model-seed"] = eval->add_option("--model-seed", model_seed);
  eval->add_option("--out", out_path)->required();

  auto* sweep = app.add_subcommand("sweep", "alpha, lambda or layer sweep");
  sweep->add_option("--mode", mode)->required()->check(CLI::IsMember({"alpha", "lambda", "layer"}));
  sweep->add_option("--dir", dir);
  sweep->add_option("--dir-oh", dir_oh);
  sweep->add_option("--dir-eh", dir_eh);
  opt["alphas"] = sweep->add_option("--alphas", alphas_text);
  opt["lambdas"] = sweep->add_option("--lambdas", lambdas_text);
  opt["sweep-alpha"] = sweep->add_option("--alpha", alpha);
  sweep->add_option("--acts", acts);
  sweep->add_option("--type", type);
  sweep->add_option("--dataset", dataset)->required();
  sweep->add_option("--split", split_text);
  opt["sweep-model-seed"] = sweep->add_option("--model-seed", model_seed);
  sweep->add_option("--out", out_path)->required();

  auto* cosine = app.add_subcommand("cosine", "layer-wise cosine between obvious and elusive directions");
  cosine->add_option("--acts", acts)->required();
  cosine->add_option("--dataset", dataset)->required();
  cosine->add_option("--offset", offset);
  cosine->add_option("--out", out_path)->required();

  auto* report = app.add_subcommand("report", "check score tables against the selection constraints");
  report->add_option("--scores", score_files)->required();
  report->add_option("--layers", num_layers)->required();
  report->add_option("--out", out_path)->required();

  auto* choose = app.add_subcommand("choose-alpha", "pick a coefficient from an alpha sweep");
  choose->add_option("--sweep", in)->required();
  choose->add_option("--subset", subset)->required();
  opt["plateau"] = choose->add_option("--plateau", plateau);
  choose->add_option("--out", out_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  if (app.get_subcommands().empty()) {
    err << usage();
    return 2;
  }
  auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();

  try {
    RunConfig cfg = detail::given(config_opt) ? load_config(config_path) : RunConfig{};
    if (detail::given(seed_opt)) cfg.seed = seed;
    if (detail::given(threads_opt)) {
      cfg.threads = threads;
    } else if (cfg.threads == 1) {
      cfg.threads = threads_from_env();
    }
    if (detail::given(opt["model-seed"]) || detail::given(opt["select-model-seed"]) ||
        detail::given(opt["eval-model-seed"]) || detail::given(opt["sweep-model-seed"])) {
      cfg.model.seed = model_seed;
    }
    if (detail::given(opt["obvious-min"])) cfg.rule.obvious_min_rate = obvious_min;
    if (detail::given(opt["elusive-max"])) cfg.rule.elusive_max_rate = elusive_max;
    if (detail::given(opt["borderline-rt"])) cfg.rule.borderline_median_rt_s = borderline_rt;
    if (detail::given(opt["offsets"])) cfg.offsets = detail::parse_list<int>(offsets_text, "offsets");
    if (detail::given(opt["layer-frac"])) cfg.selection.layer_fraction_max = layer_frac;
    if (detail::given(opt["kl-max"])) cfg.selection.kl_max = kl_max;
    if (detail::given(opt["dacc-max"])) cfg.selection.delta_acc_nh_max = dacc_max;
    if (detail::given(opt["alphas"])) cfg.alphas = detail::parse_list<double>(alphas_text, "alphas");
    if (detail::given(opt["lambdas"])) cfg.lambdas = detail::parse_list<double>(lambdas_text, "lambdas");
    if (detail::given(opt["plateau"])) cfg.plateau_threshold = plateau;
    cfg.selection.threads = cfg.threads;

    auto path_or = [&](const std::string& flag, const char* key) {
      if (!flag.empty()) return flag;
      if (auto it = cfg.paths.find(key); it != cfg.paths.end()) return it->second;
      raise(ErrorKind::kInput, std::string("missing path for ") + key);
    };

    auto write_meta = [&](const std::filesystem::path& target) {
      nlohmann::ordered_json meta;
      meta["command"] = command;
      meta["config"] = to_json(cfg);
      auto p = target;
      p += ".meta.json";
      io::write_file_atomic(p, meta.dump(2) + "\n");
    };
    auto summary = [&](const std::string& line) {
      if (!quiet) out << command << ": " << line << "\n";
    };

    if (command == "aggregate") {
      auto records = aggregate_records(read_dataset(in, DatasetMode::kRaw), cfg.rule);
      write_dataset(records, out_path);
      std::map<Verifiability, std::size_t> counts;
      for (const auto& r : records) ++counts[r.verifiability];
      summary(std::to_string(records.size()) + " records: " + std::to_string(counts[Verifiability::kNonHallucinated]) +
              " non_hallucinated, " + std::to_string(counts[Verifiability::kObvious]) + " obvious, " +
              std::to_string(counts[Verifiability::kElusive]) + " elusive, " +
              std::to_string(counts[Verifiability::kNeutral]) + " neutral");
      return 0;
    }
    if (command == "split") {
      auto records = split_dataset(read_dataset(in), cfg.seed);
      write_dataset(records, out_path);
      std::size_t tr = 0, va = 0, te = 0;
      for (const auto& r : records) {
        tr += r.split == Split::kTrain;
        va += r.split == Split::kVal;
        te += r.split == Split::kTest;
      }
      summary("seed " + std::to_string(cfg.seed) + ": " + std::to_string(tr) + " train, " + std::to_string(va) +
              " val, " + std::to_string(te) + " test");
      return 0;
    }
    if (command == "record") {
      const auto model = build_model(cfg);
      std::vector<SampleRecord> usable;
      for (auto& r : read_dataset(dataset)) {
        if (r.verifiability != Verifiability::kNeutral && r.verifiability != Verifiability::kUnassigned) {
          usable.push_back(std::move(r));
        }
      }
      const auto container = record_activations(model, usable, cfg.offsets, cfg.threads);
      const auto bytes = write_activation_container(container, out_path);
      write_meta(out_path);
      summary(std::to_string(container.size()) + " records, " + std::to_string(bytes) + " bytes");
      return 0;
    }
    if (command == "synth") {
      SyntheticSpec spec;
      spec.d_model = d_model;
      spec.planted_direction = random_unit_vector(d_model, Rng::splitmix64(cfg.seed) ^ 0x5eedULL);
      spec.shift_magnitude = delta;
      spec.noise_sigma = sigma;
      spec.samples_per_class = n;
      spec.seed = cfg.seed;
      const auto set = generate_synthetic(spec);
      const auto bytes = write_activation_container(set.container, out_path);

      std::vector<SampleRecord> labels;
      for (const auto& id : set.hallucinated_ids) {
        SampleRecord r{id, "synthetic", "synthetic hallucinated", true, Verifiability::kObvious, Split::kTrain,
                       std::vector<AnnotationResponse>(kAnnotatorsPerSample, AnnotationResponse{true, 1.0})};
        labels.push_back(std::move(r));
      }
      for (const auto& id : set.nh_ids) {
        labels.push_back({id, "synthetic", "synthetic control", false, Verifiability::kNonHallucinated, Split::kTrain,
                          {}});
      }
      std::sort(labels.begin(), labels.end(),
                [](const SampleRecord& a, const SampleRecord& b) { return a.sample_id < b.sample_id; });
      auto labels_path = std::filesystem::path(out_path);
      labels_path += ".labels.jsonl";
      write_dataset(labels, labels_path);

      Direction planted{DirType::kOh, 0, -1, spec.planted_direction, true, 1.0, std::nullopt};
      auto planted_path = std::filesystem::path(out_path);
      planted_path += ".planted.dirs";
      write_direction_set({set.container.geometry(), {planted}, 0}, planted_path);
      write_meta(out_path);
      summary(std::to_string(set.container.size()) + " records, " + std::to_string(bytes) + " bytes");
      return 0;
    }
    if (command == "extract") {
      const auto container = read_activation_container(acts);
      const auto records = read_dataset(dataset);
      const auto ids = detail::ids_for_split(records, Split::kTrain);
      const auto dir_type = detail::parse_type(type);
      const auto& type_ids = dir_type == DirType::kOh ? ids.oh : ids.eh;
      const auto grid = build_candidate_grid(container, type_ids, ids.nh, container.geometry(), dir_type, cfg.threads);
      write_direction_set({grid.geometry, grid.directions, std::nullopt}, out_path);
      write_meta(out_path);
      summary(std::to_string(grid.directions.size()) + " " + type + " candidates from " +
              std::to_string(type_ids.size()) + " vs " + std::to_string(ids.nh.size()) + " train samples");
      return 0;
    }
    if (command == "select") {
      const auto grid_set = read_direction_set(grid_path);
      if (!acts.empty()) {
        const auto container = read_activation_container(acts);
        if (container.geometry().d_model != grid_set.geometry.d_model ||
            container.geometry().num_layers != grid_set.geometry.num_layers) {
          raise(ErrorKind::kValidation, "grid geometry does not match the activation container");
        }
      }
      const auto model = build_model(cfg);
      const auto records = read_dataset(dataset);
      const auto dir_type = detail::parse_type(type);
      const auto val_h =
          detail::samples_of(records, dir_type == DirType::kOh ? Verifiability::kObvious : Verifiability::kElusive,
                             Split::kVal);
      const auto val_nh = detail::samples_of(records, Verifiability::kNonHallucinated, Split::kVal);
      CandidateGrid grid{dir_type, grid_set.geometry, grid_set.directions};
      const auto result = select_direction(grid, model, val_h, val_nh, cfg.selection);
      write_direction_set({grid_set.geometry, {result.selected}, 0}, out_path);
      const std::string table = table_path.empty() ? out_path + ".scores.csv" : table_path;
      const auto rows = score_rows(result);
      emit_report(encode_score_table(rows), table);
      write_meta(out_path);
      write_meta(table);
      const auto& s = *result.selected.scores;
      summary("selected " + describe(result.selected) + " hr_h_score " + csv::number(s.hr_h_score) + " kl " +
              csv::number(s.kl_score) + " dacc " + csv::number(s.delta_acc_nh) +
              (result.fallback ? " (fallback)" : ""));
      return 0;
    }
    if (command == "eval") {
      const auto set = read_direction_set(dir);
      const auto& direction = set.chosen();
      if (!detail::given(opt["alpha"])) alpha = direction.dir_type == DirType::kEh ? cfg.alpha_eh : cfg.alpha_oh;
      cfg.alphas = {alpha};
      const auto model = build_model(cfg);
      const auto records = read_dataset(dataset);
      const auto subsets = detail::eval_subsets(records, split_text.empty() ? Split::kTest
                                                                           : detail::parse_split_flag(split_text));
      auto rep = delta_report(model, subsets, make_ablation_hook(direction, alpha), {}, cfg.threads);
      emit_report(encode_report(rep), out_path);
      write_meta(out_path);
      std::string line = describe(direction) + " alpha " + csv::number(alpha);
      for (const auto& s : rep.subsets) line += " " + s.name + " dHR " + csv::number(s.delta.hr);
      summary(line);
      return 0;
    }
    if (command == "sweep") {
      const auto model = build_model(cfg);
      const auto records = read_dataset(dataset);
      const Split which = split_text.empty() ? Split::kTest : detail::parse_split_flag(split_text);
      const auto subsets = detail::eval_subsets(records, which);
      if (mode == "alpha") {
        const auto set = read_direction_set(path_or(dir, "dir"));
        const auto rows = alpha_sweep(model, set.chosen(), cfg.alphas, subsets, cfg.threads);
        emit_report(encode_sweep(rows, "alpha"), out_path);
        summary(std::to_string(rows.size()) + " alpha rows");
      } else if (mode == "lambda") {
        const auto oh = read_direction_set(path_or(dir_oh, "dir_oh"));
        const auto eh = read_direction_set(path_or(dir_eh, "dir_eh"));
        if (!detail::given(opt["sweep-alpha"])) alpha = 1.0;
        const auto rows = lambda_sweep(model, oh.chosen(), eh.chosen(), cfg.lambdas, alpha, subsets, cfg.threads);
        emit_report(encode_sweep(rows, "lambda"), out_path);
        summary(std::to_string(rows.size()) + " lambda rows at alpha " + csv::number(alpha));
      } else {
        const auto container = read_activation_container(path_or(acts, "acts"));
        const auto ids = detail::ids_for_split(records, Split::kTrain);
        const auto dir_type = detail::parse_type(type);
        const auto samples = detail::samples_of(
            records, dir_type == DirType::kOh ? Verifiability::kObvious : Verifiability::kElusive, which);
        if (!detail::given(opt["sweep-alpha"])) alpha = 1.0;
        const auto per_layer = layer_sweep(model, container, dir_type == DirType::kOh ? ids.oh : ids.eh, ids.nh,
                                           container.geometry(), samples, alpha, cfg.threads);
        emit_report(encode_layer_sweep(per_layer), out_path);
        summary(std::to_string(per_layer.size()) + " layers");
      }
      write_meta(out_path);
      return 0;
    }
    if (command == "cosine") {
      const auto container = read_activation_container(acts);
      const auto ids = detail::ids_for_split(read_dataset(dataset), Split::kTrain);
      const auto rows = direction_cosine_by_layer(container, ids.oh, ids.eh, ids.nh, container.geometry(), offset);
      emit_report(encode_cosines(rows, offset), out_path);
      write_meta(out_path);
      summary(std::to_string(rows.size()) + " layers at offset " + std::to_string(offset));
      return 0;
    }
    if (command == "report") {
      std::string text = csv::join({"source", "layer", "offset", "hr_h_score", "kl_score", "delta_acc_nh",
                                    "selected", "satisfies_constraints"});
      std::size_t checked = 0, ok = 0;
      for (const auto& file : score_files) {
        const auto name = std::filesystem::path(file).filename().string();
        for (const auto& row : decode_score_table(io::read_file(file))) {
          const bool sat = row_satisfies_constraints(row, num_layers, cfg.selection);
          ++checked;
          ok += sat;
          text += csv::join({name, std::to_string(row.layer), std::to_string(row.offset), csv::number(row.hr_h_score),
                             csv::number(row.kl_score), csv::number(row.delta_acc_nh), row.selected ? "1" : "0",
                             sat ? "1" : "0"});
        }
      }
      emit_report(text, out_path);
      write_meta(out_path);
      summary(std::to_string(ok) + "/" + std::to_string(checked) + " rows satisfy the constraints");
      return 0;
    }
    if (command == "choose-alpha") {
      std::vector<AlphaPoint> points;
      for (const auto& p : decode_sweep(io::read_file(in), "alpha")) {
        if (p.subset == subset) points.push_back({p.value, p.intervened.hr});
      }
      if (points.empty()) raise(ErrorKind::kValidation, "no rows for subset '" + subset + "'");
      const double chosen = choose_alpha(points, cfg.plateau_threshold);
      if (!out_path.empty()) {
        emit_report(csv::join({"subset", "alpha"}) + csv::join({subset, csv::number(chosen)}), out_path);
        write_meta(out_path);
      }
      summary(subset + " alpha " + csv::number(chosen));
      return 0;
    }
    err << usage();
    return 2;
  } catch (const Error& e) {
    err << "steerlab " << command << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "steerlab " << command << ": " << e.what() << "\n";
    return 2;
  }
}

}  // namespace steerlab::cli
