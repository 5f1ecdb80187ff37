#ifndef LFHN_TOOLS_CLI_HPP
#define LFHN_TOOLS_CLI_HPP

// Command-line front end: gen-data | train | eval | gradcheck | shapes.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error,
// 3 data/model mismatch.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <lfhn/lfhn.hpp>

namespace lfhn::cli {

enum ExitCode : int { ok = 0, check_failed = 1, usage = 2, mismatch = 3 };

/// Everything a run needs: architecture, optimizer, data paths and seed.
/// Built from an optional key = value file followed by flag overrides.
struct RunConfig {
  LfhnConfig net;
  bool classes_set = false;
  TrainConfig train;
  bool seed_set = false;

  std::string data;
  std::string out;
  std::string model;
  std::string log;
  std::string csv;
  std::string root_weights;
  std::string style = "paper";
  std::string layer = "all";

  std::string split = "all";
  double split_fraction = 0.9;
  std::optional<std::vector<std::size_t>> holdout_ids;

  std::size_t ids = 10;
  std::size_t image_size = 76;
  std::size_t image_channels = 3;
  std::size_t threads = 1;
  double epsilon = 1e-5;

  void apply(std::string_view key, std::string_view value) {
    using namespace lfhn::detail;  // parse_* and trim
    if (apply_key(net, key, value)) {
      if (key == "classes") classes_set = true;
      return;
    }
    const std::string v(trim(value));
    if (key == "lr") train.learning_rate = parse_double(key, v);
    else if (key == "momentum") train.momentum = parse_double(key, v);
    else if (key == "batch_size") train.batch_size = parse_size(key, v);
    else if (key == "epochs") train.epochs = parse_size(key, v);
    else if (key == "freeze_root") train.freeze_root = parse_bool(key, v);
    else if (key == "augment") train.augment = parse_bool(key, v);
    else if (key == "lr_decay_every") train.lr_decay_every = parse_size(key, v);
    else if (key == "lr_decay_factor") train.lr_decay_factor = parse_double(key, v);
    else if (key == "stop_at_accuracy") train.stop_at_accuracy = parse_double(key, v);
    else if (key == "seed") {
      train.seed = parse_size(key, v);
      seed_set = true;
    }
    else if (key == "data") data = v;
    else if (key == "out") out = v;
    else if (key == "model") model = v;
    else if (key == "log") log = v;
    else if (key == "csv") csv = v;
    else if (key == "root_weights") root_weights = v;
    else if (key == "style") style = v;
    else if (key == "layer") layer = v;
    else if (key == "split") split = v;
    else if (key == "split_fraction") split_fraction = parse_double(key, v);
    else if (key == "holdout_ids") holdout_ids = parse_list(key, v);
    else if (key == "ids") ids = parse_size(key, v);
    else if (key == "image_size") image_size = parse_size(key, v);
    else if (key == "image_channels") image_channels = parse_size(key, v);
    else if (key == "threads") threads = parse_size(key, v);
    else if (key == "epsilon") epsilon = parse_double(key, v);
    else raise<config_error>("config: unknown key '", key, "'");
  }

  /// `key = value` lines; `#` starts a comment.
  void apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) detail::raise<config_error>("config: cannot read '", path.string(), "'");
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string_view body = detail::trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos)
        detail::raise<config_error>("config: ", path.string(), ":", number, ": expected key = value");
      apply(detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
    }
  }

  void apply_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) detail::raise<config_error>("--set expects key=value, got '", assignment, "'");
    apply(detail::trim(std::string_view(assignment).substr(0, eq)),
          detail::trim(std::string_view(assignment).substr(eq + 1)));
  }

  /// LFHN_SEED is the fallback when neither the file nor a flag sets a seed.
  void apply_seed_fallback() {
    if (seed_set) return;
    if (const char* env = std::getenv("LFHN_SEED"); env && *env) apply("seed", env);
  }

  SplitProtocol split_protocol(std::size_t pose_count) const {
    SplitProtocol p;
    p.kind = parse_split_kind(split);
    p.fraction = split_fraction;
    p.seed = train.seed;
    if (holdout_ids) {
      p.ids = *holdout_ids;
    } else if (p.kind == SplitProtocol::Kind::holdout_pose) {
      p.ids = {0, pose_count ? pose_count - 1 : 0};  // the two profile bins
    } else if (p.kind == SplitProtocol::Kind::holdout_light) {
      p.ids = {2, 6};
    }
    return p;
  }

  void validate() const {
    net.validate();
    train.validate();
    if (threads < 1) detail::raise<config_error>("config: threads must be >= 1");
  }
};

namespace detail {

// Options shared by every subcommand; applied in order file, --set, flags.
struct CommonOptions {
  std::string config_file;
  std::vector<std::string> assignments;
  std::vector<std::pair<std::string, std::string>> flags;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_file, "key = value configuration file");
    cmd.add_option("--set", assignments, "override any configuration key (key=value), repeatable");
    option(cmd, "--threads", "threads", "worker threads; 1 gives the fully deterministic path");
  }

  /// Registers a flag that sets configuration key `key` when given.
  void option(CLI::App& cmd, const std::string& flag, const std::string& key, const std::string& help) {
    cmd.add_option_function<std::string>(
        flag, [this, key](const std::string& v) { flags.emplace_back(key, v); }, help);
  }

  void toggle(CLI::App& cmd, const std::string& flag, const std::string& key, const std::string& value,
              const std::string& help) {
    cmd.add_flag_callback(flag, [this, key, value] { flags.emplace_back(key, value); }, help);
  }

  RunConfig resolve(RunConfig base = {}) const {
    if (!config_file.empty()) base.apply_file(config_file);
    for (const std::string& a : assignments) base.apply_assignment(a);
    for (const auto& [k, v] : flags) base.apply(k, v);
    base.apply_seed_fallback();
    base.validate();
    return base;
  }
};

inline std::map<std::size_t, double> pose_roster_for(const std::filesystem::path& dir) {
  const auto manifest = dir / manifest_name;
  if (std::filesystem::exists(manifest)) return yaw_by_pose(read_manifest(manifest));
  std::map<std::size_t, double> roster;
  const auto yaws = default_yaw_roster();
  for (std::size_t i = 0; i < yaws.size(); ++i) roster[i] = yaws[i];
  return roster;
}

inline std::string shape_label(const Shape& s) { return lfhn::to_string(s); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const RunConfig& rc, std::ostream& out) {
  if (rc.out.empty()) lfhn::detail::raise<config_error>("gen-data: --out is required");
  CorpusSpec spec;
  spec.identities = rc.ids;
  spec.height = spec.width = rc.image_size;
  spec.channels = rc.image_channels;
  spec.seed = rc.train.seed;
  const auto rows = generate_corpus(spec, rc.out);
  out << "wrote " << rows.size() << " images and " << manifest_name << " to " << rc.out << "\n";
  return ok;
}

inline int cmd_shapes(const RunConfig& rc, std::ostream& out) {
  for (const TraceEntry& e : shape_trace(rc.net)) {
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %-8s %s\n", e.name.c_str(), lfhn::to_string(e.kind),
                  detail::shape_label(e.shape).c_str());
    out << line;
  }
  out << "parameters " << parameter_count(rc.net) << "\n";
  return ok;
}

inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.out.empty()) lfhn::detail::raise<config_error>("train: --out is required");
  if (rc.data.empty()) lfhn::detail::raise<config_error>("train: --data is required");
  const std::vector<LabeledSample> samples = load_corpus(rc.data);
  if (samples.empty()) lfhn::detail::raise<data_error>("train: no images in '", rc.data, "'");
  std::size_t pose_count = 0, label_count = 0;
  for (const LabeledSample& s : samples) {
    pose_count = std::max(pose_count, s.pose_id + 1);
    label_count = std::max(label_count, s.identity + 1);
  }
  const SplitResult parts = split(samples, rc.split_protocol(pose_count));
  for (const std::string& w : parts.warnings) err << "warning: " << w << "\n";

  LfhnConfig cfg = rc.net;
  if (!rc.classes_set) cfg.classes = label_count;
  if (cfg.classes < label_count)
    lfhn::detail::raise<shape_error>("train: corpus has ", label_count, " identities but classes = ", cfg.classes);

  NetworkGraph net = build_lfhn(cfg, rc.train.seed);
  if (!rc.root_weights.empty()) {
    load_root_weights(net, rc.root_weights);
  } else if (rc.train.freeze_root) {
    err << "warning: root layer frozen without --root-weights; it keeps its random initialization\n";
  }

  const std::string log_path = rc.log.empty() ? rc.out + ".log.csv" : rc.log;
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) lfhn::detail::raise<data_error>("train: cannot write log '", log_path, "'");
  log << epoch_log_header << "\n";
  train(net, samples, parts.train, rc.train, [&](const EpochStats& s) {
    log << format_epoch_csv(s) << "\n" << std::flush;
    err << "epoch " << s.epoch << " loss " << s.mean_loss << " acc " << s.train_accuracy << "\n";
    return true;
  });
  save_checkpoint(net, rc.out);
  out << "saved " << rc.out << " (" << parts.train.size() << " training images, " << cfg.classes
      << " classes); log " << log_path << "\n";
  return ok;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.model.empty()) lfhn::detail::raise<config_error>("eval: --model is required");
  if (rc.data.empty()) lfhn::detail::raise<config_error>("eval: --data is required");
  const TableStyle style = parse_table_style(rc.style);
  const NetworkGraph net = load_checkpoint(rc.model);
  const LfhnConfig model_cfg = config_of(net);
  if (rc.classes_set && rc.net.classes != model_cfg.classes)
    lfhn::detail::raise<shape_error>("eval: model has ", model_cfg.classes, " classes but ", rc.net.classes,
                                     " were requested");

  const std::vector<LabeledSample> samples = load_corpus(rc.data);
  if (samples.empty()) lfhn::detail::raise<data_error>("eval: no images in '", rc.data, "'");
  std::size_t pose_count = 0, label_count = 0;
  for (const LabeledSample& s : samples) {
    pose_count = std::max(pose_count, s.pose_id + 1);
    label_count = std::max(label_count, s.identity + 1);
  }
  if (label_count > model_cfg.classes)
    lfhn::detail::raise<shape_error>("eval: corpus has ", label_count, " identities but the model has ",
                                     model_cfg.classes, " classes");
  SplitResult parts = split(samples, rc.split_protocol(pose_count));
  for (const std::string& w : parts.warnings) err << "warning: " << w << "\n";
  const std::vector<std::size_t>& probe = parts.test.empty() ? parts.train : parts.test;

  const RankTable table = evaluate(net, samples, probe, detail::pose_roster_for(rc.data));
  for (const std::string& w : table.warnings) err << "warning: " << w << "\n";
  out << format_table(table, style);

  const std::string csv_path = rc.csv.empty() ? rc.model + ".rank1.csv" : rc.csv;
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) lfhn::detail::raise<data_error>("eval: cannot write '", csv_path, "'");
  csv << format_table(table, TableStyle::csv);
  return ok;
}

inline int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  const bool all = rc.layer == "all";
  bool known = all || rc.layer == "network";
  GradReport report;
  for (const auto& [which, name] : layer_check_names()) {
    if (!all && rc.layer != name) continue;
    known = true;
    for (auto& [k, e] : check_layer(which, rc.train.seed, rc.epsilon).entries) report.entries["layer." + k] = e;
  }
  if (!known)
    lfhn::detail::raise<config_error>("gradcheck: unknown layer '", rc.layer,
                                      "' (all, network, conv, conv1x1, fc, lrn, pool, relu, softmax_xent)");
  if (all || rc.layer == "network") {
    NetworkGraph net = build_lfhn(rc.net, rc.train.seed);
    if (rc.train.freeze_root) net.set_frozen(root_group, true);
    randomize_biases(net, rc.train.seed + 2);
    std::mt19937_64 rng(rc.train.seed + 1);
    const Shape& in = net.input_shape();
    const std::size_t n = 2;
    const Tensor batch = lfhn::detail::random_tensor({n, in[0], in[1], in[2]}, rng);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % rc.net.classes;
    GradCheckOptions opt;
    opt.epsilon = rc.epsilon;
    opt.seed = rc.train.seed;
    for (auto& [k, e] : grad_check(net, batch, labels, opt).entries) report.entries["network." + k] = e;
  }
  for (const auto& [name, e] : report.entries) {
    char line[256];
    std::snprintf(line, sizeof line, "%-28s max_rel_err %.3e  checked %4zu  tol %.0e  %s\n", name.c_str(),
                  e.max_rel_error, e.checked, e.tolerance, e.passed() ? "PASS" : "FAIL");
    out << line;
  }
  out << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (max relative error "
      << report.max_error() << ")\n";
  return report.passed() ? ok : check_failed;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-stream local feature hierarchy network: data, training, evaluation", "lfhn"};
  app.require_subcommand(1);

  detail::CommonOptions gen_opts, train_opts, eval_opts, grad_opts, shape_opts;

  CLI::App* gen = app.add_subcommand("gen-data", "render a synthetic pose/illumination corpus");
  gen_opts.attach(*gen);
  gen_opts.option(*gen, "--ids", "ids", "number of identities (default 10)");
  gen_opts.option(*gen, "--out", "out", "output directory");
  gen_opts.option(*gen, "--seed", "seed", "generator seed");
  gen_opts.option(*gen, "--image-size", "image_size", "image height and width (default 76)");
  gen_opts.option(*gen, "--channels", "image_channels", "1 (PGM) or 3 (PPM)");

  CLI::App* trn = app.add_subcommand("train", "train a network on a corpus");
  train_opts.attach(*trn);
  train_opts.option(*trn, "--data", "data", "corpus directory");
  train_opts.option(*trn, "--out", "out", "checkpoint path");
  train_opts.option(*trn, "--log", "log", "epoch CSV log (default <out>.log.csv)");
  train_opts.option(*trn, "--lr", "lr", "learning rate");
  train_opts.option(*trn, "--momentum", "momentum", "momentum coefficient");
  train_opts.option(*trn, "--epochs", "epochs", "epoch count");
  train_opts.option(*trn, "--batch-size", "batch_size", "minibatch size");
  train_opts.option(*trn, "--seed", "seed", "seed for init, shuffling and augmentation");
  train_opts.option(*trn, "--root-weights", "root_weights", "pretrained root conv weights (float32 LE)");
  train_opts.option(*trn, "--split", "split", "all | random | holdout-light | holdout-pose");
  train_opts.option(*trn, "--split-fraction", "split_fraction", "train share for the random split");
  train_opts.option(*trn, "--holdout-ids", "holdout_ids", "comma-separated pose or light ids held out");
  train_opts.toggle(*trn, "--freeze-root", "freeze_root", "true", "keep the root conv fixed");
  train_opts.toggle(*trn, "--no-augment", "augment", "false", "center crops only, no mirroring");

  CLI::App* evl = app.add_subcommand("eval", "rank-1 identification per pose bin");
  eval_opts.attach(*evl);
  eval_opts.option(*evl, "--model", "model", "checkpoint path");
  eval_opts.option(*evl, "--data", "data", "corpus directory");
  eval_opts.option(*evl, "--split", "split", "protocol; the test part is evaluated");
  eval_opts.option(*evl, "--split-fraction", "split_fraction", "train share for the random split");
  eval_opts.option(*evl, "--holdout-ids", "holdout_ids", "comma-separated pose or light ids held out");
  eval_opts.option(*evl, "--seed", "seed", "split seed");
  eval_opts.option(*evl, "--style", "style", "paper | csv (stdout)");
  eval_opts.option(*evl, "--csv", "csv", "CSV output path (default <model>.rank1.csv)");

  CLI::App* grd = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  grad_opts.attach(*grd);
  grad_opts.option(*grd, "--layer", "layer", "all | network | conv | conv1x1 | fc | lrn | pool | relu | softmax_xent");
  grad_opts.option(*grd, "--seed", "seed", "seed for random inputs and parameters");
  grad_opts.option(*grd, "--epsilon", "epsilon", "central difference step (default 1e-5)");
  grad_opts.toggle(*grd, "--freeze-root", "freeze_root", "true", "skip the root conv parameters");

  CLI::App* shp = app.add_subcommand("shapes", "print per-node output shapes");
  shape_opts.attach(*shp);
  shape_opts.option(*shp, "--input-size", "input_size", "square input extent");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts.resolve(), out);
    if (shp->parsed()) return cmd_shapes(shape_opts.resolve(), out);
    if (trn->parsed()) return cmd_train(train_opts.resolve(), out, err);
    if (evl->parsed()) return cmd_eval(eval_opts.resolve(), out, err);
    if (grd->parsed()) {
      RunConfig base;
      base.net = tiny_config();
      return cmd_gradcheck(grad_opts.resolve(base), out);
    }
  } catch (const config_error& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  } catch (const error& e) {
    err << "error: " << e.what() << "\n";
    return mismatch;
  }
  return usage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace lfhn::cli

#endif  // LFHN_TOOLS_CLI_HPP
