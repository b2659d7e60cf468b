// Command-line front end: synthetic data generation, training, evaluation,
// prediction export and gradient checking, wired for reproducible runs.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "agn/agn.hpp"

namespace {

// Exit codes: 0 success, 1 usage, 2 data/parse, 3 numeric acceptance failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct RunConfig {
  agn::ModelConfig model;
  std::int64_t epochs = 50;
  std::int64_t batch_size = 16;
  double lr = agn::kInitialLearningRate;
  std::int64_t stride = 1;
  bool seed_set = false;
};

std::vector<double> parse_double_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    try {
      out.push_back(std::stod(text.substr(pos, comma - pos)));
    } catch (const std::exception&) {
      throw agn::ConfigError(std::string(what) + ": cannot parse '" + text + "'");
    }
    pos = comma + 1;
    if (comma == text.size()) break;
  }
  if (out.empty()) throw agn::ConfigError(std::string(what) + ": empty list");
  return out;
}

std::vector<std::int64_t> parse_int_list(const std::string& text, const char* what) {
  std::vector<std::int64_t> out;
  for (double v : parse_double_list(text, what)) out.push_back(static_cast<std::int64_t>(v));
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw agn::ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

// key=value file with '#' comments; keys mirror the model/training fields.
void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw agn::InputError("config: cannot open " + path);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t')) {
      line.pop_back();
    }
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw agn::ConfigError("config: line " + std::to_string(line_no) +
                             " is not key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "t_in") cfg.model.t_in = std::stoll(value);
    else if (key == "t_out") cfg.model.t_out = std::stoll(value);
    else if (key == "n_joints") cfg.model.n_joints = std::stoll(value);
    else if (key == "d_p") cfg.model.d_p = std::stoll(value);
    else if (key == "temporal_dim") cfg.model.temporal_dim = std::stoll(value);
    else if (key == "encoder_layers") cfg.model.encoder_layers = std::stoll(value);
    else if (key == "decoder_layers") cfg.model.decoder_layers = std::stoll(value);
    else if (key == "affm_ratio") cfg.model.affm_ratio = std::stoll(value);
    else if (key == "timescales") cfg.model.timescales = parse_int_list(value, "timescales");
    else if (key == "seed") { cfg.model.seed = std::stoull(value); cfg.seed_set = true; }
    else if (key == "epochs") cfg.epochs = std::stoll(value);
    else if (key == "batch_size") cfg.batch_size = std::stoll(value);
    else if (key == "lr") cfg.lr = std::stod(value);
    else if (key == "stride") cfg.stride = std::stoll(value);
    else if (key == "use_gce") cfg.model.use_gce = parse_bool(value, key);
    else if (key == "use_lie") cfg.model.use_lie = parse_bool(value, key);
    else if (key == "use_affm") cfg.model.use_affm = parse_bool(value, key);
    else if (key == "use_mtde") cfg.model.use_mtde = parse_bool(value, key);
    else throw agn::ConfigError("config: unknown key '" + key + "'");
  }
}

agn::MotionFormat format_for(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  return ext == "motb" ? agn::MotionFormat::Motb : agn::MotionFormat::Csv;
}

void fallback_seed(RunConfig& cfg) {
  if (cfg.seed_set) return;
  if (const char* env = std::getenv("AGN_SEED")) {
    cfg.model.seed = std::strtoull(env, nullptr, 10);
  }
}

// Shared model/config flags for train/eval/predict.
struct ModelFlags {
  std::string config_path;
  std::int64_t t_in = -1, t_out = -1, d_p = -1, temporal_dim = -1;
  std::int64_t encoder_layers = -1, decoder_layers = -1, affm_ratio = -1;
  std::string timescales;
  std::int64_t seed = -1;
  int use_gce = -1, use_lie = -1, use_affm = -1, use_mtde = -1;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--t-in", t_in, "observed frames");
    cmd->add_option("--t-out", t_out, "predicted frames");
    cmd->add_option("--d-p", d_p, "feature width");
    cmd->add_option("--temporal-dim", temporal_dim, "trajectory-space width");
    cmd->add_option("--encoder-layers", encoder_layers);
    cmd->add_option("--decoder-layers", decoder_layers);
    cmd->add_option("--affm-ratio", affm_ratio);
    cmd->add_option("--timescales", timescales, "comma list, e.g. 3,5,7");
    cmd->add_option("--seed", seed, "build/shuffle seed");
    cmd->add_option("--use-gce", use_gce, "0/1 toggle");
    cmd->add_option("--use-lie", use_lie, "0/1 toggle");
    cmd->add_option("--use-affm", use_affm, "0/1 toggle");
    cmd->add_option("--use-mtde", use_mtde, "0/1 toggle");
  }

  void apply(RunConfig& cfg) const {
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    if (t_in >= 0) cfg.model.t_in = t_in;
    if (t_out >= 0) cfg.model.t_out = t_out;
    if (d_p >= 0) cfg.model.d_p = d_p;
    if (temporal_dim >= 0) cfg.model.temporal_dim = temporal_dim;
    if (encoder_layers >= 0) cfg.model.encoder_layers = encoder_layers;
    if (decoder_layers >= 0) cfg.model.decoder_layers = decoder_layers;
    if (affm_ratio >= 0) cfg.model.affm_ratio = affm_ratio;
    if (!timescales.empty()) cfg.model.timescales = parse_int_list(timescales, "timescales");
    if (seed >= 0) { cfg.model.seed = static_cast<std::uint64_t>(seed); cfg.seed_set = true; }
    if (use_gce >= 0) cfg.model.use_gce = use_gce != 0;
    if (use_lie >= 0) cfg.model.use_lie = use_lie != 0;
    if (use_affm >= 0) cfg.model.use_affm = use_affm != 0;
    if (use_mtde >= 0) cfg.model.use_mtde = use_mtde != 0;
    fallback_seed(cfg);  // only fills a seed nothing else set
  }
};

// ---- synth ----

int cmd_synth(std::int64_t joints, std::int64_t frames, double fps, std::int64_t seed,
              const std::string& out, const std::string& bones, const std::string& freqs,
              const std::string& amps, double noise_sd) {
  agn::ChainSpec chain;
  if (bones.empty()) {
    chain.bone_lengths_mm.assign(joints, 300.0);
  } else {
    chain.bone_lengths_mm = parse_double_list(bones, "bone-lengths");
    if (chain.bone_lengths_mm.size() == 1) chain.bone_lengths_mm.assign(joints, chain.bone_lengths_mm[0]);
  }
  if (static_cast<std::int64_t>(chain.bone_lengths_mm.size()) != joints) {
    throw agn::ConfigError("bone-lengths must have one entry or one per joint");
  }
  std::vector<double> frequencies;
  if (freqs.empty()) {
    for (std::int64_t j = 0; j < joints; ++j) frequencies.push_back(0.4 + 0.25 * j);
  } else {
    frequencies = parse_double_list(freqs, "freqs");
  }
  std::vector<double> amplitudes;
  if (amps.empty()) {
    for (std::int64_t j = 0; j < joints; ++j) amplitudes.push_back(0.5 + 0.1 * (j % 3));
  } else {
    amplitudes = parse_double_list(amps, "amps");
  }
  auto seq = agn::synthesize(chain, frames, fps, frequencies, amplitudes, noise_sd,
                             static_cast<std::uint64_t>(seed));
  agn::save(seq, out, format_for(out));
  std::printf("joints=%lld frames=%lld fps=%g\n", static_cast<long long>(seq.n_joints),
              static_cast<long long>(seq.n_frames), seq.fps);
  return kExitOk;
}

// ---- train ----

int cmd_train(const std::string& data, const std::string& out_dir, RunConfig cfg) {
  auto seq = agn::load(data, format_for(data));
  cfg.model.n_joints = seq.n_joints;
  cfg.model.validate();
  auto dataset = agn::windows<float>(seq, cfg.model.t_in, cfg.model.t_out, cfg.stride);
  if (dataset.empty()) {
    throw agn::InputError("data has " + std::to_string(seq.n_frames) +
                          " frames, too short for t_in+t_out");
  }
  std::filesystem::create_directories(out_dir);
  auto model = agn::build_model<float>(cfg.model);
  agn::TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.base_lr = cfg.lr;
  opt.seed = cfg.model.seed;
  opt.checkpoint_dir = out_dir;
  opt.loss_csv_path = (std::filesystem::path(out_dir) / "loss.csv").string();
  auto result = agn::train(model, dataset, opt);

  // per-epoch mean loss summary
  std::map<std::int64_t, std::pair<double, std::int64_t>> per_epoch;
  for (const auto& r : result.history) {
    per_epoch[r.epoch].first += r.loss;
    per_epoch[r.epoch].second += 1;
  }
  for (const auto& [epoch, acc] : per_epoch) {
    std::printf("epoch %lld loss %.4f lr %.6g\n", static_cast<long long>(epoch),
                acc.first / acc.second, agn::lr_at_epoch(epoch, cfg.lr));
  }
  std::printf("windows=%zu iterations=%zu final_loss=%.4f\n", dataset.size(),
              result.history.size(), result.final_loss());
  return kExitOk;
}

// ---- eval ----

int cmd_eval(const std::string& data, const std::string& checkpoint,
             const std::string& horizons_text, const std::string& out_csv, RunConfig cfg) {
  auto seq = agn::load(data, format_for(data));
  cfg.model.n_joints = seq.n_joints;
  cfg.model.validate();
  auto dataset = agn::windows<float>(seq, cfg.model.t_in, cfg.model.t_out, cfg.stride);
  if (dataset.empty()) throw agn::InputError("data too short for evaluation windows");
  auto model = agn::build_model<float>(cfg.model);
  agn::load_state(model, agn::load_checkpoint<float>(checkpoint));
  auto horizons = parse_int_list(horizons_text, "horizons");
  auto report = agn::evaluate(model, dataset, horizons);

  std::printf("%-8s %-8s %-12s %-12s\n", "horizon", "ms", "model", "baseline");
  std::string csv = "horizon,ms,model_mpjpe,baseline_mpjpe\n";
  for (std::size_t i = 0; i < report.horizons.size(); ++i) {
    const double ms = 1000.0 * report.horizons[i] / seq.fps;
    std::printf("%-8lld %-8.1f %-12.4f %-12.4f\n",
                static_cast<long long>(report.horizons[i]), ms, report.model_mpjpe[i],
                report.baseline_mpjpe[i]);
    char row[160];
    std::snprintf(row, sizeof row, "%lld,%.1f,%.6f,%.6f\n",
                  static_cast<long long>(report.horizons[i]), ms, report.model_mpjpe[i],
                  report.baseline_mpjpe[i]);
    csv += row;
  }
  std::printf("samples=%lld\n", static_cast<long long>(report.sample_count));
  if (!out_csv.empty()) agn::detail::write_file(out_csv, csv, "report");
  return kExitOk;
}

// ---- predict ----

int cmd_predict(const std::string& input, const std::string& checkpoint,
                const std::string& out, const std::string& fmt, const std::string& edges_text,
                RunConfig cfg) {
  auto seq = agn::load(input, format_for(input));
  cfg.model.n_joints = seq.n_joints;
  cfg.model.validate();
  if (seq.n_frames < cfg.model.t_in) {
    throw agn::InputError("input has " + std::to_string(seq.n_frames) +
                          " frames, need at least " + std::to_string(cfg.model.t_in));
  }
  auto model = agn::build_model<float>(cfg.model);
  agn::load_state(model, agn::load_checkpoint<float>(checkpoint));
  auto x = agn::window_tensor<float>(seq, seq.n_frames - cfg.model.t_in, cfg.model.t_in);
  auto pred = model.forward(x);
  if (fmt == "csv") {
    agn::export_csv(pred, seq.fps, out);
  } else if (fmt == "svg") {
    std::vector<std::pair<std::int64_t, std::int64_t>> edges;
    if (!edges_text.empty()) {
      for (const auto& part : [&] {
             std::vector<std::string> parts;
             std::size_t pos = 0;
             while (pos <= edges_text.size()) {
               auto comma = edges_text.find(',', pos);
               if (comma == std::string::npos) comma = edges_text.size();
               parts.push_back(edges_text.substr(pos, comma - pos));
               pos = comma + 1;
               if (comma == edges_text.size()) break;
             }
             return parts;
           }()) {
        const auto dash = part.find('-');
        if (dash == std::string::npos) {
          throw agn::ConfigError("edges: expected a-b pairs, got '" + part + "'");
        }
        edges.push_back({std::stoll(part.substr(0, dash)), std::stoll(part.substr(dash + 1))});
      }
    }
    agn::export_svg<float>(pred, nullptr, edges, out);
  } else {
    throw agn::ConfigError("format must be csv or svg, got '" + fmt + "'");
  }
  std::printf("predicted frames=%lld joints=%lld -> %s\n",
              static_cast<long long>(cfg.model.t_out),
              static_cast<long long>(seq.n_joints), out.c_str());
  return kExitOk;
}

// ---- gradcheck ----

int cmd_gradcheck(double tolerance, std::int64_t seed) {
  using DT = agn::TensorT<double>;
  agn::Rng rng(static_cast<std::uint64_t>(seed));
  auto rand_input = [&rng](agn::Shape shape) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> data(agn::numel(shape));
    for (auto& v : data) v = dist(rng);
    return DT::from_data(std::move(shape), std::move(data));
  };

  struct Row {
    std::string name;
    double err;
  };
  std::vector<Row> rows;

  {
    auto params = agn::make_mtde<double>(3, 4, {3, 5, 7}, rng);
    auto x = rand_input({3, 5, 3});
    rows.push_back({"mtde", agn::grad_check(
                                [&](const DT& t) {
                                  return agn::probe_sum(agn::mtde_forward(t, params));
                                },
                                x)});
  }
  {
    auto params = agn::make_gce<double>(3, 4, rng);
    auto x = rand_input({3, 4, 3});
    rows.push_back({"bau_csu", agn::grad_check(
                                   [&](const DT& t) {
                                     auto [ba, xn] = agn::balance_attractor(t, params);
                                     auto corr = agn::cosine_similarity_unit(xn, params);
                                     return agn::add(agn::probe_sum(ba),
                                                     agn::probe_sum(corr, 23));
                                   },
                                   x)});
    auto x2 = rand_input({3, 4, 3});
    rows.push_back({"gce", agn::grad_check(
                               [&](const DT& t) {
                                 return agn::probe_sum(agn::gce_forward(t, params));
                               },
                               x2)});
  }
  {
    auto params = agn::make_lie<double>(4, rng);
    auto x = rand_input({3, 4, 3});
    rows.push_back({"lie_adjacent", agn::grad_check(
                                        [&](const DT& t) {
                                          auto [adj, dist] = agn::lie_forward(t, params);
                                          (void)dist;
                                          return agn::probe_sum(adj);
                                        },
                                        x)});
    auto x2 = rand_input({3, 4, 3});
    rows.push_back({"lie_nonlocal", agn::grad_check(
                                        [&](const DT& t) {
                                          auto [adj, dist] = agn::lie_forward(t, params);
                                          (void)adj;
                                          return agn::probe_sum(dist);
                                        },
                                        x2)});
  }
  {
    auto params = agn::make_affm<double>(4, 2, 2, rng);
    auto other = rand_input({3, 4, 2});
    auto x = rand_input({3, 4, 2});
    rows.push_back({"affm", agn::grad_check(
                                [&](const DT& t) {
                                  return agn::probe_sum(agn::affm_forward({t, other}, params));
                                },
                                x)});
  }
  {
    agn::ModelConfig cfg;
    cfg.n_joints = 3;
    cfg.t_in = 4;
    cfg.t_out = 2;
    cfg.d_p = 8;
    cfg.temporal_dim = 6;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 1;
    cfg.seed = static_cast<std::uint64_t>(seed);
    auto model = agn::build_model<double>(cfg);
    auto target = rand_input({3, 2, 3});
    auto x = rand_input({3, 4, 3});
    rows.push_back({"model", agn::grad_check(
                                 [&](const DT& t) {
                                   return agn::mpjpe_loss(model.forward(t), target);
                                 },
                                 x)});
  }
  {
    auto truth = rand_input({3, 2, 3});
    auto pred = rand_input({3, 2, 3});
    rows.push_back({"mpjpe", agn::grad_check(
                                 [&](const DT& t) { return agn::mpjpe_loss(t, truth); },
                                 pred)});
  }

  bool ok = true;
  std::printf("%-14s %-14s %s\n", "layer", "max_rel_err", "status");
  for (const auto& row : rows) {
    const bool pass = row.err < tolerance;
    ok = ok && pass;
    std::printf("%-14s %-14.3e %s\n", row.name.c_str(), row.err, pass ? "pass" : "FAIL");
  }
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attractor-guided skeleton motion prediction"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic chain recording");
  std::int64_t joints = 3, frames = 500, synth_seed = 1;
  double fps = 25.0, noise_sd = 0.0;
  std::string synth_out, bones, freqs, amps;
  synth->add_option("--joints", joints)->check(CLI::PositiveNumber);
  synth->add_option("--frames", frames)->check(CLI::PositiveNumber);
  synth->add_option("--fps", fps)->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--bone-lengths", bones, "comma list (mm)");
  synth->add_option("--freqs", freqs, "comma list (Hz)");
  synth->add_option("--amps", amps, "comma list (rad)");
  synth->add_option("--noise-sd", noise_sd)->check(CLI::NonNegativeNumber);

  // train
  auto* train_cmd = app.add_subcommand("train", "train on a motion file");
  std::string train_data, train_out = ".";
  std::int64_t epochs_flag = -1, batch_flag = -1, stride_flag = -1;
  double lr_flag = -1;
  ModelFlags train_mf;
  train_cmd->add_option("--data", train_data)->required();
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--epochs", epochs_flag);
  train_cmd->add_option("--batch-size", batch_flag);
  train_cmd->add_option("--lr", lr_flag, "base learning rate");
  train_cmd->add_option("--stride", stride_flag);
  train_mf.add_to(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "per-horizon error report");
  std::string eval_data, eval_ckpt, horizons = "2,4,8,10", eval_out;
  std::int64_t eval_stride = -1;
  ModelFlags eval_mf;
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--horizons", horizons, "comma list of frame offsets");
  eval_cmd->add_option("--out", eval_out, "write the report as CSV");
  eval_cmd->add_option("--stride", eval_stride);
  eval_mf.add_to(eval_cmd);

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "forecast from the last observed frames");
  std::string pred_input, pred_ckpt, pred_out, pred_fmt = "csv", pred_edges;
  ModelFlags pred_mf;
  pred_cmd->add_option("--input", pred_input)->required();
  pred_cmd->add_option("--checkpoint", pred_ckpt)->required();
  pred_cmd->add_option("--out", pred_out)->required();
  pred_cmd->add_option("--format", pred_fmt, "csv or svg");
  pred_cmd->add_option("--edges", pred_edges, "bone list like 0-1,1-2");
  pred_mf.add_to(pred_cmd);

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  double tolerance = 1e-3;
  std::int64_t gc_seed = 1;
  gc_cmd->add_option("--tolerance", tolerance);
  gc_cmd->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  // AGN_SEED fills any seed not given explicitly
  if (const char* env = std::getenv("AGN_SEED")) {
    const auto env_seed = static_cast<std::int64_t>(std::strtoll(env, nullptr, 10));
    if (synth->count("--seed") == 0) synth_seed = env_seed;
    if (gc_cmd->count("--seed") == 0) gc_seed = env_seed;
  }

  try {
    if (*synth) {
      return cmd_synth(joints, frames, fps, synth_seed, synth_out, bones, freqs, amps,
                       noise_sd);
    }
    if (*train_cmd) {
      RunConfig cfg;
      train_mf.apply(cfg);
      if (epochs_flag >= 0) cfg.epochs = epochs_flag;
      if (batch_flag >= 0) cfg.batch_size = batch_flag;
      if (lr_flag >= 0) cfg.lr = lr_flag;
      if (stride_flag >= 0) cfg.stride = stride_flag;
      return cmd_train(train_data, train_out, cfg);
    }
    if (*eval_cmd) {
      RunConfig cfg;
      eval_mf.apply(cfg);
      if (eval_stride >= 0) cfg.stride = eval_stride;
      return cmd_eval(eval_data, eval_ckpt, horizons, eval_out, cfg);
    }
    if (*pred_cmd) {
      RunConfig cfg;
      pred_mf.apply(cfg);
      return cmd_predict(pred_input, pred_ckpt, pred_out, pred_fmt, pred_edges, cfg);
    }
    if (*gc_cmd) {
      return cmd_gradcheck(tolerance, gc_seed);
    }
  } catch (const agn::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const agn::ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const agn::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const agn::CheckpointError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const agn::InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const agn::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
