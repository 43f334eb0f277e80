#ifndef PULSETRACE_CLI_APP_HPP
#define PULSETRACE_CLI_APP_HPP

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pulsetrace/checkpoint.hpp"
#include "pulsetrace/infer.hpp"
#include "pulsetrace/config.hpp"
#include "pulsetrace/metrics.hpp"
#include "pulsetrace/phantom.hpp"
#include "pulsetrace/train.hpp"

// Command-line surface: synth, train, eval, infer, bench.
// Exit codes: 0 success, 1 usage/config error, 2 data/format error,
// 3 numerical failure. PULSETRACE_THREADS caps the worker count.

namespace pulsetrace::cli {

namespace fs = std::filesystem;

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// --- dataset manifest ---------------------------------------------------------

struct ManifestRow {
  std::string id;
  std::size_t k = 0;       // frames
  std::size_t period = 0;  // T
  double d0 = 0.0;
  double amp = 0.0;
};

inline void write_manifest(const fs::path& path,
                           const std::vector<ManifestRow>& rows) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest: " + path.string());
  out << "id,K,T,d0,a\n";
  for (const auto& r : rows) {
    out << r.id << ',' << r.k << ',' << r.period << ',' << fmt_g(r.d0) << ','
        << fmt_g(r.amp) << '\n';
  }
}

inline std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("manifest is empty: " + path.string());
  }
  if (line != "id,K,T,d0,a") {
    throw FormatError("manifest header mismatch in " + path.string());
  }
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) {
      throw FormatError("manifest row with " + std::to_string(cells.size()) +
                        " cells: " + line);
    }
    ManifestRow r;
    r.id = cells[0];
    r.k = std::stoul(cells[1]);
    r.period = std::stoul(cells[2]);
    r.d0 = std::stod(cells[3]);
    r.amp = std::stod(cells[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// --- option state ---------------------------------------------------------------

struct CliState {
  // globals
  std::string config_path;
  std::uint64_t seed = 0;
  std::string profile = "full";
  std::string out_dir = ".";

  // synth
  std::size_t synth_count = 25;
  double d0_min = -1.0, d0_max = -1.0;
  double amp_min = -1.0, amp_max = -1.0;
  std::size_t period_min = 0, period_max = 0;
  std::size_t frames_min = 0, frames_max = 0;
  double speckle = 0.35;
  double gain = 0.08;
  bool export_csv = false;

  // train / eval
  std::string data_dir;
  std::size_t epochs = 100;
  double lr = 1e-4;
  double lambda = 1e-6;
  std::string variant = "cgru";
  bool no_augment = false;
  std::size_t checkpoint_every = 0;
  bool save_optimizer = false;
  double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
  std::string checkpoint_path;
  std::string eval_split = "test";

  // infer
  std::string input_path;
  std::string output_path = "-";

  // bench
  std::size_t bench_frames = 200;
  std::size_t bench_warmup = 20;
};

// --- shared helpers -------------------------------------------------------------

inline PhantomRanges resolve_ranges(const CliState& st) {
  PhantomRanges r = st.profile == "test" ? PhantomRanges::test()
                                         : PhantomRanges::full();
  if (st.d0_min >= 0) r.d0_min = st.d0_min;
  if (st.d0_max >= 0) r.d0_max = st.d0_max;
  if (st.amp_min >= 0) r.amp_min = st.amp_min;
  if (st.amp_max >= 0) r.amp_max = st.amp_max;
  if (st.period_min) r.period_min = st.period_min;
  if (st.period_max) r.period_max = st.period_max;
  if (st.frames_min) r.frames_min = st.frames_min;
  if (st.frames_max) r.frames_max = st.frames_max;
  if (r.d0_min > r.d0_max || r.amp_min > r.amp_max ||
      r.period_min > r.period_max || r.frames_min > r.frames_max) {
    throw ConfigError("synth: inverted range bounds");
  }
  return r;
}

struct LoadedDataset {
  std::vector<std::string> ids;
  std::vector<UltrasoundSequence> sequences;
};

inline LoadedDataset load_dataset(const fs::path& dir,
                                  const std::vector<std::string>& ids) {
  LoadedDataset ds;
  ds.ids = ids;
  ds.sequences.reserve(ids.size());
  for (const auto& id : ids) {
    ds.sequences.push_back(read_sequence(dir / (id + ".usq")));
  }
  return ds;
}

inline std::vector<std::string> manifest_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  for (const auto& row : read_manifest(dir / "manifest.csv")) {
    ids.push_back(row.id);
  }
  return ids;
}

// --- subcommands -----------------------------------------------------------------

inline int cmd_synth(const CliState& st, std::ostream& out) {
  const auto ranges = resolve_ranges(st);
  fs::create_directories(st.out_dir);
  detail::Rng master(st.seed);
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < st.synth_count; ++i) {
    auto sampled = sample_phantom(ranges, master);
    sampled.spec.speckle_strength = st.speckle;
    sampled.spec.gain_jitter = st.gain;
    const std::uint64_t seq_seed = master.next_u64();
    auto seq = generate(sampled.spec, sampled.frames, seq_seed);
    char id[16];
    std::snprintf(id, sizeof id, "seq%03zu", i);
    write_sequence(fs::path(st.out_dir) / (std::string(id) + ".usq"), seq);
    if (st.export_csv) {
      std::ofstream csv(fs::path(st.out_dir) / (std::string(id) + ".csv"));
      export_diameters_csv(csv, seq);
    }
    rows.push_back(ManifestRow{id, sampled.frames, sampled.spec.period_frames,
                               sampled.spec.baseline_diameter_mm,
                               sampled.spec.pulse_amplitude_mm});
  }
  write_manifest(fs::path(st.out_dir) / "manifest.csv", rows);
  out << "wrote " << rows.size() << " sequences to " << st.out_dir << "\n";
  return 0;
}

inline int cmd_train(const CliState& st, std::ostream& out,
                     std::ostream& err) {
  if (st.data_dir.empty()) throw ConfigError("train: --data is required");
  const fs::path data(st.data_dir);
  const auto ids = manifest_ids(data);
  auto parts = split(ids, st.train_frac, st.val_frac, st.test_frac, st.seed);
  auto train_ds = load_dataset(data, parts.train);
  auto val_ds = load_dataset(data, parts.validation);

  TrainConfig cfg;
  cfg.epochs = st.epochs;
  cfg.learning_rate = st.lr;
  cfg.lambda = st.lambda;
  cfg.seed = st.seed;
  cfg.profile = parse_profile(st.profile);
  cfg.variant = parse_variant(st.variant);
  cfg.augment = !st.no_augment;
  cfg.checkpoint_every = st.checkpoint_every;
  cfg.save_optimizer = st.save_optimizer;

  fs::create_directories(st.out_dir);
  const fs::path out_dir(st.out_dir);

  auto result = train<float>(
      train_ds.sequences, val_ds.sequences, cfg, train_ds.ids,
      [&](std::size_t epoch, double loss, double val) {
        err << "epoch " << epoch << "/" << cfg.epochs << " train_loss "
            << fmt_g(loss) << " val_mse " << fmt_g(val) << "\n";
      },
      [&](std::size_t epoch, const Checkpoint& snap) {
        char name[40];
        std::snprintf(name, sizeof name, "checkpoint_epoch%04zu.ptck", epoch);
        save_checkpoint(out_dir / name, snap);
      });

  save_checkpoint(out_dir / "checkpoint.ptck", result.best_checkpoint);
  {
    std::ofstream csv(out_dir / "loss_history.csv");
    csv << "epoch,train_loss,val_mse\n";
    for (std::size_t e = 0; e < result.train_loss_history.size(); ++e) {
      csv << (e + 1) << ',' << fmt_g(result.train_loss_history[e]) << ','
          << fmt_g(result.val_mse_history[e]) << '\n';
    }
  }
  out << "best epoch " << result.best_epoch << " val_mse "
      << fmt_g(result.best_val_mse) << "; checkpoint at "
      << (out_dir / "checkpoint.ptck").string() << "\n";
  return 0;
}

inline int cmd_eval(const CliState& st, std::ostream& out) {
  if (st.checkpoint_path.empty()) {
    throw ConfigError("eval: --checkpoint is required");
  }
  if (st.data_dir.empty()) throw ConfigError("eval: --data is required");
  auto model =
      model_from_checkpoint<float>(load_checkpoint(fs::path(st.checkpoint_path)));

  const fs::path data(st.data_dir);
  const auto ids = manifest_ids(data);
  std::vector<std::string> selected;
  if (st.eval_split == "all") {
    selected = ids;
  } else {
    auto parts =
        split(ids, st.train_frac, st.val_frac, st.test_frac, st.seed);
    if (st.eval_split == "test") {
      selected = parts.test;
    } else if (st.eval_split == "validation") {
      selected = parts.validation;
    } else if (st.eval_split == "train") {
      selected = parts.train;
    } else {
      throw ConfigError("eval: unknown split '" + st.eval_split + "'");
    }
  }
  auto ds = load_dataset(data, selected);
  auto report = evaluate(model, ds.sequences, ds.ids);

  fs::create_directories(st.out_dir);
  const fs::path out_dir(st.out_dir);
  {
    std::ofstream csv(out_dir / "report.csv");
    csv << "sequence_id,mse_mm2,re_percent\n";
    for (const auto& row : report.per_sequence) {
      csv << row.id << ',' << fmt_g(row.mse_mm2) << ','
          << fmt_g(row.re_percent) << '\n';
    }
  }
  std::ostringstream summary;
  summary << "sequences: " << report.per_sequence.size() << "\n"
          << "MSE [mm^2]: " << fmt_g(report.mse_mean) << " ("
          << fmt_g(report.mse_std) << ")\n"
          << "RE [%]:     " << fmt_g(report.re_mean) << " ("
          << fmt_g(report.re_std) << ")\n";
  {
    std::ofstream txt(out_dir / "summary.txt");
    txt << summary.str();
  }
  out << summary.str();
  return 0;
}

inline int cmd_infer(const CliState& st, std::ostream& out) {
  if (st.checkpoint_path.empty()) {
    throw ConfigError("infer: --checkpoint is required");
  }
  if (st.input_path.empty()) throw ConfigError("infer: --input is required");
  auto model =
      model_from_checkpoint<float>(load_checkpoint(fs::path(st.checkpoint_path)));

  std::ifstream in(st.input_path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + st.input_path);
  const auto header = read_sequence_header(in);
  if (header.n != model.input_extent() || header.m != model.input_extent()) {
    throw FormatError("infer: sequence is " + std::to_string(header.n) + "x" +
                      std::to_string(header.m) + ", " +
                      to_string(model.profile) + " profile expects " +
                      std::to_string(model.input_extent()) + "px frames");
  }
  std::vector<float> truth(header.k);
  for (auto& d : truth) d = io::read_pod<float>(in, ".usq diameter");

  std::ofstream file_out;
  std::ostream* dst = &out;
  if (st.output_path != "-") {
    file_out.open(st.output_path);
    if (!file_out) throw FormatError("cannot write: " + st.output_path);
    dst = &file_out;
  }
  *dst << "frame_index,y_pred_mm,y_true_mm\n";

  // streaming: frame t is fully processed and its row emitted before
  // frame t+1 is read
  StreamingPredictor<float> predictor(model);
  for (std::uint32_t t = 0; t < header.k; ++t) {
    auto frame = read_sequence_frame(in, header);
    const float y = predictor.push(frame);
    *dst << (t + 1) << ',' << fmt_g(double(y)) << ','
         << fmt_g(double(truth[t])) << '\n';
    dst->flush();
  }
  return 0;
}

inline int cmd_bench(const CliState& st, std::ostream& out,
                     std::ostream& err) {
  using clock = std::chrono::steady_clock;
  // One dispatch thread plus the dedicated readout thread measures best on
  // SMT pairs; PULSETRACE_THREADS still overrides.
  setenv("PULSETRACE_THREADS", "1", /*overwrite=*/0);
  Model<float> model =
      st.checkpoint_path.empty()
          ? Model<float>::create(parse_profile(st.profile),
                                 ModelVariant::Recurrent, st.seed)
          : model_from_checkpoint<float>(
                load_checkpoint(fs::path(st.checkpoint_path)));

  // frames prepared in advance so generation cost never enters the timing
  PhantomRanges ranges = model.profile == ModelProfile::Full
                             ? PhantomRanges::full()
                             : PhantomRanges::test();
  PhantomSpec spec;
  spec.frame_extent = ranges.frame_extent;
  spec.pixel_pitch_mm = ranges.pixel_pitch_mm;
  spec.baseline_diameter_mm = (ranges.d0_min + ranges.d0_max) / 2.0;
  const std::size_t total = st.bench_warmup + st.bench_frames;
  auto seq = generate(spec, total, st.seed + 1);

  nlohmann::json config_line{
      {"event", "config"},
      {"profile", to_string(model.profile)},
      {"frames", st.bench_frames},
      {"warmup", st.bench_warmup},
      {"frame_extent", ranges.frame_extent},
      {"workers", detail::max_workers()},
  };
  out << config_line.dump() << "\n";

  // The head readout of frame t overlaps the encoder/recurrence of frame
  // t+1; predictions are bitwise identical to the sequential path.
  StreamingPredictor<float> predictor(model);
  PipelinedRunner<float> runner(predictor);
  double sink = 0.0;
  for (std::size_t t = 0; t < st.bench_warmup; ++t) {
    if (auto y = runner.feed(seq.frames[t])) sink += *y;
  }

  std::vector<double> latency_ms(st.bench_frames);
  double encoder_ms = 0.0, cgru_ms = 0.0;
  const double head_ms_before = runner.readout_ms_total();
  const auto bench_start = clock::now();
  for (std::size_t i = 0; i < st.bench_frames; ++i) {
    const std::size_t t = st.bench_warmup + i;
    const auto t0 = clock::now();
    const auto& fm = predictor.encode(seq.frames[t]);
    const auto t1 = clock::now();
    predictor.advance(fm);
    const auto t2 = clock::now();
    if (auto y = runner.wait_and_take()) sink += *y;
    runner.submit();
    const auto t3 = clock::now();
    latency_ms[i] = std::chrono::duration<double, std::milli>(t3 - t0).count();
    encoder_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
    cgru_ms += std::chrono::duration<double, std::milli>(t2 - t1).count();
  }
  sink += runner.drain();
  const double elapsed_s =
      std::chrono::duration<double>(clock::now() - bench_start).count();
  const double head_ms = runner.readout_ms_total() - head_ms_before;

  const double fps = double(st.bench_frames) / elapsed_s;
  double mean_ms = 0.0;
  for (double v : latency_ms) mean_ms += v;
  mean_ms /= double(st.bench_frames);
  auto sorted = latency_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t p99_idx =
      (99 * st.bench_frames + 99) / 100 == 0
          ? 0
          : std::min(st.bench_frames - 1, (99 * st.bench_frames + 99) / 100 - 1);
  const double p99_ms = sorted[p99_idx];
  const double n = double(st.bench_frames);

  nlohmann::json result_line{
      {"event", "result"},
      {"frames", st.bench_frames},
      {"elapsed_s", elapsed_s},
      {"fps", fps},
      {"latency_ms", {{"mean", mean_ms}, {"p99", p99_ms}}},
      {"stage_ms",
       {{"encoder", encoder_ms / n},
        {"cgru", cgru_ms / n},
        {"head", head_ms / n}}},
      {"real_time", fps >= 47.0},
      {"acquisition_fps", 47.0},
      {"paper_reference_fps", 289.0},
      {"prediction_checksum", sink},
  };
  out << result_line.dump() << "\n";
  err << "bench: " << fmt_g(fps) << " fps (" << fmt_g(mean_ms)
      << " ms/frame mean, p99 " << fmt_g(p99_ms) << " ms), real-time "
      << (fps >= 47.0 ? "true" : "false") << "\n";
  return 0;
}

// --- argument plumbing ---------------------------------------------------------

inline void attach_options(CLI::App& app, CliState& st) {
  app.add_option("--config", st.config_path, "key=value config file");
  app.add_option("--seed", st.seed, "global RNG seed");
  app.add_option("--profile", st.profile, "model size profile")
      ->check(CLI::IsMember({"full", "test"}));
  app.add_option("--out", st.out_dir, "output directory");

  auto* synth = app.add_subcommand("synth", "generate phantom sequences");
  synth->fallthrough();
  synth->add_option("--count", st.synth_count, "number of sequences");
  synth->add_option("--d0-min", st.d0_min, "baseline diameter lower bound, mm");
  synth->add_option("--d0-max", st.d0_max, "baseline diameter upper bound, mm");
  synth->add_option("--amp-min", st.amp_min, "pulse amplitude lower bound, mm");
  synth->add_option("--amp-max", st.amp_max, "pulse amplitude upper bound, mm");
  synth->add_option("--period-min", st.period_min, "cardiac period lower bound, frames");
  synth->add_option("--period-max", st.period_max, "cardiac period upper bound, frames");
  synth->add_option("--frames-min", st.frames_min, "sequence length lower bound");
  synth->add_option("--frames-max", st.frames_max, "sequence length upper bound");
  synth->add_option("--speckle", st.speckle, "speckle strength, 0 disables");
  synth->add_option("--gain", st.gain, "per-frame gain jitter, 0 disables");
  synth->add_flag("--export-csv", st.export_csv, "also write ground-truth CSVs");

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->fallthrough();
  train->add_option("--data", st.data_dir, "dataset directory with manifest.csv");
  train->add_option("--epochs", st.epochs, "training epochs");
  train->add_option("--lr", st.lr, "learning rate");
  train->add_option("--lambda", st.lambda, "cyclic penalty weight");
  train->add_option("--variant", st.variant, "architecture variant")
      ->check(CLI::IsMember({"cgru", "framewise"}));
  train->add_flag("--no-augment", st.no_augment, "disable random flips");
  train->add_option("--checkpoint-every", st.checkpoint_every,
                    "periodic snapshot cadence, epochs");
  train->add_flag("--save-optimizer", st.save_optimizer,
                  "persist optimizer state for exact resume");
  train->add_option("--train-frac", st.train_frac, "training fraction");
  train->add_option("--val-frac", st.val_frac, "validation fraction");
  train->add_option("--test-frac", st.test_frac, "test fraction");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->fallthrough();
  eval->add_option("--checkpoint", st.checkpoint_path, "checkpoint file");
  eval->add_option("--data", st.data_dir, "dataset directory");
  eval->add_option("--split", st.eval_split, "which partition to evaluate")
      ->check(CLI::IsMember({"test", "validation", "train", "all"}));
  eval->add_option("--train-frac", st.train_frac, "training fraction");
  eval->add_option("--val-frac", st.val_frac, "validation fraction");
  eval->add_option("--test-frac", st.test_frac, "test fraction");

  auto* infer = app.add_subcommand("infer", "stream per-frame predictions");
  infer->fallthrough();
  infer->add_option("--checkpoint", st.checkpoint_path, "checkpoint file");
  infer->add_option("--input", st.input_path, ".usq sequence file");
  infer->add_option("--output", st.output_path,
                    "CSV destination, '-' for stdout");

  auto* bench = app.add_subcommand("bench", "real-time throughput benchmark");
  bench->fallthrough();
  bench->add_option("--checkpoint", st.checkpoint_path,
                    "checkpoint file (fresh weights when omitted)");
  bench->add_option("--frames", st.bench_frames, "timed frames");
  bench->add_option("--warmup", st.bench_warmup, "untimed warmup frames");

  app.require_subcommand(1);
}

inline const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names{"synth", "train", "eval",
                                              "infer", "bench"};
  return names;
}

// Config entries become --key=value arguments injected right after the
// subcommand token, skipping keys the command line already sets.
inline std::vector<std::string> inject_config(std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (config_path.empty()) return args;

  const auto entries = load_config_file(config_path);
  auto user_set = [&](const std::string& key) {
    const std::string flag = "--" + key;
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  std::size_t insert_at = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (std::find(subcommand_names().begin(), subcommand_names().end(),
                  args[i]) != subcommand_names().end()) {
      insert_at = i + 1;
      break;
    }
  }
  std::vector<std::string> injected;
  for (const auto& [key, value] : entries) {
    if (!user_set(key)) injected.push_back("--" + key + "=" + value);
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(insert_at),
              injected.begin(), injected.end());
  return args;
}

// args in program order, without argv[0].
inline int run_cli(std::vector<std::string> args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"pulsatile-vessel diameter regression engine"};
  CliState st;
  attach_options(app, st);
  try {
    args = inject_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes a stack
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(st, out);
    if (app.got_subcommand("train")) return cmd_train(st, out, err);
    if (app.got_subcommand("eval")) return cmd_eval(st, out);
    if (app.got_subcommand("infer")) return cmd_infer(st, out);
    if (app.got_subcommand("bench")) return cmd_bench(st, out, err);
    err << "error: no subcommand\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace pulsetrace::cli

#endif  // PULSETRACE_CLI_APP_HPP
