#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hfan/checkpoint.hpp"
#include "hfan/evalkit.hpp"
#include "hfan/gradsuite.hpp"
#include "hfan/tensor_io.hpp"

namespace hfan::cli {

namespace {

std::string seq_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "seq%03zu", i);
  return buf;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

Tensor<float> stack_frames(const std::vector<fs::path>& files) {
  std::vector<Tensor<float>> frames;
  for (const auto& f : files) frames.push_back(io::load_tensor(f));
  if (frames.empty()) throw DataError("no frames");
  const Shape& s = frames[0].shape();
  Shape full{frames.size()};
  full.insert(full.end(), s.begin(), s.end());
  Tensor<float> out(full);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].shape() != s) throw FormatError(files[t].string() + ": shape " + shape_str(frames[t].shape()) + " differs from the first frame");
    std::copy(frames[t].storage().begin(), frames[t].storage().end(), out.raw() + t * frames[0].numel());
  }
  return out;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string version() { return HFAN_VERSION; }

int exit_code(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  return kExitData;
}

RunConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  RunConfig cfg = file ? load_run_config(file->string()) : RunConfig{};
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set " + o + ": expected key=value");
    cfg.set(o.substr(0, eq), o.substr(eq + 1), "--set: ");
  }
  cfg.validate();
  return cfg;
}

void write_resolved_config(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.txt", std::ios::binary);
  out << "# hfan " << version() << "\n" << cfg.to_text();
  if (!out) throw DataError("cannot write " + (dir / "config.txt").string());
}

int cmd_gen(const RunConfig& cfg, const fs::path& out, bool force, std::ostream& log) {
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw ConfigError(out.string() + " exists and is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  // Check every scene before writing anything.
  const DataConfig& d = cfg.data;
  for (std::size_t i = 0; i < d.train_count + d.val_count; ++i) scene_for(d, d.seed + i).validate();
  write_resolved_config(out, cfg);
  for (std::size_t i = 0; i < d.train_count + d.val_count; ++i) {
    const bool train = i < d.train_count;
    const std::uint64_t seed = d.seed + i;
    const fs::path dir = out / (train ? "train" : "val") / seq_name(train ? i : i - d.train_count);
    synth::write_sample(dir, synth::generate(scene_for(d, seed), seed));
    log << fs::relative(dir, out).generic_string() << " seed=" << seed << "\n";
  }
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log) {
  // Fails before the model is allocated when the dataset is missing.
  const std::vector<Sequence> data = load_split(opt.data / "train");
  const fs::path ckpt = opt.run / "model.ckpt", loss_path = opt.run / "loss.log";

  SegNet<float> model(cfg.model);
  AdamW<float> optim(model.state().params);
  std::vector<std::string> kept;
  if (opt.resume) {
    std::ifstream prev_cfg(opt.run / "config.txt", std::ios::binary);
    std::stringstream ss;
    ss << prev_cfg.rdbuf();
    if (ss.str() != "# hfan " + version() + "\n" + cfg.to_text())
      throw ConfigError("--resume: config differs from " + (opt.run / "config.txt").string());
    const CheckpointInfo info = load_checkpoint(ckpt, model, &optim);
    if (!info.has_optimizer) throw FormatError(ckpt.string() + ": no optimiser state to resume from");
    std::ifstream in(loss_path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line) && kept.size() < info.step) kept.push_back(line);
    if (kept.size() != info.step) throw DataError(loss_path.string() + ": fewer lines than checkpoint step " + std::to_string(info.step));
    log << "resuming at iteration " << info.step << "\n";
  } else {
    write_resolved_config(opt.run, cfg);
  }

  std::ofstream loss(loss_path, std::ios::binary | std::ios::trunc);
  loss << "iter,loss,lr\n";
  for (const auto& l : kept) loss << l << "\n";
  loss.flush();
  if (optim.steps() == 0) save_checkpoint(ckpt, model, &optim);

  const std::uint64_t every = cfg.checkpoint_every;
  const auto start = std::chrono::steady_clock::now();
  double window = 0;
  std::size_t window_n = 0;
  run_training(model, optim, data, cfg.train, [&](std::uint64_t t, double l, double lr) {
    if (!std::isfinite(l)) throw NumericalError("train: non-finite loss at iteration " + std::to_string(t));
    loss << t << ',' << fmt17(l) << ',' << fmt17(lr) << '\n';
    loss.flush();
    window += l;
    ++window_n;
    if (every && (t + 1) % every == 0) save_checkpoint(ckpt, model, &optim);
    if ((t + 1) % 100 == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << "iter " << t + 1 << " loss " << window / double(window_n) << " (" << std::fixed << std::setprecision(1)
          << secs << "s)\n"
          << std::defaultfloat << std::setprecision(6);
      window = 0;
      window_n = 0;
    }
  }, opt.stop_at.value_or(std::numeric_limits<std::uint64_t>::max()));
  save_checkpoint(ckpt, model, &optim);
  log << "wrote " << ckpt.string() << "\n";
  return kExitOk;
}

void write_pgm(const fs::path& path, const Tensor<float>& mask) {
  const Shape& s = mask.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<char> raster(h * w);
  for (std::size_t i = 0; i < h * w; ++i) raster[i] = mask[i] > 0.5f ? char(255) : char(0);
  out.write(raster.data(), std::streamsize(raster.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

int cmd_infer(const RunConfig& cfg, const InferOptions& opt, std::ostream& log) {
  std::vector<Sequence> seqs;
  if (fs::exists(opt.input / "meta"))
    seqs.push_back({opt.input.filename().string(), synth::read_sample(opt.input)});
  else
    seqs = load_split(opt.input);
  SegNet<float> model(cfg.model);
  load_checkpoint(opt.checkpoint, model);
  const std::vector<double> scales = opt.scales ? *opt.scales : cfg.eval.scales;
  write_resolved_config(opt.out, cfg);
  for (const Sequence& seq : seqs) {
    const SequencePrediction p = predict_sequence(model, seq.sample, scales);
    const fs::path dir = opt.out / seq.name;
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "pgm");
    if (opt.probabilities) fs::create_directories(dir / "prob");
    for (std::size_t t = 0; t < seq.sample.length(); ++t) {
      const std::string stem = synth::frame_name(t);
      const Tensor<float> m = synth::frame_at(p.labels, t);
      io::save_tensor(dir / "masks" / stem, m);
      write_pgm(dir / "pgm" / fs::path(stem).replace_extension(".pgm"), m);
      if (opt.probabilities) io::save_tensor(dir / "prob" / stem, synth::frame_at(p.foreground, t));
    }
    log << seq.name << ": " << seq.sample.length() << " frames\n";
  }
  return kExitOk;
}

PredictionDir read_prediction(const fs::path& seq_dir) {
  if (!fs::is_directory(seq_dir / "masks")) throw DataError(seq_dir.string() + ": no masks directory");
  PredictionDir out;
  out.masks = stack_frames(sorted_files(seq_dir / "masks", ".ten"));
  if (fs::is_directory(seq_dir / "prob")) out.prob = stack_frames(sorted_files(seq_dir / "prob", ".ten"));
  return out;
}

int cmd_eval(const RunConfig& cfg, const fs::path& pred, const fs::path& gt, const fs::path& out, std::ostream& log) {
  const std::vector<Sequence> truth = load_split(gt);
  std::vector<eval::SequenceReport> reports;
  const std::optional<double> tol = cfg.eval.tol > 0 ? std::optional<double>(cfg.eval.tol) : std::nullopt;
  for (const Sequence& seq : truth) {
    if (seq.sample.masks.empty()) throw DataError(seq.name + ": no ground-truth masks");
    if (!fs::is_directory(pred / seq.name)) throw DataError(seq.name + ": no prediction directory in " + pred.string());
    const PredictionDir p = read_prediction(pred / seq.name);
    if (p.masks.dim(0) != seq.sample.length())
      throw DataError(seq.name + ": " + std::to_string(p.masks.dim(0)) + " predicted frames, " +
                      std::to_string(seq.sample.length()) + " ground-truth frames");
    reports.push_back(eval::evaluate_sequence(seq.name, p.masks, seq.sample.masks, p.prob ? &*p.prob : nullptr, tol));
  }
  const eval::EvalReport report = eval::aggregate(std::move(reports));
  write_resolved_config(out, cfg);
  std::ofstream table(out / "report.txt", std::ios::binary), kv(out / "metrics.txt", std::ios::binary);
  eval::write_table(table, report);
  eval::write_key_values(kv, report);
  if (!table || !kv) throw DataError("cannot write report files in " + out.string());
  eval::write_table(log, report);
  return kExitOk;
}

int cmd_gradcheck(bool corrupt, std::ostream& log) {
  SuiteOptions opts;
  opts.corrupt = corrupt;
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_suite(opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = true;
  log << std::left << std::setw(26) << "graph" << std::setw(14) << "worst_rel_err" << std::setw(7) << "cases"
      << "result\n";
  for (const auto& r : results) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.worst);
    log << std::setw(26) << r.graph << std::setw(14) << err << std::setw(7) << r.cases << (r.passed ? "PASS" : "FAIL")
        << "\n";
    ok = ok && r.passed;
  }
  log << std::right << (ok ? "all graphs pass" : "gradient check FAILED") << " (" << std::fixed << std::setprecision(1)
      << secs << "s)\n"
      << std::defaultfloat;
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace hfan::cli
