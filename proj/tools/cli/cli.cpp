#include "cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <string>

#include "scopeformer/checkpoint.hpp"
#include "scopeformer/config.hpp"
#include "scopeformer/dicom.hpp"
#include "scopeformer/gradcheck_suite.hpp"
#include "scopeformer/ops.hpp"
#include "scopeformer/trainer.hpp"

namespace scopeformer::cli {

namespace {

namespace fs = std::filesystem;

struct SynthArgs {
  std::string out;
  std::size_t count = 0;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  std::string format = "sfi";
  double positive_rate = 0.3;
};

struct TrainArgs {
  std::string config;
  std::string resume;
  bool dry_run = false;
  bool force = false;
};

struct EvalArgs {
  std::string config;
  std::string ckpt;
  std::string data;
  bool csv = false;
  bool force = false;
};

struct GradcheckArgs {
  std::string op = "all";
  double tol = 1e-4;
  std::uint64_t seed = 1;
  bool list = false;
};

struct InspectArgs {
  std::string ckpt;
};

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

SampleFormat parse_format(const std::string& name, const std::string& path) {
  if (name == "sfi") return SampleFormat::Sfi;
  if (name == "dicom") return SampleFormat::Dicom;
  throw ConfigError(path, "expected \"sfi\" or \"dicom\", got \"" + name + "\"");
}

void apply_thread_env() {
  const char* env = std::getenv("SCOPEFORMER_THREADS");
  if (!env || !*env) return;
  std::size_t n = 0;
  const char* end = env + std::char_traits<char>::length(env);
  const auto [ptr, ec] = std::from_chars(env, end, n);
  if (ec != std::errc() || ptr != end || n == 0) {
    throw ConfigError("SCOPEFORMER_THREADS", "expected an integer >= 1, got \"" + std::string(env) + "\"");
  }
  set_num_threads(n);
}

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  SynthOptions opts;
  opts.count = a.count;
  opts.size = a.size;
  opts.seed = a.seed;
  opts.positive_rate = a.positive_rate;
  opts.format = parse_format(a.format, "--format");
  if (opts.count == 0) throw ConfigError("--count", "must be >= 1");
  if (!(opts.positive_rate >= 0.0 && opts.positive_rate <= 1.0)) {
    throw ConfigError("--positive-rate", "must be in [0, 1]");
  }
  const auto manifest = synth_generate(opts, a.out);
  err << "synth: wrote " << manifest.size() << " samples to " << a.out << '\n';
  out << (fs::path(a.out) / "manifest.jsonl").string() << '\n';
  return kOk;
}

struct ResolvedData {
  Manifest train;
  std::optional<Manifest> val;
};

ResolvedData resolve_data(const DataConfig& d, std::ostream& err) {
  fs::path train_path = d.manifest;
  fs::path val_path = d.val_manifest;
  if (d.synth) {
    const auto& s = *d.synth;
    SynthOptions opts;
    opts.count = s.count;
    opts.size = s.size;
    opts.seed = s.seed;
    opts.positive_rate = s.positive_rate;
    opts.format = s.format;
    synth_generate(opts, s.dir);
    err << "synth: " << s.count << " training samples in " << s.dir << '\n';
    if (train_path.empty()) train_path = fs::path(s.dir) / "manifest.jsonl";
    if (s.val_count > 0) {
      opts.count = s.val_count;
      opts.seed = mix64(s.seed, 0x76616cULL);
      synth_generate(opts, fs::path(s.dir) / "val");
      err << "synth: " << s.val_count << " validation samples in " << (fs::path(s.dir) / "val").string() << '\n';
      if (val_path.empty()) val_path = fs::path(s.dir) / "val" / "manifest.jsonl";
    }
  }
  if (train_path.empty()) throw ConfigError("data.manifest", "required unless data.synth is set");
  ResolvedData r{read_manifest(train_path), std::nullopt};
  if (!val_path.empty()) r.val = read_manifest(val_path);
  return r;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_run_config(a.config);
  const GeometryPlan plan = plan_geometry(cfg.model);
  if (a.dry_run) {
    out << plan.describe();
    out << "config_digest: " << hex64(config_digest(cfg.model)) << '\n';
    return kOk;
  }
  err << plan.describe();
  auto data = resolve_data(cfg.data, err);
  ScopeformerModel model(cfg.model);
  Trainer trainer(model, cfg.train, std::move(data.train), std::move(data.val));
  if (!a.resume.empty()) {
    trainer.resume(a.resume, a.force);
    err << "resumed from " << a.resume << " at step " << trainer.step() << '\n';
  }
  const std::size_t log_every = std::max<std::size_t>(1, cfg.train.steps / 20);
  trainer.on_step = [&](const StepRecord& r) {
    if (r.step % log_every != 0 && !r.val_loss && r.step != cfg.train.steps) return;
    err << "step " << r.step << '/' << cfg.train.steps << " train_loss=" << fmt(r.train_loss);
    if (r.val_loss) err << " val_loss=" << fmt(*r.val_loss) << " val_acc=" << fmt(*r.val_accuracy);
    err << " grad_norm=" << fmt(trainer.last_grad_norm()) << '\n';
  };
  const History history = trainer.run();
  if (!history.records.empty()) {
    const auto& last = history.records.back();
    out << "steps: " << last.step << '\n';
    out << "final_train_loss: " << fmt(last.train_loss) << '\n';
    if (last.val_loss) {
      out << "final_val_loss: " << fmt(*last.val_loss) << '\n';
      out << "final_val_accuracy: " << fmt(*last.val_accuracy) << '\n';
    }
  }
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_run_config(a.config);
  ScopeformerModel model(cfg.model);
  const Checkpoint ckpt = load_checkpoint(a.ckpt, config_digest(cfg.model), a.force);
  load_parameters(model, ckpt);
  const Manifest data = read_manifest(a.data);
  err << "eval: " << data.size() << " samples from " << a.data << '\n';
  SampleCache cache;
  const auto report = evaluate(model, data, LabelWeights(cfg.train.loss_weights), cfg.train.loss_eps,
                               cfg.train.batch_size, cfg.train.accuracy_mode, &cache);
  if (a.csv) {
    out << MetricsReport::csv_header(report.per_label_accuracy.size()) << '\n';
    out << report.csv_row(decode_u64(ckpt.at("trainer/step").values)) << '\n';
  } else {
    out << report.to_text();
  }
  return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  if (a.list) {
    for (const auto& c : gradcheck_cases()) out << c.name << '\n';
    return kOk;
  }
  std::vector<const GradCheckCase*> cases;
  if (a.op == "all") {
    for (const auto& c : gradcheck_cases()) cases.push_back(&c);
  } else if (const auto* c = find_gradcheck_case(a.op)) {
    cases.push_back(c);
  } else {
    throw ConfigError("--op", "unknown op \"" + a.op + "\" (see --list)");
  }
  constexpr double kStep = 1e-5;
  bool all_pass = true;
  char line[160];
  for (const auto* c : cases) {
    const auto r = c->run(a.seed, kStep, a.tol);
    all_pass = all_pass && r.pass;
    std::snprintf(line, sizeof line, "%-26s max_rel_err=%.3e max_abs_err=%.3e checked=%-6zu %s\n", c->name.c_str(),
                  r.max_rel_err, r.max_abs_err, r.checked, r.pass ? "ok" : "FAIL");
    out << line;
  }
  err << "gradcheck: " << cases.size() << " cases, tol " << a.tol << ", h " << kStep << '\n';
  return all_pass ? kOk : kRuntime;
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  out << "version: " << ckpt.version << '\n';
  out << "config_digest: " << hex64(ckpt.config_digest) << '\n';
  out << "arrays: " << ckpt.arrays.size() << '\n';
  for (const auto& arr : ckpt.arrays) {
    out << arr.name << ' ' << (arr.dtype == DType::F32 ? "f32" : "f64") << " [";
    for (std::size_t i = 0; i < arr.dims.size(); ++i) out << (i ? "," : "") << arr.dims[i];
    out << "]\n";
  }
  if (const auto* step = ckpt.find("trainer/step")) out << "step: " << decode_u64(step->values) << '\n';
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"CNN-ensemble + ViT hemorrhage classifier", "scopeformer"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic CT corpus with manifest.jsonl");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--count", synth.count, "Number of samples")->required();
  s->add_option("--size", synth.size, "Image edge length")->capture_default_str();
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--format", synth.format, "sfi or dicom")->capture_default_str();
  s->add_option("--positive-rate", synth.positive_rate, "Per-subtype positive probability")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train from a JSON run config");
  t->add_option("--config", train.config, "Run config (JSON)")->required();
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_flag("--dry-run", train.dry_run, "Validate and print geometry without allocating weights");
  t->add_flag("--force", train.force, "Resume even if the config digest differs");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  e->add_option("--config", eval.config, "Run config (JSON)")->required();
  e->add_option("--ckpt", eval.ckpt, "Checkpoint file")->required();
  e->add_option("--data", eval.data, "Manifest (JSON lines)")->required();
  e->add_flag("--csv", eval.csv, "Print one CSV row instead of key: value lines");
  e->add_flag("--force", eval.force, "Load even if the config digest differs");

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  g->add_option("--op", grad.op, "Case name or 'all'")->capture_default_str();
  g->add_option("--tol", grad.tol, "Max relative error")->capture_default_str();
  g->add_option("--seed", grad.seed, "Seed for random inputs")->capture_default_str();
  g->add_flag("--list", grad.list, "List case names");

  InspectArgs inspect;
  auto* i = app.add_subcommand("inspect", "Print checkpoint arrays, shapes and digest");
  i->add_option("--ckpt", inspect.ckpt, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    app.exit(ex, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& ex) {
    app.exit(ex, out, err);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    if (ex.get_exit_code() == 0) return kOk;
    err << app.help();
    return kUsage;
  }

  try {
    apply_thread_env();
    if (*s) return cmd_synth(synth, out, err);
    if (*t) return cmd_train(train, out, err);
    if (*e) return cmd_eval(eval, out, err);
    if (*g) return cmd_gradcheck(grad, out, err);
    if (*i) return cmd_inspect(inspect, out);
  } catch (const ConfigError& ex) {
    err << "error: invalid config: " << ex.what() << '\n';
    return kValidation;
  } catch (const CheckpointError& ex) {
    err << "error: checkpoint: " << ex.what() << '\n';
    return ex.kind() == CheckpointError::Kind::DigestMismatch ? kValidation : kRuntime;
  } catch (const TrainingDiverged& ex) {
    err << "error: " << ex.what() << '\n';
    return kRuntime;
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return kValidation;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace scopeformer::cli
