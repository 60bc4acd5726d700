#include "mrtts/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "mrtts/corpus.hpp"
#include "mrtts/errors.hpp"
#include "mrtts/evaluation.hpp"
#include "mrtts/mi.hpp"
#include "mrtts/pipeline.hpp"
#include "mrtts/semantics.hpp"
#include "mrtts/util.hpp"

namespace mrtts::cli {

namespace fs = std::filesystem;

namespace {

struct RunDir {
  fs::path root;
  fs::path manifest() const { return root / "manifest.txt"; }
  fs::path mels() const { return root / "mels"; }
  fs::path embeddings() const { return root / "embeddings.cache"; }
  fs::path index() const { return root / "selection.index"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path config() const { return root / "config.cfg"; }
  fs::path records() const { return root / "records.log"; }
  fs::path pretrain_records() const { return root / "pretrain_records.log"; }
  fs::path mi_trajectory() const { return root / "mi_trajectory.log"; }
  fs::path samples() const { return root / "samples"; }
};

PipelineConfig load_pipeline_config(const std::string& config_path) {
  if (config_path.empty()) return PipelineConfig{};
  return pipeline_config_from_kv(KeyValueFile::load(config_path));
}

Manifest load_run_corpus(const RunDir& run, const PipelineConfig& pc) {
  Manifest manifest = load_manifest(run.manifest());
  extract_corpus_mels(manifest, run.mels(), pc.features);
  return manifest;
}

StepSink progress_sink(const std::string& stage, int total) {
  return [stage, total](const TrainStepRecord& rec) {
    if (rec.step == 1 || rec.step % 50 == 0 || rec.step == total)
      std::cerr << stage << " step " << rec.step << "/" << total
                << " l_total=" << rec.loss.l_total << "\n";
  };
}

int cmd_prepare(const std::string& manifest_path, const std::string& out, int toy_n,
                long seed, bool force, const std::string& config_path) {
  RunDir run{out};
  fs::create_directories(run.root);
  PipelineConfig pc = load_pipeline_config(config_path);
  if (force) {
    fs::remove_all(run.mels());
    fs::remove(run.embeddings());
    fs::remove(run.index());
  }

  if (toy_n > 0) {
    generate_toy_corpus(run.root, toy_n, static_cast<std::uint64_t>(seed), pc.features);
  } else {
    if (manifest_path.empty())
      throw PreconditionError("prepare needs --manifest PATH or --toy N");
    Manifest src = load_manifest(manifest_path);
    // pin audio locations so the run directory is self-contained
    for (auto& u : src.entries)
      u.audio_path = fs::absolute(resolve_audio_path(src, u)).string();
    save_manifest(run.manifest(), src);
  }

  Manifest manifest = load_run_corpus(run, pc);
  std::cout << "prepared " << manifest.entries.size() << " utterances in " << run.root.string()
            << "\n";
  return 0;
}

int cmd_select(const std::string& run_path, int n, const std::string& embedder_spec,
               bool include_target, const std::string& config_path) {
  RunDir run{run_path};
  PipelineConfig pc = load_pipeline_config(config_path);
  Manifest manifest = load_manifest(run.manifest());

  std::string spec = embedder_spec == "toy" ? "toy-hash-v1" : embedder_spec;
  auto embedder = make_embedder(spec);
  EmbeddingCache cache = embed_manifest(manifest, *embedder);
  save_embedding_cache(run.embeddings(), cache);

  SelectionConfig sel;
  sel.n_references = n;
  sel.exclude_target = !include_target;
  SelectionIndex index = build_selection_index(manifest, cache, sel);
  save_selection_index(run.index(), index);
  std::cout << "selection index: " << index.size() << " targets, " << n
            << " references each\n";
  (void)pc;
  return 0;
}

SystemConfig make_system_config(const std::string& system_id, int steps, int batch, double lr,
                                long seed, bool init_from_pretrained) {
  SystemConfig sc;
  if (system_id == "pretrain") {
    sc.system_id = "pretrain";
    sc.architecture = Architecture::CMrtts;  // conditioning on, matrix flags unused
  } else {
    sc = SystemConfig::named(system_id);
  }
  if (steps > 0) sc.steps = steps;
  if (batch > 0) sc.batch_size = batch;
  if (lr > 0) sc.learning_rate = lr;
  if (seed >= 0) sc.seed = static_cast<std::uint64_t>(seed);
  sc.init_style_from_pretrained = init_from_pretrained;
  return sc;
}

int cmd_pretrain(const std::string& run_path, int steps, int batch, double lr, long seed,
                 const std::string& config_path) {
  RunDir run{run_path};
  PipelineConfig pc = load_pipeline_config(config_path);
  Manifest manifest = load_run_corpus(run, pc);
  SystemConfig sc = make_system_config("pretrain", steps, batch, lr, seed, false);

  TrainResult result =
      pretrain_style_system(manifest, pc, sc, progress_sink("pretrain", sc.steps));
  save_checkpoint(run.checkpoints() / "pretrain.ckpt", result.checkpoint);
  write_file(run.pretrain_records(), format_records_log(result.records));
  std::cout << "pretrain done: " << result.records.size() << " steps, final l_mel="
            << format_double(result.records.back().loss.l_mel) << "\n";
  return 0;
}

int cmd_train(const std::string& run_path, const std::string& system_id, int steps, int batch,
              double lr, long seed, const std::string& pretrained_path,
              bool init_from_pretrained, const std::string& config_path) {
  RunDir run{run_path};
  PipelineConfig pc = load_pipeline_config(config_path);
  Manifest manifest = load_run_corpus(run, pc);
  SystemConfig sc = make_system_config(system_id, steps, batch, lr, seed, init_from_pretrained);

  std::optional<SelectionIndex> index;
  if (sc.architecture == Architecture::UMrtts || sc.architecture == Architecture::CMrtts)
    index = load_selection_index(run.index());

  std::optional<Checkpoint> pretrained;
  fs::path ckpt_path =
      pretrained_path.empty() ? run.checkpoints() / "pretrain.ckpt" : fs::path(pretrained_path);
  if (fs::exists(ckpt_path)) pretrained = load_checkpoint(ckpt_path);
  else if (sc.use_mse || sc.use_mi)
    throw ConfigMismatchError(sc.system_id + " needs a pretrained checkpoint (" +
                              ckpt_path.string() + " not found); run pretrain first");

  TrainResult result =
      train_system(manifest, index ? &*index : nullptr, pretrained ? &*pretrained : nullptr, pc,
                   sc, progress_sink(sc.system_id, sc.steps));

  save_checkpoint(run.checkpoints() / (sc.system_id + ".ckpt"), result.checkpoint);
  write_file(run.records(), format_records_log(result.records));
  const bool measured = pretrained && sc.architecture != Architecture::Tacotron2;
  if (measured) write_file(run.mi_trajectory(), format_mi_trajectory(result.records));

  KeyValueFile kv = experiment_config_kv(pc, sc);
  kv.set("config_hash", std::to_string(kv.hash()));
  kv.save(run.config());
  std::cout << sc.system_id << " done: " << result.records.size()
            << " steps, final l_total=" << format_double(result.records.back().loss.l_total)
            << "\n";
  return 0;
}

int cmd_synthesize(const std::string& run_path, const std::string& text, const std::string& out,
                   std::string system_id, long seed, const std::string& config_path) {
  RunDir run{run_path};
  PipelineConfig pc = load_pipeline_config(config_path);
  if (system_id.empty()) {
    if (!fs::exists(run.config()))
      throw PreconditionError("no --system given and no config.cfg in the run directory");
    system_id = KeyValueFile::load(run.config()).get("system");
  }
  SystemConfig sc = make_system_config(system_id, 0, 0, 0, -1, false);

  Manifest manifest = load_run_corpus(run, pc);
  Checkpoint ckpt = load_checkpoint(run.checkpoints() / (sc.system_id + ".ckpt"));

  std::optional<EmbeddingCache> cache;
  if (sc.architecture == Architecture::UMrtts || sc.architecture == Architecture::CMrtts)
    cache = load_embedding_cache(run.embeddings());

  fs::path out_dir = out.empty() ? run.samples() : fs::path(out);
  SynthesisArtifacts art = synthesize(text, ckpt, manifest, cache ? &*cache : nullptr, pc, sc,
                                      out_dir, static_cast<std::uint64_t>(seed));

  // samples manifest for the WER harness (id|wav|text), deduplicated
  const std::string sample_id = art.wav_path.stem().string();
  const std::string line = sample_id + "|" + art.wav_path.filename().string() + "|" + text;
  fs::path sample_manifest = out_dir / "manifest.txt";
  std::vector<std::string> lines;
  if (fs::exists(sample_manifest)) lines = read_lines(sample_manifest);
  if (std::find(lines.begin(), lines.end(), line) == lines.end()) lines.push_back(line);
  std::ostringstream ss;
  for (const auto& l : lines) ss << l << '\n';
  write_file(sample_manifest, ss.str());

  std::cout << "wrote " << art.wav_path.string() << " (" << art.result.mel.rows()
            << " frames)\n";
  if (!art.references.empty()) {
    std::cout << "references:";
    for (const auto& [id, sim] : art.references) std::cout << ' ' << id << ':' << sim;
    std::cout << "\n";
  }
  return 0;
}

int cmd_eval_wer(const std::string& run_path, const std::string& samples_dir,
                 const std::string& adapter, const std::string& transcripts_path) {
  RunDir run{run_path};
  fs::path dir = samples_dir.empty() ? run.samples() : fs::path(samples_dir);
  fs::path manifest_path = dir / "manifest.txt";
  if (!fs::exists(manifest_path))
    throw MissingFileError(manifest_path.string() + " (synthesize some samples first)");

  std::vector<EvalSample> samples;
  for (const auto& line : read_lines(manifest_path)) {
    if (trim(line).empty()) continue;
    auto fields = split(line, '|');
    if (fields.size() != 3)
      throw MalformedRecordError(manifest_path.string(), samples.size() + 1, "id|wav|text");
    samples.push_back({fields[0], dir / fields[1], fields[2]});
  }

  std::unique_ptr<AsrAdapter> asr;
  if (adapter == "mock") {
    std::map<std::string, std::string> transcripts;
    if (!transcripts_path.empty())
      for (const auto& line : read_lines(transcripts_path)) {
        if (trim(line).empty()) continue;
        auto fields = split(line, '|');
        if (fields.size() != 2)
          throw MalformedRecordError(transcripts_path, 0, "expected id|transcript");
        transcripts[fields[0]] = fields[1];
      }
    auto mock = std::make_unique<MockAsrAdapter>(std::move(transcripts), true);
    for (const auto& s : samples) mock->set_reference(s.id, s.reference_text);
    asr = std::move(mock);
  } else if (adapter == "http") {
    asr = std::make_unique<HttpAsrAdapter>();
  } else {
    throw PreconditionError("unknown adapter: " + adapter + " (mock|http)");
  }

  WerReport report = evaluate_content_quality(samples, *asr);
  const std::string formatted = format_wer_report(report);
  write_file(dir / "wer_report.txt", formatted);
  std::cout << formatted;
  return 0;
}

int cmd_mi_bench(double rho, int samples, int steps, int batch, long seed) {
  GaussianBenchmarkResult r = mi_gaussian_benchmark(rho, samples, steps, batch,
                                                    static_cast<std::uint64_t>(seed));
  const bool pass = rho == 0.0 ? std::abs(r.estimate) <= 0.05
                               : std::abs(r.estimate - r.analytic) <= 0.1;
  std::cout << "rho=" << format_double(rho) << " estimate=" << format_double(r.estimate)
            << " analytic=" << format_double(r.analytic)
            << (rho == 0.0 ? " tolerance=0.05 " : " tolerance=0.1 ")
            << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 3;
}

void write_series_svg(const fs::path& out, const MiComparison& cmp) {
  const int width = 800, height = 400, margin = 50;
  double lo = 0.0, hi = 1e-9;
  long max_step = 1;
  for (const auto& run : cmp.runs) {
    for (double v : run.estimated_mi) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!run.steps.empty()) max_step = std::max(max_step, run.steps.back());
  }
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream ss;
  ss << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
     << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  for (std::size_t i = 0; i < cmp.runs.size(); ++i) {
    const auto& run = cmp.runs[i];
    ss << "<polyline fill='none' stroke='" << colors[i % 6] << "' stroke-width='1.5' points='";
    for (std::size_t k = 0; k < run.steps.size(); ++k) {
      double x = margin + (width - 2.0 * margin) * run.steps[k] / static_cast<double>(max_step);
      double y = height - margin -
                 (height - 2.0 * margin) * (run.estimated_mi[k] - lo) / (hi - lo);
      ss << x << ',' << y << ' ';
    }
    ss << "'/>\n<text x='" << margin << "' y='" << 20 + 16 * i << "' fill='" << colors[i % 6]
       << "' font-size='13'>" << run.run_dir.string()
       << " (tail mean " << format_double(run.tail_mean) << ")</text>\n";
  }
  ss << "</svg>\n";
  write_file(out, ss.str());
}

int cmd_plot(const std::vector<std::string>& run_dirs, const std::string& out,
             double tail_fraction) {
  std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
  MiComparison cmp = compare_mi_trajectories(dirs, tail_fraction);

  std::cout << "# rank|run|tail_mean\n";
  for (std::size_t rank = 0; rank < cmp.order.size(); ++rank) {
    const auto& run = cmp.runs[cmp.order[rank]];
    std::cout << rank + 1 << '|' << run.run_dir.string() << '|'
              << format_double(run.tail_mean) << "\n";
  }

  if (!out.empty()) {
    fs::path out_path(out);
    if (out_path.extension() == ".svg") {
      write_series_svg(out_path, cmp);
    } else {
      std::ostringstream ss;
      for (const auto& run : cmp.runs) {
        ss << "# run " << run.run_dir.string() << " tail_mean "
           << format_double(run.tail_mean) << '\n';
        for (std::size_t k = 0; k < run.steps.size(); ++k)
          ss << run.steps[k] << '\t' << format_double(run.estimated_mi[k]) << '\n';
      }
      write_file(out_path, ss.str());
    }
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"multi-reference expressive speech synthesis workbench"};
  app.require_subcommand(1);

  // prepare
  std::string prepare_manifest, prepare_out, prepare_config;
  int toy_n = 0;
  long prepare_seed = 7;
  bool prepare_force = false;
  auto* prepare = app.add_subcommand("prepare", "build or generate a corpus and extract mels");
  prepare->add_option("--manifest", prepare_manifest, "existing manifest (id|audio_path|text)");
  prepare->add_option("--out", prepare_out, "run directory")->required();
  prepare->add_option("--toy", toy_n, "generate a synthetic toy corpus of N utterances");
  prepare->add_option("--seed", prepare_seed, "toy corpus seed");
  prepare->add_option("--config", prepare_config, "key=value config file");
  prepare->add_flag("--force", prepare_force, "discard cached features first");

  // select
  std::string select_run, select_embedder = "toy", select_config;
  int select_n = 3;
  bool include_target = false;
  auto* select = app.add_subcommand("select", "embed texts and build the reference index");
  select->add_option("--run", select_run, "run directory")->required();
  select->add_option("--n", select_n, "references per target");
  select->add_option("--embedder", select_embedder, "toy | file:PATH");
  select->add_flag("--include-target", include_target, "allow the target as its own reference");
  select->add_option("--config", select_config, "key=value config file");

  // pretrain
  std::string pre_run, pre_config;
  int pre_steps = 300, pre_batch = 0;
  double pre_lr = 0.0;
  long pre_seed = -1;
  auto* pre = app.add_subcommand("pretrain", "stage one: style-token pretraining");
  pre->add_option("--run", pre_run, "run directory")->required();
  pre->add_option("--steps", pre_steps, "training steps");
  pre->add_option("--batch", pre_batch, "batch size");
  pre->add_option("--lr", pre_lr, "learning rate");
  pre->add_option("--seed", pre_seed, "seed");
  pre->add_option("--config", pre_config, "key=value config file");

  // train
  std::string train_run, train_system_id, train_pretrained, train_config;
  int train_steps = 0, train_batch = 0;
  double train_lr = 0.0;
  long train_seed = -1;
  bool train_init_from_pre = false;
  auto* train = app.add_subcommand("train", "stage two: train one system of the matrix");
  train->add_option("--run", train_run, "run directory")->required();
  train->add_option("--system", train_system_id, "B1..B4, P1..P10")->required();
  train->add_option("--steps", train_steps, "training steps");
  train->add_option("--batch", train_batch, "batch size");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--seed", train_seed, "seed");
  train->add_option("--pretrained", train_pretrained, "pretrained checkpoint path");
  train->add_flag("--init-style-from-pretrained", train_init_from_pre,
                  "initialize the trainable style encoder from stage one");
  train->add_option("--config", train_config, "key=value config file");

  // synthesize
  std::string synth_run, synth_text, synth_out, synth_system, synth_config;
  long synth_seed = 1234;
  auto* synth = app.add_subcommand("synthesize", "free-running synthesis to mel/align/wav");
  synth->add_option("--run", synth_run, "run directory")->required();
  synth->add_option("--text", synth_text, "input text")->required();
  synth->add_option("--out", synth_out, "output directory (default run/samples)");
  synth->add_option("--system", synth_system, "system id (default: run config)");
  synth->add_option("--seed", synth_seed, "synthesis seed");
  synth->add_option("--config", synth_config, "key=value config file");

  // eval-wer
  std::string eval_run, eval_samples, eval_adapter = "mock", eval_transcripts;
  auto* evalw = app.add_subcommand("eval-wer", "transcribe samples and report WER");
  evalw->add_option("--run", eval_run, "run directory")->required();
  evalw->add_option("--samples", eval_samples, "samples directory (default run/samples)");
  evalw->add_option("--adapter", eval_adapter, "mock | http");
  evalw->add_option("--transcripts", eval_transcripts, "id|transcript map for the mock adapter");

  // mi-bench
  double bench_rho = 0.9;
  int bench_samples = 2000, bench_steps = 1500, bench_batch = 256;
  long bench_seed = 5;
  auto* bench = app.add_subcommand("mi-bench", "correlated-Gaussian estimator benchmark");
  bench->add_option("--rho", bench_rho, "correlation in [0,1)");
  bench->add_option("--samples", bench_samples, "sample pairs");
  bench->add_option("--steps", bench_steps, "training steps");
  bench->add_option("--batch", bench_batch, "batch size");
  bench->add_option("--seed", bench_seed, "seed");

  // plot
  std::vector<std::string> plot_runs;
  std::string plot_out;
  double plot_tail = 0.2;
  auto* plot = app.add_subcommand("plot", "compare estimated-MI trajectories across runs");
  plot->add_option("--runs", plot_runs, "run directories")->required()->expected(-1);
  plot->add_option("--out", plot_out, "series file (.svg for a chart)");
  plot->add_option("--tail", plot_tail, "tail fraction for the window mean");

  std::vector<std::string> argv_copy = args;
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>("mrtts"));
  for (auto& a : argv_copy) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*prepare)
      return cmd_prepare(prepare_manifest, prepare_out, toy_n, prepare_seed, prepare_force,
                         prepare_config);
    if (*select)
      return cmd_select(select_run, select_n, select_embedder, include_target, select_config);
    if (*pre) return cmd_pretrain(pre_run, pre_steps, pre_batch, pre_lr, pre_seed, pre_config);
    if (*train)
      return cmd_train(train_run, train_system_id, train_steps, train_batch, train_lr,
                       train_seed, train_pretrained, train_init_from_pre, train_config);
    if (*synth)
      return cmd_synthesize(synth_run, synth_text, synth_out, synth_system, synth_seed,
                            synth_config);
    if (*evalw) return cmd_eval_wer(eval_run, eval_samples, eval_adapter, eval_transcripts);
    if (*bench)
      return cmd_mi_bench(bench_rho, bench_samples, bench_steps, bench_batch, bench_seed);
    if (*plot) return cmd_plot(plot_runs, plot_out, plot_tail);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace mrtts::cli
