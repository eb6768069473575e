// Copyright 2026 The mexosd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mexosd/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "mexosd/checkpoint.hpp"
#include "mexosd/data.hpp"
#include "mexosd/error.hpp"
#include "mexosd/inference.hpp"
#include "mexosd/metrics.hpp"
#include "mexosd/rttm.hpp"
#include "mexosd/training.hpp"
#include "mexosd/wav.hpp"

namespace mexosd::cli {
namespace {

namespace fs = std::filesystem;

/// Contradictory or invalid flag combinations found after parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::string config, manifest, dev_manifest, checkpoint, out, ref, hyp, dataset;
  std::string mode = "normal";
  std::string basis = "reference";
  std::string gammas = "0.5,0.6,0.7,0.8,0.9,0.95";
  double gamma = 0.9;
  double hop = 0.3;
  double train_hop = 0.75;
  double proportion = 0.4;
  double crop = 6.0;
  double max_gain = 5.0;
  bool dc = false;
  bool no_sources = false;
  std::uint64_t seed = 0;
  int epochs = 50;
  std::size_t batch = 32;
  std::size_t jobs = 1;
};

struct Commands {
  std::unique_ptr<CLI::App> app;
  CLI::App* train = nullptr;
  CLI::App* infer = nullptr;
  CLI::App* evaluate = nullptr;
  CLI::App* mix = nullptr;
  CLI::App* analyze = nullptr;
};

Commands make_app(Options& o) {
  Commands c;
  c.app = std::make_unique<CLI::App>("Joint voice activity and overlapped speech detection with a multi-exit CRNN.",
                                     "mexosd");
  auto& app = *c.app;
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  auto* t = c.train = app.add_subcommand("train", "Train a model from a manifest of audio + RTTM pairs.");
  t->add_option("--config", o.config, "Key = value config with [model] and [training] sections")
      ->check(CLI::ExistingFile);
  t->add_option("--manifest", o.manifest, "Training manifest (JSON lines: audio, rttm, id)")
      ->required()
      ->check(CLI::ExistingFile);
  t->add_option("--dev-manifest", o.dev_manifest,
                "Dev manifest; without it some training recordings are held out")
      ->check(CLI::ExistingFile);
  t->add_option("--out", o.out, "Output directory for checkpoints and history")->required();
  t->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint (must hold training state)")
      ->check(CLI::ExistingFile);
  t->add_flag("--dc", o.dc, "Use dense connections between stages");
  t->add_option("--seed", o.seed, "Seed for initialization and batch order");
  t->add_option("--epochs", o.epochs, "Epochs (overrides the config)");
  t->add_option("--batch", o.batch, "Batch size (overrides the config; the reference recipe uses 256)");
  t->add_option("--hop", o.train_hop, "Hop in seconds between training chunks");

  auto add_inference = [&](CLI::App* s) {
    s->add_option("--mode", o.mode, "Inference mode")->check(CLI::IsMember({"normal", "exiting"}));
    s->add_option("--gamma", o.gamma, "Exit threshold (exiting mode only)")->check(CLI::NonNegativeNumber);
    s->add_option("--hop", o.hop, "Hop in seconds between 1.5 s windows");
    s->add_option("--jobs", o.jobs, "Recordings processed in parallel")->check(CLI::PositiveNumber);
  };

  auto* i = c.infer = app.add_subcommand("infer", "Write VAD/OSD segments and a frame dump for each recording.");
  i->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  i->add_option("--manifest", o.manifest, "Audio manifest (rttm optional)")->required()->check(CLI::ExistingFile);
  i->add_option("--out", o.out, "Output directory")->required();
  add_inference(i);

  auto* e = c.evaluate = app.add_subcommand(
      "evaluate", "Score hypotheses against references (--ref/--hyp, or --manifest with --checkpoint).");
  e->add_option("--ref", o.ref, "Reference RTTM (speaker or detection labels)")->check(CLI::ExistingFile);
  e->add_option("--hyp", o.hyp, "Hypothesis RTTM (speaker or detection labels)")->check(CLI::ExistingFile);
  e->add_option("--manifest", o.manifest, "Manifest with audio + reference RTTM")->check(CLI::ExistingFile);
  e->add_option("--checkpoint", o.checkpoint, "Model used to produce hypotheses")->check(CLI::ExistingFile);
  e->add_option("--out", o.out, "Directory for report.json and report.txt");
  e->add_option("--dataset", o.dataset, "Dataset name shown in the report");
  add_inference(e);

  auto* m = c.mix = app.add_subcommand("mix", "Synthesize overlapped mixtures from a manifest.");
  m->add_option("--manifest", o.manifest, "Source manifest (audio + rttm)")->required()->check(CLI::ExistingFile);
  m->add_option("--out", o.out, "Output directory for WAV, RTTM and manifest.jsonl")->required();
  m->add_option("--proportion", o.proportion, "Mixture duration as a fraction of the source duration")
      ->check(CLI::NonNegativeNumber);
  m->add_option("--crop", o.crop, "Crop length in seconds")->check(CLI::PositiveNumber);
  m->add_option("--max-gain-db", o.max_gain, "Second source gain drawn from U[-g, g] dB")
      ->check(CLI::NonNegativeNumber);
  m->add_option("--seed", o.seed, "Seed for pair, crop and gain selection");
  m->add_flag("--no-sources", o.no_sources, "List only the mixtures in the output manifest");

  auto* a = c.analyze = app.add_subcommand("analyze-exits", "Per-class exit rates over a grid of thresholds.");
  a->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  a->add_option("--manifest", o.manifest, "Manifest with audio + reference RTTM")->required()->check(CLI::ExistingFile);
  a->add_option("--out", o.out, "Directory for exit_rates.{json,txt,csv}");
  a->add_option("--gammas", o.gammas, "Comma-separated thresholds");
  a->add_option("--basis", o.basis, "Class used to group frames")->check(CLI::IsMember({"reference", "predicted"}));
  a->add_option("--hop", o.hop, "Hop in seconds between 1.5 s windows");
  a->add_option("--jobs", o.jobs, "Recordings processed in parallel")->check(CLI::PositiveNumber);
  a->add_option("--dataset", o.dataset, "Dataset name shown in the report");
  return c;
}

std::vector<double> parse_gammas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double g = std::stod(item, &used);
      if (used != item.size() || !(g >= 0.0)) throw std::invalid_argument(item);
      out.push_back(g);
    } catch (const std::exception&) {
      throw UsageError("--gammas: cannot parse '" + item + "' as a non-negative number");
    }
  }
  if (out.empty()) throw UsageError("--gammas: no thresholds given");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path.string());
  f << text;
}

std::vector<data::Recording> load_all(const std::vector<data::ManifestEntry>& entries) {
  std::vector<data::Recording> out;
  for (const auto& e : entries) out.push_back(data::load_recording(e));
  return out;
}

inference::InferenceConfig inference_config(const Options& o, const CLI::App& sub) {
  inference::InferenceConfig cfg;
  cfg.mode = inference::parse_mode(o.mode);
  if (sub.count("--gamma") > 0 && cfg.mode == inference::Mode::normal) {
    throw UsageError("--gamma only applies with --mode exiting");
  }
  cfg.gamma = o.gamma;
  cfg.hop_s = o.hop;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

int cmd_train(const Options& o, const CLI::App& sub, std::ostream& out) {
  training::RunConfig rc;
  if (!o.config.empty()) rc = training::read_run_config(o.config);
  if (o.dc) rc.model.dc_enabled = true;
  if (sub.count("--epochs")) rc.training.epochs = o.epochs;
  if (sub.count("--batch")) rc.training.batch_size = o.batch;
  if (sub.count("--seed")) rc.training.seed = o.seed;
  if (sub.count("--hop")) rc.training.train_hop_s = o.train_hop;
  try {
    rc.model.validate();
    rc.training.validate();
    data::hop_frames(rc.training.train_hop_s);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  fs::create_directories(o.out);
  std::optional<LoadedCheckpoint> resumed;
  if (!o.checkpoint.empty()) {
    resumed.emplace(load_checkpoint(o.checkpoint, &rc.model));
    if (!resumed->training_state) throw CheckpointError(o.checkpoint + ": no training state to resume from");
  }
  MultiExitNet model = resumed ? resumed->model : MultiExitNet::build(rc.model, rc.training.seed);

  data::ChunkGeometry geo;
  geo.sample_rate = rc.model.sample_rate_hz;
  geo.frames_per_chunk = rc.model.frames_per_chunk;
  std::vector<data::ChunkSample> train_set, dev_set;
  if (rc.training.epochs > 0) {
    auto recordings = load_all(data::read_manifest(o.manifest));
    std::vector<data::Recording> dev_recordings;
    if (!o.dev_manifest.empty()) {
      dev_recordings = load_all(data::read_manifest(o.dev_manifest));
    } else if (recordings.size() > 1) {
      std::vector<data::Recording> keep;
      for (std::size_t i = 0; i < recordings.size(); ++i) {
        const bool hold = recordings.size() < 10 ? i + 1 == recordings.size() : i % 10 == 9;
        (hold ? dev_recordings : keep).push_back(std::move(recordings[i]));
      }
      recordings = std::move(keep);
    }
    train_set = data::chunk_recordings(recordings, rc.training.train_hop_s, geo);
    if (!dev_recordings.empty()) {
      dev_set = data::chunk_recordings(dev_recordings, rc.training.train_hop_s, geo);
    } else {
      // A single recording: hold out every 10th chunk instead.
      std::vector<data::ChunkSample> keep;
      for (std::size_t i = 0; i < train_set.size(); ++i) {
        (i % 10 == 9 ? dev_set : keep).push_back(std::move(train_set[i]));
      }
      train_set = std::move(keep);
      if (dev_set.empty()) dev_set = train_set;
    }
    spdlog::info("training on {} chunks, {} dev chunks", train_set.size(), dev_set.size());
  }

  const fs::path dir(o.out);
  std::ofstream history(dir / "history.jsonl", resumed ? std::ios::app : std::ios::trunc);
  training::FitOptions fo;
  if (resumed) fo.resume = &*resumed->training_state;
  fo.on_epoch = [&](const training::EpochRecord& rec, const MultiExitNet& live, const training::Trainer& tr) {
    history << training::epoch_record_to_json(rec).dump() << '\n' << std::flush;
    const TrainingState st = tr.state();
    save_checkpoint(dir / "last.ckpt", live, &st);
  };
  const auto result = training::fit(std::move(model), train_set, dev_set, rc.training, fo);
  save_checkpoint(dir / "best.ckpt", result.best);
  out << "wrote " << (dir / "best.ckpt").string() << " after " << result.history.size() << " epoch(s)\n";
  return 0;
}

int cmd_infer(const Options& o, const CLI::App& sub, std::ostream& out) {
  const auto cfg = inference_config(o, sub);
  const auto model = load_checkpoint(o.checkpoint).model;
  const auto entries = data::read_manifest(o.manifest, false);
  std::vector<Audio> audio;
  for (const auto& e : entries) {
    audio.push_back(read_wav(e.audio_path));
    require_model_audio(audio.back());
  }
  const auto preds = inference::predict_recordings(model, audio, cfg, o.jobs);

  const fs::path dir(o.out);
  fs::create_directories(dir / "frames");
  std::vector<SegmentAnnotation> all;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto seg = inference::frames_to_segments(inference::fused_labels(preds[i]));
    const auto ann = inference::to_annotations(seg, entries[i].recording_id);
    all.insert(all.end(), ann.begin(), ann.end());
    std::ofstream dump(dir / "frames" / (entries[i].recording_id + ".jsonl"));
    inference::write_frame_dump(dump, preds[i]);
    out << entries[i].recording_id << ": " << seg.vad.size() << " speech, " << seg.osd.size()
        << " overlap segment(s)\n";
  }
  write_rttm(dir / "hyp.rttm", all);
  out << "wrote " << (dir / "hyp.rttm").string() << '\n';
  return 0;
}

data::FrameLabelSequence labels_of(const std::vector<SegmentAnnotation>& segs, double duration) {
  return inference::is_detection_output(segs) ? inference::detection_labels(segs, duration)
                                              : data::frame_labels(segs, duration);
}

void emit_report(const metrics::ReportBundle& bundle, const Options& o, const std::string& stem, std::ostream& out) {
  const std::string text = metrics::render_text(bundle);
  out << text;
  if (o.out.empty()) return;
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / (stem + ".txt"), text);
  write_text(fs::path(o.out) / (stem + ".json"), metrics::to_json(bundle).dump(2) + "\n");
  if (!bundle.exits.empty()) write_text(fs::path(o.out) / (stem + ".csv"), metrics::render_csv(bundle));
}

int cmd_evaluate(const Options& o, const CLI::App& sub, std::ostream& out) {
  const bool pair = !o.ref.empty() || !o.hyp.empty();
  const bool model_run = !o.checkpoint.empty();
  if (pair && (o.ref.empty() || o.hyp.empty())) throw UsageError("--ref and --hyp must be given together");
  if (pair && model_run) throw UsageError("use either --ref/--hyp or --manifest/--checkpoint, not both");
  if (!pair && (!model_run || o.manifest.empty())) {
    throw UsageError("need --ref and --hyp, or --manifest and --checkpoint");
  }
  const auto cfg = inference_config(o, sub);

  metrics::DetectionCounts vad, osd;
  metrics::ExitRateReport exits;
  exits.dataset = o.dataset;
  exits.gamma = cfg.gamma;
  if (pair) {
    const auto ref = read_rttm(o.ref);
    const auto hyp = read_rttm(o.hyp);
    std::vector<std::string> ids;
    for (const auto* list : {&ref, &hyp}) {
      for (const auto& s : *list) {
        if (std::find(ids.begin(), ids.end(), s.recording_id) == ids.end()) ids.push_back(s.recording_id);
      }
    }
    for (const auto& id : ids) {
      const auto r = segments_for(ref, id);
      const auto h = segments_for(hyp, id);
      if (r.empty()) spdlog::warn("recording '{}' has no reference segments; scoring against silence", id);
      double duration = 0.0;
      for (const auto* list : {&r, &h}) {
        for (const auto& s : *list) duration = std::max(duration, s.offset_s());
      }
      const auto rl = labels_of(r, duration), hl = labels_of(h, duration);
      vad += metrics::count_detection(rl.labels, hl.labels, metrics::Task::vad);
      osd += metrics::count_detection(rl.labels, hl.labels, metrics::Task::osd);
    }
  } else {
    const auto model = load_checkpoint(o.checkpoint).model;
    const auto recordings = load_all(data::read_manifest(o.manifest));
    std::vector<Audio> audio;
    for (const auto& r : recordings) audio.push_back(r.audio);
    const auto preds = inference::predict_recordings(model, audio, cfg, o.jobs);
    for (std::size_t i = 0; i < recordings.size(); ++i) {
      const auto hl = inference::fused_labels(preds[i]);
      vad += metrics::count_detection(recordings[i].labels.labels, hl.labels, metrics::Task::vad);
      osd += metrics::count_detection(recordings[i].labels.labels, hl.labels, metrics::Task::osd);
      if (cfg.mode == inference::Mode::exiting) {
        exits += metrics::exit_rates(preds[i], recordings[i].labels, cfg.gamma,
                                     static_cast<std::size_t>(model.config().num_exits),
                                     metrics::ClassBasis::reference, o.dataset);
      }
    }
  }

  metrics::ReportBundle bundle;
  bundle.dataset = o.dataset;
  bundle.detection.push_back(metrics::report_from_counts(metrics::Task::vad, vad));
  bundle.detection.push_back(metrics::report_from_counts(metrics::Task::osd, osd));
  if (!exits.counts.empty()) bundle.exits.push_back(exits);
  emit_report(bundle, o, "report", out);
  return 0;
}

int cmd_mix(const Options& o, std::ostream& out) {
  const auto entries = data::read_manifest(o.manifest);
  const auto sources = load_all(entries);
  data::CorpusMixOptions mo;
  mo.proportion = o.proportion;
  mo.crop_s = o.crop;
  mo.max_gain_db = o.max_gain;
  const auto mixes = data::mix_corpus(sources, mo, o.seed);

  const fs::path dir = fs::absolute(o.out);
  fs::create_directories(dir);
  std::vector<data::ManifestEntry> manifest;
  if (!o.no_sources) {
    for (const auto& e : entries) manifest.push_back({fs::absolute(e.audio_path), fs::absolute(e.annotation_path),
                                                      e.recording_id});
  }
  double seconds = 0.0;
  for (const auto& m : mixes) {
    const fs::path wav = dir / (m.id + ".wav"), rttm = dir / (m.id + ".rttm");
    write_wav(wav, m.audio);
    write_rttm(rttm, m.segments);
    manifest.push_back({wav, rttm, m.id});
    seconds += m.audio.duration_s();
  }
  data::write_manifest(dir / "manifest.jsonl", manifest);
  out << "wrote " << mixes.size() << " mixture(s), " << seconds << " s, to " << (dir / "manifest.jsonl").string()
      << '\n';
  return 0;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  const auto gammas = parse_gammas(o.gammas);
  const auto basis = o.basis == "predicted" ? metrics::ClassBasis::predicted : metrics::ClassBasis::reference;
  const auto model = load_checkpoint(o.checkpoint).model;
  const auto recordings = load_all(data::read_manifest(o.manifest));
  std::vector<Audio> audio;
  for (const auto& r : recordings) audio.push_back(r.audio);

  metrics::ReportBundle bundle;
  bundle.dataset = o.dataset;
  for (double g : gammas) {
    inference::InferenceConfig cfg;
    cfg.mode = inference::Mode::exiting;
    cfg.gamma = g;
    cfg.hop_s = o.hop;
    const auto preds = inference::predict_recordings(model, audio, cfg, o.jobs);
    metrics::ExitRateReport total;
    total.dataset = o.dataset;
    total.gamma = g;
    total.basis = basis;
    for (std::size_t i = 0; i < recordings.size(); ++i) {
      total += metrics::exit_rates(preds[i], recordings[i].labels, g,
                                   static_cast<std::size_t>(model.config().num_exits), basis, o.dataset);
    }
    bundle.exits.push_back(std::move(total));
  }
  emit_report(bundle, o, "exit_rates", out);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  Commands c = make_app(o);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    c.app->parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return c.app->exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return c.app->exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "mexosd: usage error: " << e.what() << '\n';
    return 2;
  }
  try {
    if (*c.train) return cmd_train(o, *c.train, out);
    if (*c.infer) return cmd_infer(o, *c.infer, out);
    if (*c.evaluate) return cmd_evaluate(o, *c.evaluate, out);
    if (*c.mix) return cmd_mix(o, out);
    if (*c.analyze) return cmd_analyze(o, out);
  } catch (const UsageError& e) {
    err << "mexosd: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "mexosd: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

std::string help_text(std::string_view subcommand) {
  std::vector<std::string> args;
  if (!subcommand.empty()) args.emplace_back(subcommand);
  args.emplace_back("--help");
  std::ostringstream out, err;
  run(args, out, err);
  return out.str();
}

}  // namespace mexosd::cli
