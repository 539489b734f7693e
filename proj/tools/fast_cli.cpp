#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fast/checkpoint.hpp"
#include "fast/io.hpp"
#include "fast/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fast;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string profile = "toy";
  bool quiet = false;
  bool force = false;
};

struct Args {
  std::string data_dir;
  std::string init;
  std::string teacher;
  std::string student;
  std::string traces;
  std::string output = "metrics.csv";
  std::string mode = "all";
  std::vector<std::size_t> ks;
  std::vector<std::string> modes;
  std::optional<std::size_t> utterances, test_utterances, epochs, stage1, stage2, m, chunk, stop_after;
  std::optional<double> p;
  std::size_t t_max = 100;
  bool allow_small_m = false;
  bool resume = false;
};

class Runner {
 public:
  Runner(const Globals& g, const Args& a) : g_(g), a_(a), profile_(profile_by_name(g.profile)) {
    if (a.m) profile_.m = profile_.fad.m = *a.m;
    if (a.p) profile_.discard_rate = *a.p;
    if (a.chunk) profile_.chunk_frames = *a.chunk;
    if (!a.ks.empty()) profile_.ks = a.ks;
    if (a.utterances) profile_.corpus.utterances = *a.utterances;
    if (a.test_utterances) profile_.test_utterances = *a.test_utterances;
    profile_.fad.allow_small_m = a.allow_small_m;
    fs::create_directories(g.out_dir);
  }

  int gen_data() {
    for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl"})
      if (fs::exists(out(name)) && !g_.force)
        throw UsageError(out(name).string() + " exists; pass --force to overwrite");
    const DataSplits d = generate_splits(profile_, g_.seed);
    write_corpus_jsonl(out("train.jsonl"), d.train);
    write_corpus_jsonl(out("dev.jsonl"), d.dev);
    write_corpus_jsonl(out("test.jsonl"), d.test);
    say("wrote " + std::to_string(d.train.size()) + "/" + std::to_string(d.dev.size()) + "/" +
        std::to_string(d.test.size()) + " utterances to " + g_.out_dir);
    return kOk;
  }

  int pretrain() {
    const auto train = load_split("train");
    PretrainConfig pc = profile_.pretrain;
    if (a_.epochs) pc.epochs = *a_.epochs;
    FastModel model = fresh_model(train);
    const JsonlLog log = fresh_log("pretrain_log.jsonl");
    const auto losses = pretrain_acoustic(model, train, pc, stage_seeds(g_.seed).pretrain, log.sink());
    save_model(out("pretrained.ckpt"), model);
    if (!losses.empty()) say("pretraining done, final reconstruction loss " + std::to_string(losses.back()));
    return kOk;
  }

  int train_offline_cmd() {
    const auto train = load_split("train");
    const auto dev = load_split("dev");
    OfflineTrainConfig oc = profile_.offline;
    if (a_.stage1) oc.stage1_epochs = *a_.stage1;
    if (a_.stage2) oc.stage2_epochs = *a_.stage2;
    const fs::path state_path = out("teacher.state.ckpt");

    FastModel model;
    std::optional<TrainState> state;
    if (a_.resume) {
      if (!fs::exists(state_path)) throw DataError("nothing to resume: " + state_path.string() + " is missing");
      LoadedModel lm = load_model(state_path);
      model = lm.model;
      state = TrainState::from_tensors(lm.extra, model.params());
      say("resuming offline training after epoch " + std::to_string(state->epochs_done));
    } else {
      model = a_.init.empty() ? fresh_model(train) : load_model(a_.init).model;
    }
    const JsonlLog log = a_.resume ? JsonlLog(out("offline_log.jsonl")) : fresh_log("offline_log.jsonl");
    TrainControl control;
    control.resume = state ? &*state : nullptr;
    control.stop_after = a_.stop_after.value_or(0);
    control.checkpoint = [&](const TrainState& s, const FastModel& m) {
      save_model(state_path, m, s.to_tensors(m.params()));
      say("epoch " + std::to_string(s.epochs_done) + " done");
    };
    const OfflineHistory h = train_offline(model, train, dev, oc, stage_seeds(g_.seed).offline, log.sink(), control);
    if (control.stop_after && h.stage1_dev.size() + h.stage2_dev.size() < oc.stage1_epochs + oc.stage2_epochs) {
      say("stopped early; continue with --resume");
      return kOk;
    }
    save_model(out("teacher.ckpt"), model);
    fs::remove(state_path);
    say("offline BLEU on dev (greedy): " + fmt(offline_bleu(model, dev)));
    return kOk;
  }

  int train_fad_cmd() {
    profile_.fad.validate();
    const auto train = load_split("train");
    const FastModel teacher = load_model(path_or(a_.teacher, "teacher.ckpt")).model;
    FadConfig fc = profile_.fad;
    if (a_.epochs) fc.epochs = *a_.epochs;
    const fs::path state_path = out("student.state.ckpt");

    std::optional<FastModel> partial;
    std::optional<TrainState> state;
    if (a_.resume) {
      if (!fs::exists(state_path)) throw DataError("nothing to resume: " + state_path.string() + " is missing");
      LoadedModel lm = load_model(state_path);
      partial = lm.model;
      state = TrainState::from_tensors(lm.extra, fad_trainable(*partial));
      say("resuming distillation after epoch " + std::to_string(state->epochs_done));
    }
    const JsonlLog log = a_.resume ? JsonlLog(out("fad_log.jsonl")) : fresh_log("fad_log.jsonl");
    TrainControl control;
    control.resume = state ? &*state : nullptr;
    control.stop_after = a_.stop_after.value_or(0);
    bool finished = false;
    control.checkpoint = [&](const TrainState& s, const FastModel& m) {
      save_model(state_path, m, s.to_tensors(fad_trainable(m)));
      finished = s.epochs_done == fc.epochs;
      say("epoch " + std::to_string(s.epochs_done) + " done");
    };
    const FastModel student = train_fad(teacher, train, fc, stage_seeds(g_.seed).fad, log.sink(), control,
                                        partial ? &*partial : nullptr);
    if (control.stop_after && !finished && fc.epochs > 0) {
      say("stopped early; continue with --resume");
      return kOk;
    }
    save_model(out("student.ckpt"), student);
    fs::remove(state_path);
    return kOk;
  }

  int eval_streaming() {
    const auto test = load_split("test");
    const FastModel teacher = load_model(path_or(a_.teacher, "teacher.ckpt")).model;
    std::optional<FastModel> student;
    const fs::path student_path = path_or(a_.student, "student.ckpt");
    std::vector<std::string> modes = a_.modes;
    if (modes.empty()) {
      modes = {"baseline", "fai"};
      if (fs::exists(student_path)) modes.push_back("fast");
    }
    std::vector<ModeSpec> specs;
    for (const auto& mode : modes) {
      if (mode == "baseline") {
        specs.push_back({mode, &teacher, false});
      } else if (mode == "fai") {
        specs.push_back({mode, &teacher, true});
      } else if (mode == "fast") {
        if (!student) student = load_model(student_path).model;
        specs.push_back({mode, &*student, true});
      } else {
        throw UsageError("unknown mode '" + mode + "'");
      }
    }
    std::vector<TraceRecord> traces;
    const auto rows =
        evaluate_modes(specs, test, profile_.ks, profile_.m, profile_.discard_rate, profile_.chunk_frames, &traces);
    write_traces_jsonl(out("traces.jsonl"), traces);
    write_metrics_csv(out(a_.output), rows);
    for (const auto& r : rows)
      say(r.mode + " k=" + std::to_string(r.k) + " BLEU " + fmt(r.report.bleu) + " AL " + fmt(r.report.al_ms));
    return kOk;
  }

  int analyze_gap() {
    const auto test = load_split("test");
    const FastModel teacher = load_model(path_or(a_.teacher, "teacher.ckpt")).model;
    const bool all = a_.mode == "all";
    if (!all && a_.mode != "baseline" && a_.mode != "fai" && a_.mode != "fast")
      throw UsageError("unknown mode '" + a_.mode + "'");
    std::optional<FastModel> student;
    if (all || a_.mode == "fast") student = load_model(path_or(a_.student, "student.ckpt")).model;

    struct Entry {
      std::string mode;
      const FastModel* model;
      PrefixEncoding enc;
    };
    std::vector<Entry> entries;
    if (all || a_.mode == "baseline") entries.push_back({"baseline", &teacher, {false, profile_.m}});
    if (all || a_.mode == "fai") entries.push_back({"fai", &teacher, {true, profile_.m}});
    if (all || a_.mode == "fast") entries.push_back({"fast", &*student, {true, profile_.m}});

    std::vector<SimilarityProfile> profiles;
    std::vector<StepCurves> steps;
    std::vector<std::string> group_rows;
    for (const auto& e : entries) {
      profiles.push_back(reverse_position_profile(*e.model, test, e.enc, e.mode, a_.t_max));
      steps.push_back(per_step_stats(*e.model, test, e.enc, e.mode));
      const auto groups = degradation_groups(*e.model, test, e.enc, std::min<std::size_t>(5, test.size()));
      for (std::size_t k = 0; k < groups.groups.size(); ++k)
        group_rows.push_back(std::to_string(k + 1) + "," + e.mode + "," + fmt9(groups.group_mean[k]) + "," +
                             std::to_string(groups.groups[k].size()));
      say(e.mode + " s_-1 " + fmt(profiles.back().mean[0]));
    }
    write_profile_csv(out("gap_profile.csv"), profiles);
    write_step_csv(out("gap_steps.csv"), steps);
    write_file_atomic(out("gap_groups.csv"), [&](std::ostream& o) {
      o << "group,mode,mean,count\n";
      for (const auto& r : group_rows) o << r << '\n';
    });
    write_profile_csv(out("predicted_context.csv"), {predicted_context_similarity(teacher, test, profile_.m)});
    return kOk;
  }

  int metrics() {
    if (a_.traces.empty()) throw UsageError("--traces is required");
    write_metrics_csv(out(a_.output), metrics_from_traces(read_traces_jsonl(a_.traces)));
    say("wrote " + out(a_.output).string());
    return kOk;
  }

  int pipeline() {
    Globals g = g_;
    g.force = true;
    Args a = a_;
    a.data_dir.clear();
    Runner(g, a).gen_data();
    a.init = out("pretrained.ckpt").string();
    Runner(g, a).pretrain();
    Runner(g, a).train_offline_cmd();
    Runner(g, a).train_fad_cmd();
    Runner(g, a).eval_streaming();
    return kOk;
  }

 private:
  fs::path out(const std::string& name) const { return fs::path(g_.out_dir) / name; }

  fs::path path_or(const std::string& given, const std::string& fallback) const {
    return given.empty() ? out(fallback) : fs::path(given);
  }

  std::vector<Utterance> load_split(const std::string& name) const {
    const fs::path dir = a_.data_dir.empty() ? fs::path(g_.out_dir) : fs::path(a_.data_dir);
    auto corpus = read_corpus_jsonl(dir / (name + ".jsonl"));
    if (corpus.empty()) throw DataError("no data: " + (dir / (name + ".jsonl")).string() + " is empty");
    return corpus;
  }

  FastModel fresh_model(const std::vector<Utterance>& train) const {
    ModelConfig mc = profile_.model;
    mc.frame_dim = train.front().frame_dim;
    mc.src_vocab = profile_.corpus.src_vocab;
    mc.tgt_vocab = profile_.corpus.tgt_vocab;
    return FastModel(mc, stage_seeds(g_.seed).init);
  }

  JsonlLog fresh_log(const std::string& name) const {
    fs::remove(out(name));
    return JsonlLog(out(name));
  }

  static double offline_bleu(const FastModel& model, const std::vector<Utterance>& corpus) {
    std::vector<std::vector<int>> hyps, refs;
    for (const auto& u : corpus) {
      hyps.push_back(translate_offline(model, u));
      refs.push_back(u.tgt);
    }
    return corpus_bleu(hyps, refs);
  }

  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }
  static std::string fmt9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
  }

  void say(const std::string& msg) const {
    if (!g_.quiet) std::cerr << msg << '\n';
  }

  Globals g_;
  Args a_;
  Profile profile_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming speech translation toolkit: data, training, streaming evaluation and analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Args a;
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--profile", g.profile, "default hyperparameters")->check(CLI::IsMember({"toy", "paper"}));
  app.add_flag("--quiet", g.quiet, "no progress output");
  app.add_flag("--force", g.force, "overwrite existing data files");

  auto data_dir = [&](CLI::App* s) { s->add_option("--data-dir", a.data_dir, "corpus directory (default: out-dir)"); };
  auto resume = [&](CLI::App* s) {
    s->add_flag("--resume", a.resume, "continue from the last epoch checkpoint in out-dir");
    s->add_option("--stop-after", a.stop_after, "stop after this many epochs (resumable)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate train/dev/test corpora");
  gen->add_option("--utterances", a.utterances, "training utterances");
  gen->add_option("--test-utterances", a.test_utterances, "test utterances");

  auto* pre = app.add_subcommand("pretrain", "masked-reconstruction pretraining of the acoustic encoder");
  data_dir(pre);
  pre->add_option("--epochs", a.epochs);

  auto* off = app.add_subcommand("train-offline", "two-stage offline training (teacher)");
  data_dir(off);
  off->add_option("--init", a.init, "start from this checkpoint (e.g. pretrained.ckpt)");
  off->add_option("--stage1-epochs", a.stage1);
  off->add_option("--stage2-epochs", a.stage2);
  resume(off);

  auto* fad = app.add_subcommand("train-fad", "future-aware distillation of a student");
  data_dir(fad);
  fad->add_option("--teacher", a.teacher);
  fad->add_option("--m", a.m, "mask tokens appended for the student");
  fad->add_option("--epochs", a.epochs);
  fad->add_flag("--allow-small-m", a.allow_small_m, "permit m <= 10");
  resume(fad);

  auto* ev = app.add_subcommand("eval-streaming", "wait-k sweeps over baseline, fai and fast");
  data_dir(ev);
  ev->add_option("--teacher", a.teacher);
  ev->add_option("--student", a.student);
  ev->add_option("--k-list", a.ks, "lagging values")->delimiter(',');
  ev->add_option("--m", a.m);
  ev->add_option("--p", a.p, "discard rate")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--chunk", a.chunk, "frames per READ")->check(CLI::PositiveNumber);
  ev->add_option("--modes", a.modes, "subset of baseline,fai,fast")->delimiter(',');
  ev->add_option("--output", a.output, "metrics CSV name");

  auto* gap = app.add_subcommand("analyze-gap", "representation-gap analyses");
  data_dir(gap);
  gap->add_option("--teacher", a.teacher);
  gap->add_option("--student", a.student);
  gap->add_option("--mode", a.mode)->check(CLI::IsMember({"baseline", "fai", "fast", "all"}));
  gap->add_option("--m", a.m);
  gap->add_option("--t-max", a.t_max);

  auto* met = app.add_subcommand("metrics", "BLEU/AL/AP/DAL from a trace file");
  met->add_option("--traces", a.traces)->required();
  met->add_option("--output", a.output, "metrics CSV name");

  auto* all = app.add_subcommand("pipeline", "gen-data, pretrain, train-offline, train-fad and eval-streaming");
  all->add_option("--utterances", a.utterances);
  all->add_option("--test-utterances", a.test_utterances);
  all->add_option("--k-list", a.ks)->delimiter(',');
  all->add_option("--m", a.m);
  all->add_option("--epochs", a.epochs, "pretraining and distillation epochs");
  all->add_option("--stage1-epochs", a.stage1);
  all->add_option("--stage2-epochs", a.stage2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    Runner r(g, a);
    if (*gen) return r.gen_data();
    if (*pre) return r.pretrain();
    if (*off) return r.train_offline_cmd();
    if (*fad) return r.train_fad_cmd();
    if (*ev) return r.eval_streaming();
    if (*gap) return r.analyze_gap();
    if (*met) return r.metrics();
    if (*all) return r.pipeline();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
