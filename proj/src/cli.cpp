#include "survtx/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "survtx/calibration.hpp"
#include "survtx/checkpoint.hpp"
#include "survtx/csv.hpp"
#include "survtx/error.hpp"
#include "survtx/evaluation.hpp"
#include "survtx/interpret.hpp"
#include "survtx/model.hpp"
#include "survtx/svg.hpp"
#include "survtx/synthetic.hpp"
#include "survtx/training.hpp"

namespace survtx::cli {

namespace fs = std::filesystem;

cohort::CohortOptions cohort_options(const RunConfig& config) {
  cohort::CohortOptions o;
  o.task = cohort::parse_task(config.task);
  o.seed = config.cohort_seed;
  o.max_row_missing = config.max_row_missing;
  o.excluded_columns = config.selection.excluded;
  return o;
}

cohort::Cohort load_cohort(const fs::path& csv, const RunConfig& config) {
  auto table = std::make_shared<const cohort::RawTable>(cohort::parse_table_file(csv));
  return cohort::build_cohort(std::move(table), cohort_options(config));
}

std::vector<features::EngineeredHistory> engineer_split(const cohort::Cohort& cohort,
                                                        const cohort::CohortSplit& split,
                                                        cohort::SplitName which,
                                                        const features::Preprocessor& prep) {
  std::vector<features::EngineeredHistory> out;
  for (const auto& id : split.ids(which)) {
    const auto* s = cohort.find(id);
    if (!s) throw LookupError("subject '" + id + "' is not in the rebuilt cohort");
    out.push_back(features::engineer_history(*cohort.table, *s, prep));
  }
  return out;
}

namespace {

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  csv::atomic_write(path, text);
}

std::string num(double v) { return csv::format_double(v); }
std::string opt(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

// Common run configuration: file, then key=value overrides, then explicit flags.
struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  RunConfig load() const {
    RunConfig c = path.empty() ? RunConfig{} : RunConfig::load(path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return c;
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.path, "Run configuration file (key = value)");
  cmd->add_option("--set", a.overrides, "Override a configuration key (key=value)");
}

std::vector<cohort::ManifestRow> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  return cohort::read_manifest(in);
}

// ---- synth --------------------------------------------------------------------

struct SynthArgs {
  std::string spec, out;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto spec = a.spec.empty() ? synthetic::SyntheticSpec{} : synthetic::SyntheticSpec::load(a.spec);
  spec.validate();
  const auto gen = synthetic::generate(spec, a.seed);
  const fs::path dir(a.out);
  write_text(dir / "cohort.csv", gen.csv);
  const std::vector<double> horizons{1.0, 2.0, 3.0, 5.0};
  std::vector<double> usable;
  for (double h : horizons)
    if (h <= spec.bins.back()) usable.push_back(h);
  write_text(dir / "truth.csv", gen.truth.to_csv(usable));
  write_text(dir / "synth.conf", "# seed = " + std::to_string(a.seed) + "\n" + spec.to_text());
  std::size_t events = 0;
  for (const auto& s : gen.truth.subjects) events += s.observed_event ? 1 : 0;
  out << "synth: " << gen.truth.subjects.size() << " subjects, " << events
      << " observed conversions -> " << (dir / "cohort.csv").string() << '\n';
  return kOk;
}

// ---- build-cohort ---------------------------------------------------------------

struct BuildArgs {
  ConfigArgs config;
  std::string csv, out, task;
  std::optional<std::uint64_t> seed;
};

int cmd_build_cohort(const BuildArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.config.load();
  if (!a.task.empty()) cfg.set("task", a.task);
  if (a.seed) cfg.cohort_seed = *a.seed;
  cfg.validate();
  const auto c = load_cohort(a.csv, cfg);
  const auto split = cohort::stratified_split(c.subjects, cfg.cohort_seed);
  const auto rows = cohort::make_manifest(c, split);
  std::ostringstream m;
  cohort::write_manifest(m, rows);
  const fs::path dir(a.out);
  write_text(dir / "manifest.csv", m.str());
  write_text(dir / "run.conf", cfg.to_text());
  for (const auto& w : c.warnings) err << "warning: " << w << '\n';
  for (const auto& w : split.warnings) err << "warning: " << w << '\n';
  out << "build-cohort: task " << cohort::task_name(c.task) << ", " << c.subjects.size()
      << " subjects (" << c.counts.converters << " converters, " << c.counts.controls
      << " controls before filtering); train/validation/test = " << split.train.size() << '/'
      << split.validation.size() << '/' << split.test.size() << '\n';
  return kOk;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string csv, manifest, out, seeds, task;
  std::optional<std::size_t> max_epochs;
  Ablations flags;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.config.load();
  if (!a.task.empty()) cfg.set("task", a.task);
  if (!a.seeds.empty()) cfg.seeds = parse_seed_list(a.seeds);
  if (a.max_epochs) cfg.train.max_epochs = *a.max_epochs;
  auto& ab = cfg.ablations;
  ab.no_dynamic |= a.flags.no_dynamic;
  ab.no_visit_dropout |= a.flags.no_visit_dropout;
  ab.no_fusion |= a.flags.no_fusion;
  ab.no_mixture |= a.flags.no_mixture;
  ab.no_rank |= a.flags.no_rank;
  ab.no_horizon |= a.flags.no_horizon;
  cfg.validate();

  const auto c = load_cohort(a.csv, cfg);
  cohort::CohortSplit split;
  const fs::path dir(a.out);
  if (!a.manifest.empty()) {
    split = cohort::split_from_manifest(c, load_manifest(a.manifest));
  } else {
    split = cohort::stratified_split(c.subjects, cfg.cohort_seed);
    std::ostringstream m;
    cohort::write_manifest(m, cohort::make_manifest(c, split));
    write_text(dir / "manifest.csv", m.str());
  }
  write_text(dir / "run.conf", cfg.to_text());

  const auto data = training::prepare_dataset(c, split, cfg.selection);
  for (const auto& w : data.preprocessor.spec.warnings) err << "warning: " << w << '\n';
  const auto mc = training::sized_model(cfg.resolved_model(), data.preprocessor);
  const model::Model net(mc);
  const auto ctx = objectives::make_context(mc, cfg.resolved_loss(), training::labels_of(data.train));
  const RunConfig stored = checkpoint::resolved(cfg);

  for (std::uint64_t seed : cfg.seeds) {
    const fs::path seed_dir = dir / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir);
    const auto start = std::chrono::steady_clock::now();
    training::TrainOptions opts;
    opts.seed = seed;
    std::vector<training::EpochLog> log;
    opts.on_improve = [&](const model::ParamStore& params, std::size_t epoch) {
      checkpoint::Checkpoint ck;
      ck.config = stored;
      ck.seed = seed;
      ck.best_epoch = epoch;
      ck.preprocessor = data.preprocessor;
      ck.params = params.clone();
      checkpoint::save(seed_dir / "model.ckpt", ck);
    };
    opts.on_epoch = [&](const training::EpochLog& tr, const training::EpochLog& va) {
      log.push_back(tr);
      log.push_back(va);
      write_text(seed_dir / "train_log.csv", training::log_text(log));
    };
    const auto result = training::train(net, data.train, data.validation, ctx, cfg.train, opts);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << "train: seed " << seed << ", " << result.epochs_run << " epochs, best epoch "
        << result.best_epoch << ", validation loss " << num(result.best_validation) << ", "
        << static_cast<long>(secs) << " s -> " << (seed_dir / "model.ckpt").string() << '\n';
  }
  return kOk;
}

// ---- shared loading for checkpoint commands ---------------------------------------

struct Loaded {
  checkpoint::Checkpoint ckpt;
  cohort::Cohort cohort;
  cohort::CohortSplit split;
};

Loaded load_for(const fs::path& ckpt_path, const fs::path& csv, const fs::path& manifest) {
  Loaded l{checkpoint::load(ckpt_path), {}, {}};
  l.cohort = load_cohort(csv, l.ckpt.config);
  l.split = cohort::split_from_manifest(l.cohort, load_manifest(manifest));
  return l;
}

std::vector<cohort::SurvivalLabel> split_labels(const Loaded& l, cohort::SplitName which) {
  std::vector<cohort::SurvivalLabel> out;
  for (const auto& id : l.split.ids(which)) out.push_back(l.cohort.find(id)->label);
  return out;
}

struct CkptArgs {
  std::vector<std::string> checkpoints;
  std::string csv, manifest, out, split = "test";
};

// ---- calibrate ----------------------------------------------------------------

int cmd_calibrate(const CkptArgs& a, std::ostream& out, std::ostream& err) {
  for (const auto& path : a.checkpoints) {
    auto l = load_for(path, a.csv, a.manifest);
    const model::Model net(l.ckpt.model_config());
    const auto val = engineer_split(l.cohort, l.split, cohort::SplitName::validation,
                                    l.ckpt.preprocessor);
    const auto preds = model::predict(net, l.ckpt.params, val);
    const auto labels = training::labels_of(val);
    auto cal = calibration::fit_calibration(preds, labels, net.config().bins,
                                            l.ckpt.config.loss.horizons);
    for (const auto& w : cal.warnings) err << "warning: " << w << '\n';

    std::ostringstream rep;
    csv::write_row(rep, {"horizon", "evaluable", "ece_before", "ece_after", "threshold",
                         "youden_j", "degenerate", "identity_map"});
    for (const auto& h : cal.horizons)
      csv::write_row(rep, {num(h.horizon), std::to_string(h.evaluable), num(h.ece_before),
                           num(h.ece_after), num(h.youden.threshold), num(h.youden.j),
                           h.youden.degenerate ? "1" : "0", h.map.identity ? "1" : "0"});
    const fs::path dir = a.out.empty() ? fs::path(path).parent_path() : fs::path(a.out);
    write_text(dir / "calibration.csv", rep.str());
    l.ckpt.calibration = std::move(cal);
    checkpoint::save(path, l.ckpt);
    out << "calibrate: " << val.size() << " validation subjects -> " << path << '\n';
  }
  return kOk;
}

// ---- evaluate -----------------------------------------------------------------

void write_predictions(const fs::path& path, std::span<const model::Prediction> preds,
                       std::span<const cohort::SurvivalLabel> labels, std::span<const double> bins,
                       std::span<const double> horizons,
                       const std::optional<calibration::Calibration>& cal) {
  std::ostringstream os;
  std::vector<std::string> head{"RID", "time", "event", "score"};
  for (double h : horizons) head.push_back("F" + num(h));
  if (cal)
    for (double h : horizons) head.push_back("F" + num(h) + "_calibrated");
  csv::write_row(os, head);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::vector<std::string> row{preds[i].id, num(labels[i].time), labels[i].event ? "1" : "0",
                                 num(preds[i].score)};
    for (double h : horizons) row.push_back(num(model::risk_at_horizon(preds[i].cif, bins, h)));
    if (cal) {
      for (double h : horizons) {
        const auto* hc = cal->find(h);
        const double r = model::risk_at_horizon(preds[i].cif, bins, h);
        row.push_back(hc ? num(hc->map.apply(r)) : "NA");
      }
    }
    csv::write_row(os, row);
  }
  write_text(path, os.str());
}

int cmd_evaluate(const CkptArgs& a, std::ostream& out, std::ostream& err) {
  const auto which = cohort::parse_split(a.split);
  std::vector<evaluation::MetricsReport> reports;
  const fs::path dir(a.out);
  for (std::size_t n = 0; n < a.checkpoints.size(); ++n) {
    const auto l = load_for(a.checkpoints[n], a.csv, a.manifest);
    const model::Model net(l.ckpt.model_config());
    const auto hist = engineer_split(l.cohort, l.split, which, l.ckpt.preprocessor);
    const auto preds = model::predict(net, l.ckpt.params, hist);
    const auto labels = training::labels_of(hist);
    // The marginal baseline uses training labels only.
    const auto km = evaluation::kaplan_meier(split_labels(l, cohort::SplitName::train));
    const auto& bins = net.config().bins;
    const auto& horizons = l.ckpt.config.loss.horizons;
    const auto* cal = l.ckpt.calibration ? &*l.ckpt.calibration : nullptr;
    auto rep = evaluation::evaluate(preds, labels, bins, horizons, km, cal);
    for (const auto& note : rep.notices) err << "notice: " << note << '\n';

    const fs::path sub = a.checkpoints.size() == 1 ? dir : dir / ("model_" + std::to_string(n));
    write_text(sub / "metrics.csv", rep.to_csv());
    write_text(sub / "km_groups.csv", rep.groups_csv());
    write_predictions(sub / "predictions.csv", preds, labels, bins, horizons, l.ckpt.calibration);

    std::vector<svg::Series> curves;
    static const char* names[] = {"low risk", "medium risk", "high risk"};
    for (std::size_t g = 0; g < rep.groups.curves.size(); ++g) {
      const auto& c = rep.groups.curves[g];
      curves.push_back({rep.groups.curves.size() == 3 ? names[g] : "group " + std::to_string(g + 1),
                        c.times, c.survival});
    }
    curves.push_back({"marginal (train)", km.times, km.survival});
    write_text(sub / "km_groups.svg",
               svg::step_plot(curves, "Kaplan-Meier by predicted risk group",
                              "years since first visit", "conversion-free probability", bins.back()));
    std::vector<std::string> labels_td;
    std::vector<double> vals_td;
    for (std::size_t k = 0; k < rep.grid.size(); ++k) {
      labels_td.push_back(num(rep.grid[k]));
      vals_td.push_back(rep.td_auc[k].value_or(0.0));
    }
    write_text(sub / "td_auc.svg", svg::bar_chart(labels_td, vals_td, "Time-dependent AUC", "AUC"));
    if (rep.calibrated) {
      std::vector<svg::Series> rel;
      for (const auto& h : rep.horizons) {
        svg::Series s{"h = " + num(h.horizon), {}, {}};
        for (const auto& b : h.reliability)
          if (b.count > 0) {
            s.x.push_back(b.mean_predicted);
            s.y.push_back(b.observed);
          }
        rel.push_back(std::move(s));
      }
      write_text(sub / "reliability.svg", svg::reliability_plot(rel, "Calibrated reliability"));
    }
    out << "evaluate: " << a.split << " n=" << hist.size() << " C-index " << opt(rep.c_index)
        << " IBS " << num(rep.ibs) << " (marginal " << num(rep.ibs_km) << ") mean td-AUC "
        << opt(rep.mean_td_auc) << '\n';
    reports.push_back(std::move(rep));
  }
  if (reports.size() > 1) {
    const auto summary = evaluation::aggregate(reports);
    write_text(dir / "summary.csv", evaluation::summary_csv(summary));
    out << "evaluate: summary over " << reports.size() << " models -> "
        << (dir / "summary.csv").string() << '\n';
  }
  return kOk;
}

// ---- interpret ----------------------------------------------------------------

struct InterpretArgs {
  CkptArgs common;
  std::size_t top_k = 15;
  double horizon = 5.0;
};

int cmd_interpret(const InterpretArgs& a, std::ostream& out, std::ostream&) {
  if (a.common.checkpoints.size() != 1) throw ConfigError("interpret takes one checkpoint");
  const auto l = load_for(a.common.checkpoints.front(), a.common.csv, a.common.manifest);
  const auto which = cohort::parse_split(a.common.split);
  const model::Model net(l.ckpt.model_config());
  const auto hist = engineer_split(l.cohort, l.split, which, l.ckpt.preprocessor);
  const fs::path dir(a.common.out);

  const auto attr = interpret::grad_times_input(net, l.ckpt.params, hist, a.horizon);
  const auto names = interpret::attribution_names(l.ckpt.preprocessor);
  std::ostringstream at;
  std::vector<std::string> head{"RID", "visit"};
  head.insert(head.end(), names.begin(), names.end());
  csv::write_row(at, head);
  for (const auto& s : attr)
    for (std::size_t v = 0; v < s.visits.size(); ++v) {
      std::vector<std::string> row{s.id, std::to_string(s.visits[v])};
      for (std::size_t j = 0; j < s.width; ++j) row.push_back(num(s.values[v * s.width + j]));
      csv::write_row(at, row);
    }
  write_text(dir / "attributions.csv", at.str());

  const auto imp = interpret::feature_importance(attr, names);
  const std::size_t k = std::min(a.top_k, imp.size());
  std::ostringstream top;
  csv::write_row(top, {"rank", "feature", "mean_abs_attribution"});
  std::vector<std::string> bar_names;
  std::vector<double> bar_vals;
  for (std::size_t i = 0; i < k; ++i) {
    csv::write_row(top, {std::to_string(i + 1), imp[i].feature, num(imp[i].mean_abs)});
    bar_names.push_back(imp[i].feature);
    bar_vals.push_back(imp[i].mean_abs);
  }
  write_text(dir / "top_features.csv", top.str());
  write_text(dir / "top_features.svg",
             svg::hbar_chart(bar_names, bar_vals,
                             "Top " + std::to_string(k) + " attributions, raw F(" + num(a.horizon) + ")"));

  const auto att = interpret::attention_summary(net, l.ckpt.params, hist);
  std::ostringstream aw;
  csv::write_row(aw, {"RID", "converter", "visit", "weight", "recency", "change", "years_to_index"});
  std::map<std::size_t, std::pair<double, std::size_t>> by_lag;  // visits before latest
  for (const auto& r : att.records)
    for (std::size_t v = 0; v < r.visits.size(); ++v) {
      csv::write_row(aw, {r.id, r.converter ? "1" : "0", std::to_string(r.visits[v]),
                          num(r.weights[v]), num(r.recency[v]), num(r.change[v]),
                          num(r.years_to_index[v])});
      auto& slot = by_lag[r.visits.size() - 1 - v];
      slot.first += r.weights[v];
      ++slot.second;
    }
  write_text(dir / "attention.csv", aw.str());
  std::ostringstream as;
  csv::write_row(as, {"statistic", "mean_correlation", "subjects"});
  csv::write_row(as, {"recency", opt(att.recency_corr), std::to_string(att.recency_n)});
  csv::write_row(as, {"change", opt(att.change_corr), std::to_string(att.change_n)});
  csv::write_row(as, {"proximity", opt(att.proximity_corr), std::to_string(att.proximity_n)});
  write_text(dir / "attention_summary.csv", as.str());
  std::vector<std::string> lag_names;
  std::vector<double> lag_vals;
  for (const auto& [lag, s] : by_lag) {
    if (lag >= 8) break;
    lag_names.push_back(lag == 0 ? "latest" : "-" + std::to_string(lag));
    lag_vals.push_back(s.first / static_cast<double>(s.second));
  }
  write_text(dir / "attention.svg",
             svg::bar_chart(lag_names, lag_vals, "Mean pooling weight by visit position", "weight"));

  out << "interpret: " << hist.size() << " subjects, top " << k << " features -> "
      << (dir / "top_features.csv").string() << "; mean recency correlation "
      << opt(att.recency_corr) << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer survival models for time to diagnostic conversion", "survtx"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic visit table with known hazards");
  s->add_option("-s,--spec", synth.spec, "Synthetic spec file (key = value); defaults if omitted");
  s->add_option("-o,--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Generator seed");

  BuildArgs build;
  auto* b = app.add_subcommand("build-cohort", "Build the cohort and write its split manifest");
  add_config_options(b, build.config);
  b->add_option("--csv", build.csv, "Visit table")->required();
  b->add_option("--task", build.task, "cn-mci or mci-ad");
  b->add_option("--seed", build.seed, "Cohort seed (pseudo-index matching and split)");
  b->add_option("-o,--out", build.out, "Output directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one model per seed");
  add_config_options(t, train.config);
  t->add_option("--csv", train.csv, "Visit table")->required();
  t->add_option("--manifest", train.manifest, "Split manifest from build-cohort");
  t->add_option("--task", train.task, "cn-mci or mci-ad");
  t->add_option("--seeds", train.seeds, "Comma-separated seeds, e.g. 0,1,2");
  t->add_option("--max-epochs", train.max_epochs, "Epoch limit");
  t->add_option("-o,--out", train.out, "Output directory")->required();
  t->add_flag("--no-dynamic", train.flags.no_dynamic, "Drop change and slope features");
  t->add_flag("--no-visit-dropout", train.flags.no_visit_dropout, "Disable visit dropout");
  t->add_flag("--no-fusion", train.flags.no_fusion, "Use the CLS context only");
  t->add_flag("--no-mixture", train.flags.no_mixture, "Single hazard expert");
  t->add_flag("--no-rank", train.flags.no_rank, "Drop the ranking loss");
  t->add_flag("--no-horizon", train.flags.no_horizon, "Drop the horizon loss");

  auto add_ckpt = [](CLI::App* cmd, CkptArgs& c, bool split) {
    cmd->add_option("--checkpoint", c.checkpoints, "Checkpoint file(s)")->required();
    cmd->add_option("--csv", c.csv, "Visit table")->required();
    cmd->add_option("--manifest", c.manifest, "Split manifest")->required();
    if (split) cmd->add_option("--split", c.split, "train, validation or test");
  };
  CkptArgs cal;
  auto* c = app.add_subcommand("calibrate", "Fit isotonic maps and thresholds on validation");
  add_ckpt(c, cal, false);
  c->add_option("-o,--out", cal.out, "Report directory (default: beside the checkpoint)");

  CkptArgs ev;
  auto* e = app.add_subcommand("evaluate", "Metrics, risk-group curves and plots");
  add_ckpt(e, ev, true);
  e->add_option("-o,--out", ev.out, "Output directory")->required();

  InterpretArgs in;
  auto* i = app.add_subcommand("interpret", "Attributions and attention summaries");
  add_ckpt(i, in.common, true);
  i->add_option("-o,--out", in.common.out, "Output directory")->required();
  i->add_option("-k,--top-k", in.top_k, "Rows in the top-feature table");
  i->add_option("--horizon", in.horizon, "Horizon of the attributed risk F(h)");

  std::vector<const char*> argv{"survtx"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*b) return cmd_build_cohort(build, out, err);
    if (*t) return cmd_train(train, out, err);
    if (*c) return cmd_calibrate(cal, out, err);
    if (*e) return cmd_evaluate(ev, out, err);
    if (*i) return cmd_interpret(in, out, err);
  } catch (const ConfigError& ex) {
    err << "configuration error: " << ex.what() << '\n';
    return kConfigError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace survtx::cli
