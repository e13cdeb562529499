// drbd: phantoms, folds, training, evaluation, analyses, cost model and
// gradient checks from one executable.
//
// Exit status: 0 success, 1 validation error, 2 numerical failure, 3 IO error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drbd/data.hpp"
#include "drbd/flops.hpp"
#include "drbd/gradcheck.hpp"
#include "drbd/inference.hpp"
#include "drbd/metrics.hpp"
#include "drbd/ops.hpp"
#include "drbd/train.hpp"
#include "run_config.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using namespace drbd;

namespace {

enum Exit { kOk = 0, kValidation = 1, kNumerical = 2, kIo = 3 };

struct Common {
  std::uint64_t seed = 1;
  std::string precision = "f32";
  std::string out;
  std::string config;
};

// Required values are checked after the config file is merged, so that a
// config can supply them.
void need(const std::string& value, const char* flag) {
  if (value.empty()) throw DomainError(std::string(flag) + " is required");
}

void need(const std::vector<std::string>& value, const char* flag) {
  if (value.empty()) throw DomainError(std::string(flag) + " is required");
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--precision", c.precision, "Floating point type for the network")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--out", c.out, "Output directory (optional for gradcheck)");
  cmd->add_option("--config", c.config, "JSON file with option values; command-line flags take precedence");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

// "32" -> 32^3, "160x160x144" or "160,160,144" -> as given.
Dims3 parse_dims(std::string s) {
  std::replace(s.begin(), s.end(), ',', 'x');
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, 'x');) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw DomainError("bad extent list '" + s + "'");
    v.push_back(std::stoul(part));
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() != 3) throw DomainError("expected one or three extents in '" + s + "'");
  return {v[0], v[1], v[2]};
}

std::string dims_text(const Dims3& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

NetConfig preset(const std::string& name) {
  if (name == "desk") return NetConfig::desk();
  if (name == "full") return NetConfig::full();
  throw DomainError("unknown preset '" + name + "'");
}

// Cases of `fold` (or every case when fold is 0), or all other cases when
// `complement` is set.
std::vector<CaseRecord> select_cases(std::vector<CaseRecord> cases, const std::string& folds_file, int fold,
                                     bool complement) {
  if (fold == 0) return cases;
  if (folds_file.empty()) throw DomainError("--fold needs --folds");
  std::ifstream in(folds_file);
  if (!in) throw IoError("cannot open " + folds_file);
  std::stringstream text;
  text << in.rdbuf();
  const auto fa = FoldAssignment::from_json(text.str());
  if (fold < 1 || fold > int(fa.folds)) throw DomainError("fold out of range");
  std::vector<CaseRecord> out;
  for (auto& c : cases) {
    const auto it = fa.assignments.find(c.case_id);
    if (it == fa.assignments.end()) continue;
    if ((it->second == fold) != complement) out.push_back(std::move(c));
  }
  if (out.empty()) throw DomainError("no cases selected");
  return out;
}

// ------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  Common common;
  std::string op;
  std::string flip_sign;
};

int cmd_gradcheck(const GradcheckArgs& a, const CLI::App& cmd) {
  testing_hooks::flip_backward_sign(a.flip_sign);
  const auto results = run_gradcheck(a.op);
  testing_hooks::flip_backward_sign("");
  std::ostringstream csv;
  csv << "case,op,checked,max_rel_err,max_abs_err,worst,passed\n";
  std::printf("%-26s %-20s %8s %12s  %s\n", "case", "op", "checked", "max rel err", "result");
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-26s %-20s %8zu %12.3e  %s\n", r.name.c_str(), r.op.c_str(), r.checked, r.max_rel_err,
                r.passed ? "ok" : "FAIL");
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.6e,%.6e", r.checked, r.max_rel_err, r.max_abs_err);
    csv << r.name << ',' << r.op << ',' << buf << ',' << r.worst << ',' << (r.passed ? 1 : 0) << '\n';
    ok = ok && r.passed;
  }
  std::printf("%zu cases, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  if (!a.common.out.empty()) {
    cli::echo_config(cmd, a.common.out);
    open_out(fs::path(a.common.out) / "gradcheck.csv") << csv.str();
  }
  return ok ? kOk : kValidation;
}

// -------------------------------------------------------------- phantoms

struct PhantomArgs {
  Common common;
  std::size_t n = 50;
  std::string shape = "32";
  PhantomConfig phantom;
};

int cmd_phantoms(const PhantomArgs& a, const CLI::App& cmd) {
  const Dims3 shape = parse_dims(a.shape);
  const fs::path out = a.common.out;
  cli::echo_config(cmd, out);
  auto list = open_out(out / "cases.csv");
  list << "case_id,fiv,ed,ncr,et\n";
  for (const auto& c : phantom_sweep(a.n, a.common.seed, shape, a.phantom)) {
    write_case(out, c);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.9g,%zu,%zu,%zu", c.fiv, c.volumes.ed, c.volumes.ncr, c.volumes.et);
    list << c.case_id << ',' << buf << '\n';
  }
  std::printf("wrote %zu phantoms of %s to %s\n", a.n, dims_text(shape).c_str(), out.c_str());
  return kOk;
}

// ----------------------------------------------------------------- folds

struct FoldArgs {
  Common common;
  std::string data;
  std::size_t folds = 5;
  std::size_t bins = 5;
};

int cmd_folds(const FoldArgs& a, const CLI::App& cmd) {
  std::vector<FoldCase> cases;
  for (const auto& c : read_cases(a.data)) {
    if (std::isnan(c.fiv)) {
      std::fprintf(stderr, "skipping %s: empty tumour, no fiv\n", c.case_id.c_str());
      continue;
    }
    cases.push_back({c.case_id, c.fiv});
  }
  const auto fa = build_systematic_folds(cases, a.common.seed, a.folds, a.bins);
  cli::echo_config(cmd, a.common.out);
  open_out(fs::path(a.common.out) / "folds.json") << fa.to_json();
  std::map<int, std::size_t> sizes;
  for (const auto& [id, f] : fa.assignments) ++sizes[f];
  for (const auto& [f, n] : sizes) std::printf("fold %d: %zu cases\n", f, n);
  return kOk;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string data;
  std::string folds;
  int fold = 0;
  std::string preset = "desk";
  std::size_t steps = 300;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t warmup = 0;
  bool augment = true;
  std::string resume;
};

template <class T>
int run_train(const TrainArgs& a, const CLI::App& cmd) {
  // Training uses the cases outside the held-out fold.
  const auto cases = select_cases(read_cases(a.data), a.folds, a.fold, true);
  std::vector<Sample> data;
  for (const auto& c : cases) data.push_back(to_sample(c));

  TrainConfig tc;
  tc.steps = a.steps;
  tc.batch_size = a.batch_size;
  tc.adam.lr = a.lr;
  tc.adam.weight_decay = a.weight_decay;
  tc.warmup_steps = a.warmup;
  tc.augment.enabled = a.augment;
  tc.seed = a.common.seed;

  Network<T> net(preset(a.preset), a.common.seed);
  Trainer<T> trainer(net, tc);
  if (!a.resume.empty()) trainer.restore(read_checkpoint(a.resume));

  const fs::path out = a.common.out;
  cli::echo_config(cmd, out);
  auto log = open_out(out / "loss_log.csv");
  log << "step,ce,dice_loss,commit,total,soft_dice\n";
  const std::size_t remaining = a.steps > trainer.steps_done() ? a.steps - trainer.steps_done() : 0;
  train(trainer, data, remaining, [&](const TrainLogRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.ce, r.dice_loss, r.commit, r.total,
                  r.soft_dice);
    log << buf;
    log.flush();
    if (r.step % 10 == 0 || r.step == a.steps)
      std::printf("step %zu total %.5f soft dice %.4f\n", r.step, r.total, r.soft_dice);
    return true;
  });
  write_checkpoint(out / "model.ckpt", network_checkpoint(net));
  write_checkpoint(out / "trainer.ckpt", trainer.checkpoint());
  std::printf("trained %zu steps on %zu cases; checkpoint %s\n", trainer.steps_done(), data.size(),
              (out / "model.ckpt").c_str());
  return kOk;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  std::string folds;
  int fold = 0;
  std::string window;
  double overlap = 0.5;
  bool stand_in = false;
};

template <class T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  const std::size_t C = logits.dim(0), V = logits.numel() / C;
  std::vector<std::uint8_t> out(V, 0);
  const auto d = logits.data();
  for (std::size_t v = 0; v < V; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (d[c * V + v] > d[best * V + v]) best = c;
    out[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

template <class T>
int run_eval(const EvalArgs& a, const CLI::App& cmd) {
  const auto cases = select_cases(read_cases(a.data), a.folds, a.fold, false);
  std::unique_ptr<Network<T>> net;
  if (!a.stand_in) {
    if (a.checkpoint.empty()) throw DomainError("eval needs --checkpoint or --stand-in");
    const auto entries = read_checkpoint(a.checkpoint);
    net = std::make_unique<Network<T>>(config_from_checkpoint(entries), 0);
    load_network_state(*net, entries);
  }
  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    std::vector<std::uint8_t> pred;
    if (net) {
      const Dims3 window = a.window.empty() ? c.dims : parse_dims(a.window);
      const auto volume = sample_tensor<T>(to_sample(c));
      const auto logits = sliding_window_infer<T>(
          volume, window, [&](const Tensor<T>& crop) { return net->predict(crop); }, a.overlap);
      require_finite<T>(logits.data(), "eval logits");
      pred = argmax_labels(logits);
    } else {
      pred = degrade_labels(c.labels, c.dims, mix_seed(a.common.seed, 0xE1, i));
    }
    reports.push_back(evaluate_case(c.case_id, pred, c.labels, c.dims, c.spacing));
  }
  cli::echo_config(cmd, a.common.out);
  auto csv = open_out(fs::path(a.common.out) / "metrics.csv");
  write_metrics_csv(csv, reports);
  double mean = 0;
  for (const auto& r : reports) mean += r.mean_dice();
  std::printf("evaluated %zu cases, mean Dice %.4f\n", reports.size(), mean / double(reports.size()));
  return kOk;
}

// --------------------------------------------------------------- analyze

struct AnalyzeArgs {
  Common common;
  std::vector<std::string> reports;
  std::string data;
};

int cmd_analyze(const AnalyzeArgs& a, const CLI::App& cmd) {
  std::map<std::string, RegionVolumes> volumes;
  for (const auto& c : read_cases(a.data)) volumes[c.case_id] = c.volumes;
  std::vector<ScoredCase> scored;
  std::set<std::string> seen;
  for (const auto& path : a.reports) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    for (auto& r : read_metrics_csv(in)) {
      const auto it = volumes.find(r.case_id);
      if (it == volumes.end()) throw DomainError("case " + r.case_id + " not found under " + a.data);
      if (!seen.insert(r.case_id).second) throw DomainError("case " + r.case_id + " reported twice");
      scored.push_back({r.case_id, r, it->second});
    }
  }
  const auto bins = analyze_dice_bins(scored);
  const auto lowest = analyze_et_quintiles(scored);
  const fs::path out = a.common.out;
  cli::echo_config(cmd, out);
  auto f1 = open_out(out / "dice_bins.csv");
  write_dice_bins_csv(f1, bins);
  auto f2 = open_out(out / "et_quintiles.csv");
  write_et_quintiles_csv(f2, lowest);
  std::vector<const ScoredCase*> all;
  for (const auto& s : scored) all.push_back(&s);
  auto f3 = open_out(out / "et_quintiles_all.csv");
  write_et_quintiles_csv(f3, et_quintiles_of(all));
  for (const auto& q : lowest) std::printf("lowest-Dice bin Q%zu: |ET| %.0f..%.0f mean Dice %.4f\n", q.quintile, q.et_lo, q.et_hi, q.mean_dice);
  return kOk;
}

// ----------------------------------------------------------------- bench

struct BenchArgs {
  Common common;
  std::string resolutions = "64,96,128,160x160x144";
  std::string preset = "full";
};

int cmd_bench(const BenchArgs& a, const CLI::App& cmd) {
  const auto cfg = preset(a.preset);
  std::vector<Dims3> res;
  std::stringstream ss(a.resolutions);
  for (std::string item; std::getline(ss, item, ',');) res.push_back(parse_dims(item));
  if (res.empty()) throw DomainError("no resolutions");

  std::ostringstream csv;
  csv << "resolution,voxels,dual_conv,dual_sequence,dual_quantizer,dual_total,"
         "reference_conv,reference_sequence,reference_total,sequence_ratio,total_ratio\n";
  std::vector<std::string> ticks;
  cli::Series dual_seq{"dual: sequence + VQ", "#1f77b4"}, ref_seq{"reference: sequence", "#d62728"};
  cli::Series dual_tot{"dual: total", "#1f77b4", true}, ref_tot{"reference: total", "#d62728", true};
  for (const auto& r : res) {
    const auto d = flops_estimate(cfg, r, Placement::dual_resolution);
    const auto t = flops_estimate(cfg, r, Placement::tri_orientation_all_stages);
    const double ratio = t.sequence / (d.sequence + d.quantizer);
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.12f,%.12f\n", dims_text(r).c_str(),
                  r[0] * r[1] * r[2], d.conv, d.sequence, d.quantizer, d.total(), t.conv, t.sequence, t.total(), ratio,
                  t.total() / d.total());
    csv << buf;
    ticks.push_back(dims_text(r));
    dual_seq.y.push_back((d.sequence + d.quantizer) / 1e9);
    ref_seq.y.push_back(t.sequence / 1e9);
    dual_tot.y.push_back(d.total() / 1e9);
    ref_tot.y.push_back(t.total() / 1e9);
    std::printf("%-12s sequence GFLOPs dual %10.3f reference %10.3f ratio %.4f\n", dims_text(r).c_str(),
                dual_seq.y.back(), ref_seq.y.back(), ratio);
  }
  const fs::path out = a.common.out;
  cli::echo_config(cmd, out);
  open_out(out / "flops.csv") << csv.str();
  open_out(out / "flops.svg") << cli::line_plot_svg("Analytic FLOPs by input resolution", "GFLOPs (log scale)", ticks,
                                                    {dual_seq, ref_seq, dual_tot, ref_tot});
  return kOk;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-resolution bidirectional state-space segmentation toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference checks of every differentiable op");
  add_common(c_gc, gc.common);
  c_gc->add_option("--op", gc.op, "Only cases whose op or name matches");
  c_gc->add_option("--flip-sign", gc.flip_sign, "Negate the backward rule of this op (sabotage check)");

  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantoms", "Generate synthetic multi-modal phantoms");
  add_common(c_ph, ph.common);
  c_ph->add_option("--n", ph.n, "Number of phantoms");
  c_ph->add_option("--shape", ph.shape, "Extent, e.g. 32 or 32x32x48");
  c_ph->add_option("--noise", ph.phantom.noise_sigma, "Gaussian noise sigma");
  c_ph->add_option("--contrast-lo", ph.phantom.contrast_lo, "Lowest tumour contrast factor");
  c_ph->add_option("--contrast-hi", ph.phantom.contrast_hi, "Highest tumour contrast factor");

  FoldArgs fo;
  auto* c_fo = app.add_subcommand("folds", "Build systematic folds stratified by fiv");
  add_common(c_fo, fo.common);
  c_fo->add_option("--data", fo.data, "Case directory");
  c_fo->add_option("--folds", fo.folds, "Number of folds");
  c_fo->add_option("--bins", fo.bins, "Number of fiv bins");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a network on phantoms");
  add_common(c_tr, tr.common);
  c_tr->add_option("--data", tr.data, "Case directory");
  c_tr->add_option("--folds", tr.folds, "folds.json; with --fold k, fold k is held out");
  c_tr->add_option("--fold", tr.fold, "Held-out fold, 0 trains on every case");
  c_tr->add_option("--preset", tr.preset, "Architecture preset")->check(CLI::IsMember({"desk", "full"}));
  c_tr->add_option("--steps", tr.steps, "Optimizer steps");
  c_tr->add_option("--batch-size", tr.batch_size, "Cases per step");
  c_tr->add_option("--lr", tr.lr, "Learning rate");
  c_tr->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay");
  c_tr->add_option("--warmup", tr.warmup, "Linear warmup steps");
  c_tr->add_option("--augment", tr.augment, "Flip/rotate/intensity augmentation (true|false)");
  c_tr->add_option("--resume", tr.resume, "trainer.ckpt of an earlier run");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Predict and score cases");
  add_common(c_ev, ev.common);
  c_ev->add_option("--checkpoint", ev.checkpoint, "model.ckpt from train");
  c_ev->add_option("--data", ev.data, "Case directory");
  c_ev->add_option("--folds", ev.folds, "folds.json");
  c_ev->add_option("--fold", ev.fold, "Fold to score, 0 scores every case");
  c_ev->add_option("--window", ev.window, "Sliding window extent (default: whole volume)");
  c_ev->add_option("--overlap", ev.overlap, "Sliding window overlap fraction");
  c_ev->add_option("--stand-in", ev.stand_in, "Score degraded ground truth instead of a network (true|false)");

  AnalyzeArgs an;
  auto* c_an = app.add_subcommand("analyze", "Dice bins and ET quintiles from metrics CSVs");
  add_common(c_an, an.common);
  c_an->add_option("--reports", an.reports, "metrics.csv files")->delimiter(',');
  c_an->add_option("--data", an.data, "Case directory holding the scored cases");

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "Analytic FLOPs of both sequence placements");
  add_common(c_be, be.common);
  c_be->add_option("--resolutions", be.resolutions, "Comma-separated extents, e.g. 64,96,160x160x144");
  c_be->add_option("--preset", be.preset, "Architecture preset")->check(CLI::IsMember({"desk", "full"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }

  CLI::App* cmd = app.get_subcommands().front();
  Common* common = nullptr;
  for (auto [c, k] : std::initializer_list<std::pair<CLI::App*, Common*>>{
           {c_gc, &gc.common}, {c_ph, &ph.common}, {c_fo, &fo.common}, {c_tr, &tr.common},
           {c_ev, &ev.common}, {c_an, &an.common}, {c_be, &be.common}})
    if (c == cmd) common = k;

  return guarded([&]() -> int {
    if (!common->config.empty()) {
      cli::apply_json_config(*cmd, common->config);
    }
    if (cmd != c_gc) need(common->out, "--out");
    if (cmd == c_fo) need(fo.data, "--data");
    if (cmd == c_tr) need(tr.data, "--data");
    if (cmd == c_ev) need(ev.data, "--data");
    if (cmd == c_an) {
      need(an.data, "--data");
      need(an.reports, "--reports");
    }
    const bool f64 = common->precision == "f64";
    if (cmd == c_gc) return cmd_gradcheck(gc, *cmd);
    if (cmd == c_ph) return cmd_phantoms(ph, *cmd);
    if (cmd == c_fo) return cmd_folds(fo, *cmd);
    if (cmd == c_tr) return f64 ? run_train<double>(tr, *cmd) : run_train<float>(tr, *cmd);
    if (cmd == c_ev) return f64 ? run_eval<double>(ev, *cmd) : run_eval<float>(ev, *cmd);
    if (cmd == c_an) return cmd_analyze(an, *cmd);
    return cmd_bench(be, *cmd);
  });
}
