#include "ctxrnn/cli.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ctxrnn/context_select.hpp"
#include "ctxrnn/errors.hpp"
#include "ctxrnn/forecaster.hpp"
#include "ctxrnn/metrics.hpp"
#include "ctxrnn/model_io.hpp"
#include "ctxrnn/panel.hpp"
#include "ctxrnn/synth.hpp"

namespace ctxrnn {

namespace {

struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_config_options(CLI::App* cmd, ConfigOptions& o) {
  cmd->add_option("--config", o.path, "key = value configuration file");
  cmd->add_option("--set", o.overrides, "override one configuration key (key=value), repeatable");
}

Config resolve_config(const ConfigOptions& o) {
  Config c = o.path.empty() ? Config{} : load_config(o.path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw DataError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed_given) c.seed = o.seed;
  c.validate();
  return c;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Largest S whose shortlist still fits among the other n − 1 series.
std::size_t max_contexts(std::size_t n) {
  std::size_t s = 0;
  while (shortlist_size(s + 1) <= n - 1) ++s;
  return s;
}

ContextMap select_contexts(const SeriesPanel& panel, std::size_t S, std::size_t K, std::size_t maxlag) {
  if (panel.n < 2) throw DataError("context selection needs at least two series");
  if (S > max_contexts(panel.n)) {
    spdlog::warn("contexts = {} needs a shortlist of {} but only {} other series exist; using {}", S,
                 shortlist_size(S), panel.n - 1, max_contexts(panel.n));
    S = max_contexts(panel.n);
  }
  if (K > panel.n) {
    spdlog::warn("context_batch = {} exceeds the {} series in the panel; using {}", K, panel.n, panel.n);
    K = panel.n;
  }
  const SelectionReport report = build_context_map(panel, S, K, maxlag);
  spdlog::info("context selection: {} Granger tests, {} ridge fallbacks", report.granger.tests,
               report.granger.ridge_fallbacks);
  return report.map;
}

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::binary);
  if (!file) throw DataError("cannot write " + path);
  return file;
}

std::size_t resolve_anchor(const SeriesPanel& panel, const std::string& text) {
  if (text.empty() || text == "end") return panel.T;
  if (const auto ts = parse_iso8601(text)) {
    const std::int64_t offset = *ts - panel.timestamps.front();
    if (offset < 0 || offset % panel.step_seconds != 0) throw DataError("anchor " + text + " is not on the panel grid");
    return static_cast<std::size_t>(offset / panel.step_seconds);
  }
  std::size_t t = 0;
  std::istringstream in(text);
  if (!(in >> t) || !in.eof()) throw DataError("anchor must be an index, an ISO-8601 timestamp or 'end'");
  return t;
}

Model train_model(const SeriesPanel& panel, Config config, const std::string& map_path, const std::string& log_path) {
  const auto [train_end, validation_end] = split_bounds(panel.T);
  std::vector<std::size_t> batch;
  if (config.variant != Variant::no_context) {
    ContextMap map = map_path.empty()
                         ? select_contexts(panel.slice_time(0, train_end), config.contexts, config.context_batch,
                                           config.maxlag)
                         : load_context_map(map_path, panel);
    if (map.global_batch.size() != config.context_batch) {
      spdlog::warn("context batch from selection has {} series; setting context_batch = {}", map.global_batch.size(),
                   map.global_batch.size());
      config.context_batch = map.global_batch.size();
    }
    batch = map.global_batch;
  }
  Model model = make_model(config, panel.names, batch);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw DataError("cannot write " + log_path);
    log << "member,epoch,batch_size,learning_rate,train_loss,validation_loss,windows,seconds\n";
  }
  for (std::size_t m = 0; m < model.members.size(); ++m) {
    const TrainLog result = train_member(model, m, panel, train_end, validation_end, [&](const EpochLog& e) {
      spdlog::info("member {} epoch {:>2} batch {:>3} lr {:g} train {:.6f} validation {:.6f} ({:.1f}s)", m, e.epoch,
                   e.batch_size, e.learning_rate, e.train_loss, e.validation_loss, e.seconds);
      if (log)
        log << m << ',' << e.epoch << ',' << e.batch_size << ',' << format_double(e.learning_rate) << ','
            << format_double(e.train_loss) << ',' << format_double(e.validation_loss) << ',' << e.windows << ','
            << format_double(e.seconds) << '\n';
    });
    spdlog::info("member {} keeps epoch {}", m, result.best_epoch);
  }
  return model;
}

void set_synth_key(SynthSpec& spec, std::string& couplings, std::size_t& lag, const std::string& key,
                   const std::string& value) {
  std::istringstream in(value);
  auto read = [&](auto& target) {
    if (!(in >> target) || !(in >> std::ws).eof()) throw DataError("synth spec: bad value for " + key);
  };
  if (key == "n") read(spec.n);
  else if (key == "T") read(spec.T);
  else if (key == "period") read(spec.period);
  else if (key == "noise") read(spec.noise);
  else if (key == "level") read(spec.level);
  else if (key == "innovation") read(spec.innovation);
  else if (key == "ar") read(spec.ar);
  else if (key == "seasonal_amplitude") read(spec.seasonal_amplitude);
  else if (key == "start") read(spec.start);
  else if (key == "step") read(spec.step_seconds);
  else if (key == "lag") read(lag);
  else if (key == "couplings") couplings = value;
  else throw DataError("synth spec: unknown key '" + key + "'");
}

void load_synth_spec(const std::string& path, SynthSpec& spec, std::string& couplings, std::size_t& lag) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synth spec " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) throw DataError("synth spec: expected key = value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    set_synth_key(spec, couplings, lag, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  static const auto logger = [] {
    auto l = spdlog::stderr_logger_mt("ctxrnn");
    l->set_pattern("[%l] %v");
    spdlog::set_default_logger(l);
    return l;
  }();
  (void)logger;

  CLI::App app{"Context-enhanced hybrid forecaster"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  ConfigOptions cfg;
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { cfg.seed = s, cfg.seed_given = true; }, "random seed for every stochastic step");
  };

  std::string panel_path, out_path, map_path, model_path, log_path, anchor;
  std::size_t contexts = 3, context_batch = 15, maxlag = 4, count = 1;
  bool whole_panel = false;

  auto* sel = app.add_subcommand("select-context", "rank context series and write a context map");
  sel->add_option("--panel", panel_path, "panel CSV")->required();
  sel->add_option("--out", out_path, "context map file")->required();
  sel->add_option("--contexts", contexts, "contexts per target (S)");
  sel->add_option("--context-batch", context_batch, "global context batch size (K)");
  sel->add_option("--maxlag", maxlag, "Granger lag order");
  sel->add_flag("--whole-panel", whole_panel, "select on the whole panel instead of the training split");
  add_seed(sel);

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--panel", panel_path, "panel CSV")->required();
  tr->add_option("--map", map_path, "context map (selected on the training split when omitted)");
  tr->add_option("--out", out_path, "model file")->required();
  tr->add_option("--log", log_path, "per-epoch CSV log");
  add_config_options(tr, cfg);
  add_seed(tr);

  auto* pr = app.add_subcommand("predict", "write forecasts as CSV");
  pr->add_option("--model", model_path, "model file")->required();
  pr->add_option("--panel", panel_path, "panel CSV")->required();
  pr->add_option("--anchor", anchor, "first forecast step: index, ISO-8601 timestamp or 'end' (default)");
  pr->add_option("--count", count, "number of consecutive anchors")->check(CLI::PositiveNumber);
  pr->add_option("--out", out_path, "forecast CSV (stdout when omitted)");

  auto* ev = app.add_subcommand("evaluate", "score test-split forecasts, JSON to stdout");
  ev->add_option("--model", model_path, "model file")->required();
  ev->add_option("--panel", panel_path, "panel CSV")->required();
  ev->add_option("--anchor", anchor, "first scored anchor (default: validation boundary)");

  SynthSpec spec;
  std::string spec_path, couplings;
  std::size_t lag = 1;
  bool two_driver = false;
  auto* sy = app.add_subcommand("synth", "generate a synthetic panel CSV");
  sy->add_option("--spec", spec_path, "key = value synthetic spec file");
  sy->add_option("--n", spec.n, "series count");
  sy->add_option("--T", spec.T, "timesteps");
  sy->add_option("--period", spec.period, "seasonal period");
  sy->add_option("--noise", spec.noise, "white noise scale");
  sy->add_option("--couplings", couplings, "driver>target:coef[@lag] list");
  sy->add_option("--lag", lag, "default coupling lag");
  sy->add_flag("--two-driver", two_driver, "series 0 and 1 drive every other series");
  sy->add_option("--out", out_path, "panel CSV (stdout when omitted)");
  add_seed(sy);

  auto* ab = app.add_subcommand("ablate", "train full, global-only and no-context variants and print test RSE");
  ab->add_option("--panel", panel_path, "panel CSV")->required();
  ab->add_option("--map", map_path, "context map (selected on the training split when omitted)");
  add_config_options(ab, cfg);
  add_seed(ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (*sel) {
      const SeriesPanel panel = load_panel(panel_path);
      const SeriesPanel source = whole_panel ? panel : panel.slice_time(0, split_bounds(panel.T).first);
      save_context_map(out_path, select_contexts(source, contexts, context_batch, maxlag), panel);
    } else if (*tr) {
      const Config config = resolve_config(cfg);
      const SeriesPanel panel = load_panel(panel_path);
      save_model(out_path, train_model(panel, config, map_path, log_path));
    } else if (*pr) {
      const Model model = load_model(model_path);
      const SeriesPanel panel = load_panel(panel_path);
      const std::size_t begin = resolve_anchor(panel, anchor);
      std::ofstream file;
      write_forecast_csv(open_output(out_path, file), panel, predict(model, panel, begin, begin + count));
    } else if (*ev) {
      const Model model = load_model(model_path);
      const SeriesPanel panel = load_panel(panel_path);
      check_panel(model, panel);
      const EvalReport report = anchor.empty() ? evaluate(model, panel) : evaluate(model, panel, resolve_anchor(panel, anchor));
      std::cout << report_to_json(report) << '\n';
    } else if (*sy) {
      if (!spec_path.empty()) {
        // Flags given on the command line win over the file.
        SynthSpec flags = spec;
        std::string flag_couplings = couplings;
        const std::size_t flag_lag = lag;
        load_synth_spec(spec_path, spec, couplings, lag);
        if (sy->count("--n")) spec.n = flags.n;
        if (sy->count("--T")) spec.T = flags.T;
        if (sy->count("--period")) spec.period = flags.period;
        if (sy->count("--noise")) spec.noise = flags.noise;
        if (sy->count("--couplings")) couplings = flag_couplings;
        if (sy->count("--lag")) lag = flag_lag;
      }
      if (two_driver) spec.couplings = two_driver_couplings(spec.n, lag);
      else if (!couplings.empty()) spec.couplings = parse_couplings(couplings, lag);
      const SeriesPanel panel = synth_generate(spec, cfg.seed_given ? cfg.seed : 1);
      std::ofstream file;
      write_panel_csv(open_output(out_path, file), panel);
    } else if (*ab) {
      Config base = resolve_config(cfg);
      const SeriesPanel panel = load_panel(panel_path);
      for (Variant v : {Variant::full, Variant::global_only, Variant::no_context}) {
        Config c = base;
        c.variant = v;
        const Model model = train_model(panel, c, map_path, "");
        const EvalReport report = evaluate(model, panel);
        std::cout << variant_name(v) << ' ' << format_double(report.rse) << '\n';
      }
    }
  } catch (const DivergenceError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const CLI::ParseError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}

}  // namespace ctxrnn
