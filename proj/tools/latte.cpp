#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "latte/experiments.hpp"
#include "latte/plot.hpp"

using namespace latte;
using json = nlohmann::json;

namespace {

// Flags that map one-to-one onto ExperimentSpec fields. Values stay strings
// until the config file has been applied, so flags always win.
struct SpecFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  bool nldu = false;
  CLI::Option* nldu_opt = nullptr;
  std::string config;

  void add(CLI::App* app, const std::string& name, const std::string& help) {
    options[name] = app->add_option("--" + name, values[name], help);
  }

  void attach(CLI::App* app, bool tables) {
    add(app, "d", "code distance (stability: even patch size)");
    add(app, "p", "physical error rate");
    add(app, "rounds", "measurement rounds (default d)");
    add(app, "shots", "shots (bandwidth: per grid point)");
    add(app, "buffer", "block buffer layers (default ceil(d/2))");
    add(app, "decode-workers", "decode pool size M");
    add(app, "merge-workers", "merge pool size N");
    nldu_opt = app->add_flag("--nldu", nldu, "pre-decode with the neural local decoding unit");
    add(app, "weights", "LNW1 weights file");
    add(app, "seed", "master seed");
    add(app, "out", "output path for the metrics JSON");
    add(app, "engine", "global | block | stream");
    add(app, "decoder", "uf | exact");
    add(app, "tolerance", "target Wilson half-width; doubles shots until met");
    add(app, "shot-cap", "upper bound on escalated shots");
    add(app, "board", "NLDU board extent N (0: one board)");
    add(app, "windows-per-tick", "windows folded into one feedback tick");
    add(app, "patches", "patches in the multipatch chain");
    add(app, "threads", "decode pool sizes to tabulate, e.g. 1,2,4,8,16");
    if (tables) {
      add(app, "ds", "distances, e.g. 3,5,7");
      add(app, "ps", "error rates, e.g. 1e-3,3e-3");
      add(app, "scan", "threshold scan target: memory | stability");
    }
    app->add_option("--config", config, "TOML-like key = value file; flags override it");
  }

  exp::ExperimentSpec build(const std::string& kind) const {
    exp::ExperimentSpec s;
    s.kind = kind;
    if (!config.empty()) exp::load_config(s, config);
    s.kind = kind;
    for (const auto& [name, opt] : options)
      if (opt->count()) exp::set_field(s, name, values.at(name));
    if (nldu_opt->count()) s.nldu = nldu;
    s.validate();
    return s;
  }
};

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << text;
}

void emit_json(const exp::ExperimentSpec& s, const json& j) { emit(s.out, j.dump(2) + "\n"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LATTE streaming decoder experiments"};
  app.require_subcommand(1);

  std::map<std::string, SpecFlags> flags;
  auto experiment = [&](const std::string& name, const std::string& help, bool tables = false) {
    CLI::App* sub = app.add_subcommand(name, help);
    flags[name].attach(sub, tables);
    return sub;
  };
  auto* memory = experiment("memory", "memory experiment: LER with Wilson interval");
  auto* stability = experiment("stability", "stability experiment: LER with Wilson interval");
  auto* multipatch = experiment("multipatch", "chain of merged patches: LER and latency per thread count");
  auto* bandwidth = experiment("bandwidth", "NLDU residual-syndrome ratio over a (d, p) grid", true);
  auto* stream = experiment("stream-latency", "stream rounds through the scheduler; tick latency and pool sweep");
  auto* scan = experiment("threshold-scan", "LER over a (d, p) grid", true);
  std::string csv_path, trace_path, feedback_path;
  bandwidth->add_option("--csv", csv_path, "CSV table output");
  scan->add_option("--csv", csv_path, "CSV table output");
  stream->add_option("--trace", trace_path, "event trace (JSON lines)");
  stream->add_option("--feedback-csv", feedback_path, "per-tick feedback CSV");

  auto* exporter = app.add_subcommand("export-dataset", "write an LNDS training dataset");
  int ex_d = 9, ex_rounds = 0;
  double ex_p = 1e-3;
  uint32_t ex_samples = 1000;
  uint64_t ex_seed = 1;
  std::string ex_out;
  exporter->add_option("--d", ex_d, "code distance");
  exporter->add_option("--p", ex_p, "physical error rate");
  exporter->add_option("--rounds", ex_rounds, "rounds per sample (default d)");
  exporter->add_option("--shots", ex_samples, "number of samples");
  exporter->add_option("--seed", ex_seed, "master seed");
  exporter->add_option("--out", ex_out, "output LNDS file")->required();

  auto* estimate = app.add_subcommand("estimate-hw", "NLDU resource and latency model");
  int hw_n = 9;
  double hw_f = 300e6, hw_budget = 1e-6;
  std::vector<int> hw_k{7, 7, 7}, hw_p{52, 33, 27};
  std::string hw_out;
  for (auto* sub : {estimate, static_cast<CLI::App*>(nullptr)}) {
    if (!sub) break;
    sub->add_option("--n", hw_n, "board extent N");
    sub->add_option("--freq", hw_f, "clock frequency in Hz");
    sub->add_option("--k", hw_k, "output channels K1,K2,K3")->delimiter(',')->expected(3);
    sub->add_option("--pe", hw_p, "parallel PEs P1,P2,P3")->delimiter(',')->expected(3);
    sub->add_option("--out", hw_out, "output JSON");
  }
  auto* search = app.add_subcommand("search-hw", "cheapest NLDU configuration within a per-stage latency budget");
  search->add_option("--n", hw_n, "board extent N");
  search->add_option("--freq", hw_f, "clock frequency in Hz");
  search->add_option("--k", hw_k, "output channels K1,K2,K3")->delimiter(',')->expected(3);
  search->add_option("--budget", hw_budget, "per-stage latency budget in seconds");
  search->add_option("--out", hw_out, "output JSON");

  auto* plotter = app.add_subcommand("plot", "render a CSV table as an SVG chart");
  plot::PlotSpec ps;
  std::string plot_in, plot_out;
  plotter->add_option("--in", plot_in, "input CSV")->required();
  plotter->add_option("--x", ps.x, "x column")->required();
  plotter->add_option("--y", ps.y, "y column")->required();
  plotter->add_option("--group", ps.group, "column that splits series");
  plotter->add_option("--y-low", ps.y_low, "lower error-bar column");
  plotter->add_option("--y-high", ps.y_high, "upper error-bar column");
  plotter->add_flag("--log-x", ps.log_x, "logarithmic x axis");
  plotter->add_flag("--log-y", ps.log_y, "logarithmic y axis");
  plotter->add_option("--title", ps.title, "chart title");
  plotter->add_option("--out", plot_out, "output SVG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    auto hw_json = [&](const nldu::NlduConfig& c) {
      nldu::ResourceEstimate r = nldu::estimate_resources(c);
      json j{{"n", c.n}, {"k", c.k}, {"p", c.p}, {"freq_hz", c.f_hz},
             {"lut", r.lut}, {"reg", r.reg}, {"ltc_us", r.ltc_s * 1e6}};
      for (int i = 0; i < 3; ++i) j["stage_latency_us"].push_back(nldu::stage_latency_s(c, i) * 1e6);
      return j;
    };
    if (*memory) {
      auto s = flags["memory"].build("memory");
      emit_json(s, exp::run_memory(s).to_json(s));
    } else if (*stability) {
      auto s = flags["stability"].build("stability");
      emit_json(s, exp::run_stability(s).to_json(s));
    } else if (*multipatch) {
      auto s = flags["multipatch"].build("multipatch");
      emit_json(s, exp::run_multipatch(s).to_json(s));
    } else if (*bandwidth) {
      auto s = flags["bandwidth"].build("bandwidth");
      auto rows = exp::run_bandwidth(s);
      json j = exp::spec_json(s);
      for (const auto& r : rows)
        j["rows"].push_back({{"d", r.d}, {"p", r.p}, {"shots", r.shots}, {"raw_bits", r.raw_bits},
                             {"residual_bits", r.residual_bits}, {"ratio", r.ratio()}, {"undefined", r.undefined()}});
      emit_json(s, j);
      if (!csv_path.empty()) emit(csv_path, exp::bandwidth_csv(rows));
    } else if (*scan) {
      auto s = flags["threshold-scan"].build("threshold-scan");
      auto rows = exp::run_threshold_scan(s);
      json j = exp::spec_json(s);
      for (const auto& r : rows) {
        json row = exp::totals_json(r.totals, false);
        row["d"] = r.d;
        row["p"] = r.p;
        j["rows"].push_back(row);
      }
      emit_json(s, j);
      if (!csv_path.empty()) emit(csv_path, exp::scan_csv(rows));
    } else if (*stream) {
      auto s = flags["stream-latency"].build("stream-latency");
      std::ofstream trace, fb;
      exp::StreamOutputs outs;
      if (!trace_path.empty()) {
        trace.open(trace_path);
        outs.trace = &trace;
      }
      if (!feedback_path.empty()) {
        fb.open(feedback_path);
        outs.feedback_csv = &fb;
      }
      emit_json(s, exp::run_streaming_latency(s, outs).to_json(s));
    } else if (*exporter) {
      uint32_t rounds = ex_rounds > 0 ? static_cast<uint32_t>(ex_rounds) : static_cast<uint32_t>(ex_d);
      auto lat = memory_lattice(build_surface_code(ex_d), rounds, NoiseParams::uniform(ex_p));
      nldu::Dataset ds = nldu::make_dataset(*lat, ex_p, ex_seed, ex_samples);
      std::ofstream f(ex_out, std::ios::binary);
      if (!f) throw ConfigError("cannot write " + ex_out);
      nldu::write_lnds(f, ds);
    } else if (*estimate) {
      nldu::NlduConfig c;
      c.n = hw_n;
      c.f_hz = hw_f;
      std::copy(hw_k.begin(), hw_k.end(), c.k.begin());
      std::copy(hw_p.begin(), hw_p.end(), c.p.begin());
      emit(hw_out, hw_json(c).dump(2) + "\n");
    } else if (*search) {
      std::array<int, 3> k{};
      std::copy(hw_k.begin(), hw_k.end(), k.begin());
      emit(hw_out, hw_json(nldu::search_config(hw_n, hw_f, hw_budget, k)).dump(2) + "\n");
    } else if (*plotter) {
      std::ifstream f(plot_in);
      if (!f) throw ConfigError("cannot read " + plot_in);
      emit(plot_out, plot::render_svg(plot::read_csv(f), ps));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
