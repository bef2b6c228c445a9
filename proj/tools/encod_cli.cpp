#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "encod/corpus.hpp"
#include "encod/crypto.hpp"
#include "encod/entropy.hpp"
#include "encod/evalbench.hpp"
#include "encod/kernels.hpp"
#include "encod/neural.hpp"
#include "encod/randtests.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace encod;

namespace {

// Bad user input; maps to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> size;
  std::string out;
  std::string log_level = "info";
  int jobs = 0;
};

std::uint64_t require_seed(const Globals& g) {
  if (!g.seed) throw UsageError("--seed is required for this command");
  return *g.seed;
}

std::size_t require_size(const Globals& g) {
  if (!g.size) throw UsageError("--size is required for this command");
  return *g.size;
}

void require(bool given, std::string_view flag) {
  if (!given) throw UsageError(std::string(flag) + " is required for this command");
}

// Machine output goes to --out when given, standard output otherwise.
void emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream f(g.out, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + g.out);
  f << text;
}

void check_store_size(const FragmentStore& store, const Globals& g) {
  if (g.size && *g.size != store.fragment_size())
    throw UsageError("--size " + std::to_string(*g.size) + " does not match the store's fragment size " +
                     std::to_string(store.fragment_size()));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::shared_ptr<const MlpModel> load_model_checked(const std::string& path, std::size_t size) {
  auto m = std::make_shared<MlpModel>(load_model(path));
  if (m->fragment_size != size)
    throw UsageError("model " + path + " was trained on " + std::to_string(m->fragment_size) +
                     "-byte fragments, store has " + std::to_string(size));
  return m;
}

struct DetectorArgs {
  std::string calibration;
  std::string model;
  double alpha = kDefaultAlpha;
  double entropy_threshold = 7.8;
};

Detector make_detector(const std::string& name, const DetectorArgs& a, std::size_t size) {
  auto calibration = [&] {
    if (a.calibration.empty()) throw UsageError("detector '" + name + "' needs --calibration");
    auto cal = load_calibration(a.calibration);
    if (cal.fragment_size != size)
      throw UsageError("calibration is for " + std::to_string(cal.fragment_size) + "-byte fragments, expected " +
                       std::to_string(size));
    return cal;
  };
  if (name == "entropy") return entropy_detector(a.entropy_threshold);
  if (name == "chi2-abs") return chi2_abs_detector(calibration());
  if (name == "chi2-ci") return chi2_ci_detector();
  if (name == "nist") return nist_detector(a.alpha);
  if (name == "hedge") return hedge_detector(calibration(), a.alpha);
  if (name == "nn") {
    if (a.model.empty()) throw UsageError("detector 'nn' needs --model");
    return nn_detector(load_model_checked(a.model, size));
  }
  throw UsageError("unknown detector '" + name + "' (entropy, chi2-abs, chi2-ci, nist, hedge, nn)");
}

std::string dump_lines(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

void set_log_level(const std::string& level) {
  const auto parsed = spdlog::level::from_str(level);
  if (parsed == spdlog::level::off && level != "off") throw UsageError("unknown log level '" + level + "'");
  spdlog::set_level(parsed);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("encod"));
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");

  CLI::App app{"Encrypted vs. compressed fragment detection toolkit"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed (required by randomized commands)");
  app.add_option("--size", g.size, "Fragment size in bytes")->check(CLI::IsMember({512, 1024, 2048, 4096, 8192}));
  app.add_option("--out", g.out, "Output path (standard output when omitted, where allowed)");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, critical, off (ENC0D_LOG overrides)");
  app.add_option("--jobs", g.jobs, "Worker threads for parallel stages (0 = all cores)")->check(CLI::NonNegativeNumber);

  std::function<void()> action;

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Build and split fragment stores");
  corpus->require_subcommand(1);
  std::size_t quota = 0;
  std::vector<std::string> sources;
  auto* build = corpus->add_subcommand("build", "Sample a balanced fragment store from per-format directories");
  build->add_option("--quota", quota, "Fragments per label")->required()->check(CLI::PositiveNumber);
  build->add_option("--src", sources, "<label>=<dir>, repeatable")->required();
  build->callback([&] {
    action = [&] {
      require(!g.out.empty(), "--out");
      std::map<FormatLabel, fs::path> dirs;
      for (const auto& s : sources) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--src expects <label>=<dir>, got '" + s + "'");
        FormatLabel label;
        try {
          label = parse_label(s.substr(0, eq));
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        if (!dirs.emplace(label, s.substr(eq + 1)).second) throw UsageError("duplicate --src for " + s.substr(0, eq));
      }
      BuildOptions opt;
      opt.fragment_size = require_size(g);
      opt.per_label_quota = quota;
      opt.seed = require_seed(g);
      opt.jobs = g.jobs;
      const auto m = build_corpus(dirs, opt, g.out);
      std::cout << json{{"store", g.out}, {"records", m.records.size()}, {"store_digest", m.store_digest}}.dump() << "\n";
    };
  });

  std::string store_dir;
  auto* split = corpus->add_subcommand("split", "Assign an 85/5/10 train/dev/test split into a new store directory");
  split->add_option("--store", store_dir, "Input store directory")->required();
  split->callback([&] {
    action = [&] {
      require(!g.out.empty(), "--out");
      FragmentStore store(store_dir);
      check_store_size(store, g);
      const auto m = split_corpus(store.manifest(), require_seed(g));
      write_split_store(store, m, g.out);
      std::cout << json{{"store", g.out}, {"train", m.indices(Split::train).size()}, {"dev", m.indices(Split::dev).size()},
                        {"test", m.indices(Split::test).size()}}
                       .dump()
                << "\n";
    };
  });

  // entropy
  auto* entropy = app.add_subcommand("entropy", "Entropy analysis");
  entropy->require_subcommand(1);
  std::vector<std::string> profile_labels;
  auto* profile = entropy->add_subcommand("profile", "Per-label entropy quantiles as CSV");
  profile->add_option("--store", store_dir, "Store directory")->required();
  profile->add_option("--label", profile_labels, "Labels to profile (default: all in the store)");
  profile->callback([&] {
    action = [&] {
      FragmentStore store(store_dir);
      check_store_size(store, g);
      std::vector<FormatLabel> labels;
      try {
        for (const auto& l : profile_labels) labels.push_back(parse_label(l));
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (labels.empty())
        for (const auto& lc : store.manifest().labels) labels.push_back(lc.tag);
      std::vector<EntropyProfileRow> rows;
      for (auto l : labels) rows.push_back(entropy_profile(store, l));
      emit(g, profile_csv(rows));
    };
  });

  // stats
  auto* stats = app.add_subcommand("stats", "Statistical detectors");
  stats->require_subcommand(1);
  std::string detector_name;
  DetectorArgs dargs;
  std::string in_path;
  auto* stats_run = stats->add_subcommand("run", "Classify fragments with a statistical detector (JSON lines)");
  stats_run->add_option("--detector", detector_name, "nist, chi2-abs, chi2-ci or hedge")
      ->required()
      ->check(CLI::IsMember({"nist", "chi2-abs", "chi2-ci", "hedge"}));
  stats_run->add_option("--alpha", dargs.alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
  stats_run->add_option("--calibration", dargs.calibration, "Chi-square calibration file (chi2-abs, hedge)");
  stats_run->add_option("--store", store_dir, "Store directory");
  stats_run->add_option("--in", in_path, "Raw file, fragmented at --size");
  stats_run->callback([&] {
    action = [&] {
      if (store_dir.empty() == in_path.empty()) throw UsageError("give exactly one of --store or --in");
      if ((detector_name == "chi2-abs" || detector_name == "hedge") && dargs.calibration.empty())
        throw UsageError("--calibration is required for detector '" + detector_name + "'");
      std::optional<Chi2Calibration> cal;
      if (!dargs.calibration.empty()) cal = load_calibration(dargs.calibration);

      std::optional<FragmentStore> store;
      std::vector<std::uint8_t> raw;
      std::vector<kernels::Fragment> frags;
      std::vector<std::uint64_t> ids;
      std::size_t size = 0;
      if (!store_dir.empty()) {
        store.emplace(store_dir);
        check_store_size(*store, g);
        size = store->fragment_size();
        for (std::size_t i = 0; i < store->size(); ++i) {
          frags.push_back(store->fragment(i));
          ids.push_back(i);
        }
      } else {
        size = require_size(g);
        std::ifstream f(in_path, std::ios::binary);
        if (!f) throw UsageError("cannot read " + in_path);
        raw.assign(std::istreambuf_iterator<char>(f), {});
        frags = fragment_file(raw, size);
        for (std::size_t i = 0; i < frags.size(); ++i) ids.push_back(i * size);
      }
      if (cal && cal->fragment_size != size)
        throw UsageError("calibration is for " + std::to_string(cal->fragment_size) + "-byte fragments, input has " +
                         std::to_string(size));
      kernels::set_jobs(g.jobs);
      std::vector<json> rows(frags.size());
      std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 16)
      for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(frags.size()); ++k) {
        try {
          const auto frag = frags[static_cast<std::size_t>(k)];
          SuiteVerdict v;
          if (detector_name == "nist") {
            v = nist_majority_vote(frag, dargs.alpha);
          } else if (detector_name == "hedge") {
            v = hedge_classify(frag, *cal, dargs.alpha);
          } else {
            const auto h = byte_histogram(frag);
            auto t = detector_name == "chi2-abs" ? chi2_absolute_test(h, *cal) : chi2_ci_test(h);
            v.random = t.passed;
            v.tests.push_back(std::move(t));
          }
          json per_test = json::array();
          for (const auto& t : v.tests) per_test.push_back(t.to_json());
          rows[static_cast<std::size_t>(k)] = {{"fragment_id", ids[static_cast<std::size_t>(k)]},
                                               {"detector", detector_name},
                                               {"verdict", v.random ? "random" : "non-random"},
                                               {"per_test", per_test}};
        } catch (...) {
#pragma omp critical
          error = std::current_exception();
        }
      }
      if (error) std::rethrow_exception(error);
      emit(g, dump_lines(rows));
    };
  });

  // calibrate
  double c_mult = kDefaultChi2Multiplier;
  std::size_t max_samples = 0;
  auto* calibrate = app.add_subcommand("calibrate", "Chi-square band over the store's enc fragments");
  calibrate->add_option("--store", store_dir, "Store directory (train split used when split)")->required();
  calibrate->add_option("--c", c_mult, "Band half-width in standard deviations")->check(CLI::PositiveNumber);
  calibrate->add_option("--max-samples", max_samples, "Seeded subsample of enc fragments (0 = all)");
  calibrate->callback([&] {
    action = [&] {
      const auto seed = require_seed(g);
      require(!g.out.empty(), "--out");
      FragmentStore store(store_dir);
      check_store_size(store, g);
      const auto& m = store.manifest();
      auto idx = m.indices(FormatLabel::enc, m.is_split() ? Split::train : Split::none);
      if (max_samples > 0 && idx.size() > max_samples) {
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(max_samples);
        std::sort(idx.begin(), idx.end());
      }
      std::vector<std::span<const std::uint8_t>> frags;
      for (auto i : idx) frags.push_back(store.fragment(i));
      const auto cal = calibrate_chi2(frags, c_mult, seed);
      save_calibration(cal, g.out);
      std::cout << cal.to_json().dump() << "\n";
    };
  });

  // train
  std::string task;
  std::size_t train_quota = 0;
  TrainConfig tcfg;
  std::string log_path;
  auto* train_cmd = app.add_subcommand("train", "Train a binary or multi-class model on a split store");
  train_cmd->add_option("--task", task, "binary:<format> or multiclass")->required();
  train_cmd->add_option("--store", store_dir, "Split store directory")->required();
  train_cmd->add_option("--quota", train_quota, "Per-class fragment cap over all splits (0 = balanced maximum)");
  train_cmd->add_option("--epochs", tcfg.max_epochs, "Maximum epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--patience", tcfg.patience, "Early-stopping patience")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tcfg.batch_size, "Batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tcfg.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--log", log_path, "Write the per-epoch training log (JSON) here");
  train_cmd->callback([&] {
    action = [&] {
      const auto seed = require_seed(g);
      require(!g.out.empty(), "--out");
      FragmentStore store(store_dir);
      check_store_size(store, g);
      kernels::set_jobs(g.jobs);
      MlpModel model;
      try {
        model = build_for_task(task, seed);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      model.fragment_size = store.fragment_size();
      const auto data = prepare_task(store, model, train_quota, seed);
      spdlog::info("{}: {} train / {} dev / {} test rows", task, data.train.size(), data.dev.size(), data.test.size());
      tcfg.seed = seed;
      const auto result = train(model, data.train, data.dev, tcfg);
      save_model(model, g.out);
      const double test_acc = accuracy(model, data.test);
      json log = json::array();
      for (const auto& e : result.log)
        log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_loss", e.dev_loss}, {"dev_accuracy", e.dev_accuracy}});
      const json summary = {{"model", g.out},          {"task", task},
                            {"seed", seed},            {"fragment_size", model.fragment_size},
                            {"best_epoch", result.best_epoch}, {"test_accuracy", test_acc},
                            {"model_digest", [&] {
                               std::ifstream f(g.out, std::ios::binary);
                               std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(f), {});
                               return sha256_hex(bytes);
                             }()},
                            {"tool_version", std::string(kToolVersion)}};
      if (!log_path.empty()) {
        std::ofstream f(log_path);
        f << json{{"summary", summary}, {"epochs", log}}.dump(2) << "\n";
      }
      std::cout << summary.dump() << "\n";
    };
  });

  // classify
  auto* classify = app.add_subcommand("classify", "Run a trained model over fragments (JSON lines)");
  classify->add_option("--model", dargs.model, "Model file")->required();
  classify->add_option("--in", in_path, "Raw file (fragmented at the model's size) or store directory")->required();
  classify->callback([&] {
    action = [&] {
      const auto model = load_model(dargs.model);
      std::optional<FragmentStore> store;
      std::vector<std::uint8_t> raw;
      std::vector<kernels::Fragment> frags;
      std::vector<std::uint64_t> ids;
      if (fs::is_directory(in_path)) {
        store.emplace(in_path);
        if (store->fragment_size() != model.fragment_size) throw UsageError("store and model fragment sizes differ");
        for (std::size_t i = 0; i < store->size(); ++i) {
          frags.push_back(store->fragment(i));
          ids.push_back(i);
        }
      } else {
        std::ifstream f(in_path, std::ios::binary);
        if (!f) throw UsageError("cannot read " + in_path);
        raw.assign(std::istreambuf_iterator<char>(f), {});
        frags = fragment_file(raw, model.fragment_size);
        for (std::size_t i = 0; i < frags.size(); ++i) ids.push_back(i * model.fragment_size);
      }
      std::vector<json> rows;
      for (std::size_t k = 0; k < frags.size(); ++k) {
        const auto p = predict(model, frags[k]);
        json probs = json::object();
        for (std::size_t c = 0; c < p.probabilities.size(); ++c) probs[model.class_labels[c]] = p.probabilities[c];
        rows.push_back({{"fragment_id", ids[k]}, {"label", p.label}, {"probabilities", probs}});
      }
      emit(g, dump_lines(rows));
    };
  });

  // eval
  std::string mode = "binary-all";
  std::string detector_list = "nn";
  std::string per_format;
  std::string report_format = "csv";
  std::string gnuplot_path;
  auto* eval = app.add_subcommand("eval", "Evaluate detectors on a store's test split");
  eval->add_option("--mode", mode, "binary-all, per-format or multiclass")
      ->check(CLI::IsMember({"binary-all", "per-format", "multiclass"}));
  eval->add_option("--store", store_dir, "Store directory")->required();
  eval->add_option("--detectors", detector_list, "Comma list: entropy, chi2-abs, chi2-ci, nist, hedge, nn");
  eval->add_option("--format", per_format, "Compressed format for per-format mode");
  eval->add_option("--model", dargs.model, "Model file");
  eval->add_option("--calibration", dargs.calibration, "Chi-square calibration file");
  eval->add_option("--alpha", dargs.alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--entropy-threshold", dargs.entropy_threshold, "Bits per byte at or above which entropy says enc");
  eval->add_option("--report", report_format, "csv or json (binary modes)")->check(CLI::IsMember({"csv", "json"}));
  eval->add_option("--gnuplot", gnuplot_path, "Also write a gnuplot-ready data file here");
  eval->callback([&] {
    action = [&] {
      FragmentStore store(store_dir);
      check_store_size(store, g);
      kernels::set_jobs(g.jobs);
      const auto records = evaluation_records(store);
      if (mode == "multiclass") {
        require(!dargs.model.empty(), "--model");
        const auto model = load_model_checked(dargs.model, store.fragment_size());
        const auto cm = eval_multiclass(*model, store, records);
        auto j = cm.to_json();
        j["fragment_size"] = store.fragment_size();
        j["binary_collapsed_accuracy"] = collapse_to_binary(cm).accuracy();
        j["tool_version"] = std::string(kToolVersion);
        emit(g, j.dump(2) + "\n");
        if (!gnuplot_path.empty()) {
          std::ofstream f(gnuplot_path);
          const auto rn = cm.row_normalized();
          f << "# rows: truth, columns: predicted:";
          for (const auto& l : cm.labels) f << ' ' << l;
          f << '\n';
          for (const auto& row : rn) {
            for (double v : row) f << v << ' ';
            f << '\n';
          }
        }
        return;
      }
      const auto seed = require_seed(g);
      std::vector<Detector> detectors;
      for (const auto& name : split_list(detector_list)) detectors.push_back(make_detector(name, dargs, store.fragment_size()));
      if (detectors.empty()) throw UsageError("--detectors is empty");
      std::vector<BinaryReport> reports;
      if (mode == "binary-all") {
        const auto balanced = balanced_binary_sample(store, records, seed);
        for (const auto& d : detectors) reports.push_back(eval_binary_all(d, store, balanced));
      } else {
        require(!per_format.empty(), "--format");
        FormatLabel f;
        try {
          f = parse_label(per_format);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        reports = eval_binary_per_format(f, detectors, store, records, seed);
      }
      if (report_format == "json") {
        json j = {{"seed", seed}, {"tool_version", std::string(kToolVersion)}, {"reports", json::array()}};
        for (const auto& r : reports) j["reports"].push_back(r.to_json());
        emit(g, j.dump(2) + "\n");
      } else {
        emit(g, curve_csv(reports));
      }
      if (!gnuplot_path.empty()) {
        std::ofstream f(gnuplot_path);
        f << "# size detector accuracy\n";
        for (const auto& r : reports) f << r.size << ' ' << r.detector << ' ' << r.accuracy << '\n';
      }
    };
  });

  // bench
  std::size_t bench_samples = 1000, repeats = 1;
  std::string bench_detectors = "nn,nist,hedge";
  auto* bench = app.add_subcommand("bench", "Per-sample detector runtime (JSON)");
  bench->add_option("--store", store_dir, "Store directory")->required();
  bench->add_option("--model", dargs.model, "Model file for the nn detector");
  bench->add_option("--calibration", dargs.calibration, "Chi-square calibration file");
  bench->add_option("--detectors", bench_detectors, "Comma list of detectors");
  bench->add_option("--samples", bench_samples, "Number of enc/compressed samples")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "Passes over the samples")->check(CLI::PositiveNumber);
  bench->callback([&] {
    action = [&] {
      const auto seed = require_seed(g);
      FragmentStore store(store_dir);
      check_store_size(store, g);
      std::vector<Detector> detectors;
      for (const auto& name : split_list(bench_detectors)) detectors.push_back(make_detector(name, dargs, store.fragment_size()));
      auto records = evaluation_records(store);
      std::mt19937_64 rng(seed);
      std::shuffle(records.begin(), records.end(), rng);
      if (records.size() < bench_samples)
        throw UsageError("store has " + std::to_string(records.size()) + " records, fewer than --samples");
      records.resize(bench_samples);
      std::vector<std::span<const std::uint8_t>> samples;
      for (auto i : records) samples.push_back(store.fragment(i));
      auto report = bench_overhead(detectors, samples, repeats);
      if (!dargs.model.empty())
        report.nn_batched_per_sample_s = bench_batched_inference(*load_model_checked(dargs.model, store.fragment_size()), samples);
      auto j = report.to_json();
      j["seed"] = seed;
      emit(g, j.dump(2) + "\n");
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const char* env = std::getenv("ENC0D_LOG");
    if (!env) env = std::getenv("ENCOD_LOG");
    set_log_level(env && *env ? env : g.log_level);
    if (!action) throw UsageError("nothing to do");
    action();
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    std::cerr << "Run with --help for usage.\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
