// Command-line front end: simulate training data, train, enhance a
// recording, audit parameter counts, check gradients, and score enhanced
// audio. Exit code 0 on success, 1 for command-line misuse, 2 when a
// command fails on its data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "uformer/checkpoint.hpp"
#include "uformer/gradcheck.hpp"
#include "uformer/train.hpp"
#include "uformer/wav.hpp"

namespace fs = std::filesystem;
using namespace uformer;

namespace {

// Defaults, then the config file, then each --set assignment in order.
UformerConfig make_config(const std::string& path,
                          const std::vector<std::string>& sets) {
  UformerConfig cfg;
  if (!path.empty()) cfg = load_config_file(path);
  for (const auto& kv : sets) apply_override(cfg, kv);
  cfg.validate();
  return cfg;
}

// Named model variants for parameter audits. "full" is the unablated
// hybrid; the rest switch off one mechanism or one branch at a time.
void apply_ablation(UformerConfig& cfg, const std::string& name) {
  auto& m = cfg.model;
  if (name == "full") return;
  if (name == "no_freq_attention") {
    m.disable_freq_attention = true;
  } else if (name == "no_dilated_conv") {
    m.disable_dilated_conv = true;
  } else if (name == "no_encdec_attention") {
    m.disable_encdec_attention = true;
  } else if (name == "complex_only") {
    m.branch = Branch::complex_only;
  } else if (name == "magnitude_only") {
    m.branch = Branch::magnitude_only;
  } else if (name == "lstm") {
    m.swap_conformer_for_lstm = true;
  } else {
    throw ConfigError(
        "unknown ablation '" + name +
        "'; choose from full, no_freq_attention, no_dilated_conv, "
        "no_encdec_attention, complex_only, magnitude_only, lstm");
  }
}

// Synthetic clip pools for commands that run without a recorded corpus.
template <std::floating_point T>
std::pair<Corpus<T>, Corpus<T>> synthetic_pools(const UformerConfig& cfg,
                                                std::uint64_t seed) {
  const std::int64_t rate = cfg.stft.sample_rate;
  const auto clip_len = static_cast<std::int64_t>(
      std::llround(cfg.data.chunk_seconds * static_cast<double>(rate)));
  auto speech = synthetic_corpus<T>(SourceKind::speech, 8, clip_len, rate,
                                    derive_seed(seed, 101));
  auto noise = synthetic_corpus<T>(SourceKind::noise, 8, clip_len, rate,
                                   derive_seed(seed, 202));
  return {std::move(speech), std::move(noise)};
}

struct SimulateArgs {
  std::string out, config;
  std::vector<std::string> sets;
  std::int64_t count = 4;
  std::uint64_t seed = 1;
  double snr_min = 0.0, snr_max = 0.0, rt60_min = 0.0, rt60_max = 0.0;
  bool has_snr_min = false, has_snr_max = false;
  bool has_rt60_min = false, has_rt60_max = false;
};

int run_simulate(const SimulateArgs& a) {
  UformerConfig cfg = make_config(a.config, a.sets);
  if (a.has_snr_min) cfg.data.snr_min_db = a.snr_min;
  if (a.has_snr_max) cfg.data.snr_max_db = a.snr_max;
  if (a.has_rt60_min) cfg.data.rt60_min = a.rt60_min;
  if (a.has_rt60_max) cfg.data.rt60_max = a.rt60_max;
  cfg.validate();
  require<ValueError>(a.count > 0, "--count must be positive");

  fs::create_directories(a.out);
  const auto [speech, noise] = synthetic_pools<float>(cfg, a.seed);
  const auto items = sample_batch(speech, noise, cfg.data,
                                  cfg.stft.sample_rate, a.count, a.seed);

  std::ofstream meta(fs::path(a.out) / "metadata.jsonl");
  require<IoError>(meta.good(), "cannot write metadata in " + a.out);
  for (std::size_t k = 0; k < items.size(); ++k) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "item_%04zu", k);
    const std::string noisy_name = std::string(stem) + ".noisy.wav";
    const std::string target_name = std::string(stem) + ".target.wav";
    const auto& it = items[k];
    write_wav((fs::path(a.out) / noisy_name).string(),
              std::vector<double>(it.noisy.begin(), it.noisy.end()),
              static_cast<double>(cfg.stft.sample_rate));
    write_wav((fs::path(a.out) / target_name).string(),
              std::vector<double>(it.target.begin(), it.target.end()),
              static_cast<double>(cfg.stft.sample_rate));
    meta << nlohmann::json{{"index", k},
                           {"noisy", noisy_name},
                           {"target", target_name},
                           {"snr_db", it.snr_db},
                           {"rt60", it.rt60},
                           {"seed", it.seed}}
                .dump()
         << "\n";
  }
  require<IoError>(meta.good(), "failed writing metadata in " + a.out);
  std::cout << "wrote " << items.size() << " mixtures to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string out, config, data, resume;
  std::vector<std::string> sets;
  std::int64_t epochs = -1;
};

int run_train(const TrainArgs& a) {
  UformerConfig cfg;
  if (!a.resume.empty()) {
    cfg = checkpoint_config(a.resume);
    for (const auto& kv : a.sets) apply_override(cfg, kv);
    cfg.validate();
  } else {
    cfg = make_config(a.config, a.sets);
  }
  if (a.epochs > 0) cfg.train.epochs = a.epochs;

  Corpus<float> speech, noise;
  if (!a.data.empty()) {
    std::tie(speech, noise) =
        load_corpora<float>(a.data, cfg.stft.sample_rate);
  } else {
    std::tie(speech, noise) = synthetic_pools<float>(cfg, cfg.train.seed);
  }

  ParameterStore<float> store;
  Rng init_rng(cfg.train.seed);
  Uformer<float> model(store, cfg, init_rng);
  auto opt = init_optimizer(store, cfg.train.lr);
  if (!a.resume.empty()) load_checkpoint(a.resume, store, &opt);

  const TrainReport report =
      train_loop(model, store, opt, cfg, speech, noise, a.out, &std::cout);

  std::ofstream log(a.out + ".log");
  log << report.to_text();
  std::ofstream summary(a.out + ".report.json");
  summary << report.to_json() << "\n";
  require<IoError>(log.good() && summary.good(),
                   "failed writing training report next to " + a.out);
  std::cout << "checkpoint written to " << a.out << "\n";
  return 0;
}

struct EnhanceArgs {
  std::string model, in, out;
  bool causal = false, pcm16 = false;
};

int run_enhance(const EnhanceArgs& a) {
  UformerConfig cfg = checkpoint_config(a.model);
  if (a.causal) cfg.model.causal = true;
  cfg.validate();

  ParameterStore<float> store;
  Rng rng(1);  // placeholder init, fully overwritten by the checkpoint
  Uformer<float> model(store, cfg, rng);
  load_checkpoint(a.model, store);

  const WavFile wav = read_wav(a.in);
  require<IoError>(
      wav.sample_rate == static_cast<double>(cfg.stft.sample_rate),
      a.in + ": sample rate " + std::to_string(wav.sample_rate) +
          " does not match the model's " +
          std::to_string(cfg.stft.sample_rate));
  std::vector<float> x(wav.samples.begin(), wav.samples.end());
  const std::vector<float> y = enhance(model, store, cfg, x);
  write_wav(a.out, std::vector<double>(y.begin(), y.end()), wav.sample_rate,
            a.pcm16 ? WavFormat::pcm16 : WavFormat::float32);
  std::cout << "enhanced " << a.in << " -> " << a.out << " (" << y.size()
            << " samples)\n";
  return 0;
}

struct ParamsArgs {
  std::string config, ablation = "full";
  std::vector<std::string> sets;
};

int run_params(const ParamsArgs& a) {
  UformerConfig cfg = make_config(a.config, a.sets);
  apply_ablation(cfg, a.ablation);
  cfg.validate();

  ParameterStore<float> store;
  Rng rng(1);
  Uformer<float> model(store, cfg, rng);
  const std::int64_t n = store.trainable_count();
  std::cout << a.ablation << " " << n << " parameters ("
            << std::setprecision(4) << static_cast<double>(n) / 1e6
            << " M)\n";
  return 0;
}

struct GradcheckArgs {
  std::string config, corrupt;
  std::vector<std::string> sets;
  double tolerance = 1e-3, eps = 1e-4;
  std::int64_t stride = 1, frames = 12;
  std::uint64_t seed = 7;
};

int run_gradcheck(const GradcheckArgs& a) {
  UformerConfig cfg =
      a.config.empty() ? tiny_config() : load_config_file(a.config);
  for (const auto& kv : a.sets) apply_override(cfg, kv);
  cfg.validate();
  require<ValueError>(a.frames >= 2, "--frames must be at least 2");

  ParameterStore<double> store;
  Rng rng(a.seed);
  Uformer<double> model(store, cfg, rng);

  // One fixed mixture sized to the requested frame count. The builder runs
  // hundreds of times, so everything random is drawn once, up front.
  const auto L = static_cast<std::size_t>(cfg.stft.win_length +
                                          (a.frames - 1) * cfg.stft.hop);
  Rng data_rng(derive_seed(a.seed, 1));
  MixtureSample<double> item;
  item.target = synthetic_speech<double>(static_cast<std::int64_t>(L),
                                         cfg.stft.sample_rate, data_rng);
  const auto noise =
      white_noise<double>(static_cast<std::int64_t>(L), data_rng);
  item.noisy = mix_at_snr(item.target, noise, 0.0);
  const std::vector<MixtureSample<double>> batch{item};

  const std::function<Value<double>(RunContext<double>&)> build =
      [&](RunContext<double>& ctx) {
        return batch_objective(ctx, model, cfg, batch);
      };
  const GradCheckReport report = gradient_check(
      store, build, a.eps, a.tolerance, a.stride, a.corrupt);

  for (const auto& slot : store) {
    if (!slot.trainable) continue;
    const bool bad =
        std::find(report.failed_names.begin(), report.failed_names.end(),
                  slot.name) != report.failed_names.end();
    std::cout << (bad ? "FAIL " : "pass ") << slot.name << "\n";
  }
  std::cout << "checked " << report.checked << " elements, worst rel err "
            << report.worst.rel_err << "\n";
  if (!report.passed) {
    std::cout << report.failures_text();
    std::cout << "gradient check FAILED\n";
    return 2;
  }
  std::cout << "gradient check passed\n";
  return 0;
}

struct EvalArgs {
  std::string pairs;
};

// Nearest-rank percentile on a sorted copy.
double percentile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  const auto rank = static_cast<std::size_t>(std::max(
      0.0, std::ceil(p / 100.0 * static_cast<double>(xs.size())) - 1.0));
  return xs[std::min(rank, xs.size() - 1)];
}

int run_eval(const EvalArgs& a) {
  std::ifstream in(a.pairs);
  require<IoError>(in.good(), "cannot open manifest: " + a.pairs);
  const fs::path base = fs::path(a.pairs).parent_path();

  auto resolve = [&](const std::string& p) {
    const fs::path q(p);
    return (q.is_absolute() ? q : base / q).string();
  };

  std::vector<double> scores, gains;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(a.pairs + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const WavFile noisy = read_wav(resolve(rec.at("noisy").get<std::string>()));
    const WavFile enhanced =
        read_wav(resolve(rec.at("enhanced").get<std::string>()));
    const WavFile target =
        read_wav(resolve(rec.at("target").get<std::string>()));
    const double score = si_snr_db(enhanced.samples, target.samples);
    scores.push_back(score);
    gains.push_back(score - si_snr_db(noisy.samples, target.samples));
  }
  require<ValueError>(!scores.empty(), a.pairs + ": no evaluation records");

  const auto mean = [](const std::vector<double>& xs) {
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
  };
  std::cout << std::setprecision(6);
  std::cout << "items " << scores.size() << "\n";
  std::cout << "si_snr_mean " << mean(scores) << "\n";
  std::cout << "si_snr_p10 " << percentile(scores, 10) << "\n";
  std::cout << "si_snr_p50 " << percentile(scores, 50) << "\n";
  std::cout << "si_snr_p90 " << percentile(scores, 90) << "\n";
  std::cout << "improvement_mean " << mean(gains) << "\n";
  std::cout << "improvement_p50 " << percentile(gains, 50) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uformer speech enhancement toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand(
      "simulate", "Generate reverberant noisy/target WAV pairs");
  c_sim->add_option("--out", sim.out, "output directory")->required();
  c_sim->add_option("--count", sim.count, "number of mixtures");
  c_sim->add_option("--seed", sim.seed, "master seed");
  c_sim->add_option("--config", sim.config, "config file");
  c_sim->add_option("--set", sim.sets, "override, key=value");
  auto* o1 = c_sim->add_option("--snr-min", sim.snr_min, "SNR lower bound, dB");
  auto* o2 = c_sim->add_option("--snr-max", sim.snr_max, "SNR upper bound, dB");
  auto* o3 = c_sim->add_option("--rt60-min", sim.rt60_min, "RT60 lower bound, s");
  auto* o4 = c_sim->add_option("--rt60-max", sim.rt60_max, "RT60 upper bound, s");

  TrainArgs tra;
  auto* c_tra = app.add_subcommand("train", "Train a model");
  c_tra->add_option("--out", tra.out, "checkpoint path")->required();
  c_tra->add_option("--config", tra.config, "config file");
  c_tra->add_option("--data", tra.data, "clip manifest (JSON lines)");
  c_tra->add_option("--epochs", tra.epochs, "override epoch count");
  c_tra->add_option("--resume", tra.resume, "checkpoint to continue from");
  c_tra->add_option("--set", tra.sets, "override, key=value");

  EnhanceArgs enh;
  auto* c_enh = app.add_subcommand("enhance", "Enhance one recording");
  c_enh->add_option("--model", enh.model, "checkpoint path")->required();
  c_enh->add_option("--in", enh.in, "input WAV")->required();
  c_enh->add_option("--out", enh.out, "output WAV")->required();
  c_enh->add_flag("--causal", enh.causal, "force causal inference");
  c_enh->add_flag("--pcm16", enh.pcm16, "write 16-bit PCM instead of float");

  ParamsArgs par;
  auto* c_par = app.add_subcommand("params", "Print the parameter count");
  c_par->add_option("--config", par.config, "config file");
  c_par->add_option("--ablation", par.ablation,
                    "model variant (full, no_freq_attention, "
                    "no_dilated_conv, no_encdec_attention, complex_only, "
                    "magnitude_only, lstm)");
  c_par->add_option("--set", par.sets, "override, key=value");

  GradcheckArgs grc;
  auto* c_grc = app.add_subcommand(
      "gradcheck", "Finite-difference check of the training gradients");
  c_grc->add_option("--config", grc.config,
                    "config file (defaults to the reduced test geometry)");
  c_grc->add_option("--tolerance", grc.tolerance, "relative error bound");
  c_grc->add_option("--eps", grc.eps, "finite-difference step");
  c_grc->add_option("--stride", grc.stride, "probe every n-th element");
  c_grc->add_option("--frames", grc.frames, "spectrogram frames in the probe");
  c_grc->add_option("--seed", grc.seed, "probe seed");
  c_grc->add_option("--corrupt", grc.corrupt,
                    "negative control: corrupt this tensor's gradient");
  c_grc->add_option("--set", grc.sets, "override, key=value");

  EvalArgs eva;
  auto* c_eva = app.add_subcommand(
      "eval", "Score (noisy, enhanced, target) triples with SI-SNR");
  c_eva->add_option("--pairs", eva.pairs, "triple manifest (JSON lines)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    sim.has_snr_min = o1->count() > 0;
    sim.has_snr_max = o2->count() > 0;
    sim.has_rt60_min = o3->count() > 0;
    sim.has_rt60_max = o4->count() > 0;
    if (*c_sim) return run_simulate(sim);
    if (*c_tra) return run_train(tra);
    if (*c_enh) return run_enhance(enh);
    if (*c_par) return run_params(par);
    if (*c_grc) return run_gradcheck(grc);
    if (*c_eva) return run_eval(eva);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
