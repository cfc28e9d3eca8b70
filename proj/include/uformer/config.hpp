#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "uformer/common.hpp"
#include "uformer/stft.hpp"

namespace uformer {

// Which spectral branches the model carries.
enum class Branch { hybrid, complex_only, magnitude_only };

inline std::string to_string(Branch b) {
  switch (b) {
    case Branch::hybrid: return "hybrid";
    case Branch::complex_only: return "complex_only";
    case Branch::magnitude_only: return "magnitude_only";
  }
  return "hybrid";
}

struct ModelSettings {
  std::vector<std::int64_t> enc_channels{8, 16, 32, 64, 128, 128};
  std::int64_t kernel_t = 2, kernel_f = 5;
  std::int64_t stride_f = 2;
  std::int64_t freq_pad_left = 2, freq_pad_right = 1;
  bool causal = false;

  std::int64_t conformer_layers = 8;
  std::int64_t ff_hidden1 = 64, ff_hidden2 = 128;
  std::int64_t proj_dim = 16;
  std::int64_t heads = 1;
  std::int64_t context = 9;
  std::int64_t dc_hidden = 32;
  std::int64_t dc_kernel_t = 2;

  std::int64_t eda_kernel_t = 2, eda_kernel_f = 3;
  std::int64_t eda_hidden_real = 214, eda_hidden_cplx = 229;

  std::int64_t lstm_hidden = 200, lstm_layers = 2;

  double dropout = 0.1;
  double compression = 0.5;

  Branch branch = Branch::hybrid;
  bool disable_freq_attention = false;
  bool disable_dilated_conv = false;
  bool disable_encdec_attention = false;
  bool swap_conformer_for_lstm = false;
};

struct LossSettings {
  double alpha = 5.0;          // negative SI-SNR, time domain
  double beta = 1.0 / 30.0;    // L1 waveform
  double gamma = 1.0;          // L2 on complex spectrum
  double zeta = 1.0;           // L2 on magnitude
};

struct TrainSettings {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip_norm = 5.0;
  std::int64_t batch_size = 2;
  std::int64_t epochs = 10;
  std::int64_t steps_per_epoch = 16;
  std::uint64_t seed = 1;
  double dev_fraction = 0.2;
  double bn_momentum = 0.1;
};

struct DataSettings {
  double snr_min_db = -5.0, snr_max_db = 15.0;
  double rt60_min = 0.2, rt60_max = 1.2;
  double chunk_seconds = 4.0;
  double early_ms = 50.0;
  // Reflection-order cap for on-the-fly room simulation. 20 keeps a single
  // 4 s item under a second; raise it for offline dataset generation.
  std::int64_t rir_max_order = 20;
};

struct UformerConfig {
  StftConfig stft;
  ModelSettings model;
  LossSettings loss;
  TrainSettings train;
  DataSettings data;

  void validate() const;
};

// Reduced geometry for fast functional tests: two encoder stages, two
// conformer layers, 33 frequency bins.
inline UformerConfig tiny_config() {
  UformerConfig c;
  c.stft.fft_size = 64;
  c.stft.win_length = 64;
  c.stft.hop = 16;
  c.model.enc_channels = {2, 4};
  c.model.conformer_layers = 2;
  c.model.ff_hidden1 = 4;
  c.model.ff_hidden2 = 8;
  c.model.proj_dim = 4;
  c.model.dc_hidden = 2;
  c.model.eda_hidden_real = 4;
  c.model.eda_hidden_cplx = 4;
  c.model.lstm_hidden = 8;
  c.train.batch_size = 2;
  c.data.chunk_seconds = 1.0;
  return c;
}

// ---------------------------------------------------------------------------
// Flat key=value schema
// ---------------------------------------------------------------------------

namespace config_detail {

struct FieldBinding {
  std::string key;
  std::function<std::string(const UformerConfig&)> get;
  std::function<void(UformerConfig&, const std::string&)> set;
};

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t r = std::stoll(v, &pos);
    require<ConfigError>(pos == v.size(), "");
    return r;
  } catch (...) {
    throw ConfigError("value for " + key + " must be an integer, got '" + v +
                      "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    require<ConfigError>(pos == v.size(), "");
    return r;
  } catch (...) {
    throw ConfigError("value for " + key + " must be a number, got '" + v +
                      "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("value for " + key + " must be true or false, got '" + v +
                    "'");
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline const std::vector<FieldBinding>& schema() {
  static const std::vector<FieldBinding> fields = [] {
    std::vector<FieldBinding> f;
    auto add_i = [&f](std::string key,
                      std::function<std::int64_t&(UformerConfig&)> ref) {
      f.push_back(
          {key,
           [ref](const UformerConfig& c) {
             return std::to_string(ref(const_cast<UformerConfig&>(c)));
           },
           [ref, key](UformerConfig& c, const std::string& v) {
             ref(c) = parse_int(key, v);
           }});
    };
    auto add_u = [&f](std::string key,
                      std::function<std::uint64_t&(UformerConfig&)> ref) {
      f.push_back(
          {key,
           [ref](const UformerConfig& c) {
             return std::to_string(ref(const_cast<UformerConfig&>(c)));
           },
           [ref, key](UformerConfig& c, const std::string& v) {
             ref(c) = static_cast<std::uint64_t>(parse_int(key, v));
           }});
    };
    auto add_d = [&f](std::string key,
                      std::function<double&(UformerConfig&)> ref) {
      f.push_back(
          {key,
           [ref](const UformerConfig& c) {
             return fmt_double(ref(const_cast<UformerConfig&>(c)));
           },
           [ref, key](UformerConfig& c, const std::string& v) {
             ref(c) = parse_double(key, v);
           }});
    };
    auto add_b = [&f](std::string key,
                      std::function<bool&(UformerConfig&)> ref) {
      f.push_back(
          {key,
           [ref](const UformerConfig& c) {
             return ref(const_cast<UformerConfig&>(c)) ? "true" : "false";
           },
           [ref, key](UformerConfig& c, const std::string& v) {
             ref(c) = parse_bool(key, v);
           }});
    };

    auto add_sr = [&f](std::string key, std::function<int&(UformerConfig&)> ref) {
      f.push_back(
          {key,
           [ref](const UformerConfig& c) {
             return std::to_string(ref(const_cast<UformerConfig&>(c)));
           },
           [ref, key](UformerConfig& c, const std::string& v) {
             ref(c) = static_cast<int>(parse_int(key, v));
           }});
    };

    add_sr("stft.sample_rate", [](UformerConfig& c) -> int& { return c.stft.sample_rate; });
    add_i("stft.fft_size", [](UformerConfig& c) -> std::int64_t& { return c.stft.fft_size; });
    add_i("stft.win_length", [](UformerConfig& c) -> std::int64_t& { return c.stft.win_length; });
    add_i("stft.hop", [](UformerConfig& c) -> std::int64_t& { return c.stft.hop; });

    f.push_back(
        {"model.enc_channels",
         [](const UformerConfig& c) {
           std::string s;
           for (std::size_t i = 0; i < c.model.enc_channels.size(); ++i) {
             if (i) s += ',';
             s += std::to_string(c.model.enc_channels[i]);
           }
           return s;
         },
         [](UformerConfig& c, const std::string& v) {
           std::vector<std::int64_t> out;
           std::stringstream ss(v);
           std::string item;
           while (std::getline(ss, item, ','))
             out.push_back(parse_int("model.enc_channels", item));
           require<ConfigError>(!out.empty(),
                                "model.enc_channels must not be empty");
           c.model.enc_channels = std::move(out);
         }});

    add_i("model.kernel_t", [](UformerConfig& c) -> std::int64_t& { return c.model.kernel_t; });
    add_i("model.kernel_f", [](UformerConfig& c) -> std::int64_t& { return c.model.kernel_f; });
    add_i("model.stride_f", [](UformerConfig& c) -> std::int64_t& { return c.model.stride_f; });
    add_i("model.freq_pad_left", [](UformerConfig& c) -> std::int64_t& { return c.model.freq_pad_left; });
    add_i("model.freq_pad_right", [](UformerConfig& c) -> std::int64_t& { return c.model.freq_pad_right; });
    add_b("model.causal", [](UformerConfig& c) -> bool& { return c.model.causal; });
    add_i("model.conformer_layers", [](UformerConfig& c) -> std::int64_t& { return c.model.conformer_layers; });
    add_i("model.ff_hidden1", [](UformerConfig& c) -> std::int64_t& { return c.model.ff_hidden1; });
    add_i("model.ff_hidden2", [](UformerConfig& c) -> std::int64_t& { return c.model.ff_hidden2; });
    add_i("model.proj_dim", [](UformerConfig& c) -> std::int64_t& { return c.model.proj_dim; });
    add_i("model.heads", [](UformerConfig& c) -> std::int64_t& { return c.model.heads; });
    add_i("model.context", [](UformerConfig& c) -> std::int64_t& { return c.model.context; });
    add_i("model.dc_hidden", [](UformerConfig& c) -> std::int64_t& { return c.model.dc_hidden; });
    add_i("model.dc_kernel_t", [](UformerConfig& c) -> std::int64_t& { return c.model.dc_kernel_t; });
    add_i("model.eda_kernel_t", [](UformerConfig& c) -> std::int64_t& { return c.model.eda_kernel_t; });
    add_i("model.eda_kernel_f", [](UformerConfig& c) -> std::int64_t& { return c.model.eda_kernel_f; });
    add_i("model.eda_hidden_real", [](UformerConfig& c) -> std::int64_t& { return c.model.eda_hidden_real; });
    add_i("model.eda_hidden_cplx", [](UformerConfig& c) -> std::int64_t& { return c.model.eda_hidden_cplx; });
    add_i("model.lstm_hidden", [](UformerConfig& c) -> std::int64_t& { return c.model.lstm_hidden; });
    add_i("model.lstm_layers", [](UformerConfig& c) -> std::int64_t& { return c.model.lstm_layers; });
    add_d("model.dropout", [](UformerConfig& c) -> double& { return c.model.dropout; });
    add_d("model.compression", [](UformerConfig& c) -> double& { return c.model.compression; });

    f.push_back(
        {"model.branch",
         [](const UformerConfig& c) { return to_string(c.model.branch); },
         [](UformerConfig& c, const std::string& v) {
           if (v == "hybrid")
             c.model.branch = Branch::hybrid;
           else if (v == "complex_only")
             c.model.branch = Branch::complex_only;
           else if (v == "magnitude_only")
             c.model.branch = Branch::magnitude_only;
           else
             throw ConfigError(
                 "model.branch must be hybrid, complex_only or "
                 "magnitude_only, got '" +
                 v + "'");
         }});

    add_b("model.disable_freq_attention", [](UformerConfig& c) -> bool& { return c.model.disable_freq_attention; });
    add_b("model.disable_dilated_conv", [](UformerConfig& c) -> bool& { return c.model.disable_dilated_conv; });
    add_b("model.disable_encdec_attention", [](UformerConfig& c) -> bool& { return c.model.disable_encdec_attention; });
    add_b("model.swap_conformer_for_lstm", [](UformerConfig& c) -> bool& { return c.model.swap_conformer_for_lstm; });

    add_d("loss.alpha", [](UformerConfig& c) -> double& { return c.loss.alpha; });
    add_d("loss.beta", [](UformerConfig& c) -> double& { return c.loss.beta; });
    add_d("loss.gamma", [](UformerConfig& c) -> double& { return c.loss.gamma; });
    add_d("loss.zeta", [](UformerConfig& c) -> double& { return c.loss.zeta; });

    add_d("train.lr", [](UformerConfig& c) -> double& { return c.train.lr; });
    add_d("train.beta1", [](UformerConfig& c) -> double& { return c.train.beta1; });
    add_d("train.beta2", [](UformerConfig& c) -> double& { return c.train.beta2; });
    add_d("train.eps", [](UformerConfig& c) -> double& { return c.train.eps; });
    add_d("train.clip_norm", [](UformerConfig& c) -> double& { return c.train.clip_norm; });
    add_i("train.batch_size", [](UformerConfig& c) -> std::int64_t& { return c.train.batch_size; });
    add_i("train.epochs", [](UformerConfig& c) -> std::int64_t& { return c.train.epochs; });
    add_i("train.steps_per_epoch", [](UformerConfig& c) -> std::int64_t& { return c.train.steps_per_epoch; });
    add_u("train.seed", [](UformerConfig& c) -> std::uint64_t& { return c.train.seed; });
    add_d("train.dev_fraction", [](UformerConfig& c) -> double& { return c.train.dev_fraction; });
    add_d("train.bn_momentum", [](UformerConfig& c) -> double& { return c.train.bn_momentum; });

    add_d("data.snr_min_db", [](UformerConfig& c) -> double& { return c.data.snr_min_db; });
    add_d("data.snr_max_db", [](UformerConfig& c) -> double& { return c.data.snr_max_db; });
    add_d("data.rt60_min", [](UformerConfig& c) -> double& { return c.data.rt60_min; });
    add_d("data.rt60_max", [](UformerConfig& c) -> double& { return c.data.rt60_max; });
    add_d("data.chunk_seconds", [](UformerConfig& c) -> double& { return c.data.chunk_seconds; });
    add_d("data.early_ms", [](UformerConfig& c) -> double& { return c.data.early_ms; });
    add_i("data.rir_max_order", [](UformerConfig& c) -> std::int64_t& { return c.data.rir_max_order; });
    return f;
  }();
  return fields;
}

inline std::string valid_keys() {
  std::string s;
  for (const auto& fb : schema()) {
    if (!s.empty()) s += ", ";
    s += fb.key;
  }
  return s;
}

}  // namespace config_detail

inline void apply_override(UformerConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require<ConfigError>(eq != std::string::npos,
                       "expected key=value, got '" + assignment + "'");
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  auto trim = [](std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t\r");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  };
  trim(key);
  trim(value);
  for (const auto& fb : config_detail::schema()) {
    if (fb.key == key) {
      fb.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key +
                    "'; valid keys are: " + config_detail::valid_keys());
}

inline UformerConfig parse_config_text(const std::string& text,
                                       UformerConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    try {
      apply_override(base, line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

inline UformerConfig load_config_file(const std::string& path,
                                      UformerConfig base = {}) {
  std::ifstream in(path);
  require<IoError>(in.good(), "cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

inline std::string serialize_config(const UformerConfig& cfg) {
  std::string out;
  for (const auto& fb : config_detail::schema()) {
    out += fb.key;
    out += '=';
    out += fb.get(cfg);
    out += '\n';
  }
  return out;
}

inline void UformerConfig::validate() const {
  stft.validate();
  require<ConfigError>(!model.enc_channels.empty(),
                       "encoder needs at least one stage");
  for (auto c : model.enc_channels)
    require<ConfigError>(c > 0, "encoder channels must be positive");
  require<ConfigError>(model.kernel_t >= 1 && model.kernel_f >= 1 &&
                           model.stride_f >= 1,
                       "encoder kernel and stride must be positive");
  require<ConfigError>(model.freq_pad_left >= 0 && model.freq_pad_right >= 0,
                       "frequency padding must be non-negative");
  require<ConfigError>(model.conformer_layers >= 1,
                       "conformer depth must be at least 1");
  require<ConfigError>(model.heads == 1,
                       "only single-head attention is supported");
  require<ConfigError>(model.context >= 1, "attention context must be >= 1");
  require<ConfigError>(model.proj_dim >= 1, "proj_dim must be positive");
  require<ConfigError>(
      model.dropout >= 0.0 && model.dropout < 1.0,
      "dropout must be in [0, 1)");
  require<ConfigError>(model.compression > 0.0 && model.compression <= 1.0,
                       "compression exponent must be in (0, 1]");
  require<ConfigError>(train.batch_size >= 1, "batch size must be positive");
  require<ConfigError>(train.lr > 0.0, "learning rate must be positive");
  require<ConfigError>(train.clip_norm > 0.0, "clip norm must be positive");
  require<ConfigError>(
      train.dev_fraction >= 0.0 && train.dev_fraction < 1.0,
      "dev fraction must be in [0, 1)");
  require<ConfigError>(data.snr_max_db >= data.snr_min_db,
                       "SNR range is inverted");
  require<ConfigError>(data.rt60_min > 0.0 && data.rt60_max >= data.rt60_min,
                       "reverberation time range is invalid");
  require<ConfigError>(data.chunk_seconds > 0.0,
                       "chunk length must be positive");
  require<ConfigError>(data.rir_max_order >= 0,
                       "reflection order must be non-negative");
}

}  // namespace uformer
