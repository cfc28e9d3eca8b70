#pragma once

// RIFF/WAVE audio files, mono only: 16-bit PCM and 32-bit IEEE float both
// read and write bit-exactly, with float32 as the default output format.
// Also the JSON-lines corpus manifest that points the data sampler at real
// recordings. Bytes are composed and parsed explicitly in little-endian
// order, so the code does not depend on host endianness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uformer/common.hpp"
#include "uformer/datasim.hpp"

namespace uformer {

enum class WavFormat { pcm16, float32 };

struct WavFile {
  std::vector<double> samples;
  double sample_rate = 16000.0;
};

namespace wav_detail {

inline void put_u16(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  put_u16(out, v & 0xffff);
  put_u16(out, v >> 16);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  std::uint32_t u16() {
    require<IoError>(pos + 2 <= buf.size(), "WAV file is truncated");
    const auto b0 = static_cast<std::uint8_t>(buf[pos]);
    const auto b1 = static_cast<std::uint8_t>(buf[pos + 1]);
    pos += 2;
    return static_cast<std::uint32_t>(b0) | (static_cast<std::uint32_t>(b1) << 8);
  }

  std::uint32_t u32() {
    const auto lo = u16();
    return lo | (u16() << 16);
  }

  std::string tag() {
    require<IoError>(pos + 4 <= buf.size(), "WAV file is truncated");
    std::string t = buf.substr(pos, 4);
    pos += 4;
    return t;
  }
};

}  // namespace wav_detail

inline WavFile read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(in.good(), "cannot open WAV file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  wav_detail::Reader r{buf};
  require<IoError>(r.tag() == "RIFF", path + ": missing RIFF header");
  r.u32();  // declared riff size, not trusted
  require<IoError>(r.tag() == "WAVE", path + ": not a WAVE file");

  std::uint32_t format = 0, channels = 0, rate = 0, bits = 0;
  bool have_fmt = false;
  std::size_t data_pos = 0, data_len = 0;
  while (r.pos + 8 <= buf.size()) {
    const std::string id = r.tag();
    const std::uint32_t size = r.u32();
    require<IoError>(r.pos + size <= buf.size(),
                     path + ": chunk '" + id + "' overruns the file");
    if (id == "fmt ") {
      require<IoError>(size >= 16, path + ": fmt chunk too small");
      wav_detail::Reader f{buf, r.pos};
      format = f.u16();
      channels = f.u16();
      rate = f.u32();
      f.u32();  // byte rate
      f.u16();  // block align
      bits = f.u16();
      have_fmt = true;
    } else if (id == "data") {
      data_pos = r.pos;
      data_len = size;
    }
    // Chunks are word-aligned; odd sizes carry one pad byte.
    r.pos += size + (size & 1);
  }
  require<IoError>(have_fmt, path + ": no fmt chunk");
  require<IoError>(data_pos != 0 || data_len != 0, path + ": no data chunk");
  require<IoError>(channels == 1, path + ": only mono WAV is supported");

  WavFile wav;
  wav.sample_rate = static_cast<double>(rate);
  if (format == 1 && bits == 16) {
    wav.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < wav.samples.size(); ++i) {
      wav_detail::Reader s{buf, data_pos + 2 * i};
      const auto raw = static_cast<std::int16_t>(s.u16());
      wav.samples[i] = static_cast<double>(raw) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    wav.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < wav.samples.size(); ++i) {
      wav_detail::Reader s{buf, data_pos + 4 * i};
      const std::uint32_t u = s.u32();
      float f;
      static_assert(sizeof(f) == sizeof(u));
      std::memcpy(&f, &u, sizeof(f));
      wav.samples[i] = static_cast<double>(f);
    }
  } else {
    throw IoError(path + ": unsupported WAV encoding (only 16-bit PCM and "
                         "32-bit float are handled)");
  }
  return wav;
}

inline void write_wav(const std::string& path,
                      const std::vector<double>& samples, double sample_rate,
                      WavFormat format = WavFormat::float32) {
  require<ValueError>(sample_rate > 0.0 &&
                          sample_rate == std::floor(sample_rate),
                      "sample rate must be a positive integer");
  const auto rate = static_cast<std::uint32_t>(sample_rate);
  const auto n = static_cast<std::uint32_t>(samples.size());

  std::string payload;
  if (format == WavFormat::pcm16) {
    payload.reserve(2 * samples.size());
    for (double v : samples) {
      auto q = std::llround(v * 32768.0);
      q = std::min<long long>(32767, std::max<long long>(-32768, q));
      wav_detail::put_u16(payload, static_cast<std::uint16_t>(
                                       static_cast<std::int16_t>(q)));
    }
  } else {
    payload.reserve(4 * samples.size());
    for (double v : samples) {
      const auto f = static_cast<float>(v);
      std::uint32_t u;
      std::memcpy(&u, &f, sizeof(u));
      wav_detail::put_u32(payload, u);
    }
  }

  const bool pcm = format == WavFormat::pcm16;
  const std::uint32_t bytes_per = pcm ? 2 : 4;
  // PCM uses the classic 16-byte fmt chunk; float carries the extended
  // 18-byte fmt (empty extension) plus a fact chunk, per the format spec.
  const std::uint32_t fmt_size = pcm ? 16 : 18;
  const std::uint32_t riff_size = 4 + (8 + fmt_size) + (pcm ? 0 : 12) +
                                  (8 + static_cast<std::uint32_t>(payload.size()));

  std::string out;
  out += "RIFF";
  wav_detail::put_u32(out, riff_size);
  out += "WAVE";
  out += "fmt ";
  wav_detail::put_u32(out, fmt_size);
  wav_detail::put_u16(out, pcm ? 1 : 3);
  wav_detail::put_u16(out, 1);  // mono
  wav_detail::put_u32(out, rate);
  wav_detail::put_u32(out, rate * bytes_per);
  wav_detail::put_u16(out, bytes_per);
  wav_detail::put_u16(out, 8 * bytes_per);
  if (!pcm) {
    wav_detail::put_u16(out, 0);  // no format extension
    out += "fact";
    wav_detail::put_u32(out, 4);
    wav_detail::put_u32(out, n);
  }
  out += "data";
  wav_detail::put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out += payload;

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  require<IoError>(file.good(), "cannot create WAV file: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  require<IoError>(file.good(), "failed writing WAV file: " + path);
}

struct ManifestEntry {
  std::string path;
  SourceKind kind = SourceKind::speech;
  double sample_rate = 16000.0;
};

// JSON-lines manifest, one record per file:
//   {"path": "clips/a.wav", "kind": "speech", "sample_rate": 16000}
// Relative paths resolve against the manifest's own directory.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  require<IoError>(in.good(), "cannot open manifest: " + path);
  const auto base = std::filesystem::path(path).parent_path();

  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto at = [&](const std::string& what) {
      return path + ":" + std::to_string(lineno) + ": " + what;
    };
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(at(e.what()));
    }
    require<IoError>(rec.is_object() && rec.contains("path") &&
                         rec.contains("kind") && rec.contains("sample_rate"),
                     at("record needs path, kind, and sample_rate"));
    ManifestEntry entry;
    require<IoError>(rec["path"].is_string(), at("path must be a string"));
    std::filesystem::path p = rec["path"].get<std::string>();
    entry.path = (p.is_absolute() ? p : base / p).string();
    const std::string kind = rec["kind"].is_string() ? rec["kind"].get<std::string>() : "";
    if (kind == "speech") {
      entry.kind = SourceKind::speech;
    } else if (kind == "noise") {
      entry.kind = SourceKind::noise;
    } else {
      throw IoError(at("kind must be \"speech\" or \"noise\""));
    }
    require<IoError>(rec["sample_rate"].is_number(),
                     at("sample_rate must be a number"));
    entry.sample_rate = rec["sample_rate"].get<double>();
    entries.push_back(std::move(entry));
  }
  return entries;
}

// Loads every manifest entry into (speech, noise) corpora, checking each
// file's header against both the manifest and the pipeline's own rate.
template <class T>
std::pair<Corpus<T>, Corpus<T>> load_corpora(const std::string& manifest_path,
                                             double expect_rate) {
  std::pair<Corpus<T>, Corpus<T>> corpora;
  for (const auto& entry : read_manifest(manifest_path)) {
    const WavFile wav = read_wav(entry.path);
    require<IoError>(wav.sample_rate == entry.sample_rate,
                     entry.path + ": file sample rate " +
                         std::to_string(wav.sample_rate) +
                         " contradicts the manifest");
    require<IoError>(wav.sample_rate == expect_rate,
                     entry.path + ": sample rate " +
                         std::to_string(wav.sample_rate) +
                         " does not match the configured " +
                         std::to_string(expect_rate));
    std::vector<T> clip(wav.samples.size());
    for (std::size_t i = 0; i < clip.size(); ++i)
      clip[i] = static_cast<T>(wav.samples[i]);
    auto& corpus =
        entry.kind == SourceKind::speech ? corpora.first : corpora.second;
    corpus.clips.push_back(std::move(clip));
  }
  return corpora;
}

}  // namespace uformer
