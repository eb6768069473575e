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

#include "mexosd/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "mexosd/error.hpp"

namespace mexosd {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'M', 'E', 'X', 'O', 'S', 'D', '\0', '\1'};

std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 14695981039346656037ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

nlohmann::json index_of(const ParameterSet& set) {
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < set.count(); ++i) list.push_back({{"name", set.name(i)}, {"shape", set[i].shape()}});
  return list;
}

ParameterSet layout_from(const nlohmann::json& list) {
  ParameterSet set;
  for (const auto& e : list) set.add(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
  return set;
}

// JSON has no infinity; an unset "best so far" is stored as null.
nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double from_nullable(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"sample_rate_hz", c.sample_rate_hz},
          {"chunk_samples", c.chunk_samples},
          {"sinc_filters", c.sinc_filters},
          {"sinc_kernel", c.sinc_kernel},
          {"sinc_stride", c.sinc_stride},
          {"extractor_conv_channels", c.extractor_conv_channels},
          {"se_reduction", c.se_reduction},
          {"pool1", c.pool1},
          {"pool2", c.pool2},
          {"stage_channels", c.stage_channels},
          {"num_stages", c.num_stages},
          {"dc_enabled", c.dc_enabled},
          {"dc_widths", c.dc_widths},
          {"plain_widths", c.plain_widths},
          {"lstm_hidden", c.lstm_hidden},
          {"lstm_layers", c.lstm_layers},
          {"mlp_hidden", c.mlp_hidden},
          {"num_classes", c.num_classes},
          {"num_exits", c.num_exits},
          {"frames_per_chunk", c.frames_per_chunk},
          {"batch_norm", c.batch_norm}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (!j.is_object()) throw ConfigError("model", "expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "sample_rate_hz") c.sample_rate_hz = value.get<int>();
      else if (key == "chunk_samples") c.chunk_samples = value.get<int>();
      else if (key == "sinc_filters") c.sinc_filters = value.get<int>();
      else if (key == "sinc_kernel") c.sinc_kernel = value.get<int>();
      else if (key == "sinc_stride") c.sinc_stride = value.get<int>();
      else if (key == "extractor_conv_channels") c.extractor_conv_channels = value.get<std::array<int, 2>>();
      else if (key == "se_reduction") c.se_reduction = value.get<int>();
      else if (key == "pool1") c.pool1 = value.get<std::array<int, 2>>();
      else if (key == "pool2") c.pool2 = value.get<std::array<int, 2>>();
      else if (key == "stage_channels") c.stage_channels = value.get<int>();
      else if (key == "num_stages") c.num_stages = value.get<int>();
      else if (key == "dc_enabled") c.dc_enabled = value.get<bool>();
      else if (key == "dc_widths") c.dc_widths = value.get<std::array<int, 3>>();
      else if (key == "plain_widths") c.plain_widths = value.get<std::array<int, 2>>();
      else if (key == "lstm_hidden") c.lstm_hidden = value.get<int>();
      else if (key == "lstm_layers") c.lstm_layers = value.get<int>();
      else if (key == "mlp_hidden") c.mlp_hidden = value.get<int>();
      else if (key == "num_classes") c.num_classes = value.get<int>();
      else if (key == "num_exits") c.num_exits = value.get<int>();
      else if (key == "frames_per_chunk") c.frames_per_chunk = value.get<int>();
      else if (key == "batch_norm") c.batch_norm = value.get<bool>();
      else throw ConfigError(key, "unknown model field");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(key, e.what());
    }
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const MultiExitNet& model, const TrainingState* state) {
  std::vector<const ParameterSet*> groups{&model.parameters(), &model.buffers()};
  nlohmann::json header;
  header["config"] = config_to_json(model.config());
  header["parameters"] = index_of(model.parameters());
  header["buffers"] = index_of(model.buffers());
  if (state) {
    if (!state->first_moment.same_layout(model.parameters()) || !state->second_moment.same_layout(model.parameters())) {
      throw CheckpointError("optimizer moments do not match the model parameter layout");
    }
    header["training_state"] = {{"optimizer_step", state->optimizer_step},
                                {"epoch", state->epoch},
                                {"learning_rate", state->learning_rate},
                                {"best_dev_loss", finite_or_null(state->best_dev_loss)},
                                {"plateau_best", finite_or_null(state->plateau_best)},
                                {"plateau_bad_epochs", state->plateau_bad_epochs}};
    groups.push_back(&state->first_moment);
    groups.push_back(&state->second_moment);
  }

  std::string payload;
  for (const ParameterSet* g : groups) {
    for (std::size_t i = 0; i < g->count(); ++i) {
      const auto& t = (*g)[i];
      payload.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
    }
  }
  header["payload_bytes"] = payload.size();
  header["payload_fnv1a"] = fnv1a(payload.data(), payload.size());
  const std::string text = header.dump();

  std::string blob(kMagic.begin(), kMagic.end());
  put(blob, kCheckpointFormatVersion);
  put(blob, static_cast<std::uint64_t>(text.size()));
  blob += text;
  blob += payload;

  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  constexpr std::size_t prefix = kMagic.size() + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (blob.size() < prefix || std::memcmp(blob.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointError(where + "not a checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, blob.data() + kMagic.size(), sizeof version);
  std::memcpy(&header_len, blob.data() + kMagic.size() + sizeof version, sizeof header_len);
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError(where + "unsupported format_version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  }
  if (header_len > blob.size() - prefix) throw CheckpointError(where + "truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(prefix, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "corrupt header: " + e.what());
  }

  const char* payload = blob.data() + prefix + header_len;
  const std::size_t payload_size = blob.size() - prefix - header_len;
  try {
    if (payload_size != header.at("payload_bytes").get<std::size_t>()) {
      throw CheckpointError(where + "payload is " + std::to_string(payload_size) + " bytes, header says " +
                            std::to_string(header.at("payload_bytes").get<std::size_t>()));
    }
    if (fnv1a(payload, payload_size) != header.at("payload_fnv1a").get<std::uint64_t>()) {
      throw CheckpointError(where + "payload checksum mismatch");
    }

    const ModelConfig config = config_from_json(header.at("config"));
    if (expected && !(*expected == config)) {
      throw CheckpointError(where + "model config differs from the requested one; resume needs an identical config");
    }
    ParameterSet params = layout_from(header.at("parameters"));
    ParameterSet buffers = layout_from(header.at("buffers"));
    std::optional<TrainingState> state;
    std::vector<ParameterSet*> groups{&params, &buffers};
    if (header.contains("training_state")) {
      const auto& ts = header.at("training_state");
      state.emplace();
      state->optimizer_step = ts.at("optimizer_step").get<std::uint64_t>();
      state->epoch = ts.at("epoch").get<int>();
      state->learning_rate = ts.at("learning_rate").get<double>();
      state->best_dev_loss = from_nullable(ts.at("best_dev_loss"));
      state->plateau_best = from_nullable(ts.at("plateau_best"));
      state->plateau_bad_epochs = ts.at("plateau_bad_epochs").get<int>();
      state->first_moment = params.zeros_like();
      state->second_moment = params.zeros_like();
      groups.push_back(&state->first_moment);
      groups.push_back(&state->second_moment);
    }

    std::size_t offset = 0;
    for (ParameterSet* g : groups) {
      for (std::size_t i = 0; i < g->count(); ++i) {
        auto& t = (*g)[i];
        const std::size_t bytes = t.size() * sizeof(double);
        if (offset + bytes > payload_size) throw CheckpointError(where + "payload shorter than its tensor index");
        std::memcpy(t.data(), payload + offset, bytes);
        offset += bytes;
      }
    }
    if (offset != payload_size) throw CheckpointError(where + "payload longer than its tensor index");

    try {
      return {MultiExitNet::from_state(config, std::move(params), std::move(buffers)), std::move(state)};
    } catch (const Error& e) {
      throw CheckpointError(where + e.what());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "corrupt header: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(where + e.what());
  }
}

}  // namespace mexosd
