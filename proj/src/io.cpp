#include "ebmgan/io.hpp"

#include "ebmgan/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

namespace ebmgan {

using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Little-endian binary blocks

void write_f64s(std::ostream& out, std::span<const double> values) {
  std::vector<char> buf(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_f64s(std::istream& in, std::span<double> values, const char* what) {
  std::vector<unsigned char> buf(values.size() * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw FormatError(fmt::format("unexpected end of file while reading {}", what));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
}

void write_i32s(std::ostream& out, std::span<const int> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = static_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_i32s(std::istream& in, std::span<int> values, const char* what) {
  std::vector<unsigned char> buf(values.size() * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw FormatError(fmt::format("unexpected end of file while reading {}", what));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
    values[i] = static_cast<int>(bits);
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open '{}' for reading", path.string()));
  return in;
}

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw FormatError(fmt::format("invalid {} '{}'", what, text));
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Text header: "<MAGIC> <version>\n" then "key value" lines up to "end\n".
std::map<std::string, std::string> read_text_header(std::istream& in, std::string_view magic, int version) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(fmt::format("empty file, expected {}", magic));
  std::istringstream first(line);
  std::string got_magic;
  int got_version = -1;
  first >> got_magic >> got_version;
  if (got_magic != magic) throw FormatError(fmt::format("bad magic '{}', expected '{}'", got_magic, magic));
  if (got_version != version)
    throw FormatError(fmt::format("unsupported {} version {} (expected {})", magic, got_version, version));
  std::map<std::string, std::string> fields;
  while (std::getline(in, line)) {
    if (line == "end") return fields;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw FormatError(fmt::format("malformed header line '{}'", line));
    fields[line.substr(0, space)] = line.substr(space + 1);
  }
  throw FormatError(fmt::format("{} header is missing its 'end' line", magic));
}

const std::string& header_field(const std::map<std::string, std::string>& h, const std::string& key) {
  const auto it = h.find(key);
  if (it == h.end()) throw FormatError(fmt::format("header is missing '{}'", key));
  return it->second;
}

}  // namespace

// ---------------------------------------------------------------------------
// Datasets

Dataset gen_dataset(std::string_view kind, std::size_t n, double noise, std::uint64_t seed) {
  if (n < 1) throw UsageError("dataset size must be at least 1");
  if (noise < 0.0) throw UsageError("dataset noise must be non-negative");
  Rng rng = Rng::stream(seed, "dataset");
  Dataset data;
  data.name = std::string(kind);
  data.features = Tensor({n, 2});
  std::vector<int> labels(n);
  const double pi = std::numbers::pi;

  auto jitter = [&](std::size_t i) {
    if (noise > 0.0) {
      data.features.at(i, 0) += noise * rng.normal();
      data.features.at(i, 1) += noise * rng.normal();
    }
  };

  if (kind == "two-moons") {
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      const double t = rng.uniform(0.0, pi);
      data.features.at(i, 0) = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
      data.features.at(i, 1) = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
      labels[i] = label;
      jitter(i);
    }
  } else if (kind == "rings") {
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      const double t = rng.uniform(0.0, 2.0 * pi);
      const double r = label == 0 ? 1.0 : 2.0;
      data.features.at(i, 0) = r * std::cos(t);
      data.features.at(i, 1) = r * std::sin(t);
      labels[i] = label;
      jitter(i);
    }
  } else if (kind.starts_with("gaussian-mixture-")) {
    const auto k_text = kind.substr(std::string_view("gaussian-mixture-").size());
    std::size_t k = 0;
    try {
      k = parse_number<std::size_t>(k_text, "component count");
    } catch (const FormatError&) {
      throw UsageError(fmt::format("unknown dataset kind '{}'", kind));
    }
    if (k < 1) throw UsageError("gaussian mixture needs at least one component");
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % k;
      const double angle = 2.0 * pi * static_cast<double>(c) / static_cast<double>(k);
      data.features.at(i, 0) = 2.0 * std::cos(angle);
      data.features.at(i, 1) = 2.0 * std::sin(angle);
      labels[i] = static_cast<int>(c);
      jitter(i);
    }
  } else if (kind == "checkerboard") {
    // The 8 dark cells of a 4x4 board on [-2, 2]^2; label = cell column parity.
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cell = rng.below(8);
      const std::size_t row = cell / 2;
      const std::size_t col = 2 * (cell % 2) + (row % 2);
      data.features.at(i, 0) = -2.0 + static_cast<double>(col) + rng.uniform();
      data.features.at(i, 1) = -2.0 + static_cast<double>(row) + rng.uniform();
      labels[i] = static_cast<int>(col % 2);
      jitter(i);
    }
  } else {
    throw UsageError(fmt::format("unknown dataset kind '{}' (expected two-moons, rings, gaussian-mixture-<k>, "
                                 "checkerboard)",
                                 kind));
  }
  data.labels = std::move(labels);
  return data;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  auto out = open_out(path);
  out << "EBMGAN-DATASET 1\n"
      << "name " << data.name << "\n"
      << "dim " << data.dim() << "\n"
      << "count " << data.count() << "\n"
      << "labels " << (data.labels ? 1 : 0) << "\n"
      << "end\n";
  write_f64s(out, data.features.values());
  if (data.labels) write_i32s(out, *data.labels);
  if (!out) throw FormatError(fmt::format("failed writing '{}'", path.string()));
}

Dataset read_dataset(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto h = read_text_header(in, "EBMGAN-DATASET", 1);
  Dataset data;
  data.name = header_field(h, "name");
  const auto dim = parse_number<std::size_t>(header_field(h, "dim"), "dim");
  const auto count = parse_number<std::size_t>(header_field(h, "count"), "count");
  const auto has_labels = parse_number<int>(header_field(h, "labels"), "labels flag");
  if (dim == 0 || count == 0) throw FormatError("dataset must have positive dim and count");
  data.features = Tensor({count, dim});
  read_f64s(in, data.features.values(), "dataset features");
  if (has_labels) {
    std::vector<int> labels(count);
    read_i32s(in, labels, "dataset labels");
    data.labels = std::move(labels);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("dataset file has trailing bytes");
  return data;
}

Dataset read_csv_dataset(const std::filesystem::path& path, bool last_column_is_label, std::string name) {
  auto in = open_in(path);
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t dim = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = text.find(',', start);
      cells.push_back(trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    std::vector<double> row;
    try {
      for (auto c : cells) row.push_back(parse_number<double>(c, "number"));
    } catch (const FormatError&) {
      if (rows == 0 && values.empty()) continue;  // header
      throw FormatError(fmt::format("{}:{}: non-numeric cell", path.string(), line_no));
    }
    const std::size_t width = row.size() - (last_column_is_label ? 1 : 0);
    if (width == 0) throw FormatError(fmt::format("{}:{}: no feature columns", path.string(), line_no));
    if (dim == 0) dim = width;
    if (width != dim) throw FormatError(fmt::format("{}:{}: expected {} features, got {}", path.string(), line_no, dim, width));
    values.insert(values.end(), row.begin(), row.begin() + static_cast<std::ptrdiff_t>(width));
    if (last_column_is_label) labels.push_back(static_cast<int>(row.back()));
    ++rows;
  }
  if (rows == 0) throw FormatError(fmt::format("'{}' contains no data rows", path.string()));
  Dataset data;
  data.name = std::move(name);
  data.features = Tensor({rows, dim}, std::move(values));
  if (last_column_is_label) data.labels = std::move(labels);
  return data;
}

void write_csv_dataset(const std::filesystem::path& path, const Dataset& data) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < data.count(); ++i) {
    auto r = data.features.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << fmt::format("{}", r[j]);
    if (data.labels) out << "," << (*data.labels)[i];
    out << "\n";
  }
}

Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.name = data.name;
  out.features = Tensor({rows.size(), data.dim()});
  std::vector<int> labels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < data.count(), "subset: row index out of range");
    std::ranges::copy(data.features.row(rows[i]), out.features.row(i).begin());
    if (data.labels) labels.push_back((*data.labels)[rows[i]]);
  }
  if (data.labels) out.labels = std::move(labels);
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "split fraction must lie in (0, 1)");
  require(data.count() >= 2, "need at least two rows to split");
  std::vector<std::size_t> order(data.count());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::stream(seed, "split");
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.count())));
  n_train = std::clamp<std::size_t>(n_train, 1, data.count() - 1);
  return {subset(data, std::span(order).first(n_train)), subset(data, std::span(order).subspan(n_train))};
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

struct ConfigField {
  std::string key;
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
ConfigField field(std::string key, T TrainConfig::*member) {
  ConfigField f;
  f.key = key;
  f.get = [member](const TrainConfig& c) {
    if constexpr (std::is_same_v<T, bool>) {
      return std::string(c.*member ? "true" : "false");
    } else if constexpr (std::is_same_v<T, Activation>) {
      return std::string(activation_name(c.*member));
    } else {
      return fmt::format("{}", c.*member);
    }
  };
  f.set = [member, key](TrainConfig& c, std::string_view text) {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1")
          c.*member = true;
        else if (text == "false" || text == "0")
          c.*member = false;
        else
          throw FormatError("expected true/false");
      } else if constexpr (std::is_same_v<T, Activation>) {
        c.*member = parse_activation(text);
      } else {
        c.*member = parse_number<T>(text, "value");
      }
    } catch (const std::exception& e) {
      throw UsageError(fmt::format("config key '{}': invalid value '{}' ({})", key, text, e.what()));
    }
  };
  return f;
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      field("batch_size", &TrainConfig::batch_size),
      field("iterations", &TrainConfig::iterations),
      field("lr_g", &TrainConfig::lr_g),
      field("lr_d", &TrainConfig::lr_d),
      field("adam_beta1", &TrainConfig::adam_beta1),
      field("adam_beta2", &TrainConfig::adam_beta2),
      field("gamma", &TrainConfig::gamma),
      field("mcmc_lambda", &TrainConfig::mcmc_lambda),
      field("noise_enabled", &TrainConfig::noise_enabled),
      field("gp_rho", &TrainConfig::gp_rho),
      field("gp_lambda", &TrainConfig::gp_lambda),
      field("polyak_tau", &TrainConfig::polyak_tau),
      field("d_steps_per_g", &TrainConfig::d_steps_per_g),
      field("seed", &TrainConfig::seed),
      field("latent_dim", &TrainConfig::latent_dim),
      field("hidden_width", &TrainConfig::hidden_width),
      field("hidden_layers", &TrainConfig::hidden_layers),
      field("g_activation", &TrainConfig::g_activation),
      field("d_activation", &TrainConfig::d_activation),
      field("spectral_norm", &TrainConfig::spectral_norm),
      field("similarity_every", &TrainConfig::similarity_every),
      field("similarity_batch", &TrainConfig::similarity_batch),
      field("stats_samples", &TrainConfig::stats_samples),
      field("stats_epsilon", &TrainConfig::stats_epsilon),
      field("similarity_temperature", &TrainConfig::similarity_temperature),
      field("checkpoint_every", &TrainConfig::checkpoint_every),
  };
  return fields;
}

}  // namespace

TrainConfig parse_config(std::string_view text) {
  TrainConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw UsageError(fmt::format("config line {}: expected 'key = value'", line_no));
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto& fields = config_fields();
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.key == key; });
    if (it == fields.end()) throw UsageError(fmt::format("unknown config key '{}' (line {})", key, line_no));
    it->set(config, value);
  }
  try {
    config.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return config;
}

TrainConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot read config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& config) {
  std::string out;
  for (const auto& f : config_fields()) out += fmt::format("{} = {}\n", f.key, f.get(config));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json spec_to_json(const MlpSpec& spec) {
  json j;
  j["widths"] = spec.widths;
  std::vector<std::string> acts;
  for (Activation a : spec.hidden_activations) acts.emplace_back(activation_name(a));
  j["hidden_activations"] = acts;
  j["output_activation"] = std::string(activation_name(spec.output_activation));
  return j;
}

MlpSpec spec_from_json(const json& j) {
  MlpSpec spec;
  spec.widths = j.at("widths").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("hidden_activations")) spec.hidden_activations.push_back(parse_activation(a.get<std::string>()));
  spec.output_activation = parse_activation(j.at("output_activation").get<std::string>());
  spec.validate();
  return spec;
}

json rng_to_json(const Rng& rng) { return json{{"key", rng.state().key}, {"counter", rng.state().counter}}; }

Rng rng_from_json(const json& j) {
  return Rng(Rng::State{j.at("key").get<std::uint64_t>(), j.at("counter").get<std::uint64_t>()});
}

// Binary blocks in file order.
std::vector<std::pair<std::string, std::vector<double>>> state_blobs(const TrainState& s) {
  std::vector<std::pair<std::string, std::vector<double>>> blobs;
  blobs.emplace_back("d.params", s.d.params.values);
  for (std::size_t l = 0; l < s.d.spectral_u.size(); ++l) blobs.emplace_back(fmt::format("d.spectral_u.{}", l), s.d.spectral_u[l]);
  blobs.emplace_back("g.params", s.g.params.values);
  blobs.emplace_back("shadow.params", s.shadow.params.values);
  blobs.emplace_back("adam_d.m", s.adam_d.m.values);
  blobs.emplace_back("adam_d.v", s.adam_d.v.values);
  blobs.emplace_back("adam_g.m", s.adam_g.m.values);
  blobs.emplace_back("adam_g.v", s.adam_g.v.values);
  return blobs;
}

std::string payload_bytes(const TrainState& s) {
  std::ostringstream out(std::ios::binary);
  for (const auto& [name, values] : state_blobs(s)) write_f64s(out, values);
  return out.str();
}

std::string id_for_payload(const std::string& payload, std::uint64_t iteration) {
  return fmt::format("{:016x}", fnv1a64(payload, splitmix64(iteration)));
}

}  // namespace

std::string checkpoint_id(const TrainState& state) { return id_for_payload(payload_bytes(state), state.iteration); }

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state) {
  const std::string payload = payload_bytes(state);
  json meta;
  meta["format"] = "ebmgan-checkpoint";
  meta["version"] = kCheckpointVersion;
  meta["checkpoint_id"] = id_for_payload(payload, state.iteration);
  meta["iteration"] = state.iteration;
  meta["config"] = format_config(config);
  meta["d_spec"] = spec_to_json(state.d.spec);
  meta["g_spec"] = spec_to_json(state.g.spec);
  meta["spectral_enabled"] = state.d.spectral_enabled;
  meta["polyak_tau_bits"] = std::bit_cast<std::uint64_t>(state.shadow.tau);
  meta["adam_d_step"] = state.adam_d.step;
  meta["adam_g_step"] = state.adam_g.step;
  meta["rng"] = json{{"data", rng_to_json(state.data_rng)},
                     {"z", rng_to_json(state.z_rng)},
                     {"noise", rng_to_json(state.noise_rng)},
                     {"monitor", rng_to_json(state.monitor_rng)}};
  json blobs = json::array();
  for (const auto& [name, values] : state_blobs(state)) blobs.push_back(json{{"name", name}, {"count", values.size()}});
  meta["blobs"] = blobs;
  const std::string meta_text = meta.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    auto out = open_out(tmp);
    out << "EBMGAN-CHECKPOINT " << kCheckpointVersion << "\n"
        << "meta " << meta_text.size() << "\n"
        << meta_text << "\n"
        << "payload " << payload.size() << "\n";
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw FormatError(fmt::format("failed writing '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  {
    std::istringstream first(line);
    std::string magic;
    int version = -1;
    first >> magic >> version;
    if (magic != "EBMGAN-CHECKPOINT") throw FormatError(fmt::format("'{}' is not a checkpoint", path.string()));
    if (version != kCheckpointVersion)
      throw FormatError(fmt::format("unsupported checkpoint version {} (expected {})", version, kCheckpointVersion));
  }
  auto read_sized = [&](const char* tag) {
    std::string header;
    std::getline(in, header);
    const std::string prefix = std::string(tag) + " ";
    if (!header.starts_with(prefix)) throw FormatError(fmt::format("checkpoint: expected '{}' line", tag));
    const auto size = parse_number<std::size_t>(std::string_view(header).substr(prefix.size()), tag);
    std::string bytes(size, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in.gcount()) != size) throw FormatError(fmt::format("checkpoint: truncated {}", tag));
    return bytes;
  };
  const std::string meta_text = read_sized("meta");
  if (in.get() != '\n') throw FormatError("checkpoint: malformed metadata terminator");
  const std::string payload = read_sized("payload");

  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("checkpoint metadata: {}", e.what()));
  }
  if (meta.value("version", -1) != kCheckpointVersion)
    throw FormatError("checkpoint metadata version does not match the file header");

  Checkpoint ckpt;
  try {
    ckpt.config = parse_config(meta.at("config").get<std::string>());
    TrainState& s = ckpt.state;
    s.iteration = meta.at("iteration").get<std::uint64_t>();
    s.d.spec = spec_from_json(meta.at("d_spec"));
    s.d.spectral_enabled = meta.at("spectral_enabled").get<bool>();
    s.d.params = ParamVector(s.d.spec.layout("d"));
    s.d.spectral_u.resize(s.d.spec.num_layers());
    for (std::size_t l = 0; l < s.d.spec.num_layers(); ++l) s.d.spectral_u[l].resize(s.d.spec.widths[l]);
    s.g.spec = spec_from_json(meta.at("g_spec"));
    s.g.params = ParamVector(s.g.spec.layout("g"));
    s.shadow.params = ParamVector(s.g.spec.layout("g"));
    s.shadow.tau = std::bit_cast<double>(meta.at("polyak_tau_bits").get<std::uint64_t>());
    s.adam_d = AdamState::zeros(s.d.params.layout);
    s.adam_g = AdamState::zeros(s.g.params.layout);
    s.adam_d.step = meta.at("adam_d_step").get<std::uint64_t>();
    s.adam_g.step = meta.at("adam_g_step").get<std::uint64_t>();
    const auto& rng = meta.at("rng");
    s.data_rng = rng_from_json(rng.at("data"));
    s.z_rng = rng_from_json(rng.at("z"));
    s.noise_rng = rng_from_json(rng.at("noise"));
    s.monitor_rng = rng_from_json(rng.at("monitor"));

    std::vector<std::span<double>> targets = {s.d.params.values};
    for (auto& u : s.d.spectral_u) targets.emplace_back(u);
    targets.insert(targets.end(), {s.g.params.values, s.shadow.params.values, s.adam_d.m.values, s.adam_d.v.values,
                                   s.adam_g.m.values, s.adam_g.v.values});
    const auto& blobs = meta.at("blobs");
    if (blobs.size() != targets.size()) throw FormatError("checkpoint: unexpected number of parameter blocks");
    std::size_t expected_bytes = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (blobs[i].at("count").get<std::size_t>() != targets[i].size())
        throw FormatError(fmt::format("checkpoint: block '{}' has the wrong length", blobs[i].at("name").get<std::string>()));
      expected_bytes += 8 * targets[i].size();
    }
    if (expected_bytes != payload.size()) throw FormatError("checkpoint: payload size does not match its blocks");
    std::istringstream pin(payload, std::ios::binary);
    for (auto& t : targets) read_f64s(pin, t, "checkpoint payload");
    ckpt.id = meta.at("checkpoint_id").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("checkpoint metadata: {}", e.what()));
  } catch (const ContractError& e) {
    throw FormatError(fmt::format("checkpoint metadata: {}", e.what()));
  } catch (const UsageError& e) {
    throw FormatError(fmt::format("checkpoint config: {}", e.what()));
  }
  if (id_for_payload(payload, ckpt.state.iteration) != ckpt.id)
    throw FormatError("checkpoint: content hash does not match its recorded id (corrupted file?)");
  return ckpt;
}

// ---------------------------------------------------------------------------
// Metrics

std::string metrics_header_line() {
  return json{{"format", "ebmgan-metrics"}, {"version", 1}}.dump();
}

std::string metrics_to_json_line(const MetricsRecord& r) {
  json j;
  j["iteration"] = r.iteration;
  j["d_loss"] = r.d_loss;
  j["g_loss"] = r.g_loss;
  j["mean_d_real"] = r.mean_d_real;
  j["mean_d_fake"] = r.mean_d_fake;
  j["delta_g"] = r.delta_g;
  if (r.fisher_similarity_train) j["fisher_similarity_train"] = *r.fisher_similarity_train;
  if (r.fisher_similarity_val) j["fisher_similarity_val"] = *r.fisher_similarity_val;
  return j.dump();
}

MetricsRecord metrics_from_json_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    MetricsRecord r;
    r.iteration = j.at("iteration").get<std::uint64_t>();
    r.d_loss = j.at("d_loss").get<double>();
    r.g_loss = j.at("g_loss").get<double>();
    r.mean_d_real = j.at("mean_d_real").get<double>();
    r.mean_d_fake = j.at("mean_d_fake").get<double>();
    r.delta_g = j.at("delta_g").get<double>();
    if (j.contains("fisher_similarity_train")) r.fisher_similarity_train = j["fisher_similarity_train"].get<double>();
    if (j.contains("fisher_similarity_val")) r.fisher_similarity_val = j["fisher_similarity_val"].get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("bad metrics record: {}", e.what()));
  }
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : path_(path) {
  auto out = open_out(path);
  out << metrics_header_line() << "\n";
}

MetricsWriter MetricsWriter::append_to(const std::filesystem::path& path) {
  const MetricsLog log = read_metrics_log(path);
  MetricsWriter w;
  w.path_ = path;
  if (!log.records.empty()) w.last_iteration_ = log.records.back().iteration;
  if (log.truncated_tail) {
    // Rewrite without the partial line so appended records start cleanly.
    auto out = open_out(path);
    out << metrics_header_line() << "\n";
    for (const auto& r : log.records) out << metrics_to_json_line(r) << "\n";
  }
  return w;
}

void MetricsWriter::write(const MetricsRecord& record) {
  require(record.iteration > last_iteration_, "metrics iteration {} does not follow {}", record.iteration, last_iteration_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw FormatError(fmt::format("cannot append to '{}'", path_.string()));
  out << metrics_to_json_line(record) << "\n";
  out.flush();
  last_iteration_ = record.iteration;
}

MetricsLog read_metrics_log(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  MetricsLog log;
  std::size_t pos = 0, line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) {
      log.truncated_tail = true;  // writer always terminates lines
      break;
    }
    const std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    if (!header_seen) {
      json h;
      try {
        h = json::parse(line);
      } catch (const json::exception&) {
        throw FormatError("metrics log: first line is not a header object");
      }
      if (h.value("format", "") != "ebmgan-metrics") throw FormatError("metrics log: unrecognized header");
      if (h.value("version", -1) != 1) throw FormatError("metrics log: unsupported version");
      header_seen = true;
      continue;
    }
    MetricsRecord r;
    try {
      r = metrics_from_json_line(line);
    } catch (const FormatError& e) {
      throw FormatError(fmt::format("metrics log line {}: {}", line_no, e.what()));
    }
    if (!log.records.empty() && r.iteration <= log.records.back().iteration)
      throw FormatError(fmt::format("metrics log line {}: iteration {} is not increasing", line_no, r.iteration));
    log.records.push_back(r);
  }
  if (!header_seen && !log.truncated_tail) throw FormatError("metrics log: missing header");
  return log;
}

// ---------------------------------------------------------------------------
// AFV files

std::filesystem::path afv_ids_path(const std::filesystem::path& path) { return path.string() + ".ids"; }

void write_afv_file(const std::filesystem::path& path, const AfvFile& file) {
  require(!file.vectors.empty(), "AFV export needs at least one vector");
  require(file.labels.empty() || file.labels.size() == file.vectors.size(), "AFV export: one label per vector");
  const std::size_t length = file.vectors.front().values.size();
  auto out = open_out(path);
  out << "EBMGAN-AFV 1\n"
      << "checkpoint " << file.checkpoint_id << "\n"
      << "length " << length << "\n"
      << "count " << file.vectors.size() << "\n"
      << "epsilon " << fmt::format("{}", file.epsilon) << "\n"
      << "end\n";
  for (const auto& v : file.vectors) {
    require(v.values.size() == length, "AFV export: vectors differ in length");
    write_f64s(out, v.values);
  }
  if (!out) throw FormatError(fmt::format("failed writing '{}'", path.string()));

  auto ids = open_out(afv_ids_path(path));
  for (std::size_t i = 0; i < file.vectors.size(); ++i)
    ids << file.vectors[i].source_id << "\t" << (file.labels.empty() ? -1 : file.labels[i]) << "\n";
}

AfvFile read_afv_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto h = read_text_header(in, "EBMGAN-AFV", 1);
  AfvFile file;
  file.checkpoint_id = header_field(h, "checkpoint");
  const auto length = parse_number<std::size_t>(header_field(h, "length"), "length");
  const auto count = parse_number<std::size_t>(header_field(h, "count"), "count");
  file.epsilon = parse_number<double>(header_field(h, "epsilon"), "epsilon");
  file.vectors.resize(count);
  for (auto& v : file.vectors) {
    v.values.resize(length);
    read_f64s(in, v.values, "AFV payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("AFV file has trailing bytes");

  std::ifstream ids(afv_ids_path(path));
  if (!ids) throw FormatError(fmt::format("missing AFV id list '{}'", afv_ids_path(path).string()));
  std::string line;
  std::size_t i = 0;
  while (std::getline(ids, line)) {
    if (line.empty()) continue;
    if (i >= count) throw FormatError("AFV id list has more entries than vectors");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("AFV id list line lacks a label column");
    file.vectors[i].source_id = line.substr(0, tab);
    file.labels.push_back(parse_number<int>(std::string_view(line).substr(tab + 1), "label"));
    ++i;
  }
  if (i != count) throw FormatError("AFV id list has fewer entries than vectors");
  return file;
}

void write_fisher_stats(const std::filesystem::path& path, const FisherStats& stats) {
  auto out = open_out(path);
  out << "EBMGAN-FISHER-STATS 1\n"
      << "checkpoint " << (stats.checkpoint_id.empty() ? "-" : stats.checkpoint_id) << "\n"
      << "length " << stats.size() << "\n"
      << "n_samples " << stats.n_samples << "\n"
      << "epsilon " << fmt::format("{}", stats.epsilon) << "\n"
      << "seed " << stats.seed << "\n"
      << "end\n";
  write_f64s(out, stats.mean_grad.values);
  write_f64s(out, stats.diag_info);
  if (!out) throw FormatError(fmt::format("failed writing '{}'", path.string()));
}

FisherStats read_fisher_stats(const std::filesystem::path& path, const ParamLayout& layout) {
  auto in = open_in(path);
  const auto h = read_text_header(in, "EBMGAN-FISHER-STATS", 1);
  const auto length = parse_number<std::size_t>(header_field(h, "length"), "length");
  if (length != layout.total_size())
    throw FormatError(fmt::format("Fisher statistics of length {} do not match a model with {} parameters", length,
                                  layout.total_size()));
  FisherStats stats;
  stats.checkpoint_id = header_field(h, "checkpoint");
  if (stats.checkpoint_id == "-") stats.checkpoint_id.clear();
  stats.n_samples = parse_number<std::size_t>(header_field(h, "n_samples"), "n_samples");
  stats.epsilon = parse_number<double>(header_field(h, "epsilon"), "epsilon");
  stats.seed = parse_number<std::uint64_t>(header_field(h, "seed"), "seed");
  stats.mean_grad = ParamVector(layout);
  stats.diag_info.resize(length);
  read_f64s(in, stats.mean_grad.values, "mean gradient");
  read_f64s(in, stats.diag_info, "diagonal information");
  return stats;
}

}  // namespace ebmgan
