#include "ctxrnn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw DataError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw DataError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw DataError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = strip(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class V, class Parse>
std::map<std::size_t, V> parse_schedule(const std::string& key, const std::string& v, Parse parse) {
  std::map<std::size_t, V> out;
  for (const auto& item : split_list(v)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw DataError(key + ": expected epoch:value pairs");
    out[to_size(key, strip(item.substr(0, colon)))] = parse(key, strip(item.substr(colon + 1)));
  }
  if (out.empty() || out.begin()->first != 1) throw DataError(key + ": schedule must start at epoch 1");
  return out;
}

template <class V, class Fmt>
std::string format_schedule(const std::map<std::size_t, V>& m, Fmt fmt) {
  std::string out;
  for (const auto& [epoch, value] : m) out += (out.empty() ? "" : ",") + std::to_string(epoch) + ":" + fmt(value);
  return out;
}

struct Field {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

std::pair<std::string, Field> size_field(const std::string& name, std::size_t Config::*member) {
  return {name,
          {[name, member](Config& c, const std::string& v) { c.*member = to_size(name, v); },
           [member](const Config& c) { return std::to_string(c.*member); }}};
}

std::pair<std::string, Field> double_field(const std::string& name, double Config::*member) {
  return {name,
          {[name, member](Config& c, const std::string& v) { c.*member = to_double(name, v); },
           [member](const Config& c) { return fmt_double(c.*member); }}};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      size_field("window", &Config::window),
      size_field("horizon", &Config::horizon),
      size_field("period", &Config::period),
      {"dilations",
       {[](Config& c, const std::string& v) {
          c.dilations.clear();
          for (const auto& d : split_list(v)) c.dilations.push_back(to_size("dilations", d));
        },
        [](const Config& c) {
          std::string out;
          for (std::size_t d : c.dilations) out += (out.empty() ? "" : ",") + std::to_string(d);
          return out;
        }}},
      size_field("hidden", &Config::hidden),
      size_field("embedding", &Config::embedding),
      size_field("context_size", &Config::context_size),
      size_field("context_batch", &Config::context_batch),
      size_field("conv_channels", &Config::conv_channels),
      size_field("conv_kernel", &Config::conv_kernel),
      {"variant",
       {[](Config& c, const std::string& v) { c.variant = parse_variant(v); },
        [](const Config& c) { return std::string(variant_name(c.variant)); }}},
      size_field("contexts", &Config::contexts),
      size_field("maxlag", &Config::maxlag),
      size_field("epochs", &Config::epochs),
      {"batch_schedule",
       {[](Config& c, const std::string& v) { c.batch_schedule = parse_schedule<std::size_t>("batch_schedule", v, to_size); },
        [](const Config& c) {
          return format_schedule(c.batch_schedule, [](std::size_t b) { return std::to_string(b); });
        }}},
      {"lr_schedule",
       {[](Config& c, const std::string& v) { c.lr_schedule = parse_schedule<double>("lr_schedule", v, to_double); },
        [](const Config& c) { return format_schedule(c.lr_schedule, fmt_double); }}},
      double_field("q_median", &Config::q_median),
      double_field("q_lower", &Config::q_lower),
      double_field("q_upper", &Config::q_upper),
      double_field("gamma", &Config::gamma),
      size_field("tbptt", &Config::tbptt),
      double_field("delta_clamp", &Config::delta_clamp),
      {"keep_best",
       {[](Config& c, const std::string& v) { c.keep_best = to_bool("keep_best", v); },
        [](const Config& c) { return std::string(c.keep_best ? "true" : "false"); }}},
      {"seed",
       {[](Config& c, const std::string& v) { c.seed = to_size("seed", v); },
        [](const Config& c) { return std::to_string(c.seed); }}},
      size_field("ensemble", &Config::ensemble),
  };
  return table;
}


const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  throw DataError("unknown config key '" + key + "'");
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::global_only: return "global_only";
    case Variant::no_context: return "no_context";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "global_only" || name == "global-only" || name == "global-context-only") return Variant::global_only;
  if (name == "no_context" || name == "no-context") return Variant::no_context;
  throw DataError("unknown variant '" + name + "'");
}

std::size_t Config::batch_size(std::size_t epoch) const {
  auto it = batch_schedule.upper_bound(epoch);
  return std::prev(it)->second;
}

double Config::learning_rate(std::size_t epoch) const {
  auto it = lr_schedule.upper_bound(epoch);
  return std::prev(it)->second;
}

std::size_t Config::context_width() const {
  return variant == Variant::no_context ? 0 : context_size * context_batch;
}

std::size_t Config::input_width() const { return window + period + 1 + embedding + context_width(); }

void Config::validate() const {
  auto fail = [](const std::string& msg) { throw DataError("config: " + msg); };
  if (window < 2) fail("window must be at least 2");
  if (horizon == 0) fail("horizon must be positive");
  if (period == 0) fail("period must be positive");
  if (dilations.empty()) fail("dilations must not be empty");
  for (std::size_t d : dilations)
    if (d == 0) fail("dilations must be positive");
  if (hidden == 0 || embedding == 0) fail("hidden and embedding must be positive");
  if (variant != Variant::no_context && (context_size == 0 || context_batch == 0))
    fail("context_size and context_batch must be positive unless variant = no_context");
  if (conv_channels == 0 || conv_kernel == 0) fail("conv sizes must be positive");
  if (!(0.0 < q_lower && q_lower < q_median && q_median < q_upper && q_upper < 1.0))
    fail("quantiles must satisfy 0 < q_lower < q_median < q_upper < 1");
  if (gamma < 0.0) fail("gamma must be non-negative");
  if (epochs == 0) fail("epochs must be positive");
  if (tbptt == 0) fail("tbptt must be positive");
  if (ensemble == 0) fail("ensemble must be at least 1");
  if (!(delta_clamp > 0.0)) fail("delta_clamp must be positive");
  for (const auto& [e, b] : batch_schedule)
    if (b == 0) fail("batch sizes must be positive");
  for (const auto& [e, lr] : lr_schedule)
    if (!(lr >= 0.0)) fail("learning rates must be non-negative");
}

void Config::set(const std::string& key, const std::string& value) { field(key).set(*this, strip(value)); }

std::string Config::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_config_text(Config& config, std::istream& in) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(number) + ": expected key = value");
    config.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  Config c;
  apply_config_text(c, in);
  return c;
}

std::string config_to_text(const Config& config) {
  std::string out;
  for (const auto& key : config_keys()) out += key + " = " + config.get(key) + "\n";
  return out;
}

}  // namespace ctxrnn
