#include "adaptok/kvconfig.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adaptok/error.hpp"

namespace adaptok {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos)
    return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ','))
    if (auto t = trim(item); !t.empty())
      out.push_back(std::move(t));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& name) {
  KeyValueConfig config;
  config.name_ = name;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty())
      continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos)
      throw ParseError(name, line_no, "expected key = value");
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty())
      throw ParseError(name, line_no, "empty key");
    if (config.values_.contains(key))
      throw ParseError(name, line_no, "duplicate key '" + key + "'");
    config.values_.emplace(key, value);
    config.lines_.emplace(key, line_no);
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string());
}

void KeyValueConfig::fail(const std::string& key, const std::string& what) const {
  const auto it = lines_.find(key);
  if (it == lines_.end())
    throw Error(name_ + ": " + key + ": " + what);
  throw ParseError(name_, it->second, key + ": " + what);
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end())
    return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::string KeyValueConfig::require(const std::string& key) const {
  auto v = get(key);
  if (!v || v->empty())
    fail(key, "required key missing");
  return *v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v)
    return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size() || !std::isfinite(d))
      fail(key, "not a finite number: '" + *v + "'");
    return d;
  } catch (const std::logic_error&) {
    fail(key, "not a number: '" + *v + "'");
  }
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v)
    return fallback;
  if (v->empty() || v->find_first_not_of("0123456789") != std::string::npos)
    fail(key, "not a non-negative integer: '" + *v + "'");
  try {
    return std::stoull(*v);
  } catch (const std::logic_error&) {
    fail(key, "integer out of range: '" + *v + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v)
    return fallback;
  if (*v == "true" || *v == "1" || *v == "yes")
    return true;
  if (*v == "false" || *v == "0" || *v == "no")
    return false;
  fail(key, "not a boolean: '" + *v + "'");
}

void KeyValueConfig::check_all_used() const {
  for (const auto& [key, value] : values_)
    if (!used_.contains(key))
      fail(key, "unknown key");
}

TrainRunConfig parse_train_config(const KeyValueConfig& kv, const std::filesystem::path& base_dir,
                                  std::uint64_t seed, unsigned threads) {
  TrainRunConfig run;
  auto path_of = [&](const std::string& key, bool required) -> std::filesystem::path {
    const std::string value = required ? kv.require(key) : kv.get_string(key, "");
    if (value.empty())
      return {};
    std::filesystem::path p(value);
    return p.is_absolute() ? p : base_dir / p;
  };
  run.source = path_of("source", true);
  run.target = path_of("target", true);
  run.validation_source = path_of("validation.source", false);
  run.validation_target = path_of("validation.target", false);
  if (run.validation_source.empty() != run.validation_target.empty())
    throw Error(kv.name() + ": validation.source and validation.target go together");

  const std::uint64_t base_seed = kv.get_uint("seed", seed);
  run.threads = static_cast<unsigned>(kv.get_uint("threads", threads));
  if (run.threads == 0)
    throw Error(kv.name() + ": threads must be >= 1");
  run.embed_dim = kv.get_uint("model.embed_dim", run.embed_dim);
  run.hidden_dim = kv.get_uint("model.hidden_dim", run.hidden_dim);
  run.init_scale = kv.get_double("model.init_scale", run.init_scale);
  run.init_seed = kv.get_uint("model.init_seed", base_seed);

  run.phase_names = split_list(kv.get_string("schedule", "pretrain"));
  if (run.phase_names.empty())
    throw Error(kv.name() + ": schedule is empty");
  for (const auto& label : run.phase_names) {
    const std::string p = label + ".";
    TrainConfig tc;
    const std::string default_phase = (label == "finetune" || label.starts_with("finetune")) ? "finetune" : "pretrain";
    tc.phase = parse_phase(kv.get_string(p + "phase", default_phase));
    tc.learning_rate = kv.get_double(p + "learning_rate", tc.learning_rate);
    tc.finetune_lr_ratio = kv.get_double(p + "finetune_lr_ratio", tc.finetune_lr_ratio);
    tc.max_steps = kv.get_uint(p + "max_steps", tc.max_steps);
    tc.batch_size = kv.get_uint(p + "batch_size", tc.batch_size);
    tc.seed = kv.get_uint(p + "seed", base_seed);
    tc.data_mode = parse_data_mode(kv.get_string(p + "data_mode", to_string(tc.data_mode)));
    tc.rare_fraction = kv.get_double(p + "rare_fraction", tc.rare_fraction);
    tc.oversample_factor = static_cast<int>(kv.get_uint(p + "oversample_factor", 3));
    auto& loss = tc.loss;
    loss.kind = parse_loss_kind(kv.get_string(p + "loss.weighting", to_string(loss.kind)));
    loss.temperature = kv.get_double(p + "loss.T", loss.temperature);
    loss.amplitude = kv.get_double(p + "loss.A", loss.amplitude);
    loss.normalize_by_median = kv.get_bool(p + "loss.normalize_by_median", loss.normalize_by_median);
    loss.weights_file = path_of(p + "loss.weights_file", false).string();
    loss.focal_gamma = kv.get_double(p + "loss.focal_gamma", loss.focal_gamma);
    loss.focal_plus_one = kv.get_bool(p + "loss.focal_plus_one", loss.focal_plus_one);
    loss.label_smoothing = kv.get_double(p + "loss.label_smoothing", loss.label_smoothing);
    loss.entropy_penalty = kv.get_double(p + "loss.entropy_penalty", loss.entropy_penalty);
    const std::string term = kv.get_string(p + "loss.entropy_term", "full");
    if (term == "full")
      loss.entropy_term = EntropyTerm::full_distribution;
    else if (term == "target")
      loss.entropy_term = EntropyTerm::target_only;
    else
      throw Error(kv.name() + ": " + p + "loss.entropy_term must be full or target");
    tc.validate();
    run.schedule.push_back(std::move(tc));
  }

  const std::string mode = kv.get_string("decode.mode", "beam");
  if (mode == "beam")
    run.decode.mode = DecodeConfig::Mode::beam;
  else if (mode == "greedy")
    run.decode.mode = DecodeConfig::Mode::greedy;
  else
    throw Error(kv.name() + ": decode.mode must be beam or greedy");
  run.decode.beam_size = kv.get_uint("decode.beam_size", run.decode.beam_size);
  run.decode.length_penalty = kv.get_double("decode.length_penalty", run.decode.length_penalty);
  run.decode.max_length = kv.get_uint("decode.max_length", run.decode.max_length);
  run.decode.validate();
  kv.check_all_used();
  return run;
}

std::string TrainRunConfig::render() const {
  std::string out;
  auto line = [&](const std::string& key, const std::string& value) { out += key + " = " + value + "\n"; };
  line("source", source.string());
  line("target", target.string());
  if (!validation_source.empty()) {
    line("validation.source", validation_source.string());
    line("validation.target", validation_target.string());
  }
  line("threads", std::to_string(threads));
  line("model.embed_dim", std::to_string(embed_dim));
  line("model.hidden_dim", std::to_string(hidden_dim));
  line("model.init_scale", fmt(init_scale));
  line("model.init_seed", std::to_string(init_seed));
  std::string names;
  for (const auto& n : phase_names)
    names += (names.empty() ? "" : ",") + n;
  line("schedule", names);
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& tc = schedule[i];
    const std::string p = phase_names[i] + ".";
    line(p + "phase", to_string(tc.phase));
    line(p + "learning_rate", fmt(tc.learning_rate));
    line(p + "finetune_lr_ratio", fmt(tc.finetune_lr_ratio));
    line(p + "max_steps", std::to_string(tc.max_steps));
    line(p + "batch_size", std::to_string(tc.batch_size));
    line(p + "seed", std::to_string(tc.seed));
    line(p + "data_mode", to_string(tc.data_mode));
    line(p + "rare_fraction", fmt(tc.rare_fraction));
    line(p + "oversample_factor", std::to_string(tc.oversample_factor));
    line(p + "loss.weighting", to_string(tc.loss.kind));
    line(p + "loss.T", fmt(tc.loss.temperature));
    line(p + "loss.A", fmt(tc.loss.amplitude));
    line(p + "loss.normalize_by_median", tc.loss.normalize_by_median ? "true" : "false");
    if (!tc.loss.weights_file.empty())
      line(p + "loss.weights_file", tc.loss.weights_file);
    line(p + "loss.focal_gamma", fmt(tc.loss.focal_gamma));
    line(p + "loss.focal_plus_one", tc.loss.focal_plus_one ? "true" : "false");
    line(p + "loss.label_smoothing", fmt(tc.loss.label_smoothing));
    line(p + "loss.entropy_penalty", fmt(tc.loss.entropy_penalty));
    line(p + "loss.entropy_term", tc.loss.entropy_term == EntropyTerm::full_distribution ? "full" : "target");
  }
  line("decode.mode", decode.mode == DecodeConfig::Mode::beam ? "beam" : "greedy");
  line("decode.beam_size", std::to_string(decode.beam_size));
  line("decode.length_penalty", fmt(decode.length_penalty));
  line("decode.max_length", std::to_string(decode.max_length));
  return out;
}

}  // namespace adaptok
