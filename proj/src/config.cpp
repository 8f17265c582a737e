#include "dualpf/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "dualpf/errors.hpp"

namespace dualpf {

TrainMode parse_mode(const std::string& name) {
  if (name == "baseline") return TrainMode::Baseline;
  if (name == "dual") return TrainMode::Dual;
  if (name == "dual-pretrain") return TrainMode::DualPretrain;
  throw ConfigError("unknown mode '" + name + "' (baseline, dual, dual-pretrain)");
}

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::Baseline: return "baseline";
    case TrainMode::Dual: return "dual";
    case TrainMode::DualPretrain: return "dual-pretrain";
  }
  return "?";
}

namespace {

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: bad boolean '" + value + "' for " + key);
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define DPF_SIZE(name, member)                                                                  \
  Field {                                                                                       \
    name, [](const TrainConfig& c) { return std::to_string(c.member); },                        \
        [](TrainConfig& c, const std::string& v) { c.member = parse_number<std::size_t>(name, v); } \
  }
#define DPF_DOUBLE(name, member)                                                           \
  Field {                                                                                  \
    name, [](const TrainConfig& c) { return format_double(c.member); },                    \
        [](TrainConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); } \
  }
#define DPF_BOOL(name, member)                                                        \
  Field {                                                                             \
    name, [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"mode", [](const TrainConfig& c) { return mode_name(c.mode); },
       [](TrainConfig& c, const std::string& v) { c.mode = parse_mode(v); }},
      {"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
       [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
      {"corpus", [](const TrainConfig& c) { return c.corpus; },
       [](TrainConfig& c, const std::string& v) { c.corpus = v; }},
      {"task", [](const TrainConfig& c) { return task_name(c.task.kind); },
       [](TrainConfig& c, const std::string& v) { c.task.kind = parse_task(v); }},
      DPF_SIZE("task_vocab", task.vocab),
      DPF_SIZE("task_min_len", task.min_len),
      DPF_SIZE("task_max_len", task.max_len),
      DPF_SIZE("task_size", task.size),
      DPF_SIZE("task_window", task.window),
      {"task_seed", [](const TrainConfig& c) { return std::to_string(c.task.seed); },
       [](TrainConfig& c, const std::string& v) { c.task.seed = parse_number<std::uint64_t>("task_seed", v); }},
      DPF_SIZE("d_model", model.d_model),
      DPF_SIZE("n_heads", model.n_heads),
      DPF_SIZE("n_layers", model.n_layers),
      DPF_SIZE("d_ff", model.d_ff),
      DPF_DOUBLE("dropout", model.dropout),
      DPF_SIZE("max_len", model.max_len),
      DPF_BOOL("capsules", use_capsules),
      DPF_SIZE("n_past", capsules.n_past),
      DPF_SIZE("n_future", capsules.n_future),
      DPF_SIZE("n_redundant", capsules.n_redundant),
      DPF_SIZE("capsule_dim", capsules.dim),
      DPF_SIZE("routing_iterations", capsules.iterations),
      DPF_SIZE("agreement_dim", capsules.agreement_dim),
      DPF_DOUBLE("lambda_past", dual.lambda_past),
      DPF_DOUBLE("lambda_future", dual.lambda_future),
      DPF_BOOL("stop_gradient_teacher", dual.stop_gradient_teacher),
      DPF_DOUBLE("subsample", dual.subsample),
      DPF_DOUBLE("lr", adam.peak_lr),
      DPF_DOUBLE("beta1", adam.beta1),
      DPF_DOUBLE("beta2", adam.beta2),
      DPF_DOUBLE("adam_eps", adam.eps),
      DPF_SIZE("warmup", adam.warmup),
      DPF_SIZE("batch_size", batch_size),
      DPF_SIZE("pretrain_steps", pretrain_steps),
      DPF_SIZE("steps", steps),
      DPF_SIZE("eval_interval", eval_interval),
      DPF_SIZE("eval_size", eval_size),
      DPF_SIZE("checkpoint_interval", checkpoint_interval),
      DPF_DOUBLE("target_bleu", target_bleu),
  };
  return table;
}

#undef DPF_SIZE
#undef DPF_DOUBLE
#undef DPF_BOOL

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig TrainConfig::effective() const {
  TrainConfig c = *this;
  if (c.mode == TrainMode::Baseline) {
    c.dual.lambda_past = 0.0;
    c.dual.lambda_future = 0.0;
    c.pretrain_steps = 0;
  }
  if (c.mode == TrainMode::Dual) c.pretrain_steps = 0;
  c.adam.f32_state = true;
  return c;
}

std::size_t TrainConfig::total_steps() const {
  const TrainConfig c = effective();
  return c.pretrain_steps + c.steps;
}

void TrainConfig::validate() const {
  task.validate();
  capsules.validate();
  dual.validate();
  ModelConfig m = model;
  m.validate();
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (eval_interval == 0) throw ConfigError("config: eval_interval must be positive");
  if (!(adam.peak_lr > 0.0)) throw ConfigError("config: lr must be positive");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("config: dropout must lie in [0, 1)");
  if (mode != TrainMode::Baseline && !use_capsules && dual.active())
    throw ConfigError("config: dual training with non-zero weights needs capsules = true");
  if (task.max_len + 1 > model.max_len && corpus.empty())
    throw ConfigError("config: task_max_len + 1 exceeds the model max_len");
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool known = false;
    for (const auto& f : fields()) {
      if (key != f.key) continue;
      f.set(c, value);
      known = true;
      break;
    }
    if (!known) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

}  // namespace dualpf
