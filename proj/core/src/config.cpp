#include "itrolab/config.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace itrolab {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::string_view key;
  const std::string& value;
  int line;

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(line, std::string(key), msg); }

  long long as_int() const {
    long long v = 0;
    const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size()) fail("expected an integer, got '" + value + "'");
    return v;
  }
  int as_int32() const {
    const long long v = as_int();
    if (v < INT_MIN || v > INT_MAX) fail("integer out of range");
    return static_cast<int>(v);
  }
  std::uint64_t as_u64() const {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size()) {
      fail("expected an unsigned 64-bit integer, got '" + value + "'");
    }
    return v;
  }
  double as_double() const {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size()) fail("expected a number, got '" + value + "'");
    return v;
  }
  bool as_bool() const {
    if (value == "true") return true;
    if (value == "false") return false;
    fail("expected true or false, got '" + value + "'");
  }
  int at_least(int lo) const {
    const int v = as_int32();
    if (v < lo) fail(std::string(key) + " must be ≥ " + std::to_string(lo));
    return v;
  }
  double positive() const {
    const double v = as_double();
    if (!(v > 0.0)) fail(std::string(key) + " must be > 0");
    return v;
  }
  double non_negative() const {
    const double v = as_double();
    if (!(v >= 0.0)) fail(std::string(key) + " must be ≥ 0");
    return v;
  }
  template <class F>
  auto parse_enum(F&& f) const {
    try {
      return f(value);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
};

enum class TeacherChoice { automatic, filtered_sft, off };

struct Draft {
  RunConfig cfg;
  TeacherChoice teacher = TeacherChoice::automatic;
};

using Setter = std::function<void(Draft&, const Field&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"format_version", [](Draft&, const Field& f) {
         if (f.as_int() != kConfigFormatVersion) {
           f.fail("unsupported config format_version " + f.value + " (expected " +
                  std::to_string(kConfigFormatVersion) + ")");
         }
       }},
      {"method", [](Draft& d, const Field& f) { d.cfg.method = f.parse_enum(method_from_string); }},
      {"seed", [](Draft& d, const Field& f) { d.cfg.seed = f.as_u64(); }},
      {"steps", [](Draft& d, const Field& f) { d.cfg.steps = f.at_least(1); }},
      {"batch_size", [](Draft& d, const Field& f) { d.cfg.batch_size = f.at_least(1); }},
      {"eval_every", [](Draft& d, const Field& f) { d.cfg.eval_every = f.at_least(1); }},
      {"learning_rate", [](Draft& d, const Field& f) { d.cfg.itro.learning_rate = f.non_negative(); }},
      {"output_dir", [](Draft& d, const Field& f) {
         if (f.value.empty()) f.fail("output_dir must not be empty");
         d.cfg.output_dir = f.value;
       }},
      {"workers", [](Draft& d, const Field& f) { d.cfg.workers = f.at_least(1); }},
      {"record_wall_time", [](Draft& d, const Field& f) { d.cfg.record_wall_time = f.as_bool(); }},

      {"task.family", [](Draft& d, const Field& f) { d.cfg.task.family = f.parse_enum(task_family_from_string); }},
      {"task.base", [](Draft& d, const Field& f) { d.cfg.task.base = f.at_least(2); }},
      {"task.chain_length", [](Draft& d, const Field& f) { d.cfg.task.chain_length = f.at_least(1); }},
      {"task.max_rationale_len", [](Draft& d, const Field& f) { d.cfg.task.max_rationale_len = f.at_least(2); }},

      {"policy.arch", [](Draft& d, const Field& f) { d.cfg.arch = f.parse_enum(arch_from_string); }},
      {"policy.init", [](Draft& d, const Field& f) {
         if (f.value == "uniform") d.cfg.init.kind = InitKind::uniform;
         else if (f.value == "noise") d.cfg.init.kind = InitKind::seeded_noise;
         else f.fail("policy.init must be uniform or noise");
       }},
      {"policy.init_sigma", [](Draft& d, const Field& f) { d.cfg.init.sigma = f.non_negative(); }},
      {"policy.context_window", [](Draft& d, const Field& f) { d.cfg.context_window = f.at_least(1); }},

      {"rollout.G", [](Draft& d, const Field& f) { d.cfg.itro.G = f.at_least(1); }},
      {"rollout.temperature", [](Draft& d, const Field& f) { d.cfg.itro.temperature = f.positive(); }},

      {"itro.n", [](Draft& d, const Field& f) { d.cfg.itro.n = f.at_least(1); }},
      {"itro.clip_max", [](Draft& d, const Field& f) { d.cfg.itro.w_max = f.positive(); }},
      {"itro.stop_grad_w", [](Draft& d, const Field& f) { d.cfg.itro.stop_grad_through_w = f.as_bool(); }},
      {"itro.pooling", [](Draft& d, const Field& f) {
         if (f.value == "per_rationale") d.cfg.itro.pooling = itro::Pooling::per_rationale;
         else if (f.value == "pooled") d.cfg.itro.pooling = itro::Pooling::pooled;
         else f.fail("itro.pooling must be per_rationale or pooled");
       }},
      {"itro.teacher_update", [](Draft& d, const Field& f) {
         if (f.value == "auto") d.teacher = TeacherChoice::automatic;
         else if (f.value == "filtered_sft") d.teacher = TeacherChoice::filtered_sft;
         else if (f.value == "off") d.teacher = TeacherChoice::off;
         else f.fail("itro.teacher_update must be auto, filtered_sft or off");
       }},

      {"baseline.clip_eps", [](Draft& d, const Field& f) { d.cfg.baseline.clip_eps = f.positive(); }},
      {"baseline.kl_beta", [](Draft& d, const Field& f) { d.cfg.baseline.kl_beta = f.non_negative(); }},
      {"baseline.latro_kl_coef", [](Draft& d, const Field& f) { d.cfg.baseline.latro_kl_coef = f.non_negative(); }},
      {"baseline.latro_answer_grad", [](Draft& d, const Field& f) { d.cfg.baseline.latro_answer_grad = f.as_bool(); }},
      {"baseline.f_norm", [](Draft& d, const Field& f) {
         if (f.value == "std") d.cfg.baseline.f_norm = baselines::NormMode::std_dev;
         else if (f.value == "fixed") d.cfg.baseline.f_norm = baselines::NormMode::fixed;
         else f.fail("baseline.f_norm must be std or fixed");
       }},
      {"baseline.f_norm_constant", [](Draft& d, const Field& f) { d.cfg.baseline.f_norm_constant = f.positive(); }},
      {"baseline.advantage_epsilon", [](Draft& d, const Field& f) { d.cfg.baseline.advantage_epsilon = f.positive(); }},
      {"baseline.reference", [](Draft& d, const Field& f) {
         d.cfg.reference_checkpoint = f.value == "init" ? std::string() : f.value;
       }},

      {"eval.decode", [](Draft& d, const Field& f) {
         if (f.value == "greedy") d.cfg.eval.decode.mode = metrics::DecodeMode::greedy;
         else if (f.value == "sample") d.cfg.eval.decode.mode = metrics::DecodeMode::sample;
         else f.fail("eval.decode must be greedy or sample");
       }},
      {"eval.temperature", [](Draft& d, const Field& f) { d.cfg.eval.decode.temperature = f.positive(); }},
      {"eval.k", [](Draft& d, const Field& f) { d.cfg.eval.decode.k = f.at_least(1); }},
      {"eval.instances", [](Draft& d, const Field& f) { d.cfg.eval.instances = f.at_least(1); }},

      {"oracle.pairs", [](Draft& d, const Field& f) { d.cfg.oracle.pairs = f.at_least(1); }},
      {"oracle.fd_h", [](Draft& d, const Field& f) { d.cfg.oracle.fd_h = f.positive(); }},
      {"oracle.init_sigma", [](Draft& d, const Field& f) { d.cfg.oracle.init_sigma = f.non_negative(); }},
  };
  return table;
}

}  // namespace

ConfigError::ConfigError(int line, std::string key, const std::string& message)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
      line_(line),
      key_(std::move(key)) {}

std::string to_string(Method m) {
  switch (m) {
    case Method::itro: return "itro";
    case Method::sft: return "sft";
    case Method::latro: return "latro";
    case Method::raftpp: return "raftpp";
    case Method::gpg: return "gpg";
    case Method::grpo: return "grpo";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  static const std::map<std::string, Method> names = {
      {"itro", Method::itro}, {"sft", Method::sft},   {"latro", Method::latro},
      {"raftpp", Method::raftpp}, {"gpg", Method::gpg}, {"grpo", Method::grpo}};
  const auto it = names.find(s);
  if (it == names.end()) throw std::invalid_argument("unknown method '" + s + "'");
  return it->second;
}

RunConfig parse_config(std::string_view text) {
  Draft draft;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view view = raw;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    const std::string line = trim(view);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, "", "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(line_no, "", "missing key before '='");
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(line_no, key, "unknown key '" + key + "'");
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError(line_no, key,
                        "duplicate key '" + key + "' (first set on line " + std::to_string(prev->second) + ")");
    }
    seen[key] = line_no;
    it->second(draft, Field{key, value, line_no});
  }

  RunConfig& cfg = draft.cfg;
  const auto line_of = [&](const std::string& key) {
    const auto it = seen.find(key);
    return it == seen.end() ? 0 : it->second;
  };
  const auto check = [&](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(line_of(key), key, e.what());
    }
  };
  check("task.max_rationale_len", [&] { cfg.task.validate(); });
  check("itro.n", [&] { cfg.itro.validate(); });
  check("baseline.clip_eps", [&] { cfg.baseline.validate(); });
  cfg.itro.max_rationale_len = cfg.task.max_rationale_len;
  if (cfg.method == Method::latro && cfg.itro.G < 2) {
    throw ConfigError(line_of("rollout.G"), "rollout.G", "rollout.G must be ≥ 2 for method latro");
  }
  if (cfg.method == Method::sft && std::max(cfg.task.chain_length, 2) > cfg.task.max_rationale_len) {
    throw ConfigError(line_of("method"), "method", "sft needs golden rationales that fit in task.max_rationale_len");
  }
  switch (draft.teacher) {
    case TeacherChoice::automatic:
      cfg.itro.teacher_update =
          cfg.arch == Arch::tabular ? itro::TeacherUpdate::filtered_sft : itro::TeacherUpdate::off;
      break;
    case TeacherChoice::filtered_sft: cfg.itro.teacher_update = itro::TeacherUpdate::filtered_sft; break;
    case TeacherChoice::off: cfg.itro.teacher_update = itro::TeacherUpdate::off; break;
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const RunConfig& c) {
  std::ostringstream o;
  const auto kv = [&](const char* k, const std::string& v) { o << k << " = " << v << '\n'; };
  kv("format_version", std::to_string(kConfigFormatVersion));
  kv("method", to_string(c.method));
  kv("seed", std::to_string(c.seed));
  kv("steps", std::to_string(c.steps));
  kv("batch_size", std::to_string(c.batch_size));
  kv("eval_every", std::to_string(c.eval_every));
  kv("learning_rate", fmt_double(c.itro.learning_rate));
  kv("output_dir", c.output_dir);
  kv("workers", std::to_string(c.workers));
  kv("record_wall_time", c.record_wall_time ? "true" : "false");
  kv("task.family", to_string(c.task.family));
  kv("task.base", std::to_string(c.task.base));
  kv("task.chain_length", std::to_string(c.task.chain_length));
  kv("task.max_rationale_len", std::to_string(c.task.max_rationale_len));
  kv("policy.arch", to_string(c.arch));
  kv("policy.init", c.init.kind == InitKind::uniform ? "uniform" : "noise");
  kv("policy.init_sigma", fmt_double(c.init.sigma));
  kv("policy.context_window", std::to_string(c.context_window));
  kv("rollout.G", std::to_string(c.itro.G));
  kv("rollout.temperature", fmt_double(c.itro.temperature));
  kv("itro.n", std::to_string(c.itro.n));
  kv("itro.clip_max", fmt_double(c.itro.w_max));
  kv("itro.stop_grad_w", c.itro.stop_grad_through_w ? "true" : "false");
  kv("itro.pooling", c.itro.pooling == itro::Pooling::per_rationale ? "per_rationale" : "pooled");
  kv("itro.teacher_update", c.itro.teacher_update == itro::TeacherUpdate::filtered_sft ? "filtered_sft" : "off");
  kv("baseline.clip_eps", fmt_double(c.baseline.clip_eps));
  kv("baseline.kl_beta", fmt_double(c.baseline.kl_beta));
  kv("baseline.latro_kl_coef", fmt_double(c.baseline.latro_kl_coef));
  kv("baseline.latro_answer_grad", c.baseline.latro_answer_grad ? "true" : "false");
  kv("baseline.f_norm", c.baseline.f_norm == baselines::NormMode::std_dev ? "std" : "fixed");
  kv("baseline.f_norm_constant", fmt_double(c.baseline.f_norm_constant));
  kv("baseline.advantage_epsilon", fmt_double(c.baseline.advantage_epsilon));
  kv("baseline.reference", c.reference_checkpoint.empty() ? "init" : c.reference_checkpoint);
  kv("eval.decode", c.eval.decode.mode == metrics::DecodeMode::greedy ? "greedy" : "sample");
  kv("eval.temperature", fmt_double(c.eval.decode.temperature));
  kv("eval.k", std::to_string(c.eval.decode.k));
  kv("eval.instances", std::to_string(c.eval.instances));
  kv("oracle.pairs", std::to_string(c.oracle.pairs));
  kv("oracle.fd_h", fmt_double(c.oracle.fd_h));
  kv("oracle.init_sigma", fmt_double(c.oracle.init_sigma));
  return o.str();
}

}  // namespace itrolab
