#include "itrolab/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace itrolab {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

Policy make_policy(Arch arch, const TaskFamilySpec& spec, int window) {
  return arch == Arch::tabular ? Policy::tabular(spec) : Policy::linear(spec, window);
}

}  // namespace

std::size_t PolicyShape::num_params() const { return make_policy(arch, task, context_window).num_params(); }

std::string checkpoint_to_text(const Policy& policy) {
  std::string out;
  out.reserve(policy.num_params() * 25 + 256);
  const auto kv = [&](const char* k, const std::string& v) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  };
  kv("format_version", std::to_string(kCheckpointFormatVersion));
  kv("arch", to_string(policy.arch()));
  kv("vocab_size", std::to_string(policy.vocab_size()));
  kv("context_window", std::to_string(policy.context_window()));
  kv("task.family", to_string(policy.task().family));
  kv("task.base", std::to_string(policy.task().base));
  kv("task.chain_length", std::to_string(policy.task().chain_length));
  kv("task.max_rationale_len", std::to_string(policy.task().max_rationale_len));
  kv("num_params", std::to_string(policy.num_params()));
  out += "params =";
  char buf[40];
  for (double v : policy.params()) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    out += buf;
  }
  out += '\n';
  return out;
}

Policy checkpoint_from_text(std::string_view text, const std::optional<PolicyShape>& expected) {
  std::map<std::string, std::string> fields;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed checkpoint line: '" + t.substr(0, 40) + "'");
    fields[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
  }
  const auto field = [&](const std::string& key) -> const std::string& {
    const auto it = fields.find(key);
    if (it == fields.end()) throw CheckpointError("checkpoint missing field '" + key + "'");
    return it->second;
  };
  const auto integer = [&](const std::string& key) {
    const std::string& s = field(key);
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw CheckpointError("checkpoint field '" + key + "' is not an integer");
    }
    return v;
  };

  const long long version = integer("format_version");
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError("checkpoint format_version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  }
  Arch arch;
  TaskFamilySpec spec;
  try {
    arch = arch_from_string(field("arch"));
    spec.family = task_family_from_string(field("task.family"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  spec.base = static_cast<int>(integer("task.base"));
  spec.chain_length = static_cast<int>(integer("task.chain_length"));
  spec.max_rationale_len = static_cast<int>(integer("task.max_rationale_len"));
  const int window = static_cast<int>(integer("context_window"));
  const long long vocab_size = integer("vocab_size");
  const long long declared = integer("num_params");
  const std::string& params_text = field("params");

  Policy policy = [&] {
    try {
      return make_policy(arch, spec, window);
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
  }();
  if (vocab_size != policy.vocab_size()) throw CheckpointError("dimension mismatch: vocab_size does not match task.base");
  if (declared != static_cast<long long>(policy.num_params())) {
    throw CheckpointError("dimension mismatch: num_params does not match the declared arch");
  }

  std::vector<double> params;
  params.reserve(policy.num_params());
  const char* p = params_text.data();
  const char* end = p + params_text.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    double v = 0.0;
    const auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || !std::isfinite(v)) throw CheckpointError("checkpoint field 'params' holds a malformed value");
    params.push_back(v);
    p = next;
  }
  if (params.size() != policy.num_params()) {
    throw CheckpointError("checkpoint field 'params' is truncated: expected " + std::to_string(policy.num_params()) +
                          " values, found " + std::to_string(params.size()));
  }
  policy.set_params(std::move(params));

  if (expected) {
    if (expected->arch != policy.arch() || expected->num_params() != policy.num_params() ||
        expected->task.base != spec.base || expected->task.chain_length != spec.chain_length ||
        expected->task.max_rationale_len != spec.max_rationale_len ||
        (arch == Arch::linear && expected->context_window != window)) {
      throw CheckpointError("dimension mismatch: checkpoint holds a " + to_string(policy.arch()) + " policy with " +
                            std::to_string(policy.num_params()) + " parameters, run expects " +
                            to_string(expected->arch) + " with " + std::to_string(expected->num_params()));
    }
  }
  return policy;
}

void save_checkpoint(const Policy& policy, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    out << checkpoint_to_text(policy);
    if (!out) throw CheckpointError("failed writing checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Policy load_checkpoint(const std::filesystem::path& path, const std::optional<PolicyShape>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_text(ss.str(), expected);
}

}  // namespace itrolab
