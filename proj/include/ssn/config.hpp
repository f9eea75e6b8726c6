#pragma once

// INI-style run configuration:
//
//   [section]
//   key = value        # comment
//
// Lists are comma separated. Every key is checked against the known keys of
// its section, and relative paths are resolved against the config file's
// directory.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ssn/basis.hpp"
#include "ssn/errors.hpp"
#include "ssn/experiments.hpp"
#include "ssn/mlp.hpp"
#include "ssn/ssn.hpp"

namespace ssn {

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

class RunConfig {
 public:
  static RunConfig parse(std::istream& in, const std::filesystem::path& base_dir = ".") {
    RunConfig c;
    c.base_ = base_dir;
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find_first_of("#;"); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        if (!known_sections().count(section))
          throw ConfigError("line " + std::to_string(line_no) + ": unknown section '" + section + "'");
        c.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
      ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
      if (e.key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
      if (section != "terms") {
        const auto& allowed = known_sections().at(section);
        if (!allowed.count(e.key)) throw ConfigError("unknown key '" + section + "." + e.key + "'");
      }
      auto& entries = c.sections_[section];
      if (std::any_of(entries.begin(), entries.end(), [&](const auto& x) { return x.key == e.key; }))
        throw ConfigError("duplicate key '" + section + "." + e.key + "'");
      entries.push_back(std::move(e));
    }
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    return parse(in, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
  }

  bool has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }

  const std::vector<ConfigEntry>& entries(const std::string& section) const {
    static const std::vector<ConfigEntry> none;
    const auto it = sections_.find(section);
    return it == sections_.end() ? none : it->second;
  }

  std::string str(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    if (!e) throw ConfigError("missing key '" + section + "." + key + "'");
    return e->value;
  }
  std::string str(const std::string& section, const std::string& key, const std::string& fallback) const {
    const auto* e = find(section, key);
    return e ? e->value : fallback;
  }

  double real(const std::string& section, const std::string& key, double fallback) const {
    const auto* e = find(section, key);
    return e ? to_real(section + "." + key, e->value) : fallback;
  }
  long long integer(const std::string& section, const std::string& key, long long fallback) const {
    const auto* e = find(section, key);
    return e ? to_integer(section + "." + key, e->value) : fallback;
  }
  bool flag(const std::string& section, const std::string& key, bool fallback) const {
    const auto* e = find(section, key);
    if (!e) return fallback;
    const auto& v = e->value;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("'" + section + "." + key + "' must be true or false, got '" + v + "'");
  }
  std::vector<std::string> list(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    return e ? split_list(e->value) : std::vector<std::string>{};
  }
  std::vector<Index> index_list(const std::string& section, const std::string& key,
                                std::vector<Index> fallback) const {
    if (!has(section, key)) return fallback;
    std::vector<Index> out;
    for (const auto& s : list(section, key)) out.push_back(static_cast<Index>(to_integer(section + "." + key, s)));
    if (out.empty()) throw ConfigError("'" + section + "." + key + "' is an empty list");
    return out;
  }

  /// Path value resolved against the config file's directory.
  std::filesystem::path path(const std::string& section, const std::string& key) const {
    std::filesystem::path p = str(section, key);
    return p.is_absolute() ? p : base_ / p;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    auto& entries = sections_[section];
    for (auto& e : entries)
      if (e.key == key) {
        e.value = value;
        return;
      }
    entries.push_back({key, value, 0});
  }

  static long long to_integer(const std::string& what, const std::string& s) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError("'" + what + "' must be an integer, got '" + s + "'");
    return v;
  }
  static double to_real(const std::string& what, const std::string& s) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
      throw ConfigError("'" + what + "' must be a number, got '" + s + "'");
    return v;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

 private:
  static const std::map<std::string, std::set<std::string>>& known_sections() {
    static const std::map<std::string, std::set<std::string>> k{
        {"data", {"path", "target", "z_columns"}},
        {"terms", {}},
        {"network", {"hidden", "activation", "dropout", "bias", "mode"}},
        {"train", {"batch_size", "max_epochs", "validation_fraction", "patience", "learning_rate", "seed"}},
        {"pho", {"mode", "lambda", "minibatch_threshold", "batch_size"}},
        {"experiment",
         {"n", "p", "q", "overlap", "noise_sd", "replicates", "seed", "threads", "num_basis", "batch_sizes", "csv",
          "target", "methods", "splits", "test_fraction"}},
    };
    return k;
  }

  const ConfigEntry* find(const std::string& section, const std::string& key) const {
    const auto it = sections_.find(section);
    if (it == sections_.end()) return nullptr;
    for (const auto& e : it->second)
      if (e.key == key) return &e;
    return nullptr;
  }

  std::filesystem::path base_ = ".";
  std::map<std::string, std::vector<ConfigEntry>> sections_;
};

// ---------------------------------------------------------------------------
// Typed views

/// One term per [terms] entry, in file order:
///   name = intercept | linear(col) | bspline(col[, num_basis[, degree[, order]]])
///        | factor(col[, level|level|...])
inline std::vector<TermSpec> parse_terms(const RunConfig& cfg) {
  std::vector<TermSpec> out;
  for (const auto& e : cfg.entries("terms")) {
    const std::string where = "terms." + e.key;
    const auto& v = e.value;
    if (v == "intercept") {
      out.push_back(TermSpec::intercept(e.key));
      continue;
    }
    const auto open = v.find('(');
    if (open == std::string::npos || v.back() != ')') throw ConfigError("'" + where + "': cannot parse '" + v + "'");
    const std::string kind = RunConfig::trim(v.substr(0, open));
    const auto args = RunConfig::split_list(v.substr(open + 1, v.size() - open - 2));
    if (args.empty()) throw ConfigError("'" + where + "': missing column");
    const auto arg_int = [&](std::size_t i, int fallback) {
      return args.size() > i ? static_cast<int>(RunConfig::to_integer(where, args[i])) : fallback;
    };
    if (kind == "linear" && args.size() == 1) {
      out.push_back(TermSpec::linear(args[0], e.key));
    } else if (kind == "bspline" && args.size() <= 4) {
      out.push_back(TermSpec::bspline(args[0], arg_int(1, 9), arg_int(2, 3), arg_int(3, 2), e.key));
    } else if (kind == "factor" && args.size() <= 2) {
      out.push_back(TermSpec::factor(args[0], args.size() > 1 ? RunConfig::split_list(args[1], '|')
                                                               : std::vector<std::string>{},
                                     e.key));
    } else {
      throw ConfigError("'" + where + "': cannot parse '" + v + "'");
    }
    try {
      out.back().validate();
    } catch (const SpecError& err) {
      throw ConfigError("'" + where + "': " + err.what());
    }
  }
  if (out.empty()) throw ConfigError("section [terms] is empty");
  return out;
}

/// [network] and [train] over the given defaults.
inline NetSettings parse_net(const RunConfig& cfg, NetSettings net) {
  net.hidden = cfg.index_list("network", "hidden", net.hidden);
  if (cfg.has("network", "activation")) {
    try {
      net.activation = parse_activation(cfg.str("network", "activation"));
    } catch (const SpecError&) {
      throw ConfigError("'network.activation' must be relu or tanh");
    }
  }
  net.dropout = cfg.real("network", "dropout", net.dropout);
  net.bias = cfg.flag("network", "bias", net.bias);
  auto& t = net.train;
  t.batch_size = static_cast<Index>(cfg.integer("train", "batch_size", t.batch_size));
  t.max_epochs = static_cast<int>(cfg.integer("train", "max_epochs", t.max_epochs));
  t.validation_fraction = cfg.real("train", "validation_fraction", t.validation_fraction);
  t.patience = static_cast<int>(cfg.integer("train", "patience", t.patience));
  t.learning_rate = cfg.real("train", "learning_rate", t.learning_rate);
  t.seed = static_cast<std::uint64_t>(cfg.integer("train", "seed", static_cast<long long>(t.seed)));
  try {
    t.validate();
    latent_config(net, 1);
  } catch (const SpecError& e) {
    throw ConfigError(std::string("[network]/[train]: ") + e.what());
  }
  return net;
}

inline TrainingMode parse_training_mode(const RunConfig& cfg) {
  const auto m = cfg.str("network", "mode", "unconstrained");
  if (m == "unconstrained" || m == "Unconstrained") return TrainingMode::Unconstrained;
  if (m == "ono" || m == "ONO") return TrainingMode::ONO;
  throw ConfigError("'network.mode' must be unconstrained or ono, got '" + m + "'");
}

}  // namespace ssn
