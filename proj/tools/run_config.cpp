#include "run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "drbd/checkpoint.hpp"
#include "drbd/tensor.hpp"

namespace drbd::cli {

namespace {

bool skipped(const CLI::Option* opt) {
  const auto& name = opt->get_single_name();
  return name.empty() || name == "help" || name == "config";
}

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw DomainError("config: unsupported value " + v.dump());
}

// Numbers and booleans keep their JSON type; everything else is a string.
nlohmann::json typed(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  if (!s.empty() && s.find_first_not_of("+-.0123456789eE") == std::string::npos) {
    try {
      auto j = nlohmann::json::parse(s);
      if (j.is_number()) return j;
    } catch (const nlohmann::json::exception&) {
    }
  }
  return s;
}

}  // namespace

void apply_json_config(CLI::App& cmd, const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("config: cannot open " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("config: " + file.string() + ": " + e.what());
  }
  if (!j.is_object()) throw DomainError("config: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = cmd.get_option_no_throw("--" + name);
    if (!opt || skipped(opt)) throw DomainError("config: unknown key '" + key + "'");
    if (opt->count() > 0) continue;  // the command line wins
    if (value.is_array())
      for (const auto& v : value) opt->add_result(scalar_text(v));
    else
      opt->add_result(scalar_text(value));
    opt->run_callback();
  }
}

std::string effective_config_json(const CLI::App& cmd) {
  nlohmann::json j = nlohmann::json::object();
  for (const CLI::Option* opt : cmd.get_options()) {
    if (skipped(opt)) continue;
    const auto& results = opt->results();
    if (opt->count() > 1) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : results) arr.push_back(typed(r));
      j[opt->get_single_name()] = arr;
    } else if (opt->count() == 1) {
      j[opt->get_single_name()] = typed(results.front());
    } else {
      j[opt->get_single_name()] = typed(opt->get_default_str());
    }
  }
  return j.dump(2) + "\n";
}

void echo_config(const CLI::App& cmd, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << effective_config_json(cmd);
}

}  // namespace drbd::cli
