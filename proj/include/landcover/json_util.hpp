#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "landcover/errors.hpp"

namespace landcover {

using Json = nlohmann::json;

// Reads fields from a JSON object and fails on keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const Json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError("'" + where() + "' must be an object");
  }

  template <typename T>
  bool read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
    }
    return true;
  }

  // Nested object, or nullptr if absent.
  const Json* child(const std::string& key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  std::string qualified(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) unknown.push_back(qualified(it.key()));
    }
    if (unknown.empty()) return;
    std::string msg = "unknown config key(s):";
    for (const auto& k : unknown) msg += " '" + k + "'";
    throw ConfigError(msg);
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const Json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace landcover
