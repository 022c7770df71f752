#pragma once

#include <iostream>
#include <mutex>

#include <json.hpp>

namespace gliopipe {

// Structured logging: one JSON object per line, serialized across threads.
class Logger {
  public:
    explicit Logger(std::ostream& out = std::cerr) : out_(&out) {}

    void event(const std::string& name, nlohmann::json fields = {}) {
        fields["event"] = name;
        std::lock_guard<std::mutex> lock(mu_);
        (*out_) << fields.dump() << "\n";
    }

  private:
    std::ostream* out_;
    std::mutex mu_;
};

}  // namespace gliopipe
