#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/config.hpp"

namespace gliopipe {

// Invocation descriptor exchanged with external adapters; serialized as JSON
// next to the expected outputs. Exit status 0 means success.
struct AdapterInvocation {
    AdapterKind kind = AdapterKind::Registration;
    std::string stage;  // stage name, used for the descriptor filename
    std::vector<std::filesystem::path> inputs;
    nlohmann::json params;
    std::vector<std::filesystem::path> outputs;

    nlohmann::json to_json() const;
};

class StageAdapter {
  public:
    virtual ~StageAdapter() = default;
    virtual const std::string& name() const = 0;
    // Throws AdapterFailure on nonzero exit, timeout, or missing outputs.
    virtual void run(const AdapterInvocation& inv) const = 0;
};

// External process adapter: argv = command..., descriptor-path.
class ProcessAdapter : public StageAdapter {
  public:
    ProcessAdapter(std::string name, std::vector<std::string> command, nlohmann::json params,
                   double timeout_sec);
    const std::string& name() const override { return name_; }
    void run(const AdapterInvocation& inv) const override;

  private:
    std::string name_;
    std::vector<std::string> command_;
    nlohmann::json static_params_;
    double timeout_sec_;
};

// In-process adapter used for builtins and test mocks.
class FunctionAdapter : public StageAdapter {
  public:
    using Fn = std::function<void(const AdapterInvocation&)>;
    FunctionAdapter(std::string name, Fn fn, nlohmann::json params = {})
        : name_(std::move(name)), fn_(std::move(fn)), static_params_(std::move(params)) {}
    const std::string& name() const override { return name_; }
    void run(const AdapterInvocation& inv) const override;

  private:
    std::string name_;
    Fn fn_;
    nlohmann::json static_params_;
};

struct AdapterRegistry {
    std::map<AdapterKind, std::shared_ptr<StageAdapter>> adapters;

    const StageAdapter* find(AdapterKind kind) const;
    // Throws AdapterFailure when no adapter of this kind is configured.
    const StageAdapter& require(AdapterKind kind) const;
};

// Runs argv with a wall-clock deadline; returns the exit status. Throws
// AdapterFailure on timeout or spawn failure.
int run_subprocess(const std::vector<std::string>& argv, double timeout_sec);

}  // namespace gliopipe
