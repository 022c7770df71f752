#include "gliopipe/adapters.hpp"

#include <chrono>
#include <csignal>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include "gliopipe/util.hpp"

namespace gliopipe {

nlohmann::json AdapterInvocation::to_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["stage"] = stage;
    j["inputs"] = nlohmann::json::array();
    for (const auto& p : inputs) j["inputs"].push_back(p.string());
    j["params"] = params;
    j["outputs"] = nlohmann::json::array();
    for (const auto& p : outputs) j["outputs"].push_back(p.string());
    return j;
}

namespace {

nlohmann::json merged_params(const nlohmann::json& statics, const nlohmann::json& dynamic) {
    nlohmann::json out = statics.is_object() ? statics : nlohmann::json::object();
    if (dynamic.is_object())
        for (auto it = dynamic.begin(); it != dynamic.end(); ++it) out[it.key()] = it.value();
    return out;
}

void check_outputs(const AdapterInvocation& inv, const std::string& adapter_name) {
    for (const auto& out : inv.outputs)
        if (!std::filesystem::exists(out))
            throw AdapterFailure("adapter " + adapter_name + " did not produce " + out.string());
}

}  // namespace

int run_subprocess(const std::vector<std::string>& argv, double timeout_sec) {
    std::vector<char*> cargv;
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);

    const pid_t pid = fork();
    if (pid < 0) throw AdapterFailure("fork failed");
    if (pid == 0) {
        execvp(cargv[0], cargv.data());
        _exit(127);
    }

    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_sec);
    for (;;) {
        int status = 0;
        const pid_t done = waitpid(pid, &status, WNOHANG);
        if (done == pid) {
            if (WIFEXITED(status)) return WEXITSTATUS(status);
            if (WIFSIGNALED(status))
                throw AdapterFailure("adapter terminated by signal " +
                                     std::to_string(WTERMSIG(status)));
            return -1;
        }
        if (std::chrono::steady_clock::now() > deadline) {
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            throw AdapterFailure("adapter timed out after " + std::to_string(timeout_sec) +
                                 " s");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
}

ProcessAdapter::ProcessAdapter(std::string name, std::vector<std::string> command,
                               nlohmann::json params, double timeout_sec)
    : name_(std::move(name)),
      command_(std::move(command)),
      static_params_(std::move(params)),
      timeout_sec_(timeout_sec) {}

void ProcessAdapter::run(const AdapterInvocation& inv) const {
    AdapterInvocation full = inv;
    full.params = merged_params(static_params_, inv.params);
    if (full.outputs.empty()) throw AdapterFailure("invocation declares no outputs");
    const auto descriptor = full.outputs[0].parent_path() / (full.stage + ".invocation.json");
    write_text_file(descriptor, full.to_json().dump(2) + "\n");

    std::vector<std::string> argv = command_;
    argv.push_back(descriptor.string());
    const int status = run_subprocess(argv, timeout_sec_);
    if (status != 0)
        throw AdapterFailure("adapter " + name_ + " exited with status " +
                             std::to_string(status));
    check_outputs(full, name_);
}

void FunctionAdapter::run(const AdapterInvocation& inv) const {
    AdapterInvocation full = inv;
    full.params = merged_params(static_params_, inv.params);
    try {
        fn_(full);
    } catch (const AdapterFailure&) {
        throw;
    } catch (const std::exception& e) {
        throw AdapterFailure("adapter " + name_ + " failed: " + e.what());
    }
    check_outputs(full, name_);
}

const StageAdapter* AdapterRegistry::find(AdapterKind kind) const {
    auto it = adapters.find(kind);
    return it == adapters.end() ? nullptr : it->second.get();
}

const StageAdapter& AdapterRegistry::require(AdapterKind kind) const {
    const auto* a = find(kind);
    if (!a)
        throw AdapterFailure(std::string("no adapter configured for kind ") + to_string(kind));
    return *a;
}

}  // namespace gliopipe
