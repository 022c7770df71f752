// Generates a synthetic demo corpus: phantom DICOM sessions, the authored
// ground-truth masks, and a ready-to-run config wired to the mock adapters.
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "gliopipe/nifti.hpp"
#include "gliopipe/util.hpp"
#include "support/phantom.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"write a synthetic demo corpus (DICOM phantom sessions + config)"};
    std::string out      = "phantom_demo";
    int n_sessions       = 2;
    std::vector<double> offset{2, -3, 1};
    app.add_option("--out", out, "output directory");
    app.add_option("--sessions", n_sessions, "number of phantom sessions")
        ->check(CLI::PositiveNumber);
    app.add_option("--offset", offset, "mock atlas translation in mm (3 values)")
        ->expected(3);
    CLI11_PARSE(app, argc, argv);

    const fs::path root = fs::absolute(out);
    const fs::path input_root = root / "dicom";
    const fs::path truth_dir = root / "truth";
    fs::create_directories(input_root);
    fs::create_directories(truth_dir);

    for (int i = 1; i <= n_sessions; ++i) {
        const std::string id = "phantom" + std::to_string(i);
        const auto phantom = gliopipe::testing::write_phantom_session(input_root, id);
        gliopipe::nifti::write(truth_dir / (id + ".nii"), phantom.truth_mask);
        std::cout << "wrote session " << id << "\n";
    }

    const auto cfg = gliopipe::testing::phantom_config(input_root, root / "out",
                                                       {offset[0], offset[1], offset[2]});
    gliopipe::write_text_file(root / "config.json", cfg.dump(2) + "\n");
    std::cout << "config: " << (root / "config.json") << "\n"
              << "run:    gliopipe run --config " << (root / "config.json") << "\n";
    return 0;
}
