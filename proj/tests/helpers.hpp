#pragma once

#include <filesystem>
#include <random>
#include <string>

namespace testutil {

inline std::string fixture_path(const std::string& name) {
    return std::string(QF_FIXTURE_DIR) + "/" + name;
}

inline std::string data_path(const std::string& name) {
    return std::string(QF_DATA_DIR) + "/" + name;
}

// Fresh empty directory under the system temp root; callers may leave it
// behind, the OS owns cleanup.
inline std::string temp_dir(const std::string& tag) {
    static std::mt19937_64 gen(std::random_device{}());
    const auto root = std::filesystem::temp_directory_path() /
                      ("qfactor_" + tag + "_" + std::to_string(gen()));
    std::filesystem::create_directories(root);
    return root.string();
}

}  // namespace testutil
