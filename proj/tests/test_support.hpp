#pragma once

#include "surfprobe/embedding_store.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace surfprobe::testing {

// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("surfprobe-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Table over the given raw tokens with small distinct vectors.
inline EmbeddingTable table_of(const std::vector<std::string>& raws, std::size_t dim = 3, unsigned seed = 1) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> normal;
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < raws.size(); ++i) {
        std::vector<double> row(dim);
        for (auto& v : row) v = normal(gen);
        rows.push_back(std::move(row));
    }
    return make_table(raws, rows, LoadOptions{});
}

}  // namespace surfprobe::testing
