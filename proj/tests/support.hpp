#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "lorafuse/adapters.hpp"
#include "lorafuse/error.hpp"
#include "lorafuse/io.hpp"
#include "lorafuse/rng.hpp"

// CHECK that `expr` throws lorafuse::Error of the given kind.
#define CHECK_KIND(expr, k)                                                     \
    do {                                                                        \
        bool caught_ = false;                                                   \
        try {                                                                   \
            (void)(expr);                                                       \
        } catch (const lorafuse::Error& e_) {                                   \
            caught_ = true;                                                     \
            CHECK_MESSAGE(e_.kind() == (k), "got " << lorafuse::to_string(e_.kind()) << ": " << e_.what()); \
        }                                                                       \
        CHECK_MESSAGE(caught_, "expected " << lorafuse::to_string(k));          \
    } while (0)

namespace testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("lorafuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(++counter));
        std::filesystem::remove_all(path_);
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

template <typename S>
lorafuse::RowMatrix<S> random_matrix(lorafuse::SplitMix64& rng, Eigen::Index rows, Eigen::Index cols) {
    lorafuse::RowMatrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal());
    return m;
}

template <typename S = float>
lorafuse::adapters::LoraAdapter<S> random_adapter(lorafuse::SplitMix64& rng, const std::string& name,
                                                  const std::string& task, Eigen::Index d_in, Eigen::Index d_out,
                                                  Eigen::Index r, S alpha,
                                                  std::initializer_list<std::string> modules = {"q_proj"}) {
    lorafuse::adapters::LoraAdapter<S> a{name, task, alpha, {}};
    for (const auto& m : modules) {
        a.pairs.emplace(m, lorafuse::adapters::LoraMatrixPair<S>{m, random_matrix<S>(rng, r, d_in),
                                                                 random_matrix<S>(rng, d_out, r)});
    }
    return a;
}

inline std::string slurp(const std::filesystem::path& p) {
    const auto bytes = lorafuse::io::read_file(p);
    return {bytes.begin(), bytes.end()};
}

}  // namespace testing
