#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "catcache/embedding.hpp"
#include "catcache/hnsw_index.hpp"
#include "catcache/workload_sim.hpp"

namespace testing_support {

using catcache::Embedding;
using catcache::EntryId;
using catcache::SearchHit;

inline Embedding random_unit(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<float> g;
    std::vector<float> v(d);
    for (auto& x : v) x = g(rng);
    return Embedding(std::move(v));
}

inline Embedding basis(std::size_t d, std::size_t i) {
    std::vector<float> v(d, 0.0f);
    v[i] = 1.0f;
    return Embedding(std::move(v));
}

/// Clustered unit vectors drawn from the workload generator: several
/// categories, Zipf repetition, small paraphrase noise.
inline std::vector<Embedding> clustered_vectors(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::vector<catcache::sim::CategorySpec> specs;
    for (int c = 0; c < 8; ++c) {
        catcache::sim::CategorySpec s;
        s.category_id = "c" + std::to_string(c);
        s.traffic_share = 1.0 / 8.0;
        s.pool_size = 2000;
        s.cluster_density = c % 2 ? 0.12 : 0.25;
        s.paraphrase_noise = 0.05;
        specs.push_back(s);
    }
    specs.back().traffic_share = 1.0 - 7.0 / 8.0;
    catcache::sim::GeneratorOptions opt;
    opt.dimension = d;
    opt.intrinsic_dimension = 16;
    opt.density_sample = 50;
    const auto w = catcache::sim::generate_workload(specs, n, seed, opt);
    std::vector<Embedding> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(w.embedding(i));
    return out;
}

/// Exhaustive k-NN over (id, vector) pairs: similarity descending, ties by id.
inline std::vector<SearchHit> brute_knn(const std::vector<std::pair<EntryId, const Embedding*>>& items,
                                        const Embedding& q, std::size_t k) {
    std::vector<SearchHit> all;
    all.reserve(items.size());
    for (const auto& [id, e] : items) all.push_back({id, catcache::cosine_similarity(q, *e)});
    std::sort(all.begin(), all.end(), [](const SearchHit& a, const SearchHit& b) {
        return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

inline double best_similarity(const std::vector<std::pair<EntryId, const Embedding*>>& items, const Embedding& q) {
    double best = -2.0;
    for (const auto& [id, e] : items) best = std::max(best, catcache::cosine_similarity(q, *e));
    return best;
}

inline double recall(const std::vector<SearchHit>& got, const std::vector<SearchHit>& truth) {
    std::size_t found = 0;
    for (const auto& t : truth)
        for (const auto& g : got)
            if (g.id == t.id) {
                ++found;
                break;
            }
    return truth.empty() ? 1.0 : static_cast<double>(found) / static_cast<double>(truth.size());
}

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("catcache-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path file(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testing_support
