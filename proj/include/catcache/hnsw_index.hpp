#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <queue>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "catcache/embedding.hpp"
#include "catcache/errors.hpp"
#include "catcache/rw_mutex.hpp"

namespace catcache {

using EntryId = std::uint64_t;

struct IndexParams {
    std::size_t dimension = 384;
    std::size_t max_neighbors = 16;      ///< M; layer 0 keeps up to 2*M links
    std::size_t ef_construction = 200;
    std::size_t ef_search = 64;
    double level_scale = 0.0;            ///< 0 selects 1/ln(M)
    std::uint64_t seed = 42;
    double compaction_ratio = 0.2;       ///< rebuild once tombstones exceed this share of nodes

    void validate() const {
        if (dimension < 2) throw UsageError("index dimension must be >= 2");
        if (max_neighbors < 2) throw UsageError("max_neighbors (M) must be >= 2");
        if (ef_construction < 1 || ef_search < 1) throw UsageError("candidate-list sizes must be >= 1");
        if (level_scale < 0.0) throw UsageError("level_scale must be >= 0");
        if (!(compaction_ratio > 0.0 && compaction_ratio < 1.0))
            throw UsageError("compaction_ratio must be in (0,1)");
    }

    double effective_level_scale() const {
        return level_scale > 0.0 ? level_scale : 1.0 / std::log(static_cast<double>(max_neighbors));
    }
};

struct SearchHit {
    EntryId id = 0;
    double similarity = 0.0;

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Hierarchical navigable small-world graph over unit vectors, scored by
/// cosine similarity.
///
/// threshold_search() stops at the first live node (on any layer) whose
/// similarity reaches the caller's threshold; knn_search() is the usual
/// beam search. Removal tombstones a node so it keeps routing traffic; the
/// graph is rebuilt from the live set once tombstones pass
/// IndexParams::compaction_ratio.
///
/// Searches take a shared lock and mutations an exclusive one, so a reader
/// never sees a half-linked node.
class HnswIndex {
public:
    explicit HnswIndex(IndexParams params = {}) : params_(params), rng_(params.seed) {
        params_.validate();
        level_scale_ = params_.effective_level_scale();
    }

    HnswIndex(const HnswIndex&) = delete;
    HnswIndex& operator=(const HnswIndex&) = delete;

    const IndexParams& params() const noexcept { return params_; }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return slot_of_.size();
    }

    std::size_t tombstones() const {
        std::shared_lock lock(mu_);
        return tombstones_;
    }

    bool contains(EntryId id) const {
        std::shared_lock lock(mu_);
        return slot_of_.contains(id);
    }

    void insert(const Embedding& embedding, EntryId id) {
        check_dimension(embedding);
        std::unique_lock lock(mu_);
        if (slot_of_.contains(id)) throw UsageError("duplicate entry id " + std::to_string(id));
        insert_locked(embedding.values(), id);
    }

    void remove(EntryId id) {
        std::unique_lock lock(mu_);
        auto it = slot_of_.find(id);
        if (it == slot_of_.end()) throw UsageError("unknown entry id " + std::to_string(id));
        nodes_[it->second].deleted = true;
        slot_of_.erase(it);
        ++tombstones_;
        if (static_cast<double>(tombstones_) > params_.compaction_ratio * static_cast<double>(nodes_.size()))
            compact_locked();
    }

    /// First live node met during traversal with similarity >= tau, if any.
    std::optional<SearchHit> threshold_search(const Embedding& query, double tau) const {
        check_dimension(query);
        if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("threshold must lie in (0, 1]");
        std::shared_lock lock(mu_);
        if (nodes_.empty() || slot_of_.empty()) return std::nullopt;

        const auto q = query.values();
        std::optional<SearchHit> found;
        auto probe = [&](std::uint32_t slot, double sim) {
            if (sim >= tau && !nodes_[slot].deleted) {
                found = SearchHit{nodes_[slot].id, sim};
                return true;
            }
            return false;
        };

        std::uint32_t cur = entry_point_;
        double cur_sim = similarity(q, cur);
        if (probe(cur, cur_sim)) return found;
        for (int level = max_level_; level > 0; --level) {
            if (greedy_step(q, cur, cur_sim, level, probe)) return found;
        }
        search_layer(q, cur, cur_sim, params_.ef_search, 0, probe);
        return found;
    }

    /// Up to k live entries, similarity descending, ties by id ascending.
    std::vector<SearchHit> knn_search(const Embedding& query, std::size_t k) const {
        check_dimension(query);
        if (k == 0) throw UsageError("k must be >= 1");
        std::shared_lock lock(mu_);
        std::vector<SearchHit> out;
        if (slot_of_.empty()) return out;

        const auto q = query.values();
        if (k >= slot_of_.size()) {
            out.reserve(slot_of_.size());
            for (std::uint32_t s = 0; s < nodes_.size(); ++s)
                if (!nodes_[s].deleted) out.push_back({nodes_[s].id, similarity(q, s)});
        } else {
            auto no_probe = [](std::uint32_t, double) { return false; };
            std::uint32_t cur = entry_point_;
            double cur_sim = similarity(q, cur);
            for (int level = max_level_; level > 0; --level) greedy_step(q, cur, cur_sim, level, no_probe);
            const std::size_t ef = std::max(params_.ef_search, k + tombstones_);
            for (const auto& [sim, slot] : search_layer(q, cur, cur_sim, ef, 0, no_probe))
                if (!nodes_[slot].deleted) out.push_back({nodes_[slot].id, sim});
        }
        std::sort(out.begin(), out.end(), [](const SearchHit& a, const SearchHit& b) {
            return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
        });
        if (out.size() > k) out.resize(k);
        return out;
    }

    /// Order-sensitive hash of the graph topology; equal for equal build histories.
    std::uint64_t fingerprint() const {
        std::shared_lock lock(mu_);
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](std::uint64_t v) {
            h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        };
        mix(entry_point_);
        mix(static_cast<std::uint64_t>(max_level_ + 1));
        for (const Node& n : nodes_) {
            mix(n.id);
            mix(n.deleted ? 1 : 0);
            for (const auto& links : n.links) {
                mix(links.size());
                for (std::uint32_t l : links) mix(l);
            }
        }
        return h;
    }

private:
    struct Node {
        EntryId id = 0;
        int level = 0;
        bool deleted = false;
        std::vector<std::vector<std::uint32_t>> links;  // links[level]
    };

    using Scored = std::pair<double, std::uint32_t>;  // (similarity, slot)

    struct Better {
        bool operator()(const Scored& a, const Scored& b) const { return a.first < b.first; }
    };
    struct Worse {
        bool operator()(const Scored& a, const Scored& b) const { return a.first > b.first; }
    };

    // Per-thread epoch-tagged visited marks; avoids clearing a bitmap per search.
    struct VisitedMarks {
        std::vector<std::uint32_t> tags;
        std::uint32_t epoch = 0;

        void reset(std::size_t n) {
            if (tags.size() < n) tags.resize(n, 0);
            if (++epoch == 0) {
                std::fill(tags.begin(), tags.end(), 0);
                epoch = 1;
            }
        }
        bool test_and_set(std::uint32_t slot) {
            if (tags[slot] == epoch) return true;
            tags[slot] = epoch;
            return false;
        }
    };

    static VisitedMarks& visited_marks() {
        thread_local VisitedMarks marks;
        return marks;
    }

    void check_dimension(const Embedding& e) const {
        if (e.dimension() != params_.dimension)
            throw UsageError("dimension mismatch: index expects " + std::to_string(params_.dimension) +
                             ", got " + std::to_string(e.dimension()));
    }

    std::span<const float> vec(std::uint32_t slot) const {
        return {vectors_.data() + static_cast<std::size_t>(slot) * params_.dimension, params_.dimension};
    }

    double similarity(std::span<const float> q, std::uint32_t slot) const { return dot(q, vec(slot)); }

    std::size_t max_links(int level) const {
        return level == 0 ? 2 * params_.max_neighbors : params_.max_neighbors;
    }

    int draw_level() {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double u = 1.0 - unit(rng_);  // (0, 1]
        return static_cast<int>(std::floor(-std::log(u) * level_scale_));
    }

    // Moves `cur` greedily toward q on one layer. Returns true when the probe
    // accepted a node.
    template <typename Probe>
    bool greedy_step(std::span<const float> q, std::uint32_t& cur, double& cur_sim, int level,
                     Probe&& probe) const {
        bool moved = true;
        while (moved) {
            moved = false;
            for (std::uint32_t nb : nodes_[cur].links[level]) {
                const double s = similarity(q, nb);
                if (probe(nb, s)) return true;
                if (s > cur_sim) {
                    cur_sim = s;
                    cur = nb;
                    moved = true;
                }
            }
        }
        return false;
    }

    // Beam search on one layer. Returns up to ef nodes, best first. Stops
    // early (returning what it has) once the probe accepts a node.
    template <typename Probe>
    std::vector<Scored> search_layer(std::span<const float> q, std::uint32_t entry, double entry_sim,
                                     std::size_t ef, int level, Probe&& probe) const {
        VisitedMarks& visited = visited_marks();
        visited.reset(nodes_.size());
        std::priority_queue<Scored, std::vector<Scored>, Better> candidates;
        std::priority_queue<Scored, std::vector<Scored>, Worse> results;

        visited.test_and_set(entry);
        candidates.emplace(entry_sim, entry);
        results.emplace(entry_sim, entry);
        if (probe(entry, entry_sim)) return drain(results);

        while (!candidates.empty()) {
            const auto [sim, slot] = candidates.top();
            if (results.size() >= ef && sim < results.top().first) break;
            candidates.pop();
            for (std::uint32_t nb : nodes_[slot].links[level]) {
                if (visited.test_and_set(nb)) continue;
                const double s = similarity(q, nb);
                if (probe(nb, s)) {
                    results.emplace(s, nb);
                    return drain(results);
                }
                if (results.size() < ef || s > results.top().first) {
                    candidates.emplace(s, nb);
                    results.emplace(s, nb);
                    if (results.size() > ef) results.pop();
                }
            }
        }
        return drain(results);
    }

    static std::vector<Scored> drain(std::priority_queue<Scored, std::vector<Scored>, Worse>& pq) {
        std::vector<Scored> out(pq.size());
        for (std::size_t i = out.size(); i-- > 0;) {
            out[i] = pq.top();
            pq.pop();
        }
        return out;
    }

    // Keeps a candidate only if it is closer to the base than to every
    // neighbour already kept. `candidates` must be sorted best first.
    std::vector<std::uint32_t> select_neighbors(const std::vector<Scored>& candidates, std::size_t m) const {
        std::vector<std::uint32_t> kept;
        kept.reserve(m);
        for (const auto& [sim, slot] : candidates) {
            if (kept.size() >= m) break;
            bool diverse = true;
            for (std::uint32_t k : kept) {
                if (dot(vec(slot), vec(k)) > sim) {
                    diverse = false;
                    break;
                }
            }
            if (diverse) kept.push_back(slot);
        }
        return kept;
    }

    void link_back(std::uint32_t from, std::uint32_t to, int level) {
        auto& links = nodes_[from].links[level];
        links.push_back(to);
        if (links.size() <= max_links(level)) return;
        std::vector<Scored> scored;
        scored.reserve(links.size());
        for (std::uint32_t l : links) scored.emplace_back(dot(vec(from), vec(l)), l);
        std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        links = select_neighbors(scored, max_links(level));
    }

    void insert_locked(std::span<const float> values, EntryId id) {
        const auto slot = static_cast<std::uint32_t>(nodes_.size());
        const int level = draw_level();
        vectors_.insert(vectors_.end(), values.begin(), values.end());
        Node node;
        node.id = id;
        node.level = level;
        node.links.resize(static_cast<std::size_t>(level) + 1);
        nodes_.push_back(std::move(node));
        slot_of_.emplace(id, slot);

        if (slot == 0) {
            entry_point_ = 0;
            max_level_ = level;
            return;
        }

        const auto q = vec(slot);
        auto no_probe = [](std::uint32_t, double) { return false; };
        std::uint32_t cur = entry_point_;
        double cur_sim = similarity(q, cur);
        for (int l = max_level_; l > level; --l) greedy_step(q, cur, cur_sim, l, no_probe);

        for (int l = std::min(level, max_level_); l >= 0; --l) {
            auto found = search_layer(q, cur, cur_sim, params_.ef_construction, l, no_probe);
            const auto chosen = select_neighbors(found, params_.max_neighbors);
            nodes_[slot].links[l] = chosen;
            for (std::uint32_t nb : chosen) link_back(nb, slot, l);
            cur = found.front().second;
            cur_sim = found.front().first;
        }
        if (level > max_level_) {
            max_level_ = level;
            entry_point_ = slot;
        }
    }

    void compact_locked() {
        std::vector<std::pair<EntryId, std::vector<float>>> live;
        live.reserve(slot_of_.size());
        for (std::uint32_t s = 0; s < nodes_.size(); ++s) {
            if (nodes_[s].deleted) continue;
            auto v = vec(s);
            live.emplace_back(nodes_[s].id, std::vector<float>(v.begin(), v.end()));
        }
        nodes_.clear();
        vectors_.clear();
        slot_of_.clear();
        tombstones_ = 0;
        entry_point_ = 0;
        max_level_ = 0;
        for (const auto& [id, v] : live) insert_locked(v, id);
    }

    IndexParams params_;
    double level_scale_ = 0.0;
    std::mt19937_64 rng_;

    std::vector<Node> nodes_;
    std::vector<float> vectors_;
    std::unordered_map<EntryId, std::uint32_t> slot_of_;  // live entries only
    std::size_t tombstones_ = 0;
    std::uint32_t entry_point_ = 0;
    int max_level_ = 0;

    mutable RwMutex mu_;
};

}  // namespace catcache
