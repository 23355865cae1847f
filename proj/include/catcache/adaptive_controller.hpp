#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <string>

#include "catcache/category_policy.hpp"
#include "catcache/doc_store.hpp"
#include "catcache/errors.hpp"

namespace catcache {

struct LoadSignal {
    std::string model_id;
    double latency_percentile_ms = 0.0;  ///< e.g. P95
    double queue_depth = 0.0;
    TimestampMs observed_at = 0;
};

struct ControllerConfig {
    double latency_target_ms = 500.0;
    double queue_target = 100.0;
    double latency_weight = 0.5;
    double queue_weight = 0.5;
    double averaging_window_s = 300.0;
    double hysteresis_step = 0.1;
    double fp_rate_limit = 0.05;
    double fp_delta_shrink = 0.5;

    void validate() const {
        if (!(latency_target_ms > 0.0)) throw UsageError("latency target must be > 0");
        if (!(queue_target > 0.0)) throw UsageError("queue target must be > 0");
        if (latency_weight < 0.0 || queue_weight < 0.0) throw UsageError("weights must be >= 0");
        if (std::abs(latency_weight + queue_weight - 1.0) > 1e-12) throw UsageError("weights must sum to 1");
        if (!(averaging_window_s > 0.0)) throw UsageError("averaging window must be > 0");
        if (!(hysteresis_step > 0.0)) throw UsageError("hysteresis step must be > 0");
        if (!(fp_delta_shrink > 0.0 && fp_delta_shrink < 1.0)) throw UsageError("fp_delta_shrink must be in (0,1)");
    }
};

/// Comparisons against the hysteresis step tolerate this much rounding, so
/// 0.6 - 0.5 counts as a full 0.1 step.
inline constexpr double kHysteresisSlack = 1e-9;

/// min(1, (L_p / L_target) * w_L + (Q / Q_target) * w_Q), inputs clamped at 0.
inline double compute_load_factor(double latency_ms, double queue_depth, const ControllerConfig& cfg) {
    const double l = std::isfinite(latency_ms) ? std::max(0.0, latency_ms) : (latency_ms > 0 ? 1e300 : 0.0);
    const double q = std::isfinite(queue_depth) ? std::max(0.0, queue_depth) : (queue_depth > 0 ? 1e300 : 0.0);
    const double lambda = (l / cfg.latency_target_ms) * cfg.latency_weight + (q / cfg.queue_target) * cfg.queue_weight;
    return std::clamp(lambda, 0.0, 1.0);
}

struct ModelLoadState {
    std::string model_id;
    double raw_lambda = 0.0;
    double applied_lambda = 0.0;
    std::uint64_t discarded_signals = 0;
};

/// Turns per-model load signals into a smoothed, hysteresis-gated load
/// factor. Each model is tracked independently.
///
/// Smoothing is time-weighted: a signal's values stand for the interval
/// since the previous signal, clipped to the averaging window.
class LoadController {
public:
    explicit LoadController(ControllerConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const ControllerConfig& config() const noexcept { return cfg_; }

    double ingest_signal(const LoadSignal& signal) { return ingest_signal(signal, cfg_); }

    double ingest_signal(const LoadSignal& signal, const ControllerConfig& cfg) {
        cfg.validate();
        std::lock_guard lock(mu_);
        auto& m = models_[signal.model_id];
        m.state.model_id = signal.model_id;
        if (!m.history.empty() && signal.observed_at < m.history.back().at) {
            m.state.discarded_signals += 1;
            return m.state.applied_lambda;
        }
        m.history.push_back({signal.observed_at, std::max(0.0, signal.latency_percentile_ms),
                             std::max(0.0, signal.queue_depth)});

        const double window_start = static_cast<double>(signal.observed_at) - cfg.averaging_window_s * 1000.0;
        // Keep one sample at or before the window start; it bounds the first interval.
        while (m.history.size() > 1 && static_cast<double>(m.history[1].at) <= window_start) m.history.pop_front();

        double weight = 0.0, lat = 0.0, queue = 0.0;
        for (std::size_t i = 1; i < m.history.size(); ++i) {
            const double from = std::max(static_cast<double>(m.history[i - 1].at), window_start);
            const double w = static_cast<double>(m.history[i].at) - from;
            if (w <= 0.0) continue;
            weight += w;
            lat += w * m.history[i].latency_ms;
            queue += w * m.history[i].queue_depth;
        }
        if (weight <= 0.0) {
            // No elapsed time yet: plain mean of the samples taken at this instant.
            std::size_t n = 0;
            for (const auto& s : m.history) {
                if (s.at != signal.observed_at) continue;
                lat += s.latency_ms;
                queue += s.queue_depth;
                ++n;
            }
            weight = static_cast<double>(n);
        }
        m.state.raw_lambda = compute_load_factor(lat / weight, queue / weight, cfg);
        if (std::abs(m.state.raw_lambda - m.state.applied_lambda) >= cfg.hysteresis_step - kHysteresisSlack)
            m.state.applied_lambda = m.state.raw_lambda;
        return m.state.applied_lambda;
    }

    /// Applied load factor; 0 for models never seen.
    double current_lambda(const std::string& model_id) const {
        std::lock_guard lock(mu_);
        auto it = models_.find(model_id);
        return it == models_.end() ? 0.0 : it->second.state.applied_lambda;
    }

    ModelLoadState state(const std::string& model_id) const {
        std::lock_guard lock(mu_);
        auto it = models_.find(model_id);
        if (it == models_.end()) return ModelLoadState{model_id};
        return it->second.state;
    }

    std::map<std::string, double> all_lambdas() const {
        std::lock_guard lock(mu_);
        std::map<std::string, double> out;
        for (const auto& [id, m] : models_) out[id] = m.state.applied_lambda;
        return out;
    }

    /// Shrinks the category's delta_max when the observed false-positive rate
    /// is above the limit. Returns the delta_max now in force.
    double record_fp_feedback(PolicyRegistry& registry, const std::string& model_id, const std::string& category,
                              double observed_fp_rate) const {
        if (!registry.contains(category)) throw UsageError("unknown category '" + category + "'");
        if (!(observed_fp_rate >= 0.0 && observed_fp_rate <= 1.0))
            throw UsageError("false-positive rate must lie in [0, 1]");
        (void)model_id;  // delta_max is a per-category bound shared by every model
        if (observed_fp_rate > cfg_.fp_rate_limit) {
            registry.update(category, [&](CategoryConfig& c) {
                c.delta_max *= cfg_.fp_delta_shrink;
                if (c.delta_max < 1e-12) c.delta_max = 0.0;
            });
        }
        return registry.get_config(category).delta_max;
    }

private:
    struct Sample {
        TimestampMs at;
        double latency_ms;
        double queue_depth;
    };
    struct ModelTrack {
        ModelLoadState state;
        std::deque<Sample> history;
    };

    ControllerConfig cfg_;
    mutable std::mutex mu_;
    std::map<std::string, ModelTrack> models_;
};

}  // namespace catcache
