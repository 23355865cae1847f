#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "catcache/adaptive_controller.hpp"
#include "catcache/cache_core.hpp"
#include "catcache/category_policy.hpp"
#include "catcache/doc_store.hpp"
#include "catcache/economics.hpp"
#include "catcache/scenario.hpp"
#include "catcache/service.hpp"
#include "catcache/workload_sim.hpp"

namespace fs = std::filesystem;
using namespace catcache;

namespace {

CacheService* g_service = nullptr;

enum class LogLevel { error, warn, info, debug };

LogLevel log_level() {
    const char* env = std::getenv("CATCACHE_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return LogLevel::error;
    if (v == "warn") return LogLevel::warn;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
}

void on_signal(int) {
    if (g_service) g_service->stop();
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return nlohmann::json::parse(in);
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

struct ServeArgs {
    std::string config;
    std::string listen = "127.0.0.1:8080";
    std::size_t dimension = 384;
    std::size_t capacity = 100'000;
    std::string store_path;
    double latency_target_ms = 500.0;
    double queue_target = 100.0;
    double averaging_window_s = 300.0;
    double hysteresis_step = 0.1;
};

int run_serve(const ServeArgs& a) {
    std::vector<CategoryConfig> configs;
    if (!a.config.empty()) configs = parse_category_configs(read_json(a.config));
    auto registry = std::make_shared<PolicyRegistry>(configs);

    std::unique_ptr<DocumentStore> store;
    if (a.store_path.empty())
        store = std::make_unique<SimulatedDocStore>();
    else
        store = std::make_unique<FileDocStore>(a.store_path);

    IndexParams index;
    index.dimension = a.dimension;
    CacheOptions options;
    options.capacity = a.capacity;
    SemanticCache cache(index, registry, *store, options);

    ControllerConfig cc;
    cc.latency_target_ms = a.latency_target_ms;
    cc.queue_target = a.queue_target;
    cc.averaging_window_s = a.averaging_window_s;
    cc.hysteresis_step = a.hysteresis_step;
    LoadController controller(cc);

    const auto colon = a.listen.rfind(':');
    if (colon == std::string::npos) throw std::runtime_error("--listen must be host:port");
    const std::string host = a.listen.substr(0, colon);
    const int port = std::stoi(a.listen.substr(colon + 1));

    CacheService service(cache, controller);
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const LogLevel level = log_level();
    if (level == LogLevel::debug) {
        service.server().set_logger([](const httplib::Request& req, const httplib::Response& res) {
            std::cerr << "catcache: " << req.method << ' ' << req.path << ' ' << res.status << '\n';
        });
    }
    if (level >= LogLevel::info)
        std::cerr << "catcache: " << registry->all().size() << " categories, dimension " << a.dimension
                  << ", listening on " << host << ':' << port << '\n';
    if (!service.listen(host, port)) {
        std::cerr << "catcache: cannot listen on " << a.listen << '\n';
        return 1;
    }
    return 0;
}

void print_category_table(const sim::SimReport& r) {
    std::cout << "category               queries    hit_rate  mean_ms   fp_rate  stale_hits\n";
    for (const auto& c : r.categories) {
        std::printf("%-20s %9llu %10.4f %8.2f %9.4f %11.4f\n", c.category.c_str(),
                    static_cast<unsigned long long>(c.queries), c.hit_rate(), c.mean_charged_latency_ms(),
                    c.false_positive_rate(), c.stale_hits_fraction());
    }
}

int run_simulate(const std::string& scenario_path, const std::string& out_dir) {
    const sim::Scenario s = sim::load_scenario(scenario_path);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    const auto workload = sim::generate_workload(s.categories, s.n_queries, s.seed, s.generator);

    if (s.spike) {
        const auto outcome = sim::run_load_spike_scenario(workload, s.cache, s.models, *s.spike, s.sim);
        for (const auto& [name, report] : {std::pair{"controller_off", &outcome.controller_off},
                                           std::pair{"controller_on", &outcome.controller_on}}) {
            write_file(out / (std::string("report_") + name + ".json"), sim::to_json(*report).dump(2));
            std::ofstream csv(out / (std::string("series_") + name + ".csv"));
            sim::write_series_csv(csv, *report);
        }
        nlohmann::json summary{{"spiked_model", s.spike->model_id},
                               {"traffic_off", outcome.spike_traffic(outcome.controller_off, s.spike->model_id)},
                               {"traffic_on", outcome.spike_traffic(outcome.controller_on, s.spike->model_id)},
                               {"traffic_reduction", outcome.traffic_reduction()}};
        write_file(out / "spike_summary.json", summary.dump(2));
        std::cout << "controller off:\n";
        print_category_table(outcome.controller_off);
        std::cout << "controller on:\n";
        print_category_table(outcome.controller_on);
        std::cout << "model traffic reduction during spike: " << outcome.traffic_reduction() << '\n';
        return 0;
    }

    auto bundle = sim::make_cache(s.cache);
    LoadController controller(s.sim.controller);
    const auto report = sim::run_simulation(workload, *bundle.cache, s.models, controller, s.sim);
    write_file(out / "report.json", sim::to_json(report).dump(2));
    std::ofstream csv(out / "series.csv");
    sim::write_series_csv(csv, report);
    print_category_table(report);
    return 0;
}

int run_economics(const std::string& workload_path, const std::string& out_path, double t_llm) {
    std::vector<economics::ViabilityInput> rows;
    if (workload_path.empty()) {
        rows = economics::long_tail_workload(t_llm);
    } else {
        for (const auto& r : read_json(workload_path)) {
            economics::ViabilityInput in;
            in.category = r.at("category").get<std::string>();
            in.traffic_share = r.at("traffic_share").get<double>();
            in.hit_rate = r.at("hit_rate").get<double>();
            in.t_llm_ms = r.value("t_llm_ms", t_llm);
            rows.push_back(in);
        }
    }
    const auto table = economics::viability_table(rows);
    {
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("cannot write " + out_path);
        economics::write_viability_csv(out, table);
    }
    const fs::path p(out_path);
    const fs::path sweep_path = p.parent_path() / (p.stem().string() + "_sweep.csv");
    std::ofstream sweep(sweep_path);
    economics::write_sweep_csv(sweep, economics::break_even_sweep({50, 100, 200, 500, 1000, 2000}));

    double vdb_share = 0.0, hybrid_share = 0.0;
    for (const auto& r : table) {
        if (r.vdb_viable) vdb_share += r.traffic_share;
        if (r.hybrid_viable) hybrid_share += r.traffic_share;
    }
    std::cout << "viable traffic share: vdb " << vdb_share << ", hybrid " << hybrid_share << '\n';
    std::cout << "wrote " << out_path << " and " << sweep_path.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Category-aware semantic cache"};
    app.require_subcommand(1);

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP cache service");
    serve_cmd->add_option("--config", serve.config, "JSON array of category configs");
    serve_cmd->add_option("--listen", serve.listen, "host:port")->capture_default_str();
    serve_cmd->add_option("--dimension", serve.dimension, "Embedding dimension")->capture_default_str();
    serve_cmd->add_option("--capacity", serve.capacity, "Maximum cache entries")->capture_default_str();
    serve_cmd->add_option("--store", serve.store_path, "Append-only document log (in-memory if omitted)");
    serve_cmd->add_option("--latency-target", serve.latency_target_ms)->capture_default_str();
    serve_cmd->add_option("--queue-target", serve.queue_target)->capture_default_str();
    serve_cmd->add_option("--window", serve.averaging_window_s, "Averaging window (s)")->capture_default_str();
    serve_cmd->add_option("--hysteresis", serve.hysteresis_step)->capture_default_str();

    std::string scenario, out_dir = "sim-out";
    auto* sim_cmd = app.add_subcommand("simulate", "Replay a synthetic workload");
    sim_cmd->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
    sim_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();

    std::string workload, csv_out = "viability.csv";
    double t_llm = 200.0;
    auto* econ_cmd = app.add_subcommand("economics", "Break-even and viability table");
    econ_cmd->add_option("--workload", workload, "JSON rows {category, traffic_share, hit_rate, t_llm_ms?}")
        ->check(CLI::ExistingFile);
    econ_cmd->add_option("--out", csv_out, "Viability CSV")->capture_default_str();
    econ_cmd->add_option("--t-llm", t_llm, "Default model latency (ms)")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve_cmd) return run_serve(serve);
        if (*sim_cmd) return run_simulate(scenario, out_dir);
        if (*econ_cmd) return run_economics(workload, csv_out, t_llm);
    } catch (const ValidationError& e) {
        std::cerr << "catcache: invalid input (" << e.constraint() << "): " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "catcache: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
