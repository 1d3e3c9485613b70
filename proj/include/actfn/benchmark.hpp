#pragma once
// Grid benchmark: every (architecture, activation) cell through the same
// cross-validation folds, with per-fold CSV rows, an aggregated markdown
// report, and a reproducibility manifest. Results are independent of worker
// scheduling: every task owns an rng substream keyed on (seed, architecture,
// activation, fold) and writes to its own preallocated slot.

#include <actfn/activations.hpp>
#include <actfn/dataset.hpp>
#include <actfn/network.hpp>
#include <actfn/train.hpp>

#include "json.hpp"

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace actfn {

struct BenchmarkPlan {
    std::vector<std::string> architectures;
    std::vector<ActivationSpec> activations;
    NetworkConfig net_defaults;  // channels/timepoints/activation filled per run

    void validate() const {
        if (architectures.empty()) throw std::invalid_argument("benchmark: empty architecture list");
        if (activations.empty()) throw std::invalid_argument("benchmark: empty activation list");
        const auto& known = architecture_names();
        for (const auto& a : architectures)
            if (std::find(known.begin(), known.end(), a) == known.end())
                throw std::invalid_argument("benchmark: unknown architecture '" + a + "'");
    }
};

struct CellResult {
    std::string architecture;
    ActivationSpec activation;
    std::vector<FoldResult> folds;  // only successful folds
    std::string error;              // first failure; empty means the cell is clean

    bool ok() const { return error.empty(); }
};

struct BenchmarkReport {
    std::vector<CellResult> cells;
    int folds = 0;
    std::uint64_t seed = 0;

    bool all_ok() const {
        for (const auto& c : cells)
            if (!c.ok()) return false;
        return true;
    }
};

namespace detail {

template <typename Scalar>
struct FoldData {
    TrialSet<Scalar> train, val, test;
};

inline std::uint64_t fnv1a64_bytes(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

// Run the full Cartesian product. Cells that throw are recorded with their
// diagnostic and the rest of the grid continues.
template <typename Scalar = double>
BenchmarkReport run_benchmark(const BenchmarkPlan& plan, const TrialSet<Scalar>& dataset,
                              const TrainConfig& cfg, int jobs = 1,
                              const std::function<void(const std::string&)>& log = {}) {
    plan.validate();
    cfg.validate();
    dataset.validate();
    if (jobs < 1) jobs = 1;

    const auto splits = make_folds(dataset, cfg.folds, cfg.seed);
    std::vector<detail::FoldData<Scalar>> fold_data;
    fold_data.reserve(splits.size());
    for (const auto& f : splits)
        fold_data.push_back({standardize(dataset.subset(f.train)), standardize(dataset.subset(f.val)),
                             standardize(dataset.subset(f.test))});

    BenchmarkReport report;
    report.folds = cfg.folds;
    report.seed = cfg.seed;
    for (const auto& arch : plan.architectures)
        for (const auto& act : plan.activations) {
            CellResult c;
            c.architecture = arch;
            c.activation = act;
            c.folds.resize(static_cast<std::size_t>(cfg.folds));
            report.cells.push_back(std::move(c));
        }

    struct Task {
        std::size_t cell;
        int fold;
    };
    std::vector<Task> tasks;
    for (std::size_t ci = 0; ci < report.cells.size(); ++ci)
        for (int k = 0; k < cfg.folds; ++k) tasks.push_back({ci, k});

    std::mutex mu;  // guards error strings and the log sink
    auto run_task = [&](const Task& t) {
        CellResult& cell = report.cells[t.cell];
        try {
            NetworkConfig nc = plan.net_defaults;
            nc.channels = static_cast<int>(dataset.channels());
            nc.timepoints = static_cast<int>(dataset.timepoints());
            nc.activation = cell.activation;
            SeedSequence base(cfg.seed);
            base.with("cell").with(cell.architecture).with(cell.activation.name())
                .with(static_cast<std::uint64_t>(t.fold));
            Rng init = SeedSequence(base).with("init").rng();
            Rng train_rng = SeedSequence(base).with("train").rng();
            auto net = build_network<Scalar>(cell.architecture, nc, init);
            const auto& fd = fold_data[static_cast<std::size_t>(t.fold)];
            FoldResult r = train_protocol(net, fd.train, fd.val, fd.test, cfg, train_rng);
            cell.folds[static_cast<std::size_t>(t.fold)] = r;
            if (log) {
                auto m = metrics(r.confusion);
                char buf[160];
                std::snprintf(buf, sizeof buf, "%s/%s fold %d: test %.1f%% (epoch %d, %.1fs)",
                              cell.architecture.c_str(), cell.activation.name().c_str(), t.fold,
                              m.accuracy_pct, r.selected_epoch, r.seconds);
                std::lock_guard<std::mutex> lock(mu);
                log(buf);
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(mu);
            if (cell.error.empty())
                cell.error = "fold " + std::to_string(t.fold) + ": " + e.what();
        }
    };

    if (jobs == 1) {
        for (const Task& t : tasks) run_task(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1))
                    run_task(tasks[i]);
            });
        for (auto& th : pool) th.join();
    }

    // a failed cell keeps no partial fold results
    for (auto& cell : report.cells)
        if (!cell.ok()) cell.folds.clear();
    return report;
}

// ---- CSV --------------------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "architecture,activation,alpha,fold,tp,tn,fp,fn,train_acc,test_acc,"
    "sensitivity,specificity,selected_epoch,seconds";

struct CsvRow {
    std::string architecture;
    std::string activation;
    std::string alpha;  // empty for non-parametric activations
    int fold = 0;
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    double train_acc = 0, test_acc = 0;
    std::optional<double> sensitivity, specificity;
    int selected_epoch = 0;
    double seconds = 0;
};

namespace detail {

inline std::string fmt6(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace detail

inline std::string write_benchmark_csv(const BenchmarkReport& report) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& cell : report.cells) {
        if (!cell.ok()) continue;
        for (std::size_t k = 0; k < cell.folds.size(); ++k) {
            const FoldResult& r = cell.folds[k];
            const Metrics m = metrics(r.confusion);
            out += cell.architecture + ',' + cell.activation.name() + ',';
            // alpha column is the swept maf parameter; elu's fixed scale is
            // not a sweep axis and must not divert its rows from the named
            // activation tables
            if (cell.activation.kind == ActivationKind::maf)
                out += detail::format_alpha(cell.activation.alpha);
            out += ',' + std::to_string(k) + ',' + std::to_string(r.confusion.tp) + ',' +
                   std::to_string(r.confusion.tn) + ',' + std::to_string(r.confusion.fp) + ',' +
                   std::to_string(r.confusion.fn) + ',' + detail::fmt6(r.train_accuracy_pct) + ',' +
                   detail::fmt6(m.accuracy_pct) + ',';
            if (m.sensitivity_pct) out += detail::fmt6(*m.sensitivity_pct);
            out += ',';
            if (m.specificity_pct) out += detail::fmt6(*m.specificity_pct);
            out += ',' + std::to_string(r.selected_epoch) + ',';
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.3f", r.seconds);
            out += buf;
            out += '\n';
        }
    }
    return out;
}

inline std::vector<CsvRow> parse_benchmark_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader)
        throw std::invalid_argument("benchmark CSV: missing or mismatched header row");
    std::vector<CsvRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        while (true) {
            std::size_t pos = line.find(',', start);
            if (pos == std::string::npos) {
                f.push_back(line.substr(start));
                break;
            }
            f.push_back(line.substr(start, pos - start));
            start = pos + 1;
        }
        if (f.size() != 14)
            throw std::invalid_argument("benchmark CSV: line " + std::to_string(lineno) +
                                        " has " + std::to_string(f.size()) + " fields, expected 14");
        try {
            CsvRow r;
            r.architecture = f[0];
            r.activation = f[1];
            r.alpha = f[2];
            r.fold = std::stoi(f[3]);
            r.tp = std::stoll(f[4]);
            r.tn = std::stoll(f[5]);
            r.fp = std::stoll(f[6]);
            r.fn = std::stoll(f[7]);
            r.train_acc = std::stod(f[8]);
            r.test_acc = std::stod(f[9]);
            if (!f[10].empty()) r.sensitivity = std::stod(f[10]);
            if (!f[11].empty()) r.specificity = std::stod(f[11]);
            r.selected_epoch = std::stoi(f[12]);
            r.seconds = std::stod(f[13]);
            rows.push_back(std::move(r));
        } catch (const std::exception&) {
            throw std::invalid_argument("benchmark CSV: line " + std::to_string(lineno) +
                                        " is malformed");
        }
    }
    return rows;
}

// Blank out the wall-clock column so two runs of the same configuration can
// be compared byte for byte; timing is the only nondeterministic field.
inline std::string mask_csv_seconds(const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    bool first = true;
    while (std::getline(in, line)) {
        if (!first) {
            std::size_t pos = line.rfind(',');
            if (pos != std::string::npos) line.replace(pos + 1, std::string::npos, "-");
        }
        first = false;
        out += line;
        out += '\n';
    }
    return out;
}

// ---- aggregation and markdown ------------------------------------------------

struct AggregateStat {
    double mean = 0, stddev = 0;
    int n = 0;
};

struct AggregateCell {
    std::string architecture;
    std::string activation;
    std::string alpha;
    AggregateStat train_acc, test_acc, sensitivity, specificity;
};

namespace detail {

inline AggregateStat aggregate(const std::vector<double>& xs) {
    AggregateStat s;
    s.n = static_cast<int>(xs.size());
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    double acc = 0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(xs.size()));
    return s;
}

inline std::string fmt_pm(const AggregateStat& s) {
    if (s.n == 0) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", s.mean, s.stddev);
    return buf;
}

}  // namespace detail

inline std::vector<AggregateCell> aggregate_rows(const std::vector<CsvRow>& rows) {
    std::vector<AggregateCell> cells;
    auto find = [&](const CsvRow& r) -> AggregateCell* {
        for (auto& c : cells)
            if (c.architecture == r.architecture && c.activation == r.activation &&
                c.alpha == r.alpha)
                return &c;
        return nullptr;
    };
    // first pass groups in first-seen order
    std::vector<std::vector<const CsvRow*>> grouped;
    for (const auto& r : rows) {
        AggregateCell* c = find(r);
        if (!c) {
            cells.push_back({r.architecture, r.activation, r.alpha, {}, {}, {}, {}});
            grouped.emplace_back();
            c = &cells.back();
        }
        grouped[static_cast<std::size_t>(c - cells.data())].push_back(&r);
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::vector<double> ta, xa, se, sp;
        for (const CsvRow* r : grouped[i]) {
            ta.push_back(r->train_acc);
            xa.push_back(r->test_acc);
            if (r->sensitivity) se.push_back(*r->sensitivity);
            if (r->specificity) sp.push_back(*r->specificity);
        }
        cells[i].train_acc = detail::aggregate(ta);
        cells[i].test_acc = detail::aggregate(xa);
        cells[i].sensitivity = detail::aggregate(se);
        cells[i].specificity = detail::aggregate(sp);
    }
    return cells;
}

// Per-architecture tables of mean ± std over folds, with the MAF alpha sweep
// broken out into its own section, plus any recorded cell failures.
inline std::string markdown_report(const std::vector<CsvRow>& rows,
                                   const std::vector<std::pair<std::string, std::string>>& failures = {}) {
    const auto cells = aggregate_rows(rows);
    std::vector<std::string> archs;
    for (const auto& c : cells)
        if (std::find(archs.begin(), archs.end(), c.architecture) == archs.end())
            archs.push_back(c.architecture);

    std::string md = "# Benchmark results\n";
    for (const auto& arch : archs) {
        bool any = false;
        for (const auto& c : cells)
            if (c.architecture == arch && c.alpha.empty()) any = true;
        if (!any) continue;
        md += "\n## " + arch + "\n\n";
        md += "| Activation | Train Acc (%) | Test Acc (%) | Sensitivity (%) | Specificity (%) |\n";
        md += "|---|---|---|---|---|\n";
        for (const auto& c : cells) {
            if (c.architecture != arch || !c.alpha.empty()) continue;
            md += "| " + c.activation + " | " + detail::fmt_pm(c.train_acc) + " | " +
                  detail::fmt_pm(c.test_acc) + " | " + detail::fmt_pm(c.sensitivity) + " | " +
                  detail::fmt_pm(c.specificity) + " |\n";
        }
    }

    bool any_alpha = false;
    for (const auto& c : cells)
        if (!c.alpha.empty()) any_alpha = true;
    if (any_alpha) {
        md += "\n## MAF alpha sweep\n\n";
        md += "| Architecture | alpha | Train Acc (%) | Test Acc (%) | Sensitivity (%) | Specificity (%) |\n";
        md += "|---|---|---|---|---|---|\n";
        for (const auto& arch : archs)
            for (const auto& c : cells) {
                if (c.architecture != arch || c.alpha.empty()) continue;
                md += "| " + arch + " | " + c.alpha + " | " + detail::fmt_pm(c.train_acc) + " | " +
                      detail::fmt_pm(c.test_acc) + " | " + detail::fmt_pm(c.sensitivity) + " | " +
                      detail::fmt_pm(c.specificity) + " |\n";
            }
    }

    if (!failures.empty()) {
        md += "\n## Failed cells\n\n";
        for (const auto& [cell, why] : failures) md += "- " + cell + ": " + why + "\n";
    }
    return md;
}

inline std::string markdown_report(const BenchmarkReport& report) {
    auto rows = parse_benchmark_csv(write_benchmark_csv(report));
    std::vector<std::pair<std::string, std::string>> failures;
    for (const auto& c : report.cells)
        if (!c.ok()) failures.emplace_back(c.architecture + "/" + c.activation.name(), c.error);
    return markdown_report(rows, failures);
}

// Everything needed to reproduce a run byte-identically (modulo the
// wall-clock column): the full configuration, its hash, and versions.
inline nlohmann::json make_manifest(const nlohmann::json& config, std::uint64_t seed) {
    const std::string canonical = config.dump();
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64_bytes(canonical)));
    return nlohmann::json{{"config", config},
                          {"config_hash", hash},
                          {"seed", seed},
                          {"versions",
                           {{"artifact", "0.1.0"},
                            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                          std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                          std::to_string(EIGEN_MINOR_VERSION)},
                            {"fnirset", 1}}}};
}

}  // namespace actfn
