#include "nbcv/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "nbcv/bounds.hpp"
#include "nbcv/model_io.hpp"

namespace nbcv {

namespace fs = std::filesystem;
using nlohmann::json;

std::pair<Dataset, Dataset> load_dataset(const DatasetSpec& spec) {
    if (spec.kind == "mnist_idx") {
        Dataset train = load_mnist_idx(spec.train_images, spec.train_labels, spec.limit_per_class);
        Dataset test =
            load_mnist_idx(spec.test_images, spec.test_labels, spec.test_limit_per_class);
        train.split = "train";
        test.split = "test";
        return {std::move(train), std::move(test)};
    }
    if (spec.kind == "digits") {
        Dataset train, test;
        train.num_classes = test.num_classes = 10;
        train.split = "train";
        test.split = "test";
        train.provenance = test.provenance = "digits";
        train.inputs = gen_digit_images(spec.train_per_class, spec.seed, train.labels);
        test.inputs = gen_digit_images(spec.test_per_class, spec.seed + 1, test.labels);
        train.validate();
        test.validate();
        return {std::move(train), std::move(test)};
    }
    if (spec.kind == "blobs" || spec.kind == "moons") {
        SyntheticKind kind = spec.kind == "blobs" ? SyntheticKind::blobs : SyntheticKind::moons;
        Dataset train = gen_synthetic(kind, spec.n_train, spec.noise, spec.seed);
        Dataset test = gen_synthetic(kind, spec.n_test, spec.noise, spec.seed + 1);
        train.split = "train";
        test.split = "test";
        return {std::move(train), std::move(test)};
    }
    throw std::invalid_argument("load_dataset: unknown kind " + spec.kind);
}

void ExperimentConfig::validate() const {
    if (radii.empty()) throw std::invalid_argument("experiment: radii must be nonempty");
    for (double r : radii)
        if (r < 0.0) throw std::invalid_argument("experiment: radii must be >= 0");
    if (k_per_class < 1) throw std::invalid_argument("experiment: k_per_class must be >= 1");
    if (methods.empty()) throw std::invalid_argument("experiment: no methods configured");
    budget.validate();
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
    json doc = json::parse(text);
    ExperimentConfig cfg;

    const json& ds = doc.at("dataset");
    cfg.dataset.kind = ds.at("kind").get<std::string>();
    auto opt_str = [&](const char* f, std::string& out) {
        if (ds.contains(f)) out = ds[f].get<std::string>();
    };
    opt_str("train_images", cfg.dataset.train_images);
    opt_str("train_labels", cfg.dataset.train_labels);
    opt_str("test_images", cfg.dataset.test_images);
    opt_str("test_labels", cfg.dataset.test_labels);
    if (ds.contains("limit_per_class"))
        cfg.dataset.limit_per_class = ds["limit_per_class"].get<std::size_t>();
    if (ds.contains("test_limit_per_class"))
        cfg.dataset.test_limit_per_class = ds["test_limit_per_class"].get<std::size_t>();
    if (ds.contains("train_per_class"))
        cfg.dataset.train_per_class = ds["train_per_class"].get<std::size_t>();
    if (ds.contains("test_per_class"))
        cfg.dataset.test_per_class = ds["test_per_class"].get<std::size_t>();
    if (ds.contains("n_train")) cfg.dataset.n_train = ds["n_train"].get<std::size_t>();
    if (ds.contains("n_test")) cfg.dataset.n_test = ds["n_test"].get<std::size_t>();
    if (ds.contains("noise")) cfg.dataset.noise = ds["noise"].get<double>();
    if (ds.contains("seed")) cfg.dataset.seed = ds["seed"].get<std::uint64_t>();

    cfg.hidden = doc.at("hidden").get<std::vector<std::size_t>>();
    for (const json& jm : doc.at("methods")) {
        MethodSpec m;
        m.name = jm.at("name").get<std::string>();
        m.train = train_config_from_json(jm.at("train").dump());
        cfg.methods.push_back(std::move(m));
    }
    cfg.radii = doc.at("radii").get<std::vector<double>>();
    if (doc.contains("k_per_class")) cfg.k_per_class = doc["k_per_class"].get<std::size_t>();
    if (doc.contains("budget_seconds"))
        cfg.budget.wall_time_s = doc["budget_seconds"].get<double>();
    if (doc.contains("budget_branches"))
        cfg.budget.max_branches = doc["budget_branches"].get<std::size_t>();
    if (doc.contains("pgd_eval_steps")) cfg.pgd_eval_steps = doc["pgd_eval_steps"].get<std::size_t>();
    if (doc.contains("pgd_eval_step_fraction"))
        cfg.pgd_eval_step_fraction = doc["pgd_eval_step_fraction"].get<double>();
    if (doc.contains("pgd_eval_restarts"))
        cfg.pgd_eval_restarts = doc["pgd_eval_restarts"].get<std::size_t>();
    if (doc.contains("jobs")) cfg.jobs = doc["jobs"].get<std::size_t>();
    if (doc.contains("out_dir")) cfg.out_dir = doc["out_dir"].get<std::string>();
    if (doc.contains("seed")) cfg.verify.seed = doc["seed"].get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

std::vector<std::pair<Tensor, std::size_t>> select_property_inputs(const Dataset& test,
                                                                   std::size_t k_per_class) {
    std::vector<std::pair<Tensor, std::size_t>> picked;
    std::vector<std::size_t> count(test.num_classes, 0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::size_t y = test.labels[i];
        if (count[y] >= k_per_class) continue;
        count[y] += 1;
        picked.emplace_back(test.inputs[i], y);
    }
    return picked;
}

namespace {

std::vector<Verdict> verify_all(const Network& net,
                                const std::vector<RobustnessProperty>& props,
                                const Budget& budget, const VerifyConfig& vcfg,
                                std::size_t jobs) {
    std::vector<Verdict> verdicts(props.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < props.size(); ++i)
            verdicts[i] = bab_verify(net, props[i], budget, vcfg);
        return verdicts;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= props.size()) return;
            verdicts[i] = bab_verify(net, props[i], budget, vcfg);
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    return verdicts;
}

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    fs::create_directories(cfg.out_dir + "/models");
    fs::create_directories(cfg.out_dir + "/verdicts");

    auto [train_ds, test_ds] = load_dataset(cfg.dataset);
    std::vector<std::size_t> dims;
    dims.push_back(train_ds.inputs.front().size());
    for (std::size_t h : cfg.hidden) dims.push_back(h);
    dims.push_back(train_ds.num_classes);

    auto property_inputs = select_property_inputs(test_ds, cfg.k_per_class);

    MetricsReport report;
    for (const MethodSpec& method : cfg.methods) {
        Network net;
        std::string model_path = cfg.out_dir + "/models/" + method.name + ".json";
        if (fs::exists(model_path)) {
            net = load_model(model_path);
        } else {
            Network fresh = init_params(make_mlp(dims), method.train.seed);
            auto [trained, history] = train(std::move(fresh), train_ds, method.train, &test_ds);
            net = std::move(trained);
            save_model(model_path, net, method.train.seed);
            std::ofstream hist(cfg.out_dir + "/models/" + method.name + "_history.csv");
            hist << history_to_csv(history);
        }

        double test_acc = 100.0 * accuracy(net, test_ds);

        for (double radius : cfg.radii) {
            MetricsRow row;
            row.method = method.name;
            row.radius = radius;
            row.test_acc = test_acc;
            try {
                std::vector<RobustnessProperty> props;
                for (const auto& [x0, y] : property_inputs)
                    props.push_back(encode_property(x0, radius, y, {0.0, 1.0},
                                                    train_ds.num_classes));
                row.n_props = props.size();

                std::vector<Verdict> verdicts;
                std::vector<double> times(props.size(), 0.0);
                {
                    // wall time per property is measured inside bab_verify
                    verdicts = verify_all(net, props, cfg.budget, cfg.verify, cfg.jobs);
                    for (std::size_t i = 0; i < verdicts.size(); ++i)
                        times[i] = verdicts[i].stats.wall_time_s;
                }

                std::size_t unsat = 0, sat = 0, unknown = 0, branches = 0;
                double time_sum = 0.0, time_ut_sum = 0.0;
                std::size_t ut_count = 0;
                for (std::size_t i = 0; i < verdicts.size(); ++i) {
                    const Verdict& v = verdicts[i];
                    time_sum += times[i];
                    branches += v.stats.branches_explored;
                    switch (v.status) {
                        case VerdictStatus::unsat: unsat += 1; break;
                        case VerdictStatus::sat: sat += 1; break;
                        case VerdictStatus::unknown: unknown += 1; break;
                    }
                    if (v.status != VerdictStatus::sat) {
                        time_ut_sum += times[i];
                        ut_count += 1;
                    }
                    char name[256];
                    std::snprintf(name, sizeof name, "%s/verdicts/%s_r%g_p%03zu.json",
                                  cfg.out_dir.c_str(), method.name.c_str(), radius, i);
                    std::ofstream vf(name);
                    vf << verdict_to_json(v) << "\n";
                }
                double n = static_cast<double>(props.size());
                row.unsat_pct = 100.0 * unsat / n;
                row.sat_pct = 100.0 * sat / n;
                row.unknown_pct = 100.0 * unknown / n;
                row.time_mean_s = time_sum / n;
                row.time_ut_mean_s = ut_count ? time_ut_sum / static_cast<double>(ut_count) : 0.0;
                row.branches_mean = static_cast<double>(branches) / n;
                row.stable_pct = stable_percent(net, props);
                row.pgd100_acc =
                    100.0 * pgd_accuracy(net, test_ds, radius, cfg.pgd_eval_steps,
                                         cfg.pgd_eval_step_fraction * radius /
                                             static_cast<double>(cfg.pgd_eval_steps),
                                         cfg.pgd_eval_restarts, cfg.verify.seed);
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            report.rows.push_back(std::move(row));
        }
    }

    std::ofstream csv(cfg.out_dir + "/metrics.csv");
    csv << metrics_to_csv(report);
    std::ofstream txt(cfg.out_dir + "/report.txt");
    txt << report_render(report);
    return report;
}

std::string metrics_to_csv(const MetricsReport& report) {
    std::string out =
        "method,radius,test_acc,unsat_pct,stable_pct,time_mean_s,time_ut_mean_s,pgd100_acc,"
        "branches_mean,n_props\n";
    char line[512];
    for (const MetricsRow& r : report.rows) {
        std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n",
                      r.method.c_str(), r.radius, r.test_acc, r.unsat_pct, r.stable_pct,
                      r.time_mean_s, r.time_ut_mean_s, r.pgd100_acc, r.branches_mean, r.n_props);
        out += line;
    }
    return out;
}

MetricsReport metrics_from_csv(const std::string& csv) {
    MetricsReport report;
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("metrics csv: empty");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 10) throw std::runtime_error("metrics csv: bad row: " + line);
        MetricsRow r;
        r.method = fields[0];
        r.radius = std::stod(fields[1]);
        r.test_acc = std::stod(fields[2]);
        r.unsat_pct = std::stod(fields[3]);
        r.stable_pct = std::stod(fields[4]);
        r.time_mean_s = std::stod(fields[5]);
        r.time_ut_mean_s = std::stod(fields[6]);
        r.pgd100_acc = std::stod(fields[7]);
        r.branches_mean = std::stod(fields[8]);
        r.n_props = static_cast<std::size_t>(std::stoul(fields[9]));
        report.rows.push_back(std::move(r));
    }
    return report;
}

std::string report_render(const MetricsReport& report) {
    if (report.rows.empty()) throw std::invalid_argument("report_render: empty report");
    std::string out;
    out += "method      radius  test_acc  unsat%  stable%  time(s)  time_ut(s)  pgd100  branches  n\n";
    out += "(stable% measured on " + report.bounds_tag + " bounds)\n";
    char line[512];
    for (const MetricsRow& r : report.rows) {
        if (!r.error.empty()) {
            std::snprintf(line, sizeof line, "%-11s %6.3g  ERROR: %s\n", r.method.c_str(),
                          r.radius, r.error.c_str());
        } else {
            std::snprintf(line, sizeof line,
                          "%-11s %6.3g  %8.2f  %6.1f  %7.1f  %7.3f  %10.3f  %6.1f  %8.2f  %zu\n",
                          r.method.c_str(), r.radius, r.test_acc, r.unsat_pct, r.stable_pct,
                          r.time_mean_s, r.time_ut_mean_s, r.pgd100_acc, r.branches_mean,
                          r.n_props);
        }
        out += line;
    }
    return out;
}

}  // namespace nbcv
