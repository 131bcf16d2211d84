// Command-line surface: train / verify / analyze / attack / report /
// experiment / gen-data over the JSON formats described in the README.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nbcv/bounds.hpp"
#include "nbcv/experiment.hpp"
#include "nbcv/model_io.hpp"
#include "nbcv/train.hpp"
#include "nbcv/verifier.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"verification-friendly training and branch-and-bound robustness verification"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", model_path, property_path, method_filter;
    double radius = 0.1;
    double budget_seconds = 120.0;
    std::size_t budget_branches = 1u << 20;
    std::size_t jobs = 1;
    std::uint64_t seed = 0;
    bool seed_given = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
            seed_given = true;
        });
    };

    CLI::App* cmd_train = app.add_subcommand("train", "train the configured methods");
    cmd_train->add_option("--config", config_path, "experiment config JSON")->required();
    cmd_train->add_option("--method", method_filter, "train only this method");
    add_common(cmd_train);

    CLI::App* cmd_verify = app.add_subcommand("verify", "verify one robustness property");
    cmd_verify->add_option("--model", model_path, "model JSON")->required();
    cmd_verify->add_option("--property", property_path, "property JSON")->required();
    cmd_verify->add_option("--budget-seconds", budget_seconds, "wall-time budget");
    cmd_verify->add_option("--budget-branches", budget_branches, "neuron-split budget");
    add_common(cmd_verify);

    CLI::App* cmd_analyze = app.add_subcommand("analyze", "stability report for one property");
    cmd_analyze->add_option("--model", model_path, "model JSON")->required();
    cmd_analyze->add_option("--property", property_path, "property JSON")->required();

    CLI::App* cmd_attack = app.add_subcommand("attack", "PGD accuracy on the test split");
    cmd_attack->add_option("--config", config_path, "experiment config JSON")->required();
    cmd_attack->add_option("--model", model_path, "model JSON")->required();
    cmd_attack->add_option("--radius", radius, "attack radius");
    add_common(cmd_attack);

    CLI::App* cmd_report = app.add_subcommand("report", "re-render report.txt from metrics.csv");
    add_common(cmd_report);

    CLI::App* cmd_exp = app.add_subcommand("experiment", "full train/verify/metrics pipeline");
    cmd_exp->add_option("--config", config_path, "experiment config JSON")->required();
    cmd_exp->add_option("--jobs", jobs, "verification worker count");
    cmd_exp->add_option("--budget-seconds", budget_seconds, "wall-time budget override");
    cmd_exp->add_option("--budget-branches", budget_branches, "branch budget override");
    add_common(cmd_exp);

    std::string gen_kind = "digits";
    std::size_t gen_train = 200, gen_test = 50;
    double gen_noise = 0.05;
    CLI::App* cmd_gen = app.add_subcommand("gen-data", "write a dataset (IDX or CSV)");
    cmd_gen->add_option("--kind", gen_kind, "digits | blobs | moons");
    cmd_gen->add_option("--train-per-class", gen_train, "train images per class (digits)");
    cmd_gen->add_option("--test-per-class", gen_test, "test images per class (digits)");
    cmd_gen->add_option("--noise", gen_noise, "noise level (blobs/moons)");
    add_common(cmd_gen);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train->parsed() || cmd_exp->parsed()) {
            nbcv::ExperimentConfig cfg = nbcv::experiment_config_from_json(slurp(config_path));
            cfg.out_dir = out_dir;
            if (cmd_exp->count("--jobs")) cfg.jobs = jobs;
            if (cmd_exp->count("--budget-seconds")) cfg.budget.wall_time_s = budget_seconds;
            if (cmd_exp->count("--budget-branches")) cfg.budget.max_branches = budget_branches;
            if (seed_given) {
                cfg.verify.seed = seed;
                cfg.dataset.seed = seed;
                for (auto& m : cfg.methods) m.train.seed = seed;
            }
            if (cmd_train->parsed()) {
                if (!method_filter.empty()) {
                    std::erase_if(cfg.methods, [&](const nbcv::MethodSpec& m) {
                        return m.name != method_filter;
                    });
                    if (cfg.methods.empty())
                        throw std::runtime_error("no method named " + method_filter);
                }
                auto [train_ds, test_ds] = nbcv::load_dataset(cfg.dataset);
                std::vector<std::size_t> dims{train_ds.inputs.front().size()};
                for (std::size_t h : cfg.hidden) dims.push_back(h);
                dims.push_back(train_ds.num_classes);
                fs::create_directories(cfg.out_dir + "/models");
                for (const auto& m : cfg.methods) {
                    nbcv::Network net = nbcv::init_params(nbcv::make_mlp(dims), m.train.seed);
                    auto [trained, history] = nbcv::train(std::move(net), train_ds, m.train,
                                                          &test_ds);
                    nbcv::save_model(cfg.out_dir + "/models/" + m.name + ".json", trained,
                                     m.train.seed);
                    std::ofstream hist(cfg.out_dir + "/models/" + m.name + "_history.csv");
                    hist << nbcv::history_to_csv(history);
                    std::cout << "trained " << m.name << ": test_acc "
                              << 100.0 * nbcv::accuracy(trained, test_ds) << "%\n";
                }
            } else {
                nbcv::MetricsReport report = nbcv::run_experiment(cfg);
                std::cout << nbcv::report_render(report);
            }
            return 0;
        }

        if (cmd_verify->parsed()) {
            nbcv::Network net = nbcv::load_model(model_path);
            nbcv::RobustnessProperty prop = nbcv::property_from_json(slurp(property_path));
            nbcv::Budget budget{budget_seconds, budget_branches};
            nbcv::VerifyConfig vcfg;
            vcfg.seed = seed;
            nbcv::Verdict verdict = nbcv::bab_verify(net, prop, budget, vcfg);
            std::string out = nbcv::verdict_to_json(verdict);
            std::cout << out << "\n";
            if (!out_dir.empty() && out_dir != "out") {
                fs::create_directories(out_dir);
                std::ofstream f(out_dir + "/verdict.json");
                f << out << "\n";
            }
            return nbcv::verdict_exit_code(verdict);
        }

        if (cmd_analyze->parsed()) {
            nbcv::Network net = nbcv::load_model(model_path);
            nbcv::RobustnessProperty prop = nbcv::property_from_json(slurp(property_path));
            nbcv::LoweredNetwork low = nbcv::lower(net);
            nbcv::InputBox box = nbcv::property_box(prop);
            nbcv::BoundsMap bm = nbcv::intersect_bounds(nbcv::ibp_bounds(low, box),
                                                        nbcv::linear_bounds(low, box));
            std::cout << nbcv::stability_report_to_json(nbcv::classify_neurons(bm)) << "\n";
            return 0;
        }

        if (cmd_attack->parsed()) {
            nbcv::ExperimentConfig cfg = nbcv::experiment_config_from_json(slurp(config_path));
            auto [train_ds, test_ds] = nbcv::load_dataset(cfg.dataset);
            (void)train_ds;
            nbcv::Network net = nbcv::load_model(model_path);
            double acc = nbcv::pgd_accuracy(
                net, test_ds, radius, cfg.pgd_eval_steps,
                cfg.pgd_eval_step_fraction * radius / double(cfg.pgd_eval_steps),
                cfg.pgd_eval_restarts, seed);
            std::cout << "pgd" << cfg.pgd_eval_steps << "_acc " << 100.0 * acc << "%\n";
            return 0;
        }

        if (cmd_report->parsed()) {
            nbcv::MetricsReport report = nbcv::metrics_from_csv(slurp(out_dir + "/metrics.csv"));
            std::string text = nbcv::report_render(report);
            std::ofstream f(out_dir + "/report.txt");
            f << text;
            std::cout << text;
            return 0;
        }

        if (cmd_gen->parsed()) {
            fs::create_directories(out_dir);
            if (gen_kind == "digits") {
                std::vector<std::size_t> labels;
                std::vector<nbcv::Tensor> train = nbcv::gen_digit_images(gen_train, seed, labels);
                nbcv::write_idx_images(out_dir + "/train-images-idx3-ubyte", train);
                nbcv::write_idx_labels(out_dir + "/train-labels-idx1-ubyte", labels);
                std::vector<nbcv::Tensor> test = nbcv::gen_digit_images(gen_test, seed + 1, labels);
                nbcv::write_idx_images(out_dir + "/t10k-images-idx3-ubyte", test);
                nbcv::write_idx_labels(out_dir + "/t10k-labels-idx1-ubyte", labels);
                std::cout << "wrote " << train.size() << " train / " << test.size()
                          << " test images to " << out_dir << "\n";
            } else {
                nbcv::SyntheticKind kind = gen_kind == "blobs" ? nbcv::SyntheticKind::blobs
                                                               : nbcv::SyntheticKind::moons;
                nbcv::Dataset ds = nbcv::gen_synthetic(kind, gen_train, gen_noise, seed);
                std::ofstream f(out_dir + "/" + gen_kind + ".csv");
                f << nbcv::dataset_to_csv(ds);
                std::cout << "wrote " << ds.size() << " points to " << out_dir << "\n";
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 3;
}
