#ifndef NBCV_EXPERIMENT_HPP
#define NBCV_EXPERIMENT_HPP

#include <string>
#include <vector>

#include "nbcv/data.hpp"
#include "nbcv/network.hpp"
#include "nbcv/property.hpp"
#include "nbcv/train.hpp"
#include "nbcv/verifier.hpp"

namespace nbcv {

struct DatasetSpec {
    std::string kind;  // mnist_idx | digits | blobs | moons
    // mnist_idx
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t limit_per_class = 0;
    std::size_t test_limit_per_class = 0;
    // digits
    std::size_t train_per_class = 200, test_per_class = 50;
    // blobs / moons
    std::size_t n_train = 512, n_test = 256;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

std::pair<Dataset, Dataset> load_dataset(const DatasetSpec& spec);

struct MethodSpec {
    std::string name;
    TrainConfig train;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    std::vector<std::size_t> hidden;  // MLP hidden widths
    std::vector<MethodSpec> methods;
    std::vector<double> radii;
    std::size_t k_per_class = 5;
    Budget budget;
    VerifyConfig verify;
    std::size_t pgd_eval_steps = 100;
    double pgd_eval_step_fraction = 2.5;  // step = fraction * eps / steps
    std::size_t pgd_eval_restarts = 1;
    std::size_t jobs = 1;
    std::string out_dir = "out";

    void validate() const;
};

ExperimentConfig experiment_config_from_json(const std::string& text);

struct MetricsRow {
    std::string method;
    double radius = 0.0;
    double test_acc = 0.0;    // percent
    double unsat_pct = 0.0;
    double sat_pct = 0.0;     // kept for the percentage identity, not in the CSV
    double unknown_pct = 0.0;
    double stable_pct = 0.0;
    double time_mean_s = 0.0;
    double time_ut_mean_s = 0.0;  // over UNSAT and UNKNOWN outcomes only
    double pgd100_acc = 0.0;      // percent
    double branches_mean = 0.0;
    std::size_t n_props = 0;
    std::string error;  // nonempty when this row failed
};

struct MetricsReport {
    std::vector<MetricsRow> rows;
    std::string bounds_tag = "ibp+linear";  // which bounds define Stable%
};

// Trains (or loads cached) models, generates k properties per class from the
// test split (misclassified points are kept and fail fast as SAT), verifies
// every property at every radius, and writes metrics.csv, report.txt and
// verdicts/*.json under out_dir. A failing row is recorded and skipped.
MetricsReport run_experiment(const ExperimentConfig& cfg);

std::string metrics_to_csv(const MetricsReport& report);
MetricsReport metrics_from_csv(const std::string& csv);
std::string report_render(const MetricsReport& report);

// first k test points of each class, in file order, paired with true labels
std::vector<std::pair<Tensor, std::size_t>> select_property_inputs(const Dataset& test,
                                                                   std::size_t k_per_class);

}  // namespace nbcv

#endif
