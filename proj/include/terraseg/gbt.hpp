#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "terraseg/features.hpp"

namespace terraseg {

struct GbtConfig {
    int num_trees = 400;
    double learning_rate = 0.1;
    int max_depth = 7;
    int min_leaf = 20;
    int num_bins = 64;
    double l2_lambda = 1.0;
    int patience = 20;
    uint64_t seed = 0;

    void validate() const;
};

struct GbtNode {
    // feature < 0 marks a leaf; children index into the node vector.
    int32_t feature = -1;
    double threshold = 0.0;
    int32_t left = -1, right = -1;
    double value = 0.0;
};

struct GbtTree {
    std::vector<GbtNode> nodes; // root at 0
    double eval(const double* features) const;
};

struct GbtModel {
    double base_score = 0.0; // logit of the training prior
    double learning_rate = 0.1;
    int n_features = kFeatureDim;
    std::vector<GbtTree> trees;

    double raw_score(const double* features) const;
    double predict(const FeatureVector& fv) const; // probability in (0, 1)
    bool single_class = false;
};

struct GbtFitTrace {
    std::vector<double> train_loss; // mean logistic loss per boosting round
    std::vector<double> valid_accuracy;
    int best_round = 0;
};

// Histogram gradient boosting on logistic loss with equal-frequency bins;
// early-stops on validation accuracy and returns the best snapshot.
GbtModel fit_gbt(const FeatureTable& train, const FeatureTable& valid, const GbtConfig& cfg,
                 GbtFitTrace* trace = nullptr);

std::vector<double> predict_gbt(const GbtModel& model, const FeatureTable& table);

// "TSGB": magic, u32 version, config echo, base/lr/n_features, trees
// serialized pre-order; little-endian.
void save_gbt(const std::string& path, const GbtModel& model, const GbtConfig& cfg);
GbtModel load_gbt(const std::string& path, GbtConfig* cfg = nullptr);

} // namespace terraseg
