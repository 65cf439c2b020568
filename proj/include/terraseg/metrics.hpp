#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "terraseg/types.hpp"

namespace terraseg {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    int64_t total() const { return tp + fp + tn + fn; }
};

struct Scores {
    double accuracy = 0, precision = 0, recall = 0, f1 = 0, mcc = 0;
    // True when a zero denominator forced the 0 convention somewhere.
    bool degenerate = false;
};

struct ClassRow {
    ClassTag tag = ClassTag::Rest;
    double area_share = 0;
    double accuracy = 0;
    double error_part = 0;
};

struct EvalReport {
    ConfusionCounts counts;
    Scores scores;
    double auc = 0;
    bool has_auc = false;
    std::vector<ClassRow> per_class;
    bool error_parts_defined = true;

    std::string to_json() const;
};

// Probability >= threshold counts as positive. Cells where either raster is
// nodata are excluded.
ConfusionCounts confusion(const Raster& pred, const Raster& labels, double threshold = 0.5,
                          const std::string& pred_channel = "prob",
                          const std::string& label_channel = "label");

Scores scores(const ConfusionCounts& c);

// Rank-based Mann-Whitney AUC; ties credited 0.5 via average ranks.
double auc(const std::vector<double>& score_values, const std::vector<int>& labels);

// Per-class accuracy and share of total errors, over valid aligned cells.
std::vector<ClassRow> per_class_report(const Raster& pred, const Raster& labels,
                                       const Raster& classes, double threshold,
                                       bool* error_parts_defined);

// Full report over rasters; AUC computed from per-cell probabilities.
EvalReport evaluate_rasters(const Raster& pred, const Raster& labels, const Raster* classes,
                            double threshold = 0.5);

} // namespace terraseg
