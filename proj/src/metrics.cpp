#include "terraseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace terraseg {

ConfusionCounts confusion(const Raster& pred, const Raster& labels, double threshold,
                          const std::string& pred_channel, const std::string& label_channel) {
    if (!pred.aligned_with(labels)) throw validation_error("confusion: misaligned rasters");
    const auto& p = pred.channel(pred_channel);
    const auto& l = labels.channel(label_channel);
    double nd_p = pred.nodata(pred_channel);
    double nd_l = labels.nodata(label_channel);
    ConfusionCounts c;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] == nd_p || l[i] == nd_l) continue;
        bool hat = p[i] >= threshold;
        bool truth = l[i] != 0.0;
        if (hat && truth)
            ++c.tp;
        else if (hat && !truth)
            ++c.fp;
        else if (!hat && truth)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

Scores scores(const ConfusionCounts& c) {
    Scores s;
    auto ratio = [&s](double num, double den) {
        if (den == 0.0) {
            s.degenerate = true;
            return 0.0;
        }
        return num / den;
    };
    double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    s.accuracy = ratio(tp + tn, tp + tn + fp + fn);
    s.precision = ratio(tp, tp + fp);
    s.recall = ratio(tp, tp + fn);
    s.f1 = (s.precision + s.recall) == 0.0 ? (s.degenerate = true, 0.0)
                                           : 2.0 * s.precision * s.recall /
                                                 (s.precision + s.recall);
    double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) {
        s.degenerate = true;
        s.mcc = 0.0;
    } else {
        s.mcc = (tp * tn - fp * fn) / std::sqrt(denom);
    }
    return s;
}

double auc(const std::vector<double>& score_values, const std::vector<int>& labels) {
    if (score_values.size() != labels.size()) throw validation_error("auc: size mismatch");
    size_t pos = 0, neg = 0;
    for (int l : labels) (l != 0 ? pos : neg)++;
    if (pos == 0 || neg == 0) throw validation_error("auc: both classes required");

    std::vector<size_t> order(score_values.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return score_values[a] < score_values[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() &&
               score_values[order[j + 1]] == score_values[order[i]])
            ++j;
        // Average rank for the tie block [i, j], 1-based ranks.
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double n_pos = static_cast<double>(pos), n_neg = static_cast<double>(neg);
    return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

std::vector<ClassRow> per_class_report(const Raster& pred, const Raster& labels,
                                       const Raster& classes, double threshold,
                                       bool* error_parts_defined) {
    if (!pred.aligned_with(labels) || !pred.aligned_with(classes))
        throw validation_error("per_class_report: misaligned rasters");
    const auto& p = pred.channel("prob");
    const auto& l = labels.channel("label");
    const auto& cl = classes.channel("class_tag");
    double nd_p = pred.nodata("prob");
    double nd_l = labels.nodata("label");
    double nd_c = classes.nodata("class_tag");

    int64_t valid[kClassTagCount] = {0};
    int64_t correct[kClassTagCount] = {0};
    int64_t total_valid = 0, total_errors = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] == nd_p || l[i] == nd_l || cl[i] == nd_c) continue;
        int code = static_cast<int>(cl[i]);
        if (code < 0 || code >= kClassTagCount)
            throw validation_error("per_class_report: class code out of range");
        bool hat = p[i] >= threshold;
        bool truth = l[i] != 0.0;
        ++valid[code];
        ++total_valid;
        if (hat == truth)
            ++correct[code];
        else
            ++total_errors;
    }

    if (error_parts_defined != nullptr) *error_parts_defined = total_errors > 0;
    std::vector<ClassRow> rows;
    for (int code = 0; code < kClassTagCount; ++code) {
        ClassRow r;
        r.tag = static_cast<ClassTag>(code);
        r.area_share = total_valid > 0 ? static_cast<double>(valid[code]) / total_valid : 0.0;
        r.accuracy = valid[code] > 0 ? static_cast<double>(correct[code]) / valid[code] : 0.0;
        r.error_part = total_errors > 0
                           ? static_cast<double>(valid[code] - correct[code]) / total_errors
                           : 0.0;
        rows.push_back(r);
    }
    return rows;
}

EvalReport evaluate_rasters(const Raster& pred, const Raster& labels, const Raster* classes,
                            double threshold) {
    EvalReport rep;
    rep.counts = confusion(pred, labels, threshold);
    rep.scores = scores(rep.counts);

    const auto& p = pred.channel("prob");
    const auto& l = labels.channel("label");
    double nd_p = pred.nodata("prob");
    double nd_l = labels.nodata("label");
    std::vector<double> sc;
    std::vector<int> lb;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] == nd_p || l[i] == nd_l) continue;
        sc.push_back(p[i]);
        lb.push_back(l[i] != 0.0 ? 1 : 0);
    }
    bool has_pos = std::find(lb.begin(), lb.end(), 1) != lb.end();
    bool has_neg = std::find(lb.begin(), lb.end(), 0) != lb.end();
    if (has_pos && has_neg) {
        rep.auc = auc(sc, lb);
        rep.has_auc = true;
    }
    if (classes != nullptr)
        rep.per_class = per_class_report(pred, labels, *classes, threshold,
                                         &rep.error_parts_defined);
    return rep;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["tp"] = counts.tp;
    j["fp"] = counts.fp;
    j["tn"] = counts.tn;
    j["fn"] = counts.fn;
    j["accuracy"] = scores.accuracy;
    j["precision"] = scores.precision;
    j["recall"] = scores.recall;
    j["f1"] = scores.f1;
    j["mcc"] = scores.mcc;
    j["auc"] = has_auc ? nlohmann::json(auc) : nlohmann::json();
    j["degenerate_scores"] = scores.degenerate;
    j["error_parts_defined"] = error_parts_defined;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : per_class) {
        rows.push_back({{"class", class_tag_name(r.tag)},
                        {"area_share", r.area_share},
                        {"accuracy", r.accuracy},
                        {"error_part", r.error_part}});
    }
    j["per_class"] = rows;
    return j.dump(1);
}

} // namespace terraseg
