#pragma once

#include <cstdint>
#include <vector>

#include "camforge/tensor.hpp"

namespace camforge::seeding {

// per-pixel class ids; 0 = background, 1..S-1 = foreground
struct LabelMask {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> ids;

    LabelMask() = default;
    LabelMask(std::size_t h_, std::size_t w_) : h(h_), w(w_), ids(h_ * w_, 0) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return ids[y * w + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return ids[y * w + x]; }
    bool operator==(const LabelMask&) const = default;
};

// per-class min-max normalization to [0,1]; a constant map normalizes to
// all zeros (no localization evidence)
inline Tensor normalize_cam(const Tensor& cam) {
    if (cam.rank() != 3) throw std::invalid_argument("normalize_cam: expected rank-3, got " + cam.shape_str());
    Tensor out = cam;
    const std::size_t classes = cam.dim(0), hw = cam.dim(1) * cam.dim(2);
    for (std::size_t s = 0; s < classes; ++s) {
        double lo = cam.data[s * hw], hi = cam.data[s * hw];
        for (std::size_t i = 0; i < hw; ++i) {
            lo = std::min(lo, cam.data[s * hw + i]);
            hi = std::max(hi, cam.data[s * hw + i]);
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < hw; ++i)
            out.data[s * hw + i] = range > 0 ? (cam.data[s * hw + i] - lo) / range : 0.0;
    }
    return out;
}

// background where the max normalized score falls strictly below ht;
// argmax ties resolve to the lowest class id
inline LabelMask assign_labels(const Tensor& normalized, double ht) {
    if (normalized.rank() != 3)
        throw std::invalid_argument("assign_labels: expected rank-3, got " + normalized.shape_str());
    if (!(ht >= 0.0 && ht <= 1.0))
        throw std::invalid_argument("assign_labels: ht must be in [0,1], got " + std::to_string(ht));
    const std::size_t classes = normalized.dim(0);
    const std::size_t h = normalized.dim(1), w = normalized.dim(2);
    LabelMask mask(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double best = normalized.at(0, y, x);
            std::size_t best_s = 0;
            for (std::size_t s = 1; s < classes; ++s) {
                const double v = normalized.at(s, y, x);
                if (v > best) {
                    best = v;
                    best_s = s;
                }
            }
            mask.at(y, x) = best < ht ? 0 : static_cast<std::uint8_t>(best_s + 1);
        }
    return mask;
}

// S x S confusion counts, gt-major
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t s) : num_classes(s), counts(s * s, 0) {}

    void accumulate(const LabelMask& pred, const LabelMask& gt) {
        if (pred.h != gt.h || pred.w != gt.w)
            throw std::invalid_argument("miou: mask shape mismatch");
        for (std::size_t i = 0; i < pred.ids.size(); ++i) {
            if (pred.ids[i] >= num_classes || gt.ids[i] >= num_classes)
                throw std::invalid_argument("miou: class id out of range");
            ++counts[gt.ids[i] * num_classes + pred.ids[i]];
        }
    }

    void merge(const ConfusionMatrix& o) {
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    }
};

struct MiouResult {
    double miou = 0.0;
    std::vector<double> per_class;  // meaningful only where present[c]
    std::vector<bool> present;      // class occurs in pred or gt
};

// classes absent from both pred and gt are excluded from the mean
inline MiouResult miou_from_confusion(const ConfusionMatrix& cm) {
    const std::size_t s = cm.num_classes;
    MiouResult r;
    r.per_class.assign(s, 0.0);
    r.present.assign(s, false);
    double sum = 0.0;
    std::size_t considered = 0;
    for (std::size_t c = 0; c < s; ++c) {
        std::uint64_t inter = cm.counts[c * s + c];
        std::uint64_t uni = 0;
        for (std::size_t j = 0; j < s; ++j) uni += cm.counts[c * s + j] + cm.counts[j * s + c];
        uni -= inter;
        if (uni == 0) continue;
        r.present[c] = true;
        r.per_class[c] = static_cast<double>(inter) / static_cast<double>(uni);
        sum += r.per_class[c];
        ++considered;
    }
    r.miou = considered > 0 ? sum / static_cast<double>(considered) : 0.0;
    return r;
}

inline MiouResult miou(const LabelMask& pred, const LabelMask& gt, std::size_t num_classes) {
    ConfusionMatrix cm(num_classes);
    cm.accumulate(pred, gt);
    return miou_from_confusion(cm);
}

struct SweepResult {
    std::vector<double> thresholds;
    std::vector<double> miou;
};

// one global confusion matrix per threshold over the whole set
inline SweepResult sweep(const std::vector<Tensor>& cams, const std::vector<LabelMask>& gts,
                         std::size_t num_classes, const std::vector<double>& thresholds) {
    if (thresholds.empty()) throw std::invalid_argument("sweep: empty threshold list");
    if (cams.size() != gts.size()) throw std::invalid_argument("sweep: cams/gts size mismatch");
    std::vector<Tensor> normalized;
    normalized.reserve(cams.size());
    for (const auto& c : cams) normalized.push_back(normalize_cam(c));
    SweepResult res;
    for (double ht : thresholds) {
        ConfusionMatrix cm(num_classes);
        for (std::size_t i = 0; i < normalized.size(); ++i)
            cm.accumulate(assign_labels(normalized[i], ht), gts[i]);
        res.thresholds.push_back(ht);
        res.miou.push_back(miou_from_confusion(cm).miou);
    }
    return res;
}

}  // namespace camforge::seeding
