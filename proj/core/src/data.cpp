#include "nestcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "nestcl/errors.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

std::size_t Dataset::lesion_count() const {
    std::size_t n = 0;
    for (const auto& p : patients) n += p.lesions.size();
    return n;
}

void GenConfig::validate() const {
    if (num_patients < 1) throw ConfigError("num_patients must be >= 1");
    if (lesions_min < 1) throw ConfigError("lesions_min must be >= 1");
    if (lesions_max < lesions_min) throw ConfigError("lesions_max < lesions_min");
    if (image_dim < 1 || patient_meta_dim < 1 || lesion_meta_dim < 1 || latent_dim < 1)
        throw ConfigError("all dims must be >= 1");
    if (!(malignant_rate > 0.0 && malignant_rate < 1.0))
        throw ConfigError("malignant_rate must be in (0,1)");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0))
        throw ConfigError("missing_rate must be in [0,1)");
    if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale must be >= 0");
    if (planted_feature_boost < 1.0)
        throw ConfigError("planted_feature_boost must be >= 1");
    if (planted_feature_index >= lesion_meta_dim)
        throw ConfigError("planted_feature_index out of range");
}

namespace {

struct FlatRef {
    std::size_t patient = 0;
    std::size_t lesion = 0;
};

std::vector<FlatRef> flatten_refs(const Dataset& ds) {
    std::vector<FlatRef> refs;
    refs.reserve(ds.lesion_count());
    for (std::size_t p = 0; p < ds.patients.size(); ++p) {
        for (std::size_t l = 0; l < ds.patients[p].lesions.size(); ++l) {
            refs.push_back({p, l});
        }
    }
    return refs;
}

Dataset dataset_shell(const Dataset& ds) {
    Dataset out;
    out.image_dim = ds.image_dim;
    out.num_classes = ds.num_classes;
    out.patient_features = ds.patient_features;
    out.lesion_features = ds.lesion_features;
    return out;
}

// Regroups the picked lesions under their patient, preserving the dataset's
// patient and lesion order.
Dataset collect(const Dataset& ds, const std::vector<std::vector<bool>>& take) {
    Dataset out = dataset_shell(ds);
    for (std::size_t p = 0; p < ds.patients.size(); ++p) {
        PatientRecord rec;
        rec.patient_id = ds.patients[p].patient_id;
        rec.patient_meta = ds.patients[p].patient_meta;
        rec.patient_missing = ds.patients[p].patient_missing;
        for (std::size_t l = 0; l < ds.patients[p].lesions.size(); ++l) {
            if (take[p][l]) rec.lesions.push_back(ds.patients[p].lesions[l]);
        }
        if (!rec.lesions.empty()) out.patients.push_back(std::move(rec));
    }
    return out;
}

} // namespace

std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec) {
    if (dataset.patients.empty()) throw SplitError("dataset is empty");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw SplitError("train_fraction must be in (0,1)");

    const std::size_t total = dataset.lesion_count();
    std::vector<std::vector<bool>> in_train(dataset.patients.size());
    for (std::size_t p = 0; p < dataset.patients.size(); ++p) {
        in_train[p].assign(dataset.patients[p].lesions.size(), false);
    }

    if (spec.mode == SplitMode::LesionLevel) {
        auto refs = flatten_refs(dataset);
        Rng rng(spec.seed);
        rng.shuffle(refs);
        const auto n_train =
            static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(total)));
        if (n_train == 0 || n_train == total) throw SplitError("a split would be empty");
        for (std::size_t i = 0; i < n_train; ++i) {
            in_train[refs[i].patient][refs[i].lesion] = true;
        }
    } else {
        // Whole patients, greedy by descending lesion count (ties by id),
        // each assigned to train while that moves the train lesion count
        // closer to fraction * total.
        std::vector<std::size_t> order(dataset.patients.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const std::size_t na = dataset.patients[a].lesions.size();
            const std::size_t nb = dataset.patients[b].lesions.size();
            if (na != nb) return na > nb;
            return dataset.patients[a].patient_id < dataset.patients[b].patient_id;
        });
        const double target = spec.train_fraction * static_cast<double>(total);
        double train_total = 0.0;
        for (const std::size_t p : order) {
            const auto n = static_cast<double>(dataset.patients[p].lesions.size());
            if (std::abs(train_total + n - target) < std::abs(train_total - target)) {
                std::fill(in_train[p].begin(), in_train[p].end(), true);
                train_total += n;
            }
        }
        if (train_total == 0.0 || train_total == static_cast<double>(total))
            throw SplitError("a split would be empty");
    }

    std::vector<std::vector<bool>> in_eval(in_train.size());
    for (std::size_t p = 0; p < in_train.size(); ++p) {
        in_eval[p].resize(in_train[p].size());
        for (std::size_t l = 0; l < in_train[p].size(); ++l) in_eval[p][l] = !in_train[p][l];
    }
    auto train = collect(dataset, in_train);
    auto eval = collect(dataset, in_eval);
    if (train.patients.empty() || eval.patients.empty())
        throw SplitError("a split would be empty");
    return {std::move(train), std::move(eval)};
}

Dataset subsample_labels(const Dataset& train, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw LowShotError("fraction must be in (0,1]");
    Dataset out = train;
    if (fraction == 1.0) return out;

    auto refs = flatten_refs(train);
    const std::size_t n = refs.size();
    if (n == 0) throw LowShotError("train split has no lesions");

    std::set<int> classes;
    for (const auto& r : refs) classes.insert(train.patients[r.patient].lesions[r.lesion].label);
    if (classes.size() < 2) throw LowShotError("train split has a single class");

    const auto keep = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(n)));
    if (keep < classes.size())
        throw LowShotError("label budget below class count; a class cannot be represented");

    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    // One lesion per class first (first occurrence in shuffled order), then
    // fill the remaining budget in shuffled order.
    std::vector<bool> selected(n, false);
    std::set<int> covered;
    std::size_t taken = 0;
    for (const std::size_t i : order) {
        const int label = train.patients[refs[i].patient].lesions[refs[i].lesion].label;
        if (!covered.count(label)) {
            covered.insert(label);
            selected[i] = true;
            ++taken;
        }
    }
    for (const std::size_t i : order) {
        if (taken >= keep) break;
        if (!selected[i]) {
            selected[i] = true;
            ++taken;
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        out.patients[refs[i].patient].lesions[refs[i].lesion].labeled = selected[i];
    }
    return out;
}

} // namespace nestcl
