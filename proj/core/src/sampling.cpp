#include "nestcl/sampling.hpp"

#include <algorithm>
#include <numeric>

#include "nestcl/errors.hpp"

namespace nestcl {

void SamplerConfig::validate() const {
    if (batch_patients < 1) throw ConfigError("batch_patients must be >= 1");
    if (max_lesions < 1) throw ConfigError("max_lesions must be >= 1");
}

std::vector<std::size_t> select_lesions(const PatientRecord& patient, std::size_t max_lesions,
                                        bool positive_sampling, Rng& rng) {
    const std::size_t n = patient.lesions.size();
    std::vector<std::size_t> picked;
    if (n <= max_lesions) {
        picked.resize(n);
        std::iota(picked.begin(), picked.end(), std::size_t{0});
        return picked;
    }

    if (positive_sampling) {
        std::vector<std::size_t> malignant, benign;
        for (std::size_t l = 0; l < n; ++l) {
            (patient.lesions[l].label != 0 ? malignant : benign).push_back(l);
        }
        if (malignant.size() > max_lesions) {
            for (const std::size_t i : rng.sample_without_replacement(malignant.size(), max_lesions)) {
                picked.push_back(malignant[i]);
            }
        } else {
            picked = malignant;
            const std::size_t fill = max_lesions - malignant.size();
            for (const std::size_t i : rng.sample_without_replacement(benign.size(), fill)) {
                picked.push_back(benign[i]);
            }
        }
    } else {
        picked = rng.sample_without_replacement(n, max_lesions);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

std::vector<Batch> sample_epoch(const Dataset& dataset, const SamplerConfig& cfg,
                                std::uint64_t epoch) {
    cfg.validate();
    if (dataset.patients.empty()) throw EmptyDataset("sampler needs at least one patient");

    Rng rng(mix_seed(cfg.seed, epoch));
    std::vector<std::size_t> order(dataset.patients.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_patients) {
        const std::size_t stop = std::min(start + cfg.batch_patients, order.size());
        Batch batch;
        for (std::size_t i = start; i < stop; ++i) {
            PatientSelection sel;
            sel.patient = order[i];
            sel.lesions = select_lesions(dataset.patients[order[i]], cfg.max_lesions,
                                         cfg.positive_sampling, rng);
            batch.push_back(std::move(sel));
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

} // namespace nestcl
