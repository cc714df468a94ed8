#include "cribdet/folds.hpp"

#include <algorithm>
#include <numeric>

namespace cribdet {

BiopsyLabelProfile profile_from_annotations(const AnnotationSet& annotations) {
    annotations.validate();
    BiopsyLabelProfile p;
    p.biopsy_id = annotations.biopsy_id;
    for (const auto& r : annotations.regions) p.region_count[static_cast<std::size_t>(label_code(r.label))]++;
    return p;
}

FoldAssignment partition(const std::vector<BiopsyLabelProfile>& profiles, int n_folds, std::uint64_t seed) {
    require(n_folds >= 2, Errc::InvalidArgument, "need at least 2 folds");
    require(!profiles.empty(), Errc::InvalidArgument, "no biopsy profiles");
    require(static_cast<std::size_t>(n_folds) <= profiles.size(), Errc::InvalidArgument,
            "more folds than biopsies");
    for (std::size_t i = 0; i < profiles.size(); ++i)
        for (std::size_t j = i + 1; j < profiles.size(); ++j)
            require(profiles[i].biopsy_id != profiles[j].biopsy_id, Errc::InvalidArgument,
                    "duplicate biopsy id " + profiles[i].biopsy_id);

    // Seeded shuffle fixes the order among equal sort keys reproducibly.
    std::vector<std::size_t> order(profiles.size());
    std::iota(order.begin(), order.end(), 0);
    auto eng = rng::make_engine(rng::derive_seed(seed, 0xF01D5ULL));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng::below(eng, static_cast<std::uint32_t>(i))]);

    std::vector<std::size_t> crib, rest;
    for (std::size_t idx : order)
        (profiles[idx].has_cribriform() ? crib : rest).push_back(idx);
    std::stable_sort(crib.begin(), crib.end(), [&](std::size_t a, std::size_t b) {
        return profiles[a].cribriform_count() > profiles[b].cribriform_count();
    });
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
        return profiles[a].total_regions() > profiles[b].total_regions();
    });

    FoldAssignment out;
    out.n_folds = n_folds;
    std::vector<long> crib_total(static_cast<std::size_t>(n_folds), 0);
    std::vector<long> grand_total(static_cast<std::size_t>(n_folds), 0);
    auto lowest = [&](const std::vector<long>& totals) {
        int best = 0;
        for (int f = 1; f < n_folds; ++f)
            if (totals[static_cast<std::size_t>(f)] < totals[static_cast<std::size_t>(best)]) best = f;
        return best;
    };
    for (std::size_t idx : crib) {
        const int f = lowest(crib_total);
        out.fold_of[profiles[idx].biopsy_id] = f;
        crib_total[static_cast<std::size_t>(f)] += profiles[idx].cribriform_count();
        grand_total[static_cast<std::size_t>(f)] += profiles[idx].total_regions();
    }
    for (std::size_t idx : rest) {
        const int f = lowest(grand_total);
        out.fold_of[profiles[idx].biopsy_id] = f;
        grand_total[static_cast<std::size_t>(f)] += profiles[idx].total_regions();
    }
    return out;
}

FoldRoles fold_roles(int n_folds, int test_fold) {
    require(n_folds >= 2, Errc::InvalidArgument, "need at least 2 folds");
    require(test_fold >= 0 && test_fold < n_folds, Errc::InvalidArgument,
            "test fold index " + std::to_string(test_fold) + " out of range");
    FoldRoles roles;
    roles.test = test_fold;
    roles.validation = (test_fold + 1) % n_folds;
    for (int f = 0; f < n_folds; ++f)
        if (f != roles.test && f != roles.validation) roles.train.push_back(f);
    return roles;
}

}  // namespace cribdet
