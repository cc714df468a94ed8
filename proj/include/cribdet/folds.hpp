// folds.hpp : stratified 8-fold biopsy partition — cribriform regions spread
// first, remaining biopsies balanced by greedy bin packing on region totals.
#pragma once

#include <map>

#include "cribdet/core.hpp"

namespace cribdet {

struct BiopsyLabelProfile {
    std::string biopsy_id;
    std::array<int, kNumLabels> region_count{};

    int cribriform_count() const { return region_count[static_cast<std::size_t>(Label::G4Cribriform)]; }
    bool has_cribriform() const { return cribriform_count() >= 1; }
    int total_regions() const {
        int n = 0;
        for (int c : region_count) n += c;
        return n;
    }
};

BiopsyLabelProfile profile_from_annotations(const AnnotationSet& annotations);

struct FoldAssignment {
    int n_folds = 8;
    std::map<std::string, int> fold_of;
};

// Phase 1: cribriform biopsies by descending cribriform count onto the fold
// with the lowest running cribriform total. Phase 2: the rest by descending
// region total onto the fold with the lowest running grand total. Ties go to
// the lower fold index; the seed fixes the order among equal sort keys.
FoldAssignment partition(const std::vector<BiopsyLabelProfile>& profiles, int n_folds = 8,
                         std::uint64_t seed = 0);

struct FoldRoles {
    std::vector<int> train;
    int validation = 0;
    int test = 0;
};

// validation = (test + 1) mod n_folds; train = the remaining folds.
FoldRoles fold_roles(int n_folds, int test_fold);

}  // namespace cribdet
