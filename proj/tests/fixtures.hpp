// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared taxonomy fixtures for unit and acceptance tests.

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "fgzsd/rng.hpp"
#include "fgzsd/taxonomy.hpp"

namespace fgzsd::test {

inline std::string numbered(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
    return buf;
}

/// 36 orders / 140 families / 579 genera / 1432 species, with the requested
/// number of multi-species genera; the rest are single-species genera.
inline std::vector<TaxonomyRow> birds_scale_rows(std::size_t multi_species_genera) {
    constexpr std::size_t orders = 36, families = 140, genera = 579, species = 1432;
    const std::size_t singles = genera - multi_species_genera;
    const std::size_t spread = species - singles;
    std::vector<TaxonomyRow> rows;
    std::size_t next_species = 0;
    for (std::size_t g = 0; g < genera; ++g) {
        const std::size_t family = g % families;
        const std::size_t order = family % orders;
        std::size_t count = 1;
        if (g < multi_species_genera) {
            count = spread / multi_species_genera + (g < spread % multi_species_genera ? 1 : 0);
        }
        for (std::size_t s = 0; s < count; ++s) {
            rows.push_back({numbered("species", next_species++),
                            {numbered("order", order), numbered("family", family), numbered("genus", g)}});
        }
    }
    return rows;
}

/// Random tree with `ancestor_levels` internal levels below the root and
/// `leaves` leaves; branching names are drawn from a small alphabet so
/// siblings and shared ancestors are common.
inline std::vector<TaxonomyRow> random_rows(Rng& rng, std::size_t ancestor_levels, std::size_t leaves) {
    std::vector<TaxonomyRow> rows;
    for (std::size_t i = 0; i < leaves; ++i) {
        TaxonomyRow r{numbered("leaf", i), {}};
        for (std::size_t l = 0; l < ancestor_levels; ++l) r.ancestors.push_back("n" + std::to_string(l) + "_" + std::to_string(rng.below(3)));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace fgzsd::test
