#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "atoken/cce.hpp"
#include "atoken/error.hpp"
#include "atoken/fmcore.hpp"

namespace atoken {

/// Query-key pair accounting of the adaptive stages against full attention
/// over the pixel grid at every stage.
struct RunMetrics {
    std::vector<std::size_t> stage_token_counts;  // n_0, n_1, ..., n_N
    std::vector<std::uint64_t> pair_counts;       // n_l * n_{l-1}, per stage
    std::uint64_t adaptive_pairs = 0;
    std::uint64_t grid_pairs = 0;  // n_0^2 * N
    double reduction_factor = 0.0;
    std::vector<std::pair<std::string, double>> phase_ms;  // wall clock, not part of the deterministic output
};

inline RunMetrics compute_run_metrics(std::size_t n0, std::span<const std::size_t> schedule) {
    require(n0 >= 1 && !schedule.empty(), "metrics need a grid and at least one stage");
    RunMetrics m;
    m.stage_token_counts.push_back(n0);
    m.stage_token_counts.insert(m.stage_token_counts.end(), schedule.begin(), schedule.end());
    for (std::size_t l = 1; l < m.stage_token_counts.size(); ++l) {
        std::uint64_t pairs = std::uint64_t{m.stage_token_counts[l]} * m.stage_token_counts[l - 1];
        m.pair_counts.push_back(pairs);
        m.adaptive_pairs += pairs;
    }
    m.grid_pairs = std::uint64_t{n0} * n0 * schedule.size();
    m.reduction_factor = static_cast<double>(m.grid_pairs) / static_cast<double>(m.adaptive_pairs);
    return m;
}

/// Mean pixel area of the final tokens seen from the highest- and
/// lowest-scoring tenth of the pixels.
struct FocusStats {
    double mean_area_top = 0.0;
    double mean_area_bottom = 0.0;
    std::size_t decile_size = 0;
};

inline FocusStats adaptive_focus(const TokenSet& final_tokens, const ScoreMap& s) {
    require(s.width() == final_tokens.grid_width() && s.height() == final_tokens.grid_height(),
            "score map does not match the token grid");
    std::size_t n = s.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return s[a] > s[b]; });
    auto owners = final_tokens.pixel_owners();
    auto area = [&](std::uint32_t p) { return static_cast<double>(final_tokens.regions()[owners[p]].size()); };
    FocusStats f;
    f.decile_size = std::max<std::size_t>(1, n / 10);
    for (std::size_t i = 0; i < f.decile_size; ++i) {
        f.mean_area_top += area(order[i]);
        f.mean_area_bottom += area(order[n - 1 - i]);
    }
    f.mean_area_top /= static_cast<double>(f.decile_size);
    f.mean_area_bottom /= static_cast<double>(f.decile_size);
    return f;
}

}  // namespace atoken
