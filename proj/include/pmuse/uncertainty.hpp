#pragma once

// Step-level perplexity per functional region, branch-point selection, and
// trajectory confidence.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "pmuse/model.hpp"

namespace pmuse {

struct StepPPL {
  std::string trajectory_id;
  std::uint32_t step_index = 0;
  RegionTag region = RegionTag::Reasoning;
  std::optional<double> ppl;  // nullopt when the region has no tokens
  std::size_t token_count = 0;

  bool operator==(const StepPPL&) const = default;
};

struct BranchPoint {
  std::string trajectory_id;
  std::uint32_t step_index = 0;
  RegionTag region = RegionTag::Reasoning;
  double ppl = 1.0;
  std::uint32_t allocated_branches = 0;

  bool operator==(const BranchPoint&) const = default;
};

/// exp of the mean negative logprob over the step's tokens in `region`.
inline StepPPL step_ppl(const Step& step, RegionTag region, std::string trajectory_id = {}) {
  StepPPL out{std::move(trajectory_id), step.index, region, std::nullopt, 0};
  auto tokens = step.region_tokens(region);
  out.token_count = tokens.size();
  if (tokens.empty()) return out;
  double nll = 0.0;
  for (const auto& t : tokens) nll -= t.logprob;
  out.ppl = std::exp(nll / static_cast<double>(tokens.size()));
  return out;
}

inline std::vector<StepPPL> region_ppl_series(const Trajectory& traj, RegionTag region) {
  std::vector<StepPPL> out;
  out.reserve(traj.steps.size());
  for (const auto& s : traj.steps) out.push_back(step_ppl(s, region, traj.id));
  return out;
}

/// Indices of the `n` most uncertain steps, highest PPL first; ties go to the
/// lower step index. Steps with no region tokens are skipped.
inline std::vector<std::uint32_t> top_uncertainty_steps(const Trajectory& traj, RegionTag region, std::size_t n) {
  if (n == 0) fail(ErrorCode::InvalidArgument, "n must be positive");
  std::vector<StepPPL> defined;
  for (auto& e : region_ppl_series(traj, region))
    if (e.ppl) defined.push_back(std::move(e));
  std::stable_sort(defined.begin(), defined.end(), [](const StepPPL& a, const StepPPL& b) {
    if (*a.ppl != *b.ppl) return *a.ppl > *b.ppl;
    return a.step_index < b.step_index;
  });
  if (defined.size() > n) defined.resize(n);
  std::vector<std::uint32_t> out;
  for (const auto& e : defined) out.push_back(e.step_index);
  return out;
}

namespace detail {

// Pooled ranking of every defined (trajectory, step) PPL in one region.
// Order: PPL descending, then lower step index, then trajectory id.
inline std::vector<BranchPoint> pooled_ranking(std::span<const Trajectory> pool, RegionTag region) {
  std::vector<BranchPoint> ranked;
  for (const auto& traj : pool)
    for (const auto& s : traj.steps)
      if (auto p = step_ppl(s, region, traj.id); p.ppl) ranked.push_back({traj.id, s.index, region, *p.ppl, 0});
  std::sort(ranked.begin(), ranked.end(), [](const BranchPoint& a, const BranchPoint& b) {
    if (a.ppl != b.ppl) return a.ppl > b.ppl;
    return std::tie(a.step_index, a.trajectory_id) < std::tie(b.step_index, b.trajectory_id);
  });
  return ranked;
}

}  // namespace detail

/// Picks the k most uncertain steps across all initial trajectories.
///
/// Single-region strategies take the global top-k of that region's PPL.
/// Mixed alternates between the reasoning and exploration rankings,
/// reasoning first, skipping a (trajectory, step) pair already taken; when
/// one ranking runs dry the other supplies the remaining picks. The result
/// holds min(k, distinct defined steps) points in pick order.
inline std::vector<BranchPoint> select_branch_points(std::span<const Trajectory> initial, RegionStrategy strategy,
                                                     std::size_t k) {
  if (k == 0) fail(ErrorCode::InvalidArgument, "k must be positive");

  std::vector<BranchPoint> picked;
  if (strategy != RegionStrategy::Mixed) {
    auto region = strategy == RegionStrategy::Reasoning ? RegionTag::Reasoning : RegionTag::Exploration;
    picked = detail::pooled_ranking(initial, region);
    if (picked.size() > k) picked.resize(k);
  } else {
    auto rankings = std::array{detail::pooled_ranking(initial, RegionTag::Reasoning),
                               detail::pooled_ranking(initial, RegionTag::Exploration)};
    std::array<std::size_t, 2> cursor{0, 0};
    std::set<std::pair<std::string, std::uint32_t>> taken;
    std::size_t turn = 0;
    while (picked.size() < k) {
      bool progressed = false;
      for (std::size_t attempt = 0; attempt < 2 && !progressed; ++attempt) {
        std::size_t r = (turn + attempt) % 2;
        auto& list = rankings[r];
        while (cursor[r] < list.size()) {
          const auto& cand = list[cursor[r]++];
          if (taken.emplace(cand.trajectory_id, cand.step_index).second) {
            picked.push_back(cand);
            progressed = true;
            break;
          }
        }
      }
      if (!progressed) break;
      turn = (turn + 1) % 2;
    }
  }
  if (picked.empty()) fail(ErrorCode::InsufficientSteps, "no step has a defined PPL in the selected region");
  return picked;
}

/// Geometric-mean token probability over every model-generated token.
inline double trajectory_confidence(const Trajectory& traj) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : traj.steps) {
    for (const auto& t : s.reasoning_tokens) sum += t.logprob;
    n += s.reasoning_tokens.size();
    if (s.tool_call) {
      for (const auto& t : s.tool_call->raw_tokens) sum += t.logprob;
      n += s.tool_call->raw_tokens.size();
    }
  }
  if (n == 0) fail(ErrorCode::EmptyTrajectory, "trajectory '" + traj.id + "' has no generated tokens");
  return std::exp(sum / static_cast<double>(n));
}

}  // namespace pmuse
