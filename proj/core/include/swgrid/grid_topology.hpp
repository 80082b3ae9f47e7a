#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace swgrid {

/// Shape of one grid layer: `dims`-dimensional hypercube of side `side`, with
/// unit widths interpolated between `min_channels` and `max_channels`.
struct GridSpec {
  std::size_t dims = 1;
  std::size_t side = 1;
  std::size_t min_channels = 1;
  std::size_t max_channels = 1;

  /// Throws ConfigError on an invalid combination.
  void validate() const;

  /// side^dims; throws ResourceError past `limit`.
  std::size_t unit_count(std::size_t limit = SIZE_MAX) const;

  /// Largest coordinate sum, dims * (side - 1).
  std::size_t max_rank() const { return dims * (side - 1); }

  /// Deepest path measured in units visited, max_rank() + 1.
  std::size_t max_path_depth() const { return max_rank() + 1; }

  /// Longest path measured in unit-to-unit hops, max_rank().
  std::size_t max_path_hops() const { return max_rank(); }

  bool operator==(const GridSpec&) const = default;
};

/// Coordinate (p_0, ..., p_{N-1}) of a processing unit.
struct UnitCoord {
  std::vector<std::size_t> p;

  std::size_t rank() const;
  std::string to_string() const;

  auto operator<=>(const UnitCoord&) const = default;
};

/// Number of processing paths per depth. `counts[d]` holds depth d; index 0 is unused.
struct PathHistogram {
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  std::uint64_t at(std::size_t depth) const { return depth < counts.size() ? counts[depth] : 0; }
  /// Largest depth with a nonzero count (0 when empty).
  std::size_t max_depth() const;
};

/// Guard on the unit count accepted by enumerate_paths.
inline constexpr std::size_t kMaxEnumeratedUnits = 1'000'000;

/// All side^dims coordinates in lexicographic order (p_0 most significant).
std::vector<UnitCoord> unit_coords(const GridSpec& spec);

/// Predecessors p - e_m for every axis m with p_m > 0, in axis order.
std::vector<UnitCoord> neighbors_in(const GridSpec& spec, const UnitCoord& p);

/// Successors p + e_m for every axis m with p_m < side - 1, in axis order.
std::vector<UnitCoord> neighbors_out(const GridSpec& spec, const UnitCoord& p);

/// floor(c_min + (c_max - c_min) * rank / (1 + N(L-1))), evaluated exactly in integers.
std::size_t channel_in(const GridSpec& spec, const UnitCoord& p);

/// floor(c_min + (c_max - c_min) * (1 + rank) / (1 + N(L-1))).
std::size_t channel_out(const GridSpec& spec, const UnitCoord& p);

/// Sum of channel_in over all units: the split layer's output width.
std::size_t split_width(const GridSpec& spec);

/// Sum of channel_out over all units: the join layer's input width.
std::size_t join_width(const GridSpec& spec);

/// Histogram of monotone unit sequences by number of units visited.
/// Computed by dynamic programming over ranks; throws ResourceError when the
/// grid exceeds kMaxEnumeratedUnits or a count overflows 64 bits.
PathHistogram enumerate_paths(const GridSpec& spec);

/// Units sorted by rank, ties broken lexicographically.
std::vector<UnitCoord> topological_order(const GridSpec& spec);

/// Index-based view of a grid layer used by the model. Units are indexed by
/// their position in topological_order().
class GridTopology {
 public:
  explicit GridTopology(GridSpec spec);

  const GridSpec& spec() const noexcept { return spec_; }
  std::size_t size() const noexcept { return coords_.size(); }

  const UnitCoord& coord(std::size_t unit) const { return coords_.at(unit); }
  const std::vector<UnitCoord>& coords() const noexcept { return coords_; }

  /// Indices of neighbors_in(coord(unit)), in axis order.
  const std::vector<std::size_t>& inputs(std::size_t unit) const { return inputs_.at(unit); }
  const std::vector<std::size_t>& outputs(std::size_t unit) const { return outputs_.at(unit); }

  std::size_t channel_in(std::size_t unit) const { return channel_in_.at(unit); }
  std::size_t channel_out(std::size_t unit) const { return channel_out_.at(unit); }

  /// Topological index of a coordinate.
  std::size_t index_of(const UnitCoord& p) const;

 private:
  GridSpec spec_;
  std::vector<UnitCoord> coords_;
  std::vector<std::size_t> lex_to_topo_;
  std::vector<std::vector<std::size_t>> inputs_;
  std::vector<std::vector<std::size_t>> outputs_;
  std::vector<std::size_t> channel_in_;
  std::vector<std::size_t> channel_out_;
};

}  // namespace swgrid
