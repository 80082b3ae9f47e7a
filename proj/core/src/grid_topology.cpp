#include "swgrid/grid_topology.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "swgrid/error.hpp"

namespace swgrid {

void GridSpec::validate() const {
  if (dims == 0) throw ConfigError("grid: dims must be >= 1");
  if (side == 0) throw ConfigError("grid: side must be >= 1");
  if (min_channels == 0) throw ConfigError("grid: min_channels must be >= 1");
  if (max_channels < min_channels) throw ConfigError("grid: max_channels must be >= min_channels");
}

std::size_t GridSpec::unit_count(std::size_t limit) const {
  std::size_t count = 1;
  for (std::size_t i = 0; i < dims; ++i) {
    if (count > limit / side) {
      throw ResourceError("grid: " + std::to_string(side) + "^" + std::to_string(dims) + " units exceed limit " +
                          std::to_string(limit));
    }
    count *= side;
  }
  if (count > limit) throw ResourceError("grid: unit count exceeds limit " + std::to_string(limit));
  return count;
}

std::size_t UnitCoord::rank() const { return std::accumulate(p.begin(), p.end(), std::size_t{0}); }

std::string UnitCoord::to_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < p.size(); ++i) os << (i ? "," : "") << p[i];
  os << ')';
  return os.str();
}

std::size_t PathHistogram::max_depth() const {
  for (std::size_t d = counts.size(); d-- > 1;) {
    if (counts[d] != 0) return d;
  }
  return 0;
}

namespace {

void check_coord(const GridSpec& spec, const UnitCoord& p) {
  if (p.p.size() != spec.dims) {
    throw InvalidInputError("coordinate " + p.to_string() + " has wrong dimension for dims=" +
                            std::to_string(spec.dims));
  }
  for (std::size_t v : p.p) {
    if (v >= spec.side) throw InvalidInputError("coordinate " + p.to_string() + " outside side " +
                                                std::to_string(spec.side));
  }
}

std::size_t lex_index(const GridSpec& spec, const UnitCoord& p) {
  std::size_t index = 0;
  for (std::size_t v : p.p) index = index * spec.side + v;
  return index;
}

std::size_t interpolate_width(const GridSpec& spec, std::size_t numerator) {
  const std::size_t denominator = 1 + spec.max_rank();
  return spec.min_channels + (spec.max_channels - spec.min_channels) * numerator / denominator;
}

}  // namespace

std::vector<UnitCoord> unit_coords(const GridSpec& spec) {
  spec.validate();
  const std::size_t count = spec.unit_count();
  std::vector<UnitCoord> coords;
  coords.reserve(count);
  UnitCoord current{std::vector<std::size_t>(spec.dims, 0)};
  for (std::size_t i = 0; i < count; ++i) {
    coords.push_back(current);
    for (std::size_t axis = spec.dims; axis-- > 0;) {
      if (++current.p[axis] < spec.side) break;
      current.p[axis] = 0;
    }
  }
  return coords;
}

std::vector<UnitCoord> neighbors_in(const GridSpec& spec, const UnitCoord& p) {
  check_coord(spec, p);
  std::vector<UnitCoord> out;
  for (std::size_t m = 0; m < spec.dims; ++m) {
    if (p.p[m] > 0) {
      UnitCoord q = p;
      --q.p[m];
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::vector<UnitCoord> neighbors_out(const GridSpec& spec, const UnitCoord& p) {
  check_coord(spec, p);
  std::vector<UnitCoord> out;
  for (std::size_t m = 0; m < spec.dims; ++m) {
    if (p.p[m] + 1 < spec.side) {
      UnitCoord q = p;
      ++q.p[m];
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::size_t channel_in(const GridSpec& spec, const UnitCoord& p) {
  check_coord(spec, p);
  return interpolate_width(spec, p.rank());
}

std::size_t channel_out(const GridSpec& spec, const UnitCoord& p) {
  check_coord(spec, p);
  return interpolate_width(spec, p.rank() + 1);
}

std::size_t split_width(const GridSpec& spec) {
  std::size_t total = 0;
  for (const auto& p : unit_coords(spec)) total += channel_in(spec, p);
  return total;
}

std::size_t join_width(const GridSpec& spec) {
  std::size_t total = 0;
  for (const auto& p : unit_coords(spec)) total += channel_out(spec, p);
  return total;
}

std::vector<UnitCoord> topological_order(const GridSpec& spec) {
  std::vector<UnitCoord> coords = unit_coords(spec);
  std::stable_sort(coords.begin(), coords.end(),
                   [](const UnitCoord& a, const UnitCoord& b) { return a.rank() < b.rank(); });
  return coords;
}

PathHistogram enumerate_paths(const GridSpec& spec) {
  spec.validate();
  const std::size_t count = spec.unit_count(kMaxEnumeratedUnits);
  const std::size_t max_depth = spec.max_path_depth();

  // Layered: paths[u] holds the number of depth-d paths whose first unit is u,
  // built from the depth d-1 layer of u's successors.
  const GridTopology topo(spec);
  PathHistogram hist;
  hist.counts.assign(max_depth + 1, 0);
  std::vector<std::uint64_t> paths(count, 1), next(count, 0);
  for (std::size_t d = 1; d <= max_depth; ++d) {
    if (d > 1) {
      for (std::size_t u = 0; u < count; ++u) {
        std::uint64_t acc = 0;
        for (std::size_t v : topo.outputs(u)) {
          if (__builtin_add_overflow(acc, paths[v], &acc)) {
            throw ResourceError("enumerate_paths: path count overflows 64 bits");
          }
        }
        next[u] = acc;
      }
      paths.swap(next);
    }
    for (std::size_t u = 0; u < count; ++u) {
      if (__builtin_add_overflow(hist.counts[d], paths[u], &hist.counts[d]) ||
          __builtin_add_overflow(hist.total, paths[u], &hist.total)) {
        throw ResourceError("enumerate_paths: path count overflows 64 bits");
      }
    }
  }
  return hist;
}

GridTopology::GridTopology(GridSpec spec) : spec_(spec) {
  coords_ = topological_order(spec_);
  const std::size_t count = coords_.size();
  lex_to_topo_.assign(count, 0);
  for (std::size_t i = 0; i < count; ++i) lex_to_topo_[lex_index(spec_, coords_[i])] = i;
  inputs_.resize(count);
  outputs_.resize(count);
  channel_in_.resize(count);
  channel_out_.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (const auto& q : neighbors_in(spec_, coords_[i])) inputs_[i].push_back(index_of(q));
    for (const auto& q : neighbors_out(spec_, coords_[i])) outputs_[i].push_back(index_of(q));
    channel_in_[i] = swgrid::channel_in(spec_, coords_[i]);
    channel_out_[i] = swgrid::channel_out(spec_, coords_[i]);
  }
}

std::size_t GridTopology::index_of(const UnitCoord& p) const {
  check_coord(spec_, p);
  return lex_to_topo_[lex_index(spec_, p)];
}

}  // namespace swgrid
