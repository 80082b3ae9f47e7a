#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "swgrid/grid_topology.hpp"
#include "swgrid/ops.hpp"

namespace swgrid {

/// Classifier geometry. Block i uses a grid with channel range
/// (k * 2^i, 2k * 2^i) and an external width of 2k * 2^i, where k is
/// `base_channels`; resolution halves between blocks.
struct NetworkConfig {
  std::size_t dims = 2;
  std::size_t side = 4;
  std::size_t base_channels = 16;
  std::size_t num_blocks = 3;
  std::size_t classes = 10;
  /// Number of [conv3x3, BN, ReLU] stages inside each unit.
  std::size_t unit_depth = 1;
  std::size_t input_size = 32;
  std::size_t in_channels = 3;

  void validate() const;
  GridSpec block_spec(std::size_t block) const;
  std::size_t block_width(std::size_t block) const;
  std::size_t block_resolution(std::size_t block) const;

  /// Stable `key=value` lines; the basis of the checkpoint digest.
  std::string canonical() const;
  std::uint64_t digest() const;

  bool operator==(const NetworkConfig&) const = default;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

enum class ParamRole { Weight, Bias, Gamma, Beta, RunningMean, RunningVar };

/// True for tensors updated by the optimizer.
inline bool is_trainable(ParamRole role) {
  return role != ParamRole::RunningMean && role != ParamRole::RunningVar;
}

/// Receives (name, tensor handle, role). Handles share storage with the model.
template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>, ParamRole)>;

template <typename T>
void visit_conv(const std::string& prefix, const ConvParams<T>& conv, const ParamVisitor<T>& visit);
template <typename T>
void visit_batch_norm(const std::string& prefix, const BatchNormState<T>& bn, const ParamVisitor<T>& visit);

/// 1x1 conv + BN from the block width to split_width, sliced per unit.
template <typename T>
class SplitLayer {
 public:
  SplitLayer(const GridTopology& topology, std::size_t block_width);

  /// One tensor per unit, indexed by topological position.
  std::vector<Tensor<T>> forward(const Tensor<T>& x, Tape<T>* tape) ;
  void visit(const std::string& prefix, const ParamVisitor<T>& visit) const;
  void set_training(bool training) { bn.training = training; }

  ConvParams<T> conv;
  BatchNormState<T> bn;
  /// Channel range of each unit's input inside the split output.
  std::vector<ChannelRange> slices;
};

/// One processing unit: mean over its inputs, then [conv3x3, BN, ReLU] x depth.
template <typename T>
class GridUnit {
 public:
  GridUnit(UnitCoord coord, std::size_t channels_in, std::size_t channels_out, std::size_t depth);

  /// `s` from the split layer, `neighbors` the outputs of neighbors_in(coord).
  Tensor<T> forward(const Tensor<T>& s, std::span<const Tensor<T>> neighbors, Tape<T>* tape);
  void visit(const std::string& prefix, const ParamVisitor<T>& visit) const;
  void set_training(bool training);

  UnitCoord coord;
  std::size_t channels_in;
  std::size_t channels_out;
  std::vector<ConvParams<T>> convs;
  std::vector<BatchNormState<T>> norms;
};

/// Concatenation of all unit outputs, then 1x1 conv + BN + ReLU to the block width.
template <typename T>
class JoinLayer {
 public:
  JoinLayer(std::size_t join_width, std::size_t block_width);

  Tensor<T> forward(std::span<const Tensor<T>> unit_outputs, Tape<T>* tape);
  void visit(const std::string& prefix, const ParamVisitor<T>& visit) const;
  void set_training(bool training) { bn.training = training; }

  ConvParams<T> conv;
  BatchNormState<T> bn;
};

/// For each unit (topological index), the producers whose outputs it consumed.
struct DataflowTrace {
  std::vector<std::vector<std::size_t>> consumed;
};

/// Residual block y = join(grid(split(x))) + x.
template <typename T>
class GridBlock {
 public:
  GridBlock(GridSpec spec, std::size_t block_width, std::size_t unit_depth = 1);

  std::vector<Tensor<T>> split_forward(const Tensor<T>& x, Tape<T>* tape = nullptr);

  /// Evaluates every unit. `order` (topological indices) defaults to the
  /// canonical order and must list every unit after its predecessors.
  std::vector<Tensor<T>> grid_forward(std::span<const Tensor<T>> split_outputs, Tape<T>* tape = nullptr,
                                      std::span<const std::size_t> order = {}, DataflowTrace* trace = nullptr);

  Tensor<T> join_forward(std::span<const Tensor<T>> unit_outputs, Tape<T>* tape = nullptr);

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr);

  /// Zeroes the join conv and BN shift so the residual branch outputs 0.
  void zero_residual_branch();

  void visit(const std::string& prefix, const ParamVisitor<T>& visit) const;
  void set_training(bool training);

  const GridTopology& topology() const noexcept { return topology_; }
  std::size_t width() const noexcept { return width_; }

  SplitLayer<T> split;
  std::vector<GridUnit<T>> units;
  JoinLayer<T> join;

 private:
  GridTopology topology_;
  std::size_t width_;
};

/// Downsampling between blocks: avg-pool 2x2 then 1x1 conv + BN.
template <typename T>
struct Transition {
  ConvParams<T> conv;
  BatchNormState<T> bn;
};

/// stem conv3x3+BN -> blocks with transitions -> global pool -> linear.
template <typename T>
class Network {
 public:
  explicit Network(NetworkConfig config);

  /// images (B, in_channels, input_size, input_size) -> logits (B, classes).
  Tensor<T> forward(const Tensor<T>& images, Tape<T>* tape = nullptr);

  void set_training(bool training);
  bool training() const noexcept { return training_; }

  /// Deterministic traversal of every parameter and BN statistic.
  void visit(const ParamVisitor<T>& visit) const;

  /// Number of trainable scalars.
  std::size_t parameter_count() const;

  const NetworkConfig& config() const noexcept { return config_; }

  ConvParams<T> stem;
  BatchNormState<T> stem_bn;
  std::vector<GridBlock<T>> blocks;
  std::vector<Transition<T>> transitions;
  Tensor<T> head_weight;
  Tensor<T> head_bias;

 private:
  NetworkConfig config_;
  bool training_ = true;
};

/// Zero-mean normal weights with std sqrt(2 / fan_in); BN to identity; biases 0.
template <typename T>
void init_msra(Network<T>& net, std::uint64_t seed);

/// Same as above for a single block.
template <typename T>
void init_msra(GridBlock<T>& block, std::uint64_t seed);

}  // namespace swgrid
