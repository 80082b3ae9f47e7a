#include "swgrid/model.hpp"

#include <cmath>
#include <sstream>

#include "swgrid/error.hpp"
#include "swgrid/random.hpp"

namespace swgrid {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

void NetworkConfig::validate() const {
  if (num_blocks == 0) throw ConfigError("network: num_blocks must be >= 1");
  if (classes < 2) throw ConfigError("network: classes must be >= 2");
  if (unit_depth == 0) throw ConfigError("network: unit_depth must be >= 1");
  if (base_channels == 0) throw ConfigError("network: base_channels must be >= 1");
  if (in_channels == 0) throw ConfigError("network: in_channels must be >= 1");
  if (input_size == 0 || input_size % (std::size_t{1} << (num_blocks - 1)) != 0) {
    throw ConfigError("network: input_size " + std::to_string(input_size) + " not divisible by 2^" +
                      std::to_string(num_blocks - 1));
  }
  block_spec(0).validate();
}

GridSpec NetworkConfig::block_spec(std::size_t block) const {
  const std::size_t scale = std::size_t{1} << block;
  return GridSpec{dims, side, base_channels * scale, 2 * base_channels * scale};
}

std::size_t NetworkConfig::block_width(std::size_t block) const {
  return 2 * base_channels * (std::size_t{1} << block);
}

std::size_t NetworkConfig::block_resolution(std::size_t block) const { return input_size >> block; }

std::string NetworkConfig::canonical() const {
  std::ostringstream os;
  os << "dims=" << dims << '\n'
     << "side=" << side << '\n'
     << "base_channels=" << base_channels << '\n'
     << "num_blocks=" << num_blocks << '\n'
     << "classes=" << classes << '\n'
     << "unit_depth=" << unit_depth << '\n'
     << "input_size=" << input_size << '\n'
     << "in_channels=" << in_channels << '\n';
  return os.str();
}

std::uint64_t NetworkConfig::digest() const { return fnv1a64(canonical()); }

template <typename T>
void visit_conv(const std::string& prefix, const ConvParams<T>& conv, const ParamVisitor<T>& visit) {
  visit(prefix + ".weight", conv.weight, ParamRole::Weight);
  if (conv.bias.defined()) visit(prefix + ".bias", conv.bias, ParamRole::Bias);
}

template <typename T>
void visit_batch_norm(const std::string& prefix, const BatchNormState<T>& bn, const ParamVisitor<T>& visit) {
  visit(prefix + ".gamma", bn.gamma, ParamRole::Gamma);
  visit(prefix + ".beta", bn.beta, ParamRole::Beta);
  visit(prefix + ".running_mean", bn.running_mean, ParamRole::RunningMean);
  visit(prefix + ".running_var", bn.running_var, ParamRole::RunningVar);
}

// ---------------------------------------------------------------------------

template <typename T>
SplitLayer<T>::SplitLayer(const GridTopology& topology, std::size_t block_width) {
  std::size_t offset = 0;
  for (std::size_t u = 0; u < topology.size(); ++u) {
    slices.push_back({offset, topology.channel_in(u)});
    offset += topology.channel_in(u);
  }
  conv = make_conv<T>(block_width, offset, 1, 0, false);
  bn = make_batch_norm<T>(offset);
}

template <typename T>
std::vector<Tensor<T>> SplitLayer<T>::forward(const Tensor<T>& x, Tape<T>* tape) {
  if (x.rank() != 4 || x.dim(1) != conv.in_channels()) {
    throw ConfigError("split: expected " + std::to_string(conv.in_channels()) + " input channels, got " +
                      shape_to_string(x.shape()));
  }
  Tensor<T> h = batch_norm(conv2d(x, conv, tape), bn, tape);
  return channel_slice<T>(h, slices, tape);
}

template <typename T>
void SplitLayer<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) const {
  visit_conv(prefix + ".conv", conv, v);
  visit_batch_norm(prefix + ".bn", bn, v);
}

// ---------------------------------------------------------------------------

template <typename T>
GridUnit<T>::GridUnit(UnitCoord coord_, std::size_t channels_in_, std::size_t channels_out_, std::size_t depth)
    : coord(std::move(coord_)), channels_in(channels_in_), channels_out(channels_out_) {
  if (depth == 0) throw ConfigError("unit: depth must be >= 1");
  for (std::size_t i = 0; i < depth; ++i) {
    convs.push_back(make_conv<T>(i == 0 ? channels_in : channels_out, channels_out, 3, 1, false));
    norms.push_back(make_batch_norm<T>(channels_out));
  }
}

template <typename T>
Tensor<T> GridUnit<T>::forward(const Tensor<T>& s, std::span<const Tensor<T>> neighbors, Tape<T>* tape) {
  std::vector<Tensor<T>> inputs;
  inputs.reserve(neighbors.size() + 1);
  inputs.push_back(s);
  inputs.insert(inputs.end(), neighbors.begin(), neighbors.end());
  for (const auto& t : inputs) {
    if (t.rank() != 4 || t.dim(1) != channels_in || t.shape() != s.shape()) {
      throw InvalidInputError("unit " + coord.to_string() + ": input " + shape_to_string(t.shape()) +
                              " does not match width " + std::to_string(channels_in) + " / shape " +
                              shape_to_string(s.shape()));
    }
  }
  Tensor<T> h = inputs.size() == 1 ? s : mean_combine<T>(inputs, tape);
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = relu(batch_norm(conv2d(h, convs[i], tape), norms[i], tape), tape);
  }
  return h;
}

template <typename T>
void GridUnit<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) const {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    visit_conv(prefix + ".conv" + std::to_string(i), convs[i], v);
    visit_batch_norm(prefix + ".bn" + std::to_string(i), norms[i], v);
  }
}

template <typename T>
void GridUnit<T>::set_training(bool training) {
  for (auto& bn : norms) bn.training = training;
}

// ---------------------------------------------------------------------------

template <typename T>
JoinLayer<T>::JoinLayer(std::size_t join_width, std::size_t block_width)
    : conv(make_conv<T>(join_width, block_width, 1, 0, false)), bn(make_batch_norm<T>(block_width)) {}

template <typename T>
Tensor<T> JoinLayer<T>::forward(std::span<const Tensor<T>> unit_outputs, Tape<T>* tape) {
  Tensor<T> joined = channel_concat<T>(unit_outputs, tape);
  if (joined.dim(1) != conv.in_channels()) {
    throw ConfigError("join: concatenated width " + std::to_string(joined.dim(1)) + " != join width " +
                      std::to_string(conv.in_channels()));
  }
  return relu(batch_norm(conv2d(joined, conv, tape), bn, tape), tape);
}

template <typename T>
void JoinLayer<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) const {
  visit_conv(prefix + ".conv", conv, v);
  visit_batch_norm(prefix + ".bn", bn, v);
}

// ---------------------------------------------------------------------------

template <typename T>
GridBlock<T>::GridBlock(GridSpec spec, std::size_t block_width, std::size_t unit_depth)
    : split((spec.validate(), GridTopology(spec)), block_width),
      join(join_width(spec), block_width),
      topology_(spec),
      width_(block_width) {
  for (std::size_t u = 0; u < topology_.size(); ++u) {
    units.emplace_back(topology_.coord(u), topology_.channel_in(u), topology_.channel_out(u), unit_depth);
  }
}

template <typename T>
std::vector<Tensor<T>> GridBlock<T>::split_forward(const Tensor<T>& x, Tape<T>* tape) {
  return split.forward(x, tape);
}

template <typename T>
std::vector<Tensor<T>> GridBlock<T>::grid_forward(std::span<const Tensor<T>> split_outputs, Tape<T>* tape,
                                                  std::span<const std::size_t> order, DataflowTrace* trace) {
  const std::size_t count = topology_.size();
  if (split_outputs.size() != count) {
    throw InvalidInputError("grid: expected " + std::to_string(count) + " split outputs, got " +
                            std::to_string(split_outputs.size()));
  }
  std::vector<std::size_t> canonical;
  if (order.empty()) {
    canonical.resize(count);
    for (std::size_t i = 0; i < count; ++i) canonical[i] = i;
    order = canonical;
  }
  if (order.size() != count) throw InvalidInputError("grid: evaluation order must list every unit once");
  if (trace != nullptr) trace->consumed.assign(count, {});

  std::vector<Tensor<T>> outputs(count);
  std::vector<Tensor<T>> neighbors;
  for (std::size_t u : order) {
    if (u >= count || outputs[u].defined()) throw InvalidInputError("grid: invalid evaluation order");
    neighbors.clear();
    for (std::size_t q : topology_.inputs(u)) {
      if (!outputs[q].defined()) {
        throw InvalidInputError("grid: unit " + topology_.coord(u).to_string() + " scheduled before " +
                                topology_.coord(q).to_string());
      }
      neighbors.push_back(outputs[q]);
      if (trace != nullptr) trace->consumed[u].push_back(q);
    }
    outputs[u] = units[u].forward(split_outputs[u], neighbors, tape);
  }
  return outputs;
}

template <typename T>
Tensor<T> GridBlock<T>::join_forward(std::span<const Tensor<T>> unit_outputs, Tape<T>* tape) {
  return join.forward(unit_outputs, tape);
}

template <typename T>
Tensor<T> GridBlock<T>::forward(const Tensor<T>& x, Tape<T>* tape) {
  if (x.rank() != 4 || x.dim(1) != width_) {
    throw ConfigError("block: expected " + std::to_string(width_) + " channels, got " + shape_to_string(x.shape()));
  }
  std::vector<Tensor<T>> s = split_forward(x, tape);
  std::vector<Tensor<T>> u = grid_forward(s, tape);
  Tensor<T> residual = join_forward(u, tape);
  return add(residual, x, tape);
}

template <typename T>
void GridBlock<T>::zero_residual_branch() {
  for (T& w : join.conv.weight.data()) w = T{0};
  for (T& b : join.bn.beta.data()) b = T{0};
}

template <typename T>
void GridBlock<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) const {
  split.visit(prefix + ".split", v);
  for (const auto& unit : units) {
    std::string name = prefix + ".unit";
    for (std::size_t c : unit.coord.p) name += "_" + std::to_string(c);
    unit.visit(name, v);
  }
  join.visit(prefix + ".join", v);
}

template <typename T>
void GridBlock<T>::set_training(bool training) {
  split.set_training(training);
  for (auto& unit : units) unit.set_training(training);
  join.set_training(training);
}

// ---------------------------------------------------------------------------

template <typename T>
Network<T>::Network(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  stem = make_conv<T>(config_.in_channels, config_.block_width(0), 3, 1, false);
  stem_bn = make_batch_norm<T>(config_.block_width(0));
  for (std::size_t i = 0; i < config_.num_blocks; ++i) {
    blocks.emplace_back(config_.block_spec(i), config_.block_width(i), config_.unit_depth);
    if (i + 1 < config_.num_blocks) {
      transitions.push_back(Transition<T>{make_conv<T>(config_.block_width(i), config_.block_width(i + 1), 1, 0, false),
                                          make_batch_norm<T>(config_.block_width(i + 1))});
    }
  }
  const std::size_t last = config_.block_width(config_.num_blocks - 1);
  head_weight = Tensor<T>::zeros({config_.classes, last});
  head_weight.set_requires_grad(true);
  head_bias = Tensor<T>::zeros({config_.classes});
  head_bias.set_requires_grad(true);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& images, Tape<T>* tape) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels || images.dim(2) != config_.input_size ||
      images.dim(3) != config_.input_size) {
    throw ConfigError("network: expected (B," + std::to_string(config_.in_channels) + "," +
                      std::to_string(config_.input_size) + "," + std::to_string(config_.input_size) +
                      ") images, got " + shape_to_string(images.shape()));
  }
  Tensor<T> h = batch_norm(conv2d(images, stem, tape), stem_bn, tape);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = blocks[i].forward(h, tape);
    if (i < transitions.size()) {
      h = avg_pool2d(h, 2, 2, tape);
      h = batch_norm(conv2d(h, transitions[i].conv, tape), transitions[i].bn, tape);
    }
  }
  h = global_avg_pool(h, tape);
  return linear(h, head_weight, head_bias, tape);
}

template <typename T>
void Network<T>::set_training(bool training) {
  training_ = training;
  stem_bn.training = training;
  for (auto& block : blocks) block.set_training(training);
  for (auto& t : transitions) t.bn.training = training;
}

template <typename T>
void Network<T>::visit(const ParamVisitor<T>& v) const {
  visit_conv("stem.conv", stem, v);
  visit_batch_norm("stem.bn", stem_bn, v);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].visit("block" + std::to_string(i), v);
    if (i < transitions.size()) {
      visit_conv("transition" + std::to_string(i) + ".conv", transitions[i].conv, v);
      visit_batch_norm("transition" + std::to_string(i) + ".bn", transitions[i].bn, v);
    }
  }
  v("head.weight", head_weight, ParamRole::Weight);
  v("head.bias", head_bias, ParamRole::Bias);
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  visit([&](const std::string&, Tensor<T> t, ParamRole role) {
    if (is_trainable(role)) total += t.numel();
  });
  return total;
}

namespace {

template <typename T>
ParamVisitor<T> msra_visitor(Rng& rng) {
  return [&rng](const std::string&, Tensor<T> t, ParamRole role) {
    switch (role) {
      case ParamRole::Weight: {
        const std::size_t fan_in = t.numel() / t.dim(0);
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (T& w : t.data()) w = static_cast<T>(stddev * rng.normal());
        break;
      }
      case ParamRole::Gamma:
      case ParamRole::RunningVar:
        for (T& w : t.data()) w = T{1};
        break;
      case ParamRole::Bias:
      case ParamRole::Beta:
      case ParamRole::RunningMean:
        for (T& w : t.data()) w = T{0};
        break;
    }
  };
}

}  // namespace

template <typename T>
void init_msra(Network<T>& net, std::uint64_t seed) {
  Rng rng(seed);
  net.visit(msra_visitor<T>(rng));
}

template <typename T>
void init_msra(GridBlock<T>& block, std::uint64_t seed) {
  Rng rng(seed);
  block.visit("block", msra_visitor<T>(rng));
}

#define SWGRID_INSTANTIATE_MODEL(T)                                                                     \
  template void visit_conv<T>(const std::string&, const ConvParams<T>&, const ParamVisitor<T>&);        \
  template void visit_batch_norm<T>(const std::string&, const BatchNormState<T>&, const ParamVisitor<T>&); \
  template class SplitLayer<T>;                                                                          \
  template class GridUnit<T>;                                                                            \
  template class JoinLayer<T>;                                                                           \
  template class GridBlock<T>;                                                                           \
  template class Network<T>;                                                                             \
  template void init_msra<T>(Network<T>&, std::uint64_t);                                                \
  template void init_msra<T>(GridBlock<T>&, std::uint64_t);

SWGRID_INSTANTIATE_MODEL(float)
SWGRID_INSTANTIATE_MODEL(double)

}  // namespace swgrid
