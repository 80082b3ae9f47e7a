#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "oracles.hpp"
#include "swgrid/error.hpp"
#include "swgrid/grad_check.hpp"
#include "swgrid/model.hpp"
#include "swgrid/random.hpp"

using namespace swgrid;

namespace {

template <typename T>
Tensor<T> random_images(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal());
  return t;
}

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.dims = 2;
  c.side = 2;
  c.base_channels = 4;
  c.classes = 2;
  c.input_size = 8;
  return c;
}

// Random valid topological order: repeatedly pick any ready unit.
std::vector<std::size_t> shuffled_order(const GridTopology& topo, Rng& rng) {
  std::vector<std::size_t> remaining(topo.size());
  for (std::size_t i = 0; i < topo.size(); ++i) remaining[i] = topo.inputs(i).size();
  std::vector<std::size_t> ready, order;
  for (std::size_t i = 0; i < topo.size(); ++i)
    if (remaining[i] == 0) ready.push_back(i);
  while (!ready.empty()) {
    const std::size_t pick = rng.below(ready.size());
    const std::size_t u = ready[pick];
    ready.erase(ready.begin() + static_cast<std::ptrdiff_t>(pick));
    order.push_back(u);
    for (std::size_t v : topo.outputs(u))
      if (--remaining[v] == 0) ready.push_back(v);
  }
  return order;
}

}  // namespace

TEST(SplitLayer, SlicesFollowUnitWidths) {
  const GridSpec spec{2, 4, 16, 32};
  GridBlock<float> block(spec, 32);
  init_msra(block, 1);
  const auto s = block.split_forward(random_images<float>({2, 32, 4, 4}, 2));
  ASSERT_EQ(s.size(), 16u);
  std::size_t total = 0;
  for (std::size_t u = 0; u < s.size(); ++u) {
    EXPECT_EQ(s[u].dim(1), channel_in(spec, block.topology().coord(u)));
    total += s[u].dim(1);
  }
  EXPECT_EQ(total, split_width(spec));
}

TEST(SplitLayer, SingleUnitGetsMinimumWidth) {
  GridBlock<float> block({1, 1, 6, 9}, 12);
  const auto s = block.split_forward(random_images<float>({1, 12, 3, 3}, 3));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].dim(1), 6u);
}

TEST(SplitLayer, ChannelMismatchIsConfigError) {
  GridBlock<float> block({2, 2, 4, 8}, 8);
  EXPECT_THROW(block.split_forward(Tensor<float>({1, 5, 4, 4})), ConfigError);
  EXPECT_THROW(block.forward(Tensor<float>({1, 5, 4, 4})), ConfigError);
}

TEST(GridUnit, OriginTakesSplitOnlyAndWidthsAreChecked) {
  GridUnit<double> unit(UnitCoord{{0, 0}}, 3, 5, 1);
  unit.convs[0].weight = random_images<double>({5, 3, 3, 3}, 4);
  const Tensor<double> s = random_images<double>({2, 3, 4, 4}, 5);
  const Tensor<double> alone = unit.forward(s, {}, nullptr);
  EXPECT_EQ(alone.shape(), (Shape{2, 5, 4, 4}));

  // mean over [s] alone is s itself, so the unit equals its conv chain on s.
  auto bn = unit.norms[0];
  const Tensor<double> direct = relu(batch_norm(conv2d(s, unit.convs[0]), bn));
  EXPECT_EQ(alone.to_vector(), direct.to_vector());

  const std::vector<Tensor<double>> wrong{Tensor<double>({2, 4, 4, 4})};
  EXPECT_THROW(unit.forward(s, wrong, nullptr), InvalidInputError);
}

TEST(GridUnit, OutputWidthFollowsChannelOut) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const GridSpec spec{1 + rng.below(3), 1 + rng.below(3), 2 + rng.below(6), 0};
    GridSpec s = spec;
    s.max_channels = s.min_channels + rng.below(10);
    const std::size_t width = 4;
    GridBlock<float> block(s, width);
    init_msra(block, static_cast<std::uint64_t>(trial));
    const auto outs = block.grid_forward(block.split_forward(random_images<float>({2, width, 3, 3}, 6)));
    for (std::size_t u = 0; u < outs.size(); ++u) {
      EXPECT_EQ(outs[u].dim(1), channel_out(s, block.topology().coord(u)));
    }
  }
}

TEST(GridLayer, ChainFeedsPredecessor) {
  const GridSpec spec{1, 3, 2, 4};
  GridBlock<double> block(spec, 4);
  init_msra(block, 7);
  const auto s = block.split_forward(random_images<double>({2, 4, 3, 3}, 8));
  DataflowTrace trace;
  const auto u = block.grid_forward(s, nullptr, {}, &trace);
  EXPECT_TRUE(trace.consumed[0].empty());
  EXPECT_EQ(trace.consumed[1], (std::vector<std::size_t>{0}));
  EXPECT_EQ(trace.consumed[2], (std::vector<std::size_t>{1}));

  // u_1 = H(s_1, {u_0}) evaluated by hand.
  const std::vector<Tensor<double>> pair{s[1], u[0]};
  auto bn = block.units[1].norms[0];
  const Tensor<double> want = relu(batch_norm(conv2d(mean_combine<double>(pair), block.units[1].convs[0]), bn));
  EXPECT_EQ(u[1].to_vector(), want.to_vector());
}

TEST(GridLayer, EveryUnitConsumesItsPredecessors) {
  const GridSpec spec{3, 3, 3, 9};
  GridBlock<float> block(spec, 6);
  DataflowTrace trace;
  block.grid_forward(block.split_forward(random_images<float>({1, 6, 2, 2}, 9)), nullptr, {}, &trace);
  for (std::size_t u = 0; u < block.topology().size(); ++u) {
    // The split slice is the extra input on top of these.
    EXPECT_EQ(trace.consumed[u].size(), neighbors_in(spec, block.topology().coord(u)).size());
  }
}

TEST(GridLayer, PermutedTopologicalOrderIsBitIdentical) {
  Rng rng(10);
  for (const GridSpec spec : {GridSpec{2, 3, 4, 8}, GridSpec{3, 2, 2, 6}, GridSpec{2, 4, 3, 7}}) {
    GridBlock<float> block(spec, 8);
    init_msra(block, 11);
    const auto s = block.split_forward(random_images<float>({2, 8, 4, 4}, 12));
    const auto base = block.grid_forward(s);
    for (int trial = 0; trial < 5; ++trial) {
      const auto order = shuffled_order(block.topology(), rng);
      const auto again = block.grid_forward(s, nullptr, order);
      for (std::size_t u = 0; u < base.size(); ++u) ASSERT_EQ(base[u].to_vector(), again[u].to_vector());
    }
  }
}

TEST(GridLayer, InvalidOrderIsRejected) {
  GridBlock<float> block({2, 2, 2, 4}, 4);
  const auto s = block.split_forward(random_images<float>({1, 4, 2, 2}, 13));
  const std::vector<std::size_t> backwards{3, 2, 1, 0};
  EXPECT_THROW(block.grid_forward(s, nullptr, backwards), InvalidInputError);
  const std::vector<std::size_t> repeated{0, 1, 1, 3};
  EXPECT_THROW(block.grid_forward(s, nullptr, repeated), InvalidInputError);
}

TEST(GridLayer, DataflowPathsEqualEnumeratedPaths) {
  // Paths implied by the recorded dataflow: every unit starts one (entered from
  // the split), and each consumed edge extends every path ending at the producer.
  for (std::size_t n = 1; n <= 4; ++n)
    for (std::size_t l = 1; l <= 9; ++l) {
      std::size_t units = 1;
      for (std::size_t i = 0; i < n; ++i) units *= l;
      if (units > 81) continue;
      const GridSpec spec{n, l, 1, 2};
      GridBlock<float> block(spec, 2);
      DataflowTrace trace;
      block.grid_forward(block.split_forward(Tensor<float>({1, 2, 1, 1}, 0.5f)), nullptr, {}, &trace);
      const GridTopology& topo = block.topology();

      std::map<std::size_t, std::set<std::vector<UnitCoord>>> ending;  // paths ending at unit u
      std::set<std::vector<UnitCoord>> dataflow;
      for (std::size_t u = 0; u < topo.size(); ++u) {
        auto& mine = ending[u];
        mine.insert({topo.coord(u)});
        for (std::size_t q : trace.consumed[u])
          for (auto path : ending[q]) {
            path.push_back(topo.coord(u));
            mine.insert(path);
          }
        dataflow.insert(mine.begin(), mine.end());
      }
      const auto listed = swgrid::testing::dfs_paths(spec);
      const std::set<std::vector<UnitCoord>> oracle(listed.begin(), listed.end());
      EXPECT_EQ(dataflow, oracle) << "N=" << n << " L=" << l;
      EXPECT_EQ(dataflow.size(), enumerate_paths(spec).total);
    }
}

TEST(JoinLayer, WidthsAndShapes) {
  const GridSpec spec{2, 3, 4, 8};
  GridBlock<float> block(spec, 10);
  const auto u = block.grid_forward(block.split_forward(random_images<float>({2, 10, 5, 5}, 14)));
  std::size_t concat = 0;
  for (const auto& t : u) concat += t.dim(1);
  EXPECT_EQ(concat, join_width(spec));
  const Tensor<float> y = block.join_forward(u);
  EXPECT_EQ(y.shape(), (Shape{2, 10, 5, 5}));

  std::vector<Tensor<float>> short_list(u.begin(), u.end() - 1);
  EXPECT_THROW(block.join_forward(short_list), ConfigError);
}

TEST(GridBlock, ShapePreserved) {
  GridBlock<float> block({2, 4, 16, 32}, 32);
  init_msra(block, 15);
  const Tensor<float> x = random_images<float>({2, 32, 8, 8}, 16);
  EXPECT_EQ(block.forward(x).shape(), x.shape());
}

TEST(GridBlock, ZeroedResidualBranchIsIdentity) {
  GridBlock<float> block({2, 3, 4, 8}, 8);
  init_msra(block, 17);
  block.zero_residual_branch();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor<float> x = random_images<float>({2, 8, 4, 4}, 100 + seed);
    ASSERT_EQ(block.forward(x).to_vector(), x.to_vector());
  }
}

TEST(GridBlock, ZeroedResidualGradientIsAllOnes) {
  GridBlock<double> block({2, 2, 2, 4}, 4);
  init_msra(block, 18);
  block.zero_residual_branch();
  Tensor<double> x = random_images<double>({2, 4, 3, 3}, 19);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(sum(block.forward(x, &tape), &tape));
  // Join output is ReLU(BN(0)) with zero weights, so only the shortcut carries gradient.
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  const auto fd = swgrid::testing::central_difference([&] { return sum(block.forward(x)).item(); }, x);
  for (double g : fd) EXPECT_NEAR(g, 1.0, 1e-6);
}

TEST(GridBlock, GradientsMatchFiniteDifferences) {
  GridBlock<double> block({2, 2, 2, 4}, 4);
  init_msra(block, 20);
  Tensor<double> x = random_images<double>({2, 4, 3, 3}, 21);
  std::vector<Tensor<double>> inputs{x};
  block.visit("b", [&](const std::string&, Tensor<double> t, ParamRole role) {
    if (is_trainable(role)) inputs.push_back(t);
  });
  const auto r = grad_check([&](Tape<double>& t) { return block.forward(x, &t); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Network, ShapeContractAndSpatialTrace) {
  NetworkConfig cfg;
  cfg.dims = 2;
  cfg.side = 2;
  cfg.base_channels = 4;
  Network<float> net(cfg);
  init_msra(net, 1);
  EXPECT_EQ(net.forward(random_images<float>({8, 3, 32, 32}, 2)).shape(), (Shape{8, 10}));
  EXPECT_EQ(cfg.block_resolution(0), 32u);
  EXPECT_EQ(cfg.block_resolution(1), 16u);
  EXPECT_EQ(cfg.block_resolution(2), 8u);
  EXPECT_EQ(net.blocks.size(), 3u);
  EXPECT_EQ(net.transitions.size(), 2u);
  for (std::size_t i = 0; i + 1 < net.blocks.size(); ++i) EXPECT_LE(net.blocks[i].width(), net.blocks[i + 1].width());
}

TEST(Network, SpatialExtentsAlongTheStack) {
  NetworkConfig cfg;
  cfg.dims = 1;
  cfg.side = 2;
  cfg.base_channels = 2;
  Network<float> net(cfg);
  Tensor<float> h = batch_norm(conv2d(random_images<float>({1, 3, 32, 32}, 3), net.stem), net.stem_bn);
  std::vector<std::size_t> trace{h.dim(2)};
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    h = net.blocks[i].forward(h);
    trace.push_back(h.dim(2));
    if (i < net.transitions.size()) h = conv2d(avg_pool2d(h, 2, 2), net.transitions[i].conv);
  }
  trace.push_back(global_avg_pool(h).dim(2));
  EXPECT_EQ(trace, (std::vector<std::size_t>{32, 32, 16, 8, 1}));
}

TEST(Network, WrongGeometryIsConfigError) {
  Network<float> net(tiny_config());
  EXPECT_THROW(net.forward(Tensor<float>({1, 3, 16, 16})), ConfigError);
  EXPECT_THROW(net.forward(Tensor<float>({1, 1, 8, 8})), ConfigError);
}

TEST(Network, TinyDoubleForwardIsFinite) {
  Network<double> net(tiny_config());
  init_msra(net, 3);
  const Tensor<double> logits = net.forward(random_images<double>({4, 3, 8, 8}, 4));
  EXPECT_EQ(logits.shape(), (Shape{4, 2}));
  for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Network, ConfigValidation) {
  NetworkConfig c = tiny_config();
  c.num_blocks = 0;
  EXPECT_THROW(Network<float>{c}, ConfigError);
  c = tiny_config();
  c.input_size = 6;
  EXPECT_THROW(Network<float>{c}, ConfigError);
  c = tiny_config();
  c.classes = 1;
  EXPECT_THROW(Network<float>{c}, ConfigError);
}

TEST(Network, ChannelBookkeepingAgreesWithTopology) {
  Rng rng(22);
  for (int trial = 0; trial < 25; ++trial) {
    NetworkConfig c;
    c.dims = 1 + rng.below(3);
    c.side = 1 + rng.below(3);
    c.base_channels = 1 + rng.below(6);
    c.num_blocks = 1 + rng.below(3);
    c.input_size = 8;
    c.classes = 3;
    Network<float> net(c);
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
      const GridSpec spec = c.block_spec(b);
      const auto& block = net.blocks[b];
      EXPECT_EQ(block.split.conv.out_channels(), split_width(spec));
      EXPECT_EQ(block.join.conv.in_channels(), join_width(spec));
      EXPECT_EQ(block.join.conv.out_channels(), c.block_width(b));
      std::size_t offset = 0;
      for (std::size_t u = 0; u < block.units.size(); ++u) {
        const UnitCoord& coord = block.topology().coord(u);
        EXPECT_EQ(block.units[u].coord, coord);
        EXPECT_EQ(block.split.slices[u].start, offset);
        EXPECT_EQ(block.split.slices[u].length, channel_in(spec, coord));
        EXPECT_EQ(block.units[u].convs[0].in_channels(), channel_in(spec, coord));
        EXPECT_EQ(block.units[u].convs[0].out_channels(), channel_out(spec, coord));
        offset += block.split.slices[u].length;
      }
      EXPECT_EQ(offset, split_width(spec));
    }
  }
}

TEST(Network, UnitDepthStacksConvolutions) {
  NetworkConfig c = tiny_config();
  c.unit_depth = 3;
  Network<float> net(c);
  for (const auto& unit : net.blocks[0].units) {
    ASSERT_EQ(unit.convs.size(), 3u);
    EXPECT_EQ(unit.convs[1].in_channels(), unit.channels_out);
  }
  init_msra(net, 4);
  EXPECT_EQ(net.forward(random_images<float>({2, 3, 8, 8}, 5)).shape(), (Shape{2, 2}));
}

TEST(Network, ParameterNamesAreUnique) {
  Network<float> net(tiny_config());
  std::set<std::string> names;
  std::size_t count = 0;
  net.visit([&](const std::string& name, Tensor<float>, ParamRole) {
    names.insert(name);
    ++count;
  });
  EXPECT_EQ(names.size(), count);
  EXPECT_TRUE(names.count("block0.unit_1_0.conv0.weight"));
  EXPECT_TRUE(names.count("head.weight"));
}

TEST(Network, UnitsHaveIndividualParameters) {
  Network<float> net(tiny_config());
  const auto& units = net.blocks[0].units;
  for (std::size_t i = 0; i < units.size(); ++i)
    for (std::size_t j = i + 1; j < units.size(); ++j) EXPECT_FALSE(units[i].convs[0].weight.is_same(units[j].convs[0].weight));
}

TEST(Init, MsraStandardDeviation) {
  GridBlock<float> block({1, 1, 64, 64}, 64);
  init_msra(block, 2024);
  const Tensor<float>& w = block.units[0].convs[0].weight;
  ASSERT_EQ(w.shape(), (Shape{64, 64, 3, 3}));
  double mean = 0, sq = 0;
  for (float v : w.data()) mean += v;
  mean /= static_cast<double>(w.numel());
  for (float v : w.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(w.numel() - 1));
  const double want = std::sqrt(2.0 / 576.0);
  EXPECT_LT(std::abs(sd - want) / want, 0.10);
  EXPECT_LT(std::abs(mean), 0.1 * want);
}

TEST(Init, BatchNormParametersAreExact) {
  Network<float> net(tiny_config());
  init_msra(net, 9);
  net.visit([](const std::string& name, Tensor<float> t, ParamRole role) {
    for (float v : t.data()) {
      if (role == ParamRole::Gamma || role == ParamRole::RunningVar) ASSERT_EQ(v, 1.0f) << name;
      if (role == ParamRole::Beta || role == ParamRole::RunningMean || role == ParamRole::Bias) ASSERT_EQ(v, 0.0f) << name;
    }
  });
}

TEST(Init, SameSeedIsBitIdenticalAndLogitsMatch) {
  Network<float> a(tiny_config()), b(tiny_config()), c(tiny_config());
  init_msra(a, 5);
  init_msra(b, 5);
  init_msra(c, 6);
  std::vector<float> wa, wb, wc;
  a.visit([&](const std::string&, Tensor<float> t, ParamRole) { wa.insert(wa.end(), t.data().begin(), t.data().end()); });
  b.visit([&](const std::string&, Tensor<float> t, ParamRole) { wb.insert(wb.end(), t.data().begin(), t.data().end()); });
  c.visit([&](const std::string&, Tensor<float> t, ParamRole) { wc.insert(wc.end(), t.data().begin(), t.data().end()); });
  EXPECT_EQ(wa, wb);
  EXPECT_NE(wa, wc);
  const Tensor<float> x = random_images<float>({3, 3, 8, 8}, 6);
  EXPECT_EQ(a.forward(x).to_vector(), b.forward(x).to_vector());
}

TEST(Network, EndToEndGradientCheckTiny) {
  Network<double> net(tiny_config());
  init_msra(net, 1);
  const Tensor<double> images = random_images<double>({2, 3, 8, 8}, 2);
  const std::vector<int> labels{0, 1};
  std::vector<Tensor<double>> params;
  net.visit([&](const std::string&, Tensor<double> t, ParamRole role) {
    if (is_trainable(role)) params.push_back(t);
  });
  // Spot-check a subset here; the acceptance suite covers every parameter.
  std::vector<Tensor<double>> subset{params.front(), params[params.size() / 2], params.back()};
  const auto r = grad_check(
      [&](Tape<double>& t) { return softmax_cross_entropy(net.forward(images, &t), labels, &t); }, subset);
  EXPECT_LT(r.max_rel_error, 1e-4);
}
