#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <vector>

#include "contractify/expr.hpp"
#include "contractify/mlp.hpp"
#include "test_helpers.hpp"

using namespace contractify;
using Catch::Matchers::ContainsSubstring;

namespace {

Mlp tiny_121() {
  // 1 -> 2 -> 1 with every weight 0.5 and zero biases
  Mlp net;
  Mlp::Layer l0;
  l0.w = Eigen::MatrixXd::Constant(2, 1, 0.5);
  l0.b = Eigen::VectorXd::Zero(2);
  l0.act = Act::tanh;
  Mlp::Layer l1;
  l1.w = Eigen::MatrixXd::Constant(1, 2, 0.5);
  l1.b = Eigen::VectorXd::Zero(1);
  l1.act = Act::id;
  net.layers = {l0, l1};
  return net;
}

Mlp random_net(const std::vector<int>& dims, Act hidden, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mlp net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Mlp::Layer l;
    l.w = Eigen::MatrixXd::NullaryExpr(dims[i + 1], dims[i], [&] { return u(rng); });
    l.b = Eigen::VectorXd::NullaryExpr(dims[i + 1], [&] { return u(rng); });
    l.act = (i + 2 == dims.size()) ? Act::id : hidden;
    net.layers.push_back(std::move(l));
  }
  return net;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("forward evaluation matches hand computation", "[mlp]") {
  Mlp net = tiny_121();
  validate_mlp(net);
  CHECK(net.input_dim() == 1);
  CHECK(net.output_dim() == 1);

  Eigen::VectorXd x(1);
  x << 1.0;
  double y = eval(net, x)(0);
  // both hidden units see 0.5, so the sum collapses back to tanh(0.5)
  CHECK(y == Catch::Approx(std::tanh(0.5)).margin(1e-15));
  CHECK(y == Catch::Approx(0.46211715726000974).margin(1e-12));
}

TEST_CASE("weights survive a save/load round trip bit for bit", "[mlp]") {
  std::mt19937_64 rng(11);
  Mlp net = random_net({3, 5, 4, 2}, Act::relu, rng);
  std::string path = temp_path("contractify_mlp_roundtrip.json");
  save_weights(net, path);
  Mlp back = load_weights(path);
  std::remove(path.c_str());

  std::vector<double> a = pack(net), b = pack(back);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  REQUIRE(back.layers.size() == net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    CHECK(back.layers[i].act == net.layers[i].act);
}

TEST_CASE("malformed networks are rejected with the offending layer", "[mlp]") {
  std::mt19937_64 rng(12);
  Mlp net = random_net({2, 4, 1}, Act::tanh, rng);

  Mlp bad_chain = net;
  bad_chain.layers[1].w = Eigen::MatrixXd::Zero(1, 3);  // expects 4 inputs
  CHECK_THROWS_WITH(validate_mlp(bad_chain), ContainsSubstring("layer 1"));

  Mlp bad_bias = net;
  bad_bias.layers[0].b = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_WITH(validate_mlp(bad_bias), ContainsSubstring("layer 0"));

  Mlp bad_value = net;
  bad_value.layers[0].w(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH(validate_mlp(bad_value), ContainsSubstring("non-finite"));

  CHECK_THROWS_WITH(act_from_name("gelu"), ContainsSubstring("unknown activation"));

  nlohmann::json j = to_json(net);
  j["layers"][1]["w"] = {{1.0, 2.0, 3.0}};
  CHECK_THROWS_WITH(mlp_from_json(j, "unit-test"), ContainsSubstring("unit-test"));
}

TEST_CASE("pack and unpack are mutually inverse", "[mlp]") {
  std::mt19937_64 rng(13);
  Mlp net = random_net({2, 6, 6, 3}, Act::tanh, rng);
  std::vector<double> flat = pack(net);
  Mlp rebuilt = unpack(net, flat);
  std::vector<double> flat2 = pack(rebuilt);
  REQUIRE(flat.size() == flat2.size());
  CHECK(std::memcmp(flat.data(), flat2.data(), flat.size() * sizeof(double)) == 0);

  std::vector<double> short_flat(flat.begin(), flat.end() - 1);
  CHECK_THROWS_WITH(unpack(net, short_flat), ContainsSubstring("flat size"));

  // unpack actually moves the weights it is given
  std::vector<double> shifted = flat;
  for (double& v : shifted) v += 1.0;
  Mlp moved = unpack(net, shifted);
  CHECK(moved.layers[0].w(0, 0) == net.layers[0].w(0, 0) + 1.0);
}

TEST_CASE("graph instantiation reproduces the direct forward pass", "[mlp]") {
  std::mt19937_64 rng(14);
  Mlp net = random_net({2, 8, 8, 1}, Act::tanh, rng);

  // parameterized instantiation, fed from pack()
  GraphBuilder b;
  int x = b.input(2);
  MlpParamNodes nodes = declare_mlp_params(b, net);
  int out = instantiate_mlp(b, nodes, x);
  b.output(out);
  ExprGraph g = b.build();
  std::vector<double> theta = pack(net);

  // constant embedding of the same weights
  GraphBuilder bc;
  int xc = bc.input(2);
  bc.output(append_mlp_const(bc, net, xc));
  ExprGraph gc = bc.build();

  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int k = 0; k < 50; ++k) {
    Eigen::VectorXd xe(2);
    xe << u(rng), u(rng);
    double direct = eval(net, xe)(0);
    std::vector<double> pt = {xe(0), xe(1)};
    CHECK(eval_graph(g, pt, theta)[0] == Catch::Approx(direct).margin(1e-12));
    CHECK(eval_graph(gc, pt, {})[0] == Catch::Approx(direct).margin(1e-12));
  }

  // reverse-mode gradients through the network match central differences
  for (int k = 0; k < 10; ++k) {
    std::vector<double> pt = {u(rng), u(rng)};
    Gradients ad = gradient(g, g.outputs()[0], pt, theta);
    testutil::FdGrads fd = testutil::fd_gradient(g, pt, theta);
    for (std::size_t i = 0; i < ad.input.size(); ++i)
      CHECK(testutil::rel_err(ad.input[i], fd.input[i]) < 1e-5);
    for (std::size_t i = 0; i < ad.param.size(); ++i)
      CHECK(testutil::rel_err(ad.param[i], fd.param[i]) < 1e-5);
  }
}
