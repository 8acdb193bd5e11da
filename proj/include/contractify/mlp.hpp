#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "contractify/expr.hpp"
#include "contractify/util.hpp"

namespace contractify {

enum class Act { relu, tanh, id };

inline std::string act_name(Act a) {
  switch (a) {
    case Act::relu: return "relu";
    case Act::tanh: return "tanh";
    case Act::id: return "id";
  }
  return "id";
}

inline Act act_from_name(const std::string& s) {
  if (s == "relu") return Act::relu;
  if (s == "tanh") return Act::tanh;
  if (s == "id") return Act::id;
  throw std::runtime_error("unknown activation tag: " + s);
}

/** Dense feed-forward network: y = act(W x + b) per layer. */
struct Mlp {
  struct Layer {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
    Act act = Act::id;
  };
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().w.rows()); }
};

inline void validate_mlp(const Mlp& net) {
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (l.b.size() != l.w.rows())
      throw std::runtime_error("layer " + std::to_string(i) + ": bias length " +
                               std::to_string(l.b.size()) + " != rows " + std::to_string(l.w.rows()));
    if (i > 0 && l.w.cols() != net.layers[i - 1].w.rows())
      throw std::runtime_error("layer " + std::to_string(i) + ": input dim " +
                               std::to_string(l.w.cols()) + " != previous output " +
                               std::to_string(net.layers[i - 1].w.rows()));
    if (!l.w.allFinite() || !l.b.allFinite())
      throw std::runtime_error("layer " + std::to_string(i) + ": non-finite weight or bias");
  }
}

inline Eigen::VectorXd eval(const Mlp& net, const Eigen::VectorXd& x) {
  Eigen::VectorXd h = x;
  for (const auto& l : net.layers) {
    h = (l.w * h + l.b).eval();
    switch (l.act) {
      case Act::relu: h = h.cwiseMax(0.0); break;
      case Act::tanh: h = h.array().tanh().matrix(); break;
      case Act::id: break;
    }
  }
  return h;
}

inline nlohmann::json to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) row.push_back(l.w(r, c));
      w.push_back(row);
    }
    nlohmann::json b = nlohmann::json::array();
    for (Eigen::Index r = 0; r < l.b.size(); ++r) b.push_back(l.b(r));
    layers.push_back({{"w", w}, {"b", b}, {"act", act_name(l.act)}});
  }
  return {{"input_dim", net.input_dim()}, {"layers", layers}};
}

inline Mlp mlp_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.contains("input_dim") || !j.contains("layers"))
    throw std::runtime_error(where + ": missing input_dim or layers");
  Mlp net;
  const auto& layers = j.at("layers");
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& lj = layers[i];
    if (!lj.contains("w") || !lj.contains("b") || !lj.contains("act"))
      throw std::runtime_error(where + ": layer " + std::to_string(i) + " missing w/b/act");
    const auto& wj = lj.at("w");
    if (wj.empty() || wj[0].empty())
      throw std::runtime_error(where + ": layer " + std::to_string(i) + " has empty weight");
    Mlp::Layer l;
    l.w.resize(wj.size(), wj[0].size());
    for (size_t r = 0; r < wj.size(); ++r) {
      if (wj[r].size() != wj[0].size())
        throw std::runtime_error(where + ": layer " + std::to_string(i) + " ragged weight rows");
      for (size_t c = 0; c < wj[r].size(); ++c) l.w(r, c) = wj[r][c].get<double>();
    }
    const auto& bj = lj.at("b");
    l.b.resize(bj.size());
    for (size_t r = 0; r < bj.size(); ++r) l.b(r) = bj[r].get<double>();
    l.act = act_from_name(lj.at("act").get<std::string>());
    net.layers.push_back(std::move(l));
  }
  if (net.input_dim() != j.at("input_dim").get<int>())
    throw std::runtime_error(where + ": input_dim " + std::to_string(j.at("input_dim").get<int>()) +
                             " != layer 0 width " + std::to_string(net.input_dim()));
  validate_mlp(net);
  return net;
}

inline void save_weights(const Mlp& net, const std::string& path) {
  validate_mlp(net);
  atomic_write_file(path, to_json(net).dump(2) + "\n");
}

inline Mlp load_weights(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return mlp_from_json(j, path);
}

/** Flat parameter layout (row-major weights, then bias, per layer). */
inline std::vector<double> pack(const Mlp& net) {
  std::vector<double> flat;
  for (const auto& l : net.layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r)
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) flat.push_back(l.w(r, c));
    for (Eigen::Index r = 0; r < l.b.size(); ++r) flat.push_back(l.b(r));
  }
  return flat;
}

[[nodiscard]] inline Mlp unpack(const Mlp& arch, const std::vector<double>& flat) {
  Mlp net = arch;
  size_t k = 0;
  for (auto& l : net.layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r)
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = flat.at(k++);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b(r) = flat.at(k++);
  }
  if (k != flat.size()) throw std::invalid_argument("unpack: flat size does not match architecture");
  return net;
}

/** Handles for one declared set of network parameters, reusable across instantiations. */
struct MlpParamNodes {
  std::vector<int> w_nodes;
  std::vector<int> b_nodes;
  std::vector<std::pair<int, int>> shapes;  // rows, cols per layer
  std::vector<Act> acts;
};

inline MlpParamNodes declare_mlp_params(GraphBuilder& b, const Mlp& net) {
  MlpParamNodes h;
  for (const auto& l : net.layers) {
    int r = static_cast<int>(l.w.rows()), c = static_cast<int>(l.w.cols());
    h.w_nodes.push_back(b.param(r * c));
    h.b_nodes.push_back(b.param(r));
    h.shapes.emplace_back(r, c);
    h.acts.push_back(l.act);
  }
  return h;
}

inline int instantiate_mlp(GraphBuilder& b, const MlpParamNodes& h, int in_node) {
  int cur = in_node;
  for (size_t i = 0; i < h.shapes.size(); ++i) {
    auto [r, c] = h.shapes[i];
    cur = b.add(b.matvec(h.w_nodes[i], cur, r, c), h.b_nodes[i]);
    switch (h.acts[i]) {
      case Act::relu: cur = b.relu(cur); break;
      case Act::tanh: cur = b.tanh(cur); break;
      case Act::id: break;
    }
  }
  return cur;
}

/** Bake weights in as constants (for fixed policies and frozen certificates). */
inline int append_mlp_const(GraphBuilder& b, const Mlp& net, int in_node) {
  int cur = in_node;
  for (const auto& l : net.layers) {
    int r = static_cast<int>(l.w.rows()), c = static_cast<int>(l.w.cols());
    std::vector<double> w(r * c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) w[i * c + j] = l.w(i, j);
    std::vector<double> bias(l.b.data(), l.b.data() + l.b.size());
    cur = b.add(b.matvec(b.constant(w), cur, r, c), b.constant(bias));
    switch (l.act) {
      case Act::relu: cur = b.relu(cur); break;
      case Act::tanh: cur = b.tanh(cur); break;
      case Act::id: break;
    }
  }
  return cur;
}

}  // namespace contractify
