#pragma once

// Cross-modal adapter: projects each level of a frozen feature stack to a
// graph vertex, runs a two-layer multi-head graph attention network over a
// chain or complete topology, and folds the per-vertex outputs into one
// face-related feature by latent feature attention.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "frtpad/autodiff.hpp"
#include "frtpad/init.hpp"
#include "frtpad/sample.hpp"

namespace frtpad {

enum class Topology : std::uint8_t { kStepByStep, kDense };

std::string to_string(Topology t);
Topology topology_from_string(const std::string& s);

struct GraphSpec {
  Topology topology = Topology::kStepByStep;
  std::size_t n = 0;
  bool self_loops = true;
};

// Binary symmetric adjacency over n vertices.
class EdgeMatrix {
 public:
  EdgeMatrix() = default;
  explicit EdgeMatrix(std::size_t n) : n_(n), e_(n * n, 0) {}

  [[nodiscard]] std::size_t size() const { return n_; }
  [[nodiscard]] bool operator()(std::size_t i, std::size_t j) const { return e_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool on) { e_[i * n_ + j] = on ? 1 : 0; }

  // Undirected edges between distinct vertices.
  [[nodiscard]] std::size_t edge_count() const;
  [[nodiscard]] bool symmetric() const;
  // Row-major connection mask for softmax_masked.
  [[nodiscard]] std::vector<bool> mask() const;
  // 0/1 matrix [n x n].
  template <typename T>
  [[nodiscard]] BasicTensor<T> as_tensor() const {
    BasicTensor<T> t(Shape{n_, n_});
    for (std::size_t k = 0; k < e_.size(); ++k) t[k] = e_[k] ? T(1) : T(0);
    return t;
  }

  friend bool operator==(const EdgeMatrix&, const EdgeMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> e_;
};

EdgeMatrix build_edges(const GraphSpec& spec);

enum class HeadCombine : std::uint8_t { kConcat, kAverage };

struct AdapterConfig {
  std::vector<LevelDims> levels = {{16, 8, 8}, {32, 8, 8}, {32, 4, 4}, {64, 4, 4}};
  std::size_t proj_channels = 16;
  std::size_t pool_size = 4;
  std::size_t vertex_dim = 64;
  std::size_t hidden_dim = 32;  // per head, first GAT layer (heads concatenated)
  std::size_t output_dim = 64;  // per head, second GAT layer (heads averaged)
  std::size_t heads = 2;
  Topology topology = Topology::kStepByStep;
  bool self_loops = true;
  bool leaky_scores = false;
  float leaky_alpha = 0.2f;

  [[nodiscard]] GraphSpec graph() const { return {topology, levels.size(), self_loops}; }
  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

// Adds every adapter.* parameter (Glorot weights, zero biases) to `params`.
void init_adapter_params(ParamSet& params, const AdapterConfig& config, Rng& rng);

template <typename T>
struct GatHead {
  ad::Var<T> weight;  // [d_in x d_head]
  ad::Var<T> q1;      // [d_head x 1], row (source) term
  ad::Var<T> q2;      // [d_head x 1], column (neighbor) term
};

// One d-dimensional vertex per level -> V [n x vertex_dim].
template <typename T>
ad::Var<T> project_features(ad::Tape<T>& tape, const FeatureStack& stack,
                            const AdapterConfig& config);

// A = E .* (s 1^T + 1 r^T) with s = (V W) q1, r = (V W) q2, so
// A(i,j) = s_i + r_j on connected pairs and 0 elsewhere.
template <typename T>
ad::Var<T> attention_scores(ad::Var<T> vertices, const GatHead<T>& head, const EdgeMatrix& edges,
                            bool leaky_scores = false, T leaky_alpha = T(0.2));

// Row-wise softmax over connected entries only.
template <typename T>
ad::Var<T> normalize_attention(ad::Var<T> scores, const EdgeMatrix& edges);

// Per head A_s (V W); heads concatenated or averaged. No activation.
template <typename T>
ad::Var<T> gat_layer(ad::Var<T> vertices, const EdgeMatrix& edges,
                     const std::vector<GatHead<T>>& heads, HeadCombine combine,
                     bool leaky_scores = false, T leaky_alpha = T(0.2));

// F [n x d_out], n >= 2 -> mean(F[0..n-2]) .* F[n-1].
template <typename T>
ad::Var<T> combine_latent(ad::Var<T> outputs);

// Full adapter: project, two GAT layers (leaky ReLU between), combine.
template <typename T>
ad::Var<T> adapt(ad::Tape<T>& tape, const FeatureStack& stack, const AdapterConfig& config);

}  // namespace frtpad
