#include "frtpad/adapter.hpp"

#include <stdexcept>

namespace frtpad {

std::string to_string(Topology t) {
  return t == Topology::kDense ? "dense" : "step_by_step";
}

Topology topology_from_string(const std::string& s) {
  if (s == "step_by_step" || s == "StepByStep" || s == "step") return Topology::kStepByStep;
  if (s == "dense" || s == "Dense") return Topology::kDense;
  throw std::invalid_argument("unknown topology '" + s + "' (expected step_by_step or dense)");
}

std::size_t EdgeMatrix::edge_count() const {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) count += (*this)(i, j) ? 1 : 0;
  }
  return count;
}

bool EdgeMatrix::symmetric() const {
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if ((*this)(i, j) != (*this)(j, i)) return false;
    }
  }
  return true;
}

std::vector<bool> EdgeMatrix::mask() const {
  std::vector<bool> m(e_.size());
  for (std::size_t k = 0; k < e_.size(); ++k) m[k] = e_[k] != 0;
  return m;
}

EdgeMatrix build_edges(const GraphSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("build_edges: graph needs at least one vertex");
  EdgeMatrix e(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    if (spec.self_loops) e.set(i, i, true);
    for (std::size_t j = i + 1; j < spec.n; ++j) {
      const bool on = spec.topology == Topology::kDense || j == i + 1;
      e.set(i, j, on);
      e.set(j, i, on);
    }
  }
  return e;
}

void AdapterConfig::validate() const {
  if (levels.size() < 2) throw std::invalid_argument("adapter needs at least 2 feature levels");
  for (const auto& l : levels) {
    if (l.channels == 0 || l.height < 3 || l.width < 3) {
      throw std::invalid_argument("adapter level dims must have c >= 1 and h, w >= 3");
    }
  }
  if (proj_channels == 0 || pool_size == 0 || vertex_dim == 0 || hidden_dim == 0 ||
      output_dim == 0) {
    throw std::invalid_argument("adapter dims must be positive");
  }
  if (heads == 0) throw std::invalid_argument("adapter needs at least one attention head");
}

namespace {

std::string proj_name(std::size_t level, const char* leaf) {
  return "adapter.proj" + std::to_string(level) + "." + leaf;
}

std::string gat_name(std::size_t layer, std::size_t head, const char* leaf) {
  return "adapter.gat" + std::to_string(layer) + ".head" + std::to_string(head) + "." + leaf;
}

}  // namespace

void init_adapter_params(ParamSet& params, const AdapterConfig& config, Rng& rng) {
  config.validate();
  const std::size_t flat = config.proj_channels * config.pool_size * config.pool_size;
  for (std::size_t i = 0; i < config.levels.size(); ++i) {
    const std::size_t c = config.levels[i].channels;
    const std::size_t o = config.proj_channels;
    params.add(proj_name(i, "conv.weight"), glorot_uniform({o, c, 3, 3}, c * 9, o * 9, rng));
    params.add(proj_name(i, "conv.bias"), Tensor(Shape{o}));
    params.add(proj_name(i, "fc.weight"),
               glorot_uniform({flat, config.vertex_dim}, flat, config.vertex_dim, rng));
    params.add(proj_name(i, "fc.bias"), Tensor(Shape{config.vertex_dim}));
  }
  const std::size_t dims[2][2] = {{config.vertex_dim, config.hidden_dim},
                                  {config.hidden_dim * config.heads, config.output_dim}};
  for (std::size_t layer = 0; layer < 2; ++layer) {
    const std::size_t in = dims[layer][0], out = dims[layer][1];
    for (std::size_t h = 0; h < config.heads; ++h) {
      params.add(gat_name(layer + 1, h, "W"), glorot_uniform({in, out}, in, out, rng));
      params.add(gat_name(layer + 1, h, "q1"), glorot_uniform({out, 1}, out, 1, rng));
      params.add(gat_name(layer + 1, h, "q2"), glorot_uniform({out, 1}, out, 1, rng));
    }
  }
}

template <typename T>
ad::Var<T> project_features(ad::Tape<T>& tape, const FeatureStack& stack,
                            const AdapterConfig& config) {
  if (stack.levels.size() != config.levels.size()) {
    throw ShapeError("project_features: stack has " + std::to_string(stack.levels.size()) +
                     " levels, adapter expects " + std::to_string(config.levels.size()));
  }
  std::vector<ad::Var<T>> rows;
  rows.reserve(stack.levels.size());
  for (std::size_t i = 0; i < stack.levels.size(); ++i) {
    const Tensor& level = stack.levels[i];
    if (level.shape() != config.levels[i].shape()) {
      throw ShapeError("project_features: level " + std::to_string(i) + " has shape " +
                       shape_to_string(level.shape()) + ", expected " +
                       shape_to_string(config.levels[i].shape()));
    }
    ad::Var<T> x = tape.constant(level.template cast<T>());
    x = ad::conv2d(x, tape.param(proj_name(i, "conv.weight")), tape.param(proj_name(i, "conv.bias")),
                   1);
    x = ad::relu(x);
    x = ad::adaptive_avg_pool2d(x, config.pool_size, config.pool_size);
    x = ad::linear(ad::flatten(x), tape.param(proj_name(i, "fc.weight")),
                   tape.param(proj_name(i, "fc.bias")));
    rows.push_back(ad::reshape(x, Shape{1, config.vertex_dim}));
  }
  return ad::concat(rows, 0);
}

template <typename T>
ad::Var<T> attention_scores(ad::Var<T> vertices, const GatHead<T>& head, const EdgeMatrix& edges,
                            bool leaky_scores, T leaky_alpha) {
  ad::Tape<T>& tape = *vertices.tape;
  const std::size_t n = vertices.shape().at(0);
  if (edges.size() != n) {
    throw ShapeError("attention_scores: " + std::to_string(n) + " vertices but edge matrix is " +
                     std::to_string(edges.size()) + "x" + std::to_string(edges.size()));
  }
  const ad::Var<T> h = ad::matmul(vertices, head.weight);
  const ad::Var<T> s = ad::matmul(h, head.q1);  // [n x 1]
  const ad::Var<T> r = ad::matmul(h, head.q2);  // [n x 1]
  const ad::Var<T> ones_row = tape.constant(BasicTensor<T>(Shape{1, n}, T(1)));
  const ad::Var<T> ones_col = tape.constant(BasicTensor<T>(Shape{n, 1}, T(1)));
  ad::Var<T> a = ad::add(ad::matmul(s, ones_row), ad::matmul(ones_col, ad::reshape(r, Shape{1, n})));
  if (leaky_scores) a = ad::leaky_relu(a, leaky_alpha);
  return ad::mul(tape.constant(edges.template as_tensor<T>()), a);
}

template <typename T>
ad::Var<T> normalize_attention(ad::Var<T> scores, const EdgeMatrix& edges) {
  const std::size_t n = edges.size();
  if (scores.shape() != Shape{n, n}) throw ShapeError("normalize_attention: score/edge size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < n && !any; ++j) any = edges(i, j);
    if (!any) {
      throw std::invalid_argument("normalize_attention: vertex " + std::to_string(i) +
                                  " is isolated (no neighbors and no self-loop)");
    }
  }
  return ad::softmax_masked(scores, edges.mask());
}

template <typename T>
ad::Var<T> gat_layer(ad::Var<T> vertices, const EdgeMatrix& edges,
                     const std::vector<GatHead<T>>& heads, HeadCombine combine, bool leaky_scores,
                     T leaky_alpha) {
  if (heads.empty()) throw std::invalid_argument("gat_layer: no heads");
  std::vector<ad::Var<T>> outs;
  outs.reserve(heads.size());
  for (const auto& head : heads) {
    const ad::Var<T> a = attention_scores(vertices, head, edges, leaky_scores, leaky_alpha);
    const ad::Var<T> as = normalize_attention(a, edges);
    outs.push_back(ad::matmul(as, ad::matmul(vertices, head.weight)));
  }
  if (outs.size() == 1) return outs.front();
  if (combine == HeadCombine::kConcat) return ad::concat(outs, 1);
  ad::Var<T> acc = outs.front();
  for (std::size_t h = 1; h < outs.size(); ++h) acc = ad::add(acc, outs[h]);
  return ad::scale(acc, T(1) / static_cast<T>(outs.size()));
}

template <typename T>
ad::Var<T> combine_latent(ad::Var<T> outputs) {
  const Shape s = outputs.shape();
  if (s.size() != 2) throw ShapeError("combine_latent: expected [n x d]");
  const std::size_t n = s[0];
  if (n < 2) throw std::invalid_argument("combine_latent: needs at least 2 vertex outputs");
  const ad::Var<T> weights = ad::mean_rows(ad::slice_rows(outputs, 0, n - 1));
  const ad::Var<T> last = ad::reshape(ad::slice_rows(outputs, n - 1, n), Shape{s[1]});
  return ad::mul(weights, last);
}

template <typename T>
ad::Var<T> adapt(ad::Tape<T>& tape, const FeatureStack& stack, const AdapterConfig& config) {
  const EdgeMatrix edges = build_edges(config.graph());
  ad::Var<T> v = project_features(tape, stack, config);
  const T alpha = static_cast<T>(config.leaky_alpha);
  for (std::size_t layer = 1; layer <= 2; ++layer) {
    std::vector<GatHead<T>> heads;
    for (std::size_t h = 0; h < config.heads; ++h) {
      heads.push_back({tape.param(gat_name(layer, h, "W")), tape.param(gat_name(layer, h, "q1")),
                       tape.param(gat_name(layer, h, "q2"))});
    }
    const HeadCombine combine = layer == 1 ? HeadCombine::kConcat : HeadCombine::kAverage;
    v = gat_layer(v, edges, heads, combine, config.leaky_scores, alpha);
    if (layer == 1) v = ad::leaky_relu(v, alpha);
  }
  return combine_latent(v);
}

#define FRTPAD_INSTANTIATE_ADAPTER(T)                                                           \
  template ad::Var<T> project_features(ad::Tape<T>&, const FeatureStack&, const AdapterConfig&); \
  template ad::Var<T> attention_scores(ad::Var<T>, const GatHead<T>&, const EdgeMatrix&, bool,  \
                                       T);                                                      \
  template ad::Var<T> normalize_attention(ad::Var<T>, const EdgeMatrix&);                       \
  template ad::Var<T> gat_layer(ad::Var<T>, const EdgeMatrix&, const std::vector<GatHead<T>>&, \
                                HeadCombine, bool, T);                                          \
  template ad::Var<T> combine_latent(ad::Var<T>);                                               \
  template ad::Var<T> adapt(ad::Tape<T>&, const FeatureStack&, const AdapterConfig&);

FRTPAD_INSTANTIATE_ADAPTER(float)
FRTPAD_INSTANTIATE_ADAPTER(double)

}  // namespace frtpad
