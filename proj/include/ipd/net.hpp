#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ipd/diffusion.hpp"
#include "ipd/geometry.hpp"
#include "ipd/tensor.hpp"

namespace ipd {

enum class Activation { gelu };

struct NetConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_cond_tokens = 256;
  int time_embed_dim = 32;
  int decoder_depth = 1;
  Activation activation = Activation::gelu;

  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

/// All learnable weights, as named tensor groups. Iteration order (and so
/// initialization and checkpoint order) is the map's name order.
struct NetParams {
  NetConfig cfg;
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grads() const;
};

/// Per-query self-condition channel: the previous UDF prediction, or the
/// all -1 placeholder when no prediction exists yet.
struct SelfCond {
  std::vector<double> values;

  static SelfCond placeholder(std::size_t n) {
    SelfCond sc;
    sc.values.assign(n, -1.0);
    return sc;
  }
  /// Wraps predicted UDF values, clamped into the supervised range.
  static SelfCond from_prediction(const std::vector<double>& nu, double clamp);
};

struct ForwardOptions {
  /// Stop gradients on the in-pass edge from the UDF prediction into the
  /// noise decoder (used on the second pass of self-conditioned training).
  bool detach_udf_edge = false;
  /// Zeroes the time-affine factors; embeddings become independent of t.
  bool zero_time_affine = false;
};

struct NetOutput {
  Var eps_hat;  // [N, 3]
  Var nu_hat;   // [N, 1], non-negative
};

/// Deterministic initialization: linear weights are normal draws scaled by
/// 1/sqrt(fan_in), biases zero.
NetParams init_params(const NetConfig& cfg, std::uint64_t seed);

/// Sinusoidal embedding of the raw step value, [1, dim]; dim must be even.
Tensor time_embedding(TimeStep t, int dim);

/// Farthest-point subsampling with a fixed, permutation-invariant start
/// rule (lexicographically smallest point) and lexicographic tie-breaks.
/// Clouds smaller than m are cycled (sampling with replacement).
std::vector<std::size_t> fps_select(const PointCloud& cloud, std::size_t m);

/// Condition tokens [n_cond_tokens, d_model]: shared per-point MLP over the
/// subsampled coordinates plus a max-pooled global feature added to every
/// token.
Var encode_condition(Graph& g, const NetParams& params, const PointCloud& p);

/// Query embeddings [N, d_model]: coordinate MLP, self-condition channel
/// concatenation and projection, time affine (scale, shift), output linear.
Var encode_queries(Graph& g, const NetParams& params, const PointCloud& xt,
                   TimeStep t, const SelfCond& sc,
                   const ForwardOptions& opts = {});

/// Full conditional forward pass: the UDF head runs first, its prediction
/// joins the query embedding, and the noise decoder emits eps_hat.
NetOutput forward(Graph& g, const NetParams& params, const PointCloud& xt,
                  TimeStep t, const PointCloud& p, const SelfCond& sc,
                  const ForwardOptions& opts = {});

/// Same, with precomputed condition tokens (sampling reuses them across
/// steps since the parameters are fixed).
NetOutput forward_with_condition(Graph& g, const NetParams& params,
                                 const PointCloud& xt, TimeStep t,
                                 Var cond_tokens, const SelfCond& sc,
                                 const ForwardOptions& opts = {});

struct EvalOutput {
  std::vector<Vec3> eps_hat;
  std::vector<double> nu_hat;
};

/// No-grad forward; bit-identical to the graph path (same kernels, same
/// order).
EvalOutput forward_eval(const NetParams& params, const PointCloud& xt,
                        TimeStep t, const PointCloud& p, const SelfCond& sc);
EvalOutput forward_eval_with_condition(const NetParams& params,
                                       const PointCloud& xt, TimeStep t,
                                       const Tensor& cond_tokens,
                                       const SelfCond& sc);

/// Condition tokens as a plain tensor, for reuse across sampling steps.
Tensor condition_tokens(const NetParams& params, const PointCloud& p);

}  // namespace ipd
