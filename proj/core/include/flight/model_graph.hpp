#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flight/error.hpp"

namespace flight::ir {

enum class Activation : uint8_t { Relu, Gelu, Silu };
enum class Norm : uint8_t { LayerNorm };

struct ModelConfig {
  uint32_t num_layers = 0;
  uint32_t hidden_dim = 0;  // D
  uint32_t num_heads = 0;   // h
  uint32_t head_dim = 0;    // D / h
  uint32_t ffn_dim = 0;
  Activation activation = Activation::Silu;
  Norm norm = Norm::LayerNorm;
  uint32_t max_seq_len = 2048;
  bool has_lm_head = false;

  // Gated FFN (two parallel projections joined by an element-wise product)
  // is tied to silu; relu/gelu use the plain two-matrix form.
  bool gated_ffn() const { return activation == Activation::Silu; }

  void validate() const;
};

ModelConfig load_model_config(const std::string& path);
ModelConfig model_config_from_json_text(const std::string& text);

enum class NodeKind : uint8_t {
  Linear,
  AttentionQK,
  AttentionSV,
  Softmax,
  LayerNorm,
  Activation,
  Eltwise,
  View,
  Fused,
};

enum class EltOp : uint8_t { Add, Mul };
enum class StageHint : uint8_t { Prefill, Decode, Both };

enum class Dtype : uint8_t { Fp16, Int8, PackedMixed };
enum class TensorRole : uint8_t { Weight, Activation, KvCache, Lut };

struct TensorRef {
  uint32_t id = 0;
  std::string name;
  uint32_t rows = 0;  // output channels for weights, tokens for activations
  uint32_t cols = 0;  // input channels / feature dim
  Dtype dtype = Dtype::Int8;
  TensorRole role = TensorRole::Activation;
  int32_t producer = -1;  // node id, -1 for graph inputs / weights
};

struct IRNode {
  uint32_t id = 0;
  NodeKind kind = NodeKind::Linear;
  std::string name;
  std::vector<uint32_t> inputs;   // tensor ids
  std::vector<uint32_t> outputs;  // tensor ids
  StageHint stage = StageHint::Both;

  EltOp elt_op = EltOp::Add;           // Eltwise
  Activation act = Activation::Silu;   // Activation
  uint32_t layer = 0;                  // owning transformer layer
  uint32_t head_split = 0;             // heads for attention nodes

  // View bookkeeping: reshape only, element order preserved.
  std::vector<uint32_t> view_in_shape;
  std::vector<uint32_t> view_out_shape;

  // Fused: the constituent kinds in execution order (one compute-heavy kind
  // first, then MISC kinds).
  std::vector<NodeKind> fused_kinds;
  std::vector<EltOp> fused_elt_ops;
  std::vector<Activation> fused_acts;

  bool compute_heavy() const {
    NodeKind k = kind == NodeKind::Fused ? fused_kinds.at(0) : kind;
    return k == NodeKind::Linear || k == NodeKind::AttentionQK || k == NodeKind::AttentionSV;
  }
};

struct IRGraph {
  ModelConfig cfg;
  std::vector<IRNode> nodes;       // topological order
  std::vector<TensorRef> tensors;  // indexed by tensor id
  uint32_t input_tensor = 0;       // token embedding matrix
  uint32_t output_tensor = 0;      // final hidden states / logits

  const TensorRef& tensor(uint32_t id) const { return tensors.at(id); }
  TensorRef& tensor(uint32_t id) { return tensors.at(id); }
  size_t count_kind(NodeKind k) const;
  void check_acyclic_single_producer() const;
};

// Expand a model configuration into the per-layer operator graph:
// LN -> Q/K/V -> QK^T -> softmax -> SV -> view -> O -> +residual ->
// LN -> FFN -> +residual, with a final LayerNorm (and lm_head if enabled).
IRGraph build_ir(const ModelConfig& cfg);

// Drop View nodes, rewiring producers to consumers. Views that would permute
// element order are rejected.
IRGraph remove_views(const IRGraph& g);

// Attach MISC successors to their compute-heavy producers: AttentionQK
// absorbs Softmax, Linear absorbs a following Activation and/or Eltwise.
// A MISC node whose other operand also comes from a compute-heavy node is
// left standalone.
IRGraph fuse_layers(const IRGraph& g);

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Linear: return "linear";
    case NodeKind::AttentionQK: return "attention_qk";
    case NodeKind::AttentionSV: return "attention_sv";
    case NodeKind::Softmax: return "softmax";
    case NodeKind::LayerNorm: return "layernorm";
    case NodeKind::Activation: return "activation";
    case NodeKind::Eltwise: return "eltwise";
    case NodeKind::View: return "view";
    case NodeKind::Fused: return "fused";
  }
  return "?";
}

}  // namespace flight::ir
