#include "flight/model_graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace flight::ir {

void ModelConfig::validate() const {
  if (num_layers == 0) fail(ErrorKind::Config, "num_layers must be >= 1");
  if (hidden_dim == 0 || num_heads == 0 || head_dim == 0)
    fail(ErrorKind::Config, "hidden_dim/num_heads/head_dim must be positive");
  if (hidden_dim != num_heads * head_dim)
    fail(ErrorKind::Config, "hidden_dim != num_heads * head_dim");
  if (ffn_dim < 1) fail(ErrorKind::Config, "ffn_dim must be >= 1");
  if (max_seq_len < 1) fail(ErrorKind::Config, "max_seq_len must be >= 1");
  if (hidden_dim % 16 || ffn_dim % 16 || head_dim % 16)
    fail(ErrorKind::Config, "dims must be multiples of 16 (compression block size)");
}

static Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "gelu") return Activation::Gelu;
  if (s == "silu") return Activation::Silu;
  fail(ErrorKind::Config, "unknown activation '" + s + "'");
}

ModelConfig model_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorKind::Format, std::string("model config parse: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.num_layers = j.at("num_layers").get<uint32_t>();
    cfg.hidden_dim = j.at("hidden_dim").get<uint32_t>();
    cfg.num_heads = j.at("num_heads").get<uint32_t>();
    cfg.head_dim = j.at("head_dim").get<uint32_t>();
    cfg.ffn_dim = j.at("ffn_dim").get<uint32_t>();
    cfg.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("norm") && j["norm"].get<std::string>() != "layernorm")
      fail(ErrorKind::Config, "only layernorm is supported");
    if (j.contains("max_seq_len")) cfg.max_seq_len = j["max_seq_len"].get<uint32_t>();
    if (j.contains("has_lm_head")) cfg.has_lm_head = j["has_lm_head"].get<bool>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::Config, std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open model config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_config_from_json_text(ss.str());
}

size_t IRGraph::count_kind(NodeKind k) const {
  return static_cast<size_t>(
      std::count_if(nodes.begin(), nodes.end(), [&](const IRNode& n) { return n.kind == k; }));
}

void IRGraph::check_acyclic_single_producer() const {
  std::set<uint32_t> produced;
  for (const IRNode& n : nodes) {
    for (uint32_t in : n.inputs) {
      const TensorRef& t = tensors.at(in);
      // topological order: activation inputs must already have a producer
      if (t.role == TensorRole::Activation && t.producer >= 0 && !produced.count(in))
        fail(ErrorKind::Config, "graph not topologically ordered at node " + n.name);
    }
    for (uint32_t out : n.outputs) {
      if (produced.count(out)) fail(ErrorKind::Config, "tensor produced twice: " + std::to_string(out));
      if (tensors.at(out).producer != static_cast<int32_t>(n.id))
        fail(ErrorKind::Config, "producer mismatch on tensor " + std::to_string(out));
      produced.insert(out);
    }
  }
}

namespace {

class GraphBuilder {
 public:
  explicit GraphBuilder(const ModelConfig& cfg) { g_.cfg = cfg; }

  uint32_t add_tensor(const std::string& name, uint32_t rows, uint32_t cols, Dtype dt,
                      TensorRole role) {
    TensorRef t;
    t.id = static_cast<uint32_t>(g_.tensors.size());
    t.name = name;
    t.rows = rows;
    t.cols = cols;
    t.dtype = dt;
    t.role = role;
    g_.tensors.push_back(t);
    return t.id;
  }

  IRNode& add_node(NodeKind kind, const std::string& name, std::vector<uint32_t> inputs,
                   uint32_t output, uint32_t layer) {
    IRNode n;
    n.id = static_cast<uint32_t>(g_.nodes.size());
    n.kind = kind;
    n.name = name;
    n.inputs = std::move(inputs);
    n.outputs = {output};
    n.layer = layer;
    g_.tensors.at(output).producer = static_cast<int32_t>(n.id);
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back();
  }

  IRGraph take() { return std::move(g_); }
  IRGraph g_;
};

}  // namespace

IRGraph build_ir(const ModelConfig& cfg) {
  cfg.validate();
  GraphBuilder b(cfg);
  const uint32_t D = cfg.hidden_dim;
  const uint32_t F = cfg.ffn_dim;
  const uint32_t N = cfg.max_seq_len;

  uint32_t x = b.add_tensor("embeddings", N, D, Dtype::Int8, TensorRole::Activation);
  b.g_.input_tensor = x;

  auto weight = [&](const std::string& name, uint32_t rows, uint32_t cols) {
    return b.add_tensor(name, rows, cols, Dtype::PackedMixed, TensorRole::Weight);
  };
  auto act = [&](const std::string& name, uint32_t rows, uint32_t cols) {
    return b.add_tensor(name, rows, cols, Dtype::Int8, TensorRole::Activation);
  };

  for (uint32_t l = 0; l < cfg.num_layers; l++) {
    std::string p = "l" + std::to_string(l) + ".";

    uint32_t ln1 = act(p + "ln1", N, D);
    b.add_node(NodeKind::LayerNorm, p + "ln1", {x}, ln1, l);

    uint32_t wq = weight(p + "wq", D, D);
    uint32_t wk = weight(p + "wk", D, D);
    uint32_t wv = weight(p + "wv", D, D);
    uint32_t q = act(p + "q", N, D);
    uint32_t k = b.add_tensor(p + "k", N, D, Dtype::Int8, TensorRole::KvCache);
    uint32_t v = b.add_tensor(p + "v", N, D, Dtype::Int8, TensorRole::KvCache);
    b.add_node(NodeKind::Linear, p + "q_proj", {ln1, wq}, q, l);
    b.add_node(NodeKind::Linear, p + "k_proj", {ln1, wk}, k, l);
    b.add_node(NodeKind::Linear, p + "v_proj", {ln1, wv}, v, l);

    uint32_t scores = b.add_tensor(p + "scores", N, N, Dtype::Fp16, TensorRole::Activation);
    IRNode& qk = b.add_node(NodeKind::AttentionQK, p + "qk", {q, k}, scores, l);
    qk.head_split = cfg.num_heads;

    uint32_t probs = act(p + "probs", N, N);
    b.add_node(NodeKind::Softmax, p + "softmax", {scores}, probs, l);

    uint32_t attn = act(p + "attn", N, D);
    IRNode& sv = b.add_node(NodeKind::AttentionSV, p + "sv", {probs, v}, attn, l);
    sv.head_split = cfg.num_heads;

    // Head-merge view [h, N, d_h] -> [N, D]; data layout already matches, so
    // the optimizer drops it.
    uint32_t attn_flat = act(p + "attn_flat", N, D);
    IRNode& view = b.add_node(NodeKind::View, p + "head_merge", {attn}, attn_flat, l);
    view.view_in_shape = {cfg.num_heads, N, cfg.head_dim};
    view.view_out_shape = {N, D};

    uint32_t wo = weight(p + "wo", D, D);
    uint32_t o = act(p + "o", N, D);
    b.add_node(NodeKind::Linear, p + "o_proj", {attn_flat, wo}, o, l);

    uint32_t res1 = act(p + "res1", N, D);
    IRNode& add1 = b.add_node(NodeKind::Eltwise, p + "res1", {o, x}, res1, l);
    add1.elt_op = EltOp::Add;

    uint32_t ln2 = act(p + "ln2", N, D);
    b.add_node(NodeKind::LayerNorm, p + "ln2", {res1}, ln2, l);

    uint32_t ffn_out;
    if (cfg.gated_ffn()) {
      uint32_t wg = weight(p + "w_gate", F, D);
      uint32_t wu = weight(p + "w_up", F, D);
      uint32_t wd = weight(p + "w_down", D, F);
      uint32_t gate = act(p + "gate", N, F);
      uint32_t up = act(p + "up", N, F);
      b.add_node(NodeKind::Linear, p + "gate_proj", {ln2, wg}, gate, l);
      uint32_t gate_act = act(p + "gate_act", N, F);
      IRNode& a = b.add_node(NodeKind::Activation, p + "gate_silu", {gate}, gate_act, l);
      a.act = cfg.activation;
      b.add_node(NodeKind::Linear, p + "up_proj", {ln2, wu}, up, l);
      uint32_t prod = act(p + "prod", N, F);
      IRNode& mul = b.add_node(NodeKind::Eltwise, p + "gate_mul", {gate_act, up}, prod, l);
      mul.elt_op = EltOp::Mul;
      ffn_out = act(p + "down", N, D);
      b.add_node(NodeKind::Linear, p + "down_proj", {prod, wd}, ffn_out, l);
    } else {
      uint32_t w1 = weight(p + "w1", F, D);
      uint32_t w2 = weight(p + "w2", D, F);
      uint32_t h1 = act(p + "fc1", N, F);
      b.add_node(NodeKind::Linear, p + "fc1", {ln2, w1}, h1, l);
      uint32_t h1a = act(p + "fc1_act", N, F);
      IRNode& a = b.add_node(NodeKind::Activation, p + "fc1_act", {h1}, h1a, l);
      a.act = cfg.activation;
      ffn_out = act(p + "fc2", N, D);
      b.add_node(NodeKind::Linear, p + "fc2", {h1a, w2}, ffn_out, l);
    }

    uint32_t res2 = act(p + "res2", N, D);
    IRNode& add2 = b.add_node(NodeKind::Eltwise, p + "res2", {ffn_out, res1}, res2, l);
    add2.elt_op = EltOp::Add;
    x = res2;
  }

  uint32_t final_ln = b.add_tensor("final_ln", N, D, Dtype::Int8, TensorRole::Activation);
  b.add_node(NodeKind::LayerNorm, "final_ln", {x}, final_ln, cfg.num_layers - 1);
  uint32_t out = final_ln;
  if (cfg.has_lm_head) {
    // ModelConfig carries no vocabulary size; the head is a square
    // tied-embedding style projection back into D.
    uint32_t wh = b.add_tensor("lm_head", D, D, Dtype::PackedMixed, TensorRole::Weight);
    uint32_t logits = b.add_tensor("logits", N, D, Dtype::Int8, TensorRole::Activation);
    b.add_node(NodeKind::Linear, "lm_head", {final_ln, wh}, logits, cfg.num_layers - 1);
    out = logits;
  }
  IRGraph g = b.take();
  g.output_tensor = out;
  g.check_acyclic_single_producer();
  return g;
}

IRGraph remove_views(const IRGraph& g) {
  IRGraph out = g;
  // tensor substitution map: view output -> view input
  std::map<uint32_t, uint32_t> sub;
  for (const IRNode& n : out.nodes) {
    if (n.kind != NodeKind::View) continue;
    uint64_t in_elems = 1, out_elems = 1;
    for (uint32_t d : n.view_in_shape) in_elems *= d;
    for (uint32_t d : n.view_out_shape) out_elems *= d;
    if (in_elems != out_elems || n.view_in_shape.empty())
      fail(ErrorKind::Compile, "view would permute memory layout: " + n.name);
    sub[n.outputs.at(0)] = n.inputs.at(0);
  }
  if (sub.empty()) return out;

  auto resolve = [&](uint32_t id) {
    while (sub.count(id)) id = sub.at(id);
    return id;
  };

  std::vector<IRNode> kept;
  for (IRNode& n : out.nodes) {
    if (n.kind == NodeKind::View) continue;
    for (uint32_t& in : n.inputs) in = resolve(in);
    kept.push_back(std::move(n));
  }
  // renumber nodes, fix producers
  for (size_t i = 0; i < kept.size(); i++) {
    kept[i].id = static_cast<uint32_t>(i);
    for (uint32_t t : kept[i].outputs) out.tensors.at(t).producer = static_cast<int32_t>(i);
  }
  out.nodes = std::move(kept);
  out.output_tensor = resolve(out.output_tensor);
  out.check_acyclic_single_producer();
  return out;
}

IRGraph fuse_layers(const IRGraph& g) {
  IRGraph out = g;
  if (out.count_kind(NodeKind::View) != 0)
    fail(ErrorKind::Compile, "fuse_layers requires views removed");

  // consumer count per tensor
  std::map<uint32_t, int> consumers;
  for (const IRNode& n : out.nodes)
    for (uint32_t in : n.inputs) consumers[in]++;
  consumers[out.output_tensor]++;

  auto is_misc_attachable = [&](const IRNode& n) {
    return n.kind == NodeKind::Softmax || n.kind == NodeKind::Activation ||
           n.kind == NodeKind::Eltwise;
  };

  std::vector<IRNode> result;
  std::map<uint32_t, size_t> node_pos;  // original node id -> result index
  for (size_t i = 0; i < out.nodes.size(); i++) {
    IRNode n = out.nodes[i];

    if (is_misc_attachable(n) && n.kind != NodeKind::Softmax) {
      // Activation / Eltwise: fold into a compute-heavy producer when exactly
      // one operand comes from one and that output has no other consumer.
      int heavy_ops = 0;
      int32_t heavy_producer = -1;
      for (uint32_t in : n.inputs) {
        int32_t p = out.tensors.at(in).producer;
        if (p < 0) continue;
        if (!node_pos.count(static_cast<uint32_t>(p))) continue;
        IRNode& cand = result.at(node_pos.at(static_cast<uint32_t>(p)));
        if (cand.compute_heavy()) {
          heavy_ops++;
          if (consumers[in] == 1 && cand.layer == n.layer) heavy_producer = p;
        }
      }
      if (heavy_ops == 1 && heavy_producer >= 0) {
        IRNode& host = result.at(node_pos.at(static_cast<uint32_t>(heavy_producer)));
        if (host.kind != NodeKind::Fused) {
          host.fused_kinds = {host.kind};
          host.kind = NodeKind::Fused;
        }
        host.fused_kinds.push_back(n.kind);
        if (n.kind == NodeKind::Eltwise) host.fused_elt_ops.push_back(n.elt_op);
        if (n.kind == NodeKind::Activation) host.fused_acts.push_back(n.act);
        // host absorbs the misc node's extra operands and takes its output
        uint32_t host_out = host.outputs.at(0);
        for (uint32_t in : n.inputs)
          if (in != host_out) host.inputs.push_back(in);
        host.outputs = n.outputs;
        out.tensors.at(n.outputs.at(0)).producer = static_cast<int32_t>(host.id);
        node_pos[n.id] = node_pos.at(static_cast<uint32_t>(heavy_producer));
        continue;
      }
    } else if (n.kind == NodeKind::Softmax) {
      int32_t p = out.tensors.at(n.inputs.at(0)).producer;
      if (p >= 0 && node_pos.count(static_cast<uint32_t>(p))) {
        IRNode& host = result.at(node_pos.at(static_cast<uint32_t>(p)));
        bool qk = (host.kind == NodeKind::AttentionQK) ||
                  (host.kind == NodeKind::Fused && host.fused_kinds.at(0) == NodeKind::AttentionQK);
        if (qk && consumers[n.inputs.at(0)] == 1) {
          if (host.kind != NodeKind::Fused) {
            host.fused_kinds = {host.kind};
            host.kind = NodeKind::Fused;
          }
          host.fused_kinds.push_back(NodeKind::Softmax);
          host.outputs = n.outputs;
          out.tensors.at(n.outputs.at(0)).producer = static_cast<int32_t>(host.id);
          node_pos[n.id] = node_pos.at(static_cast<uint32_t>(p));
          continue;
        }
      }
    }

    node_pos[n.id] = result.size();
    result.push_back(std::move(n));
  }

  for (size_t i = 0; i < result.size(); i++) {
    result[i].id = static_cast<uint32_t>(i);
    for (uint32_t t : result[i].outputs) out.tensors.at(t).producer = static_cast<int32_t>(i);
  }
  out.nodes = std::move(result);
  out.check_acyclic_single_producer();
  return out;
}

}  // namespace flight::ir
