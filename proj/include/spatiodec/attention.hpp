#pragma once

#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "spatiodec/nn.hpp"
#include "spatiodec/params.hpp"

namespace spatiodec {

/// Pre-activation residual unit: norm, relu, conv, norm, relu, conv, plus the
/// identity or a 1^3 projection of it.
template <typename T>
struct ResUnitParams {
  NormParams<T> norm1;
  Conv3DParams<T> conv1;
  NormParams<T> norm2;
  Conv3DParams<T> conv2;
  std::optional<Conv3DParams<T>> projection;
  std::size_t entry_stride = 1;

  std::size_t in_channels() const { return conv1.weights.extent(1); }
  std::size_t out_channels() const { return conv2.weights.extent(0); }
};

template <typename T>
struct AttentionModuleParams {
  std::size_t stage = 0;
  std::size_t depth = 1;  // pooling rounds p
  std::vector<ResUnitParams<T>> main;
  std::vector<ResUnitParams<T>> att_down;
  std::vector<ResUnitParams<T>> att_up;
  std::vector<ResUnitParams<T>> shortcuts;  // levels 1 .. p-1
  Conv3DParams<T> gate;

  std::size_t in_channels() const { return main.front().in_channels(); }
  std::size_t out_channels() const { return main.back().out_channels(); }
  std::size_t stride() const { return main.front().entry_stride; }
};

/// A is sigmoid(pre_gate); both [n, c, H', W', D'].
template <typename T>
struct AttentionRecord {
  std::size_t stage = 0;
  Tensor<T> A;
  Tensor<T> pre_gate;
};

// Test hook: replaces the attention branch by a constant mask.
template <typename T>
struct AttentionHooks {
  std::optional<T> constant_mask;
};

template <typename T>
ResUnitParams<T> make_res_unit(std::size_t c_in, std::size_t c_out, std::size_t entry_stride,
                               Rng& rng);

template <typename T>
AttentionModuleParams<T> make_attention_module(std::size_t stage, std::size_t c_in,
                                               std::size_t c_out, std::size_t stride,
                                               std::size_t depth, std::size_t units,
                                               Rng& rng);

template <typename T>
Var<T> res_unit(const Var<T>& x, ResUnitParams<T>& p, const ParamBinder<T>& bind, Mode mode);
template <typename T>
Tensor<T> res_unit(const Tensor<T>& x, ResUnitParams<T>& p, Mode mode);

template <typename T>
struct BranchOutput {
  Var<T> A;
  Var<T> pre_gate;
};

// U-shaped mask branch on the module input. The decoder's last upsample
// targets `target` (the main-branch output extents).
template <typename T>
BranchOutput<T> attention_branch(const Var<T>& x, AttentionModuleParams<T>& p,
                                 const Extents3& target, const ParamBinder<T>& bind,
                                 Mode mode);
template <typename T>
AttentionRecord<T> attention_branch(const Tensor<T>& x, AttentionModuleParams<T>& p, Mode mode);

// Main-branch output only, M(x).
template <typename T>
Var<T> main_branch(const Var<T>& x, AttentionModuleParams<T>& p, const ParamBinder<T>& bind,
                   Mode mode);

// M(x) * (1 + A(x)). With `with_attention` false the module reduces to M(x).
template <typename T>
Var<T> attention_module(const Var<T>& x, AttentionModuleParams<T>& p,
                        const ParamBinder<T>& bind, Mode mode,
                        std::type_identity_t<std::vector<AttentionRecord<T>>*> record_sink = nullptr,
                        const std::type_identity_t<AttentionHooks<T>>& hooks = {}, bool with_attention = true);
template <typename T>
Tensor<T> attention_module(const Tensor<T>& x, AttentionModuleParams<T>& p, Mode mode,
                           std::type_identity_t<std::vector<AttentionRecord<T>>*> record_sink = nullptr,
                           const std::type_identity_t<AttentionHooks<T>>& hooks = {});

// Smallest spatial extent the branch accepts is 2^depth along every axis.
void check_branch_depth(const Extents3& in, std::size_t depth, std::size_t stage);

/// Calls fn(name, tensor, role) on every tensor in deterministic order.
template <typename T, typename Fn>
void visit_tensors(ResUnitParams<T>& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "norm1.gamma", p.norm1.gamma, TensorRole::trainable);
  fn(prefix + "norm1.beta", p.norm1.beta, TensorRole::trainable);
  fn(prefix + "norm1.running_mean", p.norm1.running_mean, TensorRole::running_stat);
  fn(prefix + "norm1.running_var", p.norm1.running_var, TensorRole::running_stat);
  fn(prefix + "conv1.weight", p.conv1.weights, TensorRole::trainable);
  fn(prefix + "norm2.gamma", p.norm2.gamma, TensorRole::trainable);
  fn(prefix + "norm2.beta", p.norm2.beta, TensorRole::trainable);
  fn(prefix + "norm2.running_mean", p.norm2.running_mean, TensorRole::running_stat);
  fn(prefix + "norm2.running_var", p.norm2.running_var, TensorRole::running_stat);
  fn(prefix + "conv2.weight", p.conv2.weights, TensorRole::trainable);
  fn(prefix + "conv2.bias", p.conv2.bias, TensorRole::trainable);
  if (p.projection) {
    fn(prefix + "proj.weight", p.projection->weights, TensorRole::trainable);
    fn(prefix + "proj.bias", p.projection->bias, TensorRole::trainable);
  }
}

template <typename T, typename Fn>
void visit_tensors(AttentionModuleParams<T>& p, const std::string& prefix, Fn&& fn,
                   bool with_attention = true) {
  for (std::size_t i = 0; i < p.main.size(); ++i) {
    visit_tensors(p.main[i], prefix + "main/res" + std::to_string(i) + "/", fn);
  }
  if (!with_attention) return;
  for (std::size_t i = 0; i < p.att_down.size(); ++i) {
    visit_tensors(p.att_down[i], prefix + "att/down" + std::to_string(i) + "/", fn);
  }
  for (std::size_t i = 0; i < p.att_up.size(); ++i) {
    visit_tensors(p.att_up[i], prefix + "att/up" + std::to_string(i) + "/", fn);
  }
  for (std::size_t i = 0; i < p.shortcuts.size(); ++i) {
    visit_tensors(p.shortcuts[i], prefix + "att/skip" + std::to_string(i) + "/", fn);
  }
  fn(prefix + "att/gate.weight", p.gate.weights, TensorRole::trainable);
  fn(prefix + "att/gate.bias", p.gate.bias, TensorRole::trainable);
}

}  // namespace spatiodec
