#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forec/tape.hpp"
#include "forec/tensor.hpp"

namespace forec::net {

/// What the auxiliary decoder predicts. Reconstruction gives a 3-channel
/// linear head with no bias (so the latent-slice identity holds exactly);
/// FgBg swaps in a 2-class head trained with cross-entropy.
enum class AuxKind { None, Reconstruction, FgBg };

struct NetworkConfig {
  int in_channels = 3;
  int num_classes = 4;
  int base_width = 16;
  int stages = 2;       // stride-2 downsamplings; bottleneck is H / 2^stages
  int latent_dim = 16;  // channel count of the pre-head decoder activation
  AuxKind aux = AuxKind::Reconstruction;

  void validate() const;
  int stage_width(int i) const { return base_width << i; }
  int aux_out_channels() const { return aux == AuxKind::FgBg ? 2 : 3; }
};

enum class Role { Student, Teacher };

struct ConvLayer {
  tape::Parameter w;
  tape::Parameter b;
  bool has_bias = true;
  int stride = 1;
  int pad = 1;
};

/// Shared encoder plus one segmentation decoder; students additionally carry
/// the auxiliary decoder. The teacher never has one.
struct Network {
  NetworkConfig cfg;
  Role role = Role::Student;
  std::vector<ConvLayer> enc;  // two convs per stage, stride-2 first
  std::vector<ConvLayer> seg;  // per-stage decode convs, then the 1x1 head
  std::vector<ConvLayer> aux;  // same layout as seg; empty on teachers

  std::vector<tape::Parameter*> params();
  std::vector<const tape::Parameter*> params() const;
  /// Encoder + segmentation decoder: the part mirrored into the teacher and
  /// moved by EMA.
  std::vector<tape::Parameter*> shared_params();
  std::vector<const tape::Parameter*> shared_params() const;
  void zero_grads();
};

struct BuildResult {
  Network student;
  Network teacher;
};

/// Kaiming-uniform (fan-in) weights, zero biases; the teacher starts as an
/// exact copy of the student's shared parts.
BuildResult build(const NetworkConfig& cfg, uint64_t seed);

struct ForwardResult {
  tape::NodeId encoded = tape::kNoNode;
  tape::NodeId seg_logits = tape::kNoNode;
  tape::NodeId aux_latent = tape::kNoNode;  // pre-head activation (Z)
  tape::NodeId aux_output = tape::kNoNode;
};

/// Runs the encoder once and the requested heads on top of it. Parameters
/// are registered on the tape, so backward reaches them.
ForwardResult forward(Network& net, tape::Tape& t, tape::NodeId input, bool want_seg,
                      bool want_aux);

/// Same topology but parameters enter as constants: no gradients flow.
ForwardResult forward_frozen(const Network& net, tape::Tape& t, tape::NodeId input, bool want_seg,
                             bool want_aux);

/// Gradient-free convenience wrappers.
Tensor forward_seg(const Network& net, const Tensor& x);  // logits [N,C,H,W]
struct AuxForward {
  Tensor latent;  // [N,d,H,W]
  Tensor output;  // [N,aux_out,H,W]
};
AuxForward forward_aux(const Network& net, const Tensor& x);

/// theta_t <- alpha*theta_t + (1-alpha)*theta_s over the shared parameters.
void ema_update(Network& teacher, const Network& student, float alpha);

/// Eq.-2 view of one image's reconstruction: output channel c equals
/// sum_k latent[k] * weights[c][k] exactly (the head has no bias).
struct LatentStack {
  Tensor latent;   // [d,H,W]
  Tensor weights;  // [3,d]
};
LatentStack latent_stack(const Network& student, const Tensor& image);  // image [3,H,W]

}  // namespace forec::net
