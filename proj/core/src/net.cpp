#include "forec/net.hpp"

#include <cmath>
#include <utility>

#include "forec/errors.hpp"
#include "forec/ops.hpp"
#include "forec/rng.hpp"

namespace forec::net {

void NetworkConfig::validate() const {
  if (in_channels < 1) throw ValueError("network: in_channels must be >= 1");
  if (num_classes < 2) throw ValueError("network: num_classes must be >= 2");
  if (base_width < 1) throw ValueError("network: base_width must be >= 1");
  if (stages < 1) throw ValueError("network: stages must be >= 1");
  if (latent_dim < 1) throw ValueError("network: latent_dim must be >= 1");
}

namespace {

ConvLayer make_conv(const std::string& name, int cout, int cin, int k, int stride, int pad,
                    bool bias, Rng& rng) {
  ConvLayer l;
  l.stride = stride;
  l.pad = pad;
  l.has_bias = bias;
  Tensor w = Tensor::zeros({cout, cin, k, k});
  float bound = std::sqrt(6.f / float(cin * k * k));
  for (float& v : w.data) v = rng.uniform_f(-bound, bound);
  l.w = tape::Parameter(name + ".w", std::move(w));
  if (bias) l.b = tape::Parameter(name + ".b", Tensor::zeros({cout}));
  return l;
}

// Decoder channel plan: stage j upsamples and maps a_j -> b_j, walking the
// encoder widths back down until the last stage lands on the latent width.
void decoder_channels(const NetworkConfig& cfg, int j, int& a, int& b) {
  a = cfg.stage_width(cfg.stages - 1 - j);
  b = (j == cfg.stages - 1) ? cfg.latent_dim : cfg.stage_width(cfg.stages - 2 - j);
}

std::vector<ConvLayer> make_decoder(const NetworkConfig& cfg, const std::string& prefix,
                                    int head_out, bool head_bias, Rng& rng) {
  std::vector<ConvLayer> layers;
  for (int j = 0; j < cfg.stages; ++j) {
    int a, b;
    decoder_channels(cfg, j, a, b);
    layers.push_back(make_conv(prefix + std::to_string(j) + ".conv", b, a, 3, 1, 1, true, rng));
  }
  layers.push_back(make_conv(prefix + ".head", head_out, cfg.latent_dim, 1, 1, 0, head_bias, rng));
  return layers;
}

void collect_params(std::vector<ConvLayer>& layers, std::vector<tape::Parameter*>& out) {
  for (ConvLayer& l : layers) {
    out.push_back(&l.w);
    if (l.has_bias) out.push_back(&l.b);
  }
}

void collect_params(const std::vector<ConvLayer>& layers,
                    std::vector<const tape::Parameter*>& out) {
  for (const ConvLayer& l : layers) {
    out.push_back(&l.w);
    if (l.has_bias) out.push_back(&l.b);
  }
}

}  // namespace

std::vector<tape::Parameter*> Network::params() {
  std::vector<tape::Parameter*> out;
  collect_params(enc, out);
  collect_params(seg, out);
  collect_params(aux, out);
  return out;
}

std::vector<const tape::Parameter*> Network::params() const {
  std::vector<const tape::Parameter*> out;
  collect_params(enc, out);
  collect_params(seg, out);
  collect_params(aux, out);
  return out;
}

std::vector<tape::Parameter*> Network::shared_params() {
  std::vector<tape::Parameter*> out;
  collect_params(enc, out);
  collect_params(seg, out);
  return out;
}

std::vector<const tape::Parameter*> Network::shared_params() const {
  std::vector<const tape::Parameter*> out;
  collect_params(enc, out);
  collect_params(seg, out);
  return out;
}

void Network::zero_grads() {
  for (tape::Parameter* p : params()) p->zero_grad();
}

BuildResult build(const NetworkConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng = Rng(seed).fork("net-init");

  BuildResult r;
  r.student.cfg = cfg;
  r.student.role = Role::Student;
  for (int i = 0; i < cfg.stages; ++i) {
    int cin = i == 0 ? cfg.in_channels : cfg.stage_width(i - 1);
    int cout = cfg.stage_width(i);
    std::string base = "enc" + std::to_string(i);
    r.student.enc.push_back(make_conv(base + ".c0", cout, cin, 3, 2, 1, true, rng));
    r.student.enc.push_back(make_conv(base + ".c1", cout, cout, 3, 1, 1, true, rng));
  }
  r.student.seg = make_decoder(cfg, "seg", cfg.num_classes, true, rng);
  if (cfg.aux != AuxKind::None)
    r.student.aux =
        make_decoder(cfg, "aux", cfg.aux_out_channels(), cfg.aux == AuxKind::FgBg, rng);

  r.teacher.cfg = cfg;
  r.teacher.cfg.aux = AuxKind::None;
  r.teacher.role = Role::Teacher;
  r.teacher.enc = r.student.enc;
  r.teacher.seg = r.student.seg;
  return r;
}

namespace {

template <class Net, class Push>
ForwardResult run_net(Net& net, tape::Tape& t, tape::NodeId input, bool want_seg, bool want_aux,
                      Push push) {
  const NetworkConfig& cfg = net.cfg;
  const Tensor& x = t.value(input);
  if (x.ndim() != 4 || x.dim(1) != cfg.in_channels)
    throw ShapeError("network input must be [N," + std::to_string(cfg.in_channels) + ",H,W]");
  int div = 1 << cfg.stages;
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
    throw ShapeError("network input spatial dims must be divisible by " + std::to_string(div));
  if (want_aux && net.aux.empty())
    throw ValueError(net.role == Role::Teacher
                         ? "teacher network has no auxiliary decoder"
                         : "network was built without an auxiliary decoder");

  auto conv = [&](auto& layer, tape::NodeId in) {
    tape::NodeId w = push(layer.w);
    tape::NodeId b = layer.has_bias ? push(layer.b) : tape::kNoNode;
    return t.conv2d(in, w, b, layer.stride, layer.pad);
  };
  auto decode = [&](auto& layers, tape::NodeId in, tape::NodeId* latent_out) {
    tape::NodeId h = in;
    for (int j = 0; j < cfg.stages; ++j) {
      h = t.upsample_nearest(h, 2);
      h = t.relu(conv(layers[size_t(j)], h));
    }
    if (latent_out) *latent_out = h;
    return conv(layers.back(), h);
  };

  ForwardResult r;
  tape::NodeId h = input;
  for (auto& layer : net.enc) h = t.relu(conv(layer, h));
  r.encoded = h;
  if (want_seg) r.seg_logits = decode(net.seg, h, nullptr);
  if (want_aux) r.aux_output = decode(net.aux, h, &r.aux_latent);
  return r;
}

}  // namespace

ForwardResult forward(Network& net, tape::Tape& t, tape::NodeId input, bool want_seg,
                      bool want_aux) {
  return run_net(net, t, input, want_seg, want_aux,
                 [&t](tape::Parameter& p) { return t.param(p); });
}

ForwardResult forward_frozen(const Network& net, tape::Tape& t, tape::NodeId input, bool want_seg,
                             bool want_aux) {
  return run_net(net, t, input, want_seg, want_aux,
                 [&t](const tape::Parameter& p) { return t.input(p.value); });
}

Tensor forward_seg(const Network& net, const Tensor& x) {
  tape::Tape t;
  ForwardResult r = forward_frozen(net, t, t.input(x), true, false);
  return t.value(r.seg_logits);
}

AuxForward forward_aux(const Network& net, const Tensor& x) {
  tape::Tape t;
  ForwardResult r = forward_frozen(net, t, t.input(x), false, true);
  return {t.value(r.aux_latent), t.value(r.aux_output)};
}

void ema_update(Network& teacher, const Network& student, float alpha) {
  if (alpha < 0.f || alpha > 1.f) throw ValueError("ema: alpha must be in [0,1]");
  auto tp = teacher.shared_params();
  auto sp = student.shared_params();
  if (tp.size() != sp.size()) throw ShapeError("ema: parameter lists differ in length");
  for (size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]->name != sp[i]->name || !tp[i]->value.same_shape(sp[i]->value))
      throw ShapeError("ema: mismatched parameter " + tp[i]->name);
    float* tv = tp[i]->value.data.data();
    const float* sv = sp[i]->value.data.data();
    for (size_t j = 0; j < tp[i]->value.data.size(); ++j)
      tv[j] = alpha * tv[j] + (1.f - alpha) * sv[j];
  }
}

LatentStack latent_stack(const Network& student, const Tensor& image) {
  if (student.cfg.aux != AuxKind::Reconstruction)
    throw ValueError("latent stack requires a reconstruction decoder");
  if (image.ndim() != 3) throw ShapeError("latent_stack expects a single [3,H,W] image");
  Tensor batched({1, image.dim(0), image.dim(1), image.dim(2)}, image.data);
  AuxForward f = forward_aux(student, batched);

  LatentStack s;
  int d = f.latent.dim(1), h = f.latent.dim(2), w = f.latent.dim(3);
  s.latent = Tensor({d, h, w}, std::move(f.latent.data));
  const Tensor& hw = student.aux.back().w.value;  // [3,d,1,1]
  s.weights = Tensor({hw.dim(0), hw.dim(1)}, hw.data);
  return s;
}

}  // namespace forec::net
