#include "mirrorseg/network.hpp"

#include <cmath>
#include <sstream>

#include "mirrorseg/errors.hpp"

namespace mseg {

std::vector<int> NetworkConfig::dilations() const {
  static constexpr int kAll[4] = {2, 4, 8, 16};
  std::vector<int> d;
  for (int i = 0; i < ccfe_scales; ++i) d.push_back(kAll[i]);
  return d;
}

void NetworkConfig::validate() const {
  if (widths.empty()) throw ConfigError("network: widths must be non-empty");
  for (int w : widths) {
    if (w < 4 || w % 4 != 0) {
      throw ConfigError("network: stage width " + std::to_string(w) + " not divisible by 4");
    }
    if (w % attention_reduction != 0) {
      throw ConfigError("network: stage width " + std::to_string(w) +
                        " not divisible by attention reduction " +
                        std::to_string(attention_reduction));
    }
  }
  if (attention_reduction < 1) throw ConfigError("network: attention reduction must be positive");
  if (ccfe_scales < 1 || ccfe_scales > 4) {
    throw ConfigError("network: ccfe_scales must lie in [1, 4]");
  }
  if (ccfe_blocks < 1) throw ConfigError("network: ccfe_blocks must be positive");
  if (loss_weights.size() != widths.size()) {
    throw ConfigError("network: need one loss weight per supervision level (" +
                      std::to_string(widths.size()) + ")");
  }
  const int factor = 1 << (levels() - 1);
  if (resolution < factor || resolution % factor != 0) {
    throw ConfigError("network: resolution " + std::to_string(resolution) +
                      " not divisible by 2^(levels-1) = " + std::to_string(factor));
  }
}

void he_init_tensor(Tensor& w, int fan_in, Rng& rng) {
  std::normal_distribution<Real> dist(0, std::sqrt(Real(2) / fan_in));
  for (Real& v : w.data()) v = dist(rng);
}

void he_init_conv(ConvParams& p, Rng& rng) {
  he_init_tensor(p.weight, p.c_in() * p.kh() * p.kw(), rng);
  std::fill(p.bias.begin(), p.bias.end(), Real(0));
}

void he_init_attention(AttentionParams& p, Rng& rng) {
  he_init_tensor(p.mlp_w1, p.mlp_w1.c(), rng);
  he_init_tensor(p.mlp_w2, p.mlp_w2.c(), rng);
  he_init_conv(p.spatial, rng);
}

void he_init_ccfe_block(CcfeBlockParams& p, Rng& rng) {
  for (CcfeBranch& br : p.branches) {
    if (p.use_contrast) he_init_conv(br.local, rng);
    he_init_conv(br.context, rng);
  }
  he_init_attention(p.attention, rng);
  he_init_conv(p.projection, rng);
}

void he_init_ccfe_module(CcfeModuleParams& p, Rng& rng) {
  for (CcfeBlockParams& b : p.blocks) he_init_ccfe_block(b, rng);
  he_init_attention(p.fusion_attention, rng);
  he_init_conv(p.fuse, rng);
}

void Conv2dLayer::create(int c_out, int c_in, int k, int stride, int dilation, int padding,
                         Rng& rng) {
  p = make_conv(c_out, c_in, k, stride, dilation, padding);
  he_init_conv(p, rng);
}

void Conv2dLayer::reg(ParamStore& ps, const std::string& prefix) {
  w_slot_ = ps.add(prefix + ".w", &p.weight.data(),
                   {p.weight.n(), p.weight.c(), p.weight.h(), p.weight.w()});
  b_slot_ = ps.add(prefix + ".b", &p.bias, {1, static_cast<int>(p.bias.size()), 1, 1});
}

Tensor Conv2dLayer::backward(const Tensor& x, const Tensor& grad_out, ParamStore& ps) const {
  ConvGrads g = conv2d_backward(x, p, grad_out);
  ps.accumulate_grad(w_slot_, g.weight.data());
  ps.accumulate_grad(b_slot_, g.bias);
  return std::move(g.input);
}

void BatchNormLayer::reg(ParamStore& ps, const std::string& prefix) {
  const int c = static_cast<int>(s.gamma.size());
  gamma_slot_ = ps.add(prefix + ".gamma", &s.gamma, {1, c, 1, 1}, true, true);
  beta_slot_ = ps.add(prefix + ".beta", &s.beta, {1, c, 1, 1}, true, true);
  ps.add(prefix + ".running_mean", &s.running_mean, {1, c, 1, 1}, false);
  ps.add(prefix + ".running_var", &s.running_var, {1, c, 1, 1}, false);
}

Tensor BatchNormLayer::backward(const Tensor& x, const BnCache& cache, const Tensor& grad_out,
                                ParamStore& ps) const {
  BnGrads g = batch_norm_backward(x, s, cache, grad_out);
  ps.accumulate_grad(gamma_slot_, g.gamma);
  ps.accumulate_grad(beta_slot_, g.beta);
  return std::move(g.input);
}

void ConvBnRelu::create(int c_out, int c_in, int k, int stride, int dilation, int padding,
                        Rng& rng) {
  conv_.create(c_out, c_in, k, stride, dilation, padding, rng);
  bn_.create(c_out);
}

void ConvBnRelu::reg(ParamStore& ps, const std::string& prefix) {
  conv_.reg(ps, prefix + ".conv");
  bn_.reg(ps, prefix + ".bn");
}

Tensor ConvBnRelu::forward(const Tensor& x, bool training, ConvBnReluCache& cache) {
  cache.x = x;
  cache.conv_out = conv_.forward(x);
  cache.bn_out = bn_.forward(cache.conv_out, training, cache.bn);
  return activate(cache.bn_out, Activation::kRelu);
}

Tensor ConvBnRelu::backward(const ConvBnReluCache& cache, const Tensor& grad_out, ParamStore& ps) {
  Tensor d_bn = activate_backward(cache.bn_out, Activation::kRelu, grad_out);
  Tensor d_conv = bn_.backward(cache.conv_out, cache.bn, d_bn, ps);
  return conv_.backward(cache.x, d_conv, ps);
}

void CcfeModuleLayer::create(int channels, int blocks, const std::vector<int>& dilations,
                             int reduction, bool use_contrast, Rng& rng) {
  p = make_ccfe_module(channels, blocks, dilations, reduction, use_contrast);
  he_init_ccfe_module(p, rng);
}

namespace {

std::array<int, 4> tensor_shape(const Tensor& t) {
  return {t.n(), t.c(), t.h(), t.w()};
}

}  // namespace

void CcfeModuleLayer::reg(ParamStore& ps, const std::string& prefix) {
  auto reg_conv = [&](ConvParams& c, const std::string& name) {
    ConvSlots s;
    s.w = ps.add(name + ".w", &c.weight.data(), tensor_shape(c.weight));
    s.b = ps.add(name + ".b", &c.bias, {1, static_cast<int>(c.bias.size()), 1, 1});
    return s;
  };
  auto reg_bn = [&](BatchNormState& bn, const std::string& name) {
    BnSlots s;
    const int c = static_cast<int>(bn.gamma.size());
    s.gamma = ps.add(name + ".gamma", &bn.gamma, {1, c, 1, 1}, true, true);
    s.beta = ps.add(name + ".beta", &bn.beta, {1, c, 1, 1}, true, true);
    ps.add(name + ".running_mean", &bn.running_mean, {1, c, 1, 1}, false);
    ps.add(name + ".running_var", &bn.running_var, {1, c, 1, 1}, false);
    return s;
  };
  auto reg_att = [&](AttentionParams& a, const std::string& name) {
    AttSlots s;
    s.w1 = ps.add(name + ".mlp_w1", &a.mlp_w1.data(), tensor_shape(a.mlp_w1));
    s.w2 = ps.add(name + ".mlp_w2", &a.mlp_w2.data(), tensor_shape(a.mlp_w2));
    s.sw = ps.add(name + ".spatial.w", &a.spatial.weight.data(), tensor_shape(a.spatial.weight));
    s.sb = ps.add(name + ".spatial.b", &a.spatial.bias,
                  {1, static_cast<int>(a.spatial.bias.size()), 1, 1});
    return s;
  };

  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    CcfeBlockParams& blk = p.blocks[b];
    const std::string bp = prefix + ".block" + std::to_string(b);
    BlockSlots bs;
    for (std::size_t i = 0; i < blk.branches.size(); ++i) {
      CcfeBranch& br = blk.branches[i];
      const std::string rp = bp + ".branch" + std::to_string(i);
      BranchSlots rs;
      if (blk.use_contrast) rs.local = reg_conv(br.local, rp + ".local");
      rs.context = reg_conv(br.context, rp + ".context");
      rs.bn = reg_bn(br.bn, rp + ".bn");
      bs.branches.push_back(rs);
    }
    bs.att = reg_att(blk.attention, bp + ".att");
    bs.proj = reg_conv(blk.projection, bp + ".proj");
    bs.proj_bn = reg_bn(blk.proj_bn, bp + ".proj_bn");
    block_slots_.push_back(std::move(bs));
  }
  att_slots_ = reg_att(p.fusion_attention, prefix + ".fuse_att");
  fuse_slots_ = reg_conv(p.fuse, prefix + ".fuse");
  fuse_bn_slots_ = reg_bn(p.fuse_bn, prefix + ".fuse_bn");
}

Tensor CcfeModuleLayer::backward(const CcfeModuleCache& cache, const Tensor& grad_out,
                                 ParamStore& ps) {
  CcfeModuleGrads g = ccfe_module_backward(p, cache, grad_out);
  auto acc_att = [&](const AttSlots& s, const AttentionGrads& a) {
    ps.accumulate_grad(s.w1, a.mlp_w1.data());
    ps.accumulate_grad(s.w2, a.mlp_w2.data());
    ps.accumulate_grad(s.sw, a.spatial_w.data());
    ps.accumulate_grad(s.sb, a.spatial_b);
  };
  for (std::size_t b = 0; b < block_slots_.size(); ++b) {
    const BlockSlots& bs = block_slots_[b];
    const CcfeBlockGrads& bg = g.blocks[b];
    for (std::size_t i = 0; i < bs.branches.size(); ++i) {
      const BranchSlots& rs = bs.branches[i];
      const CcfeBranchGrads& rg = bg.branches[i];
      if (p.blocks[b].use_contrast) {
        ps.accumulate_grad(rs.local.w, rg.local.weight.data());
        ps.accumulate_grad(rs.local.b, rg.local.bias);
      }
      ps.accumulate_grad(rs.context.w, rg.context.weight.data());
      ps.accumulate_grad(rs.context.b, rg.context.bias);
      ps.accumulate_grad(rs.bn.gamma, rg.bn.gamma);
      ps.accumulate_grad(rs.bn.beta, rg.bn.beta);
    }
    acc_att(bs.att, bg.attention);
    ps.accumulate_grad(bs.proj.w, bg.projection.weight.data());
    ps.accumulate_grad(bs.proj.b, bg.projection.bias);
    ps.accumulate_grad(bs.proj_bn.gamma, bg.proj_bn.gamma);
    ps.accumulate_grad(bs.proj_bn.beta, bg.proj_bn.beta);
  }
  acc_att(att_slots_, g.attention);
  ps.accumulate_grad(fuse_slots_.w, g.fuse.weight.data());
  ps.accumulate_grad(fuse_slots_.b, g.fuse.bias);
  ps.accumulate_grad(fuse_bn_slots_.gamma, g.fuse_bn.gamma);
  ps.accumulate_grad(fuse_bn_slots_.beta, g.fuse_bn.beta);
  return std::move(g.input);
}

MirrorNet::MirrorNet(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(cfg_.seed);
  const int levels = cfg_.levels();
  stage_a_.resize(levels);
  stage_b_.resize(levels);
  downs_.resize(levels - 1);
  heads_.resize(levels);

  for (int s = 0; s < levels; ++s) {
    const int c_in = s == 0 ? 3 : cfg_.widths[s];
    stage_a_[s].create(cfg_.widths[s], c_in, 3, 1, 1, 1, rng);
    stage_b_[s].create(cfg_.widths[s], cfg_.widths[s], 3, 1, 1, 1, rng);
  }
  for (int s = 0; s + 1 < levels; ++s) {
    downs_[s].create(cfg_.widths[s + 1], cfg_.widths[s], 3, 2, 1, 1, rng);
  }
  if (cfg_.ccfe_mode != CcfeMode::kNone) {
    const std::vector<int> dils = cfg_.dilations();
    for (int s = 0; s < levels; ++s) {
      auto mod = std::make_unique<CcfeModuleLayer>();
      mod->create(cfg_.widths[s], cfg_.ccfe_blocks, dils, cfg_.attention_reduction,
                  cfg_.ccfe_mode == CcfeMode::kFull, rng);
      ccfe_.push_back(std::move(mod));
    }
  }
  for (int s = 0; s < levels; ++s) {
    heads_[s].create(1, cfg_.widths[s], 1, 1, 1, 0, rng);
  }

  // register in construction order so checkpoints have a stable layout
  for (int s = 0; s < levels; ++s) {
    const std::string sp = "fen.stage" + std::to_string(s);
    stage_a_[s].reg(store_, sp + ".a");
    stage_b_[s].reg(store_, sp + ".b");
  }
  for (int s = 0; s + 1 < levels; ++s) {
    downs_[s].reg(store_, "fen.down" + std::to_string(s));
  }
  for (std::size_t s = 0; s < ccfe_.size(); ++s) {
    ccfe_[s]->reg(store_, "ccfe.level" + std::to_string(s));
  }
  for (int s = 0; s < levels; ++s) {
    heads_[s].reg(store_, "head.level" + std::to_string(s));
  }
}

MirrorNet::Forward MirrorNet::forward(const Tensor& image, bool training) {
  if (image.c() != 3) {
    throw ShapeError("forward: image must have 3 channels, got " + image.shape_str());
  }
  const int levels = cfg_.levels();
  const int factor = 1 << (levels - 1);
  if (image.h() % factor != 0 || image.w() % factor != 0) {
    std::ostringstream os;
    os << "forward: resolution " << image.h() << "x" << image.w() << " not divisible by "
       << factor;
    throw ShapeError(os.str());
  }
  for (Real v : image.data()) {
    if (v < 0 || v > 1) throw DataError("forward: image values must lie in [0, 1]");
  }

  Forward fw;
  fw.training = training;
  fw.features.resize(levels);
  fw.stage_a.resize(levels);
  fw.stage_b.resize(levels);
  fw.down.resize(levels - 1);
  fw.up_logits.resize(levels);
  fw.gates.resize(levels);
  fw.gated.resize(levels);
  fw.ccfe.resize(levels);
  fw.head_in.resize(levels);
  fw.level_logits.resize(levels);
  fw.maps.resize(levels);

  // feature extraction
  Tensor x = image;
  for (int s = 0; s < levels; ++s) {
    x = stage_a_[s].forward(x, training, fw.stage_a[s]);
    x = stage_b_[s].forward(x, training, fw.stage_b[s]);
    fw.features[s] = x;
    if (s + 1 < levels) x = downs_[s].forward(x, training, fw.down[s]);
  }

  // coarse-to-fine mirror maps
  for (int s = levels - 1; s >= 0; --s) {
    if (s == levels - 1) {
      fw.gated[s] = fw.features[s];
    } else {
      const Tensor& f = fw.features[s];
      fw.up_logits[s] = upsample_bilinear(fw.level_logits[s + 1], f.h(), f.w());
      fw.gates[s] = activate(fw.up_logits[s], Activation::kSigmoid);
      fw.gated[s] = mul_spatial_gate(f, fw.gates[s]);
    }
    if (!ccfe_.empty()) {
      fw.head_in[s] = ccfe_[s]->forward(fw.gated[s], training, fw.ccfe[s]);
    } else {
      fw.head_in[s] = fw.gated[s];
    }
    fw.level_logits[s] = heads_[s].forward(fw.head_in[s]);
  }
  for (int s = 0; s < levels; ++s) {
    fw.maps[s] = (fw.level_logits[s].h() == image.h() && fw.level_logits[s].w() == image.w())
                     ? fw.level_logits[s]
                     : upsample_bilinear(fw.level_logits[s], image.h(), image.w());
  }
  return fw;
}

Tensor MirrorNet::backward(const Forward& fw, const std::vector<Tensor>& map_grads) {
  if (!fw.training) throw StateError("backward: requires a training-mode forward pass");
  const int levels = cfg_.levels();
  if (static_cast<int>(map_grads.size()) != levels) {
    throw ShapeError("backward: need one gradient per supervision level");
  }

  // gradient of each level's logits, starting from the upsampled-map grads
  std::vector<Tensor> d_logits(levels);
  for (int s = 0; s < levels; ++s) {
    const Tensor& local = fw.level_logits[s];
    d_logits[s] = map_grads[s].same_shape(local)
                      ? map_grads[s]
                      : upsample_bilinear_backward(local.h(), local.w(), map_grads[s]);
  }

  // fine-to-coarse: the gate path adds gradient onto the next-lower map
  std::vector<Tensor> d_features(levels);
  for (int s = 0; s < levels; ++s) {
    Tensor d_head_in = heads_[s].backward(fw.head_in[s], d_logits[s], store_);
    Tensor d_gated = ccfe_.empty() ? std::move(d_head_in)
                                   : ccfe_[s]->backward(fw.ccfe[s], d_head_in, store_);
    if (s == levels - 1) {
      d_features[s] = std::move(d_gated);
    } else {
      const Tensor& f = fw.features[s];
      d_features[s] = mul_spatial_gate(d_gated, fw.gates[s]);
      Tensor d_gate = sum_over_channels(elementwise_mul(d_gated, f));
      Tensor d_up = activate_backward(fw.up_logits[s], Activation::kSigmoid, d_gate);
      add_into(d_logits[s + 1],
               upsample_bilinear_backward(fw.level_logits[s + 1].h(), fw.level_logits[s + 1].w(),
                                          d_up));
    }
  }

  // backbone
  Tensor dy = std::move(d_features[levels - 1]);
  for (int s = levels - 1; s >= 1; --s) {
    Tensor dx = stage_b_[s].backward(fw.stage_b[s], dy, store_);
    dx = stage_a_[s].backward(fw.stage_a[s], dx, store_);
    dy = downs_[s - 1].backward(fw.down[s - 1], dx, store_);
    add_into(dy, d_features[s - 1]);
  }
  Tensor dimg = stage_b_[0].backward(fw.stage_b[0], dy, store_);
  return stage_a_[0].backward(fw.stage_a[0], dimg, store_);
}

Tensor MirrorNet::predict_prob(const Tensor& image) {
  Forward fw = forward(image, false);
  return activate(fw.maps[0], Activation::kSigmoid);
}

Tensor MirrorNet::predict(const Tensor& image, Real threshold, const CrfParams* crf) {
  if (threshold <= 0 || threshold >= 1) throw ConfigError("predict: threshold must lie in (0, 1)");
  Tensor prob = predict_prob(image);
  if (crf) prob = crf_refine(image, prob, *crf);
  Tensor mask(prob.n(), 1, prob.h(), prob.w());
  for (std::size_t i = 0; i < prob.data().size(); ++i) {
    mask.data()[i] = prob.data()[i] >= threshold ? Real(1) : Real(0);
  }
  return mask;
}

std::unique_ptr<MirrorNet> build_network(const NetworkConfig& cfg) {
  return std::make_unique<MirrorNet>(cfg);
}

}  // namespace mseg
