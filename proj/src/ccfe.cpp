#include "mirrorseg/ccfe.hpp"

#include "mirrorseg/errors.hpp"

namespace mseg {

Tensor contextual_contrast(const Tensor& f, const ConvParams& local, const ConvParams& context) {
  Tensor a = conv2d(f, local);
  Tensor b = conv2d(f, context);
  if (!a.same_shape(b)) {
    throw ShapeError("contextual contrast: branch outputs " + a.shape_str() + " vs " +
                     b.shape_str());
  }
  for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] -= b.data()[i];
  return a;
}

CcfeBlockParams make_ccfe_block(int c_in, int c_out, const std::vector<int>& dilations,
                                int reduction, bool use_contrast) {
  if (c_in % 4 != 0) {
    throw ShapeError("ccfe block: input width " + std::to_string(c_in) + " not divisible by 4");
  }
  if (dilations.empty()) throw ShapeError("ccfe block: needs at least one dilation");
  const int c_b = c_in / 4;
  CcfeBlockParams p;
  p.c_in = c_in;
  p.c_out = c_out;
  p.use_contrast = use_contrast;
  for (int d : dilations) {
    CcfeBranch br;
    br.dilation = d;
    if (use_contrast) br.local = make_conv(c_b, c_in, 3, 1, 1, 1);
    br.context = make_conv(c_b, c_in, 3, 1, d, d);
    br.bn = make_batch_norm(c_b);
    p.branches.push_back(std::move(br));
  }
  const int cat_width = c_b * static_cast<int>(dilations.size());
  p.attention = make_attention(cat_width, reduction);
  p.projection = make_conv(c_out, cat_width, 1, 1, 1, 0);
  p.proj_bn = make_batch_norm(c_out);
  return p;
}

Tensor ccfe_block(const Tensor& f, CcfeBlockParams& p, bool training, CcfeBlockCache* cache) {
  const std::size_t nb = p.branches.size();
  std::vector<Tensor> relu_out(nb);
  CcfeBlockCache local_cache;
  CcfeBlockCache& c = cache ? *cache : local_cache;
  c.diff.resize(nb);
  c.bn.resize(nb);
  c.bn_out.resize(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    CcfeBranch& br = p.branches[i];
    Tensor diff = p.use_contrast ? contextual_contrast(f, br.local, br.context)
                                 : conv2d(f, br.context);
    Tensor bn_out = batch_norm(diff, br.bn, training, &c.bn[i]);
    relu_out[i] = activate(bn_out, Activation::kRelu);
    c.diff[i] = std::move(diff);
    c.bn_out[i] = std::move(bn_out);
  }
  std::vector<const Tensor*> parts;
  for (const Tensor& t : relu_out) parts.push_back(&t);
  Tensor cat = concat_channels(parts);
  Tensor att_out = cbam(cat, p.attention, cache ? &c.att : nullptr);
  Tensor proj = conv2d(att_out, p.projection);
  Tensor proj_bn_out = batch_norm(proj, p.proj_bn, training, &c.proj_bn);
  Tensor out = activate(proj_bn_out, Activation::kRelu);
  if (cache) {
    c.input = f;
    c.concat = std::move(cat);
    c.att_out = std::move(att_out);
    c.proj_out = std::move(proj);
    c.proj_bn_out = std::move(proj_bn_out);
  }
  return out;
}

CcfeBlockGrads ccfe_block_backward(const CcfeBlockParams& p, const CcfeBlockCache& cache,
                                   const Tensor& grad_out) {
  CcfeBlockGrads g;
  g.branches.resize(p.branches.size());

  Tensor d_proj_bn = activate_backward(cache.proj_bn_out, Activation::kRelu, grad_out);
  BnGrads proj_bn_g = batch_norm_backward(cache.proj_out, p.proj_bn, cache.proj_bn, d_proj_bn);
  g.proj_bn.gamma = std::move(proj_bn_g.gamma);
  g.proj_bn.beta = std::move(proj_bn_g.beta);
  ConvGrads proj_g = conv2d_backward(cache.att_out, p.projection, proj_bn_g.input);
  g.projection.weight = std::move(proj_g.weight);
  g.projection.bias = std::move(proj_g.bias);

  g.attention = cbam_backward(cache.concat, p.attention, cache.att, proj_g.input);

  std::vector<int> widths;
  for (const Tensor& t : cache.bn_out) widths.push_back(t.c());
  std::vector<Tensor> d_relu = split_channels(g.attention.input, widths);

  for (std::size_t i = 0; i < p.branches.size(); ++i) {
    const CcfeBranch& br = p.branches[i];
    Tensor d_bn = activate_backward(cache.bn_out[i], Activation::kRelu, d_relu[i]);
    BnGrads bn_g = batch_norm_backward(cache.diff[i], br.bn, cache.bn[i], d_bn);
    g.branches[i].bn.gamma = std::move(bn_g.gamma);
    g.branches[i].bn.beta = std::move(bn_g.beta);
    if (p.use_contrast) {
      ConvGrads lg = conv2d_backward(cache.input, br.local, bn_g.input);
      Tensor neg = bn_g.input;
      for (Real& v : neg.data()) v = -v;
      ConvGrads cg = conv2d_backward(cache.input, br.context, neg);
      g.branches[i].local.weight = std::move(lg.weight);
      g.branches[i].local.bias = std::move(lg.bias);
      g.branches[i].context.weight = std::move(cg.weight);
      g.branches[i].context.bias = std::move(cg.bias);
      add_into(g.input, lg.input);
      add_into(g.input, cg.input);
    } else {
      ConvGrads cg = conv2d_backward(cache.input, br.context, bn_g.input);
      g.branches[i].context.weight = std::move(cg.weight);
      g.branches[i].context.bias = std::move(cg.bias);
      add_into(g.input, cg.input);
    }
  }
  return g;
}

CcfeModuleParams make_ccfe_module(int channels, int num_blocks, const std::vector<int>& dilations,
                                  int reduction, bool use_contrast) {
  if (num_blocks < 1) throw ShapeError("ccfe module: needs at least one block");
  CcfeModuleParams p;
  p.c_in = channels;
  p.c_out = channels;
  for (int b = 0; b < num_blocks; ++b) {
    p.blocks.push_back(make_ccfe_block(channels, channels, dilations, reduction, use_contrast));
  }
  const int cat_width = channels * num_blocks;
  p.fusion_attention = make_attention(cat_width, reduction);
  p.fuse = make_conv(channels, cat_width, 1, 1, 1, 0);
  p.fuse_bn = make_batch_norm(channels);
  return p;
}

Tensor ccfe_module(const Tensor& f, CcfeModuleParams& p, bool training, CcfeModuleCache* cache) {
  const std::size_t nb = p.blocks.size();
  CcfeModuleCache local_cache;
  CcfeModuleCache& c = cache ? *cache : local_cache;
  c.blocks.resize(nb);
  c.block_out.resize(nb);
  const Tensor* cur = &f;
  for (std::size_t i = 0; i < nb; ++i) {
    c.block_out[i] = ccfe_block(*cur, p.blocks[i], training, cache ? &c.blocks[i] : nullptr);
    cur = &c.block_out[i];
  }
  std::vector<const Tensor*> parts;
  for (const Tensor& t : c.block_out) parts.push_back(&t);
  Tensor cat = concat_channels(parts);
  Tensor att_out = cbam(cat, p.fusion_attention, cache ? &c.att : nullptr);
  Tensor fuse_out = conv2d(att_out, p.fuse);
  Tensor fuse_bn_out = batch_norm(fuse_out, p.fuse_bn, training, &c.fuse_bn);
  Tensor out = activate(fuse_bn_out, Activation::kRelu);
  if (cache) {
    c.concat = std::move(cat);
    c.att_out = std::move(att_out);
    c.fuse_out = std::move(fuse_out);
    c.fuse_bn_out = std::move(fuse_bn_out);
  }
  return out;
}

CcfeModuleGrads ccfe_module_backward(const CcfeModuleParams& p, const CcfeModuleCache& cache,
                                     const Tensor& grad_out) {
  CcfeModuleGrads g;
  const std::size_t nb = p.blocks.size();

  Tensor d_fuse_bn = activate_backward(cache.fuse_bn_out, Activation::kRelu, grad_out);
  BnGrads fuse_bn_g = batch_norm_backward(cache.fuse_out, p.fuse_bn, cache.fuse_bn, d_fuse_bn);
  g.fuse_bn.gamma = std::move(fuse_bn_g.gamma);
  g.fuse_bn.beta = std::move(fuse_bn_g.beta);
  ConvGrads fuse_g = conv2d_backward(cache.att_out, p.fuse, fuse_bn_g.input);
  g.fuse.weight = std::move(fuse_g.weight);
  g.fuse.bias = std::move(fuse_g.bias);

  g.attention = cbam_backward(cache.concat, p.fusion_attention, cache.att, fuse_g.input);

  std::vector<int> widths;
  for (const CcfeBlockParams& b : p.blocks) widths.push_back(b.c_out);
  std::vector<Tensor> d_block = split_channels(g.attention.input, widths);

  // Blocks chain: block i feeds both the concat and block i+1.
  g.blocks.resize(nb);
  Tensor d_chain;
  for (std::size_t i = nb; i-- > 0;) {
    Tensor total = std::move(d_block[i]);
    if (!d_chain.empty()) add_into(total, d_chain);
    g.blocks[i] = ccfe_block_backward(p.blocks[i], cache.blocks[i], total);
    d_chain = std::move(g.blocks[i].input);
  }
  g.input = std::move(d_chain);
  return g;
}

}  // namespace mseg
