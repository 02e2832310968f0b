#pragma once

#include <vector>

#include "mirrorseg/attention.hpp"
#include "mirrorseg/ops.hpp"
#include "mirrorseg/tensor.hpp"

namespace mseg {

// Contrast between a local 3x3 convolution and a dilated 3x3 context
// convolution of the same input: difference of the raw convolution outputs.
// Both convolutions must produce identical shapes.
Tensor contextual_contrast(const Tensor& f, const ConvParams& local, const ConvParams& context);

struct ConvGradPair {
  Tensor weight;
  std::vector<Real> bias;
};
struct BnGradPair {
  std::vector<Real> gamma, beta;
};

// One contrast branch: local conv (dilation 1) and context conv (dilation d),
// each C_in -> C_b, with batch norm + relu applied after the difference.
struct CcfeBranch {
  ConvParams local;    // unused when the block runs without contrasts
  ConvParams context;
  BatchNormState bn;
  int dilation = 2;
};

struct CcfeBlockParams {
  std::vector<CcfeBranch> branches;
  AttentionParams attention;  // over the concatenated branch outputs
  ConvParams projection;      // 1x1 back to the block output width
  BatchNormState proj_bn;
  bool use_contrast = true;
  int c_in = 0, c_out = 0;
};

// Branch width is C_in/4. With use_contrast=false the difference is replaced
// by the context-branch output alone, widths unchanged.
CcfeBlockParams make_ccfe_block(int c_in, int c_out, const std::vector<int>& dilations,
                                int reduction, bool use_contrast = true);

struct CcfeBlockCache {
  Tensor input;
  std::vector<Tensor> diff;     // per branch, before batch norm
  std::vector<BnCache> bn;
  std::vector<Tensor> bn_out;   // before relu
  Tensor concat;                // after relu, concatenated
  CbamCache att;
  Tensor att_out;
  Tensor proj_out;              // 1x1 conv output, before batch norm
  BnCache proj_bn;
  Tensor proj_bn_out;           // before relu
};

Tensor ccfe_block(const Tensor& f, CcfeBlockParams& p, bool training,
                  CcfeBlockCache* cache = nullptr);

struct CcfeBranchGrads {
  ConvGradPair local, context;
  BnGradPair bn;
};
struct CcfeBlockGrads {
  std::vector<CcfeBranchGrads> branches;
  AttentionGrads attention;
  ConvGradPair projection;
  BnGradPair proj_bn;
  Tensor input;
};

CcfeBlockGrads ccfe_block_backward(const CcfeBlockParams& p, const CcfeBlockCache& cache,
                                   const Tensor& grad_out);

// Chained blocks; block outputs are concatenated, refined by attention, and
// fused back to the module width by a 1x1 convolution.
struct CcfeModuleParams {
  std::vector<CcfeBlockParams> blocks;
  AttentionParams fusion_attention;  // over blocks.size() * width channels
  ConvParams fuse;                   // 1x1 to c_out
  BatchNormState fuse_bn;
  int c_in = 0, c_out = 0;
};

CcfeModuleParams make_ccfe_module(int channels, int num_blocks, const std::vector<int>& dilations,
                                  int reduction, bool use_contrast = true);

struct CcfeModuleCache {
  std::vector<CcfeBlockCache> blocks;
  std::vector<Tensor> block_out;
  Tensor concat;
  CbamCache att;
  Tensor att_out;
  Tensor fuse_out;  // conv output, before batch norm
  BnCache fuse_bn;
  Tensor fuse_bn_out;  // before relu
};

Tensor ccfe_module(const Tensor& f, CcfeModuleParams& p, bool training,
                   CcfeModuleCache* cache = nullptr);

struct CcfeModuleGrads {
  std::vector<CcfeBlockGrads> blocks;
  AttentionGrads attention;
  ConvGradPair fuse;
  BnGradPair fuse_bn;
  Tensor input;
};

CcfeModuleGrads ccfe_module_backward(const CcfeModuleParams& p, const CcfeModuleCache& cache,
                                     const Tensor& grad_out);

}  // namespace mseg
