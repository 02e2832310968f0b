#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mirrorseg/ccfe.hpp"
#include "mirrorseg/crf.hpp"
#include "mirrorseg/params.hpp"
#include "mirrorseg/rng.hpp"
#include "mirrorseg/tensor.hpp"

namespace mseg {

enum class CcfeMode { kFull, kNoContrast, kNone };

struct NetworkConfig {
  int resolution = 64;
  std::vector<int> widths = {16, 32, 64, 128};  // backbone stage widths
  int ccfe_blocks = 4;
  int ccfe_scales = 4;  // contrast dilations per block, first of {2, 4, 8, 16}
  int attention_reduction = 4;
  std::vector<Real> loss_weights = {1, 1, 1, 1};
  CcfeMode ccfe_mode = CcfeMode::kFull;
  std::uint64_t seed = 7;

  int levels() const { return static_cast<int>(widths.size()); }
  std::vector<int> dilations() const;
  void validate() const;  // throws ConfigError naming the violated constraint
};

// Conv / batch-norm wrappers that own their parameters and know their
// registration slots in the ParamStore.
class Conv2dLayer {
 public:
  ConvParams p;

  void create(int c_out, int c_in, int k, int stride, int dilation, int padding, Rng& rng);
  void reg(ParamStore& ps, const std::string& prefix);
  Tensor forward(const Tensor& x) const { return conv2d(x, p); }
  Tensor backward(const Tensor& x, const Tensor& grad_out, ParamStore& ps) const;

 private:
  int w_slot_ = -1, b_slot_ = -1;
};

class BatchNormLayer {
 public:
  BatchNormState s;

  void create(int channels) { s = make_batch_norm(channels); }
  void reg(ParamStore& ps, const std::string& prefix);
  Tensor forward(const Tensor& x, bool training, BnCache& cache) {
    return batch_norm(x, s, training, &cache);
  }
  Tensor backward(const Tensor& x, const BnCache& cache, const Tensor& grad_out,
                  ParamStore& ps) const;

 private:
  int gamma_slot_ = -1, beta_slot_ = -1;
};

struct ConvBnReluCache {
  Tensor x;         // layer input
  Tensor conv_out;  // before batch norm
  BnCache bn;
  Tensor bn_out;  // before relu
};

class ConvBnRelu {
 public:
  void create(int c_out, int c_in, int k, int stride, int dilation, int padding, Rng& rng);
  void reg(ParamStore& ps, const std::string& prefix);
  Tensor forward(const Tensor& x, bool training, ConvBnReluCache& cache);
  Tensor backward(const ConvBnReluCache& cache, const Tensor& grad_out, ParamStore& ps);

 private:
  Conv2dLayer conv_;
  BatchNormLayer bn_;
};

class CcfeModuleLayer {
 public:
  CcfeModuleParams p;

  void create(int channels, int blocks, const std::vector<int>& dilations, int reduction,
              bool use_contrast, Rng& rng);
  void reg(ParamStore& ps, const std::string& prefix);
  Tensor forward(const Tensor& x, bool training, CcfeModuleCache& cache) {
    return ccfe_module(x, p, training, &cache);
  }
  Tensor backward(const CcfeModuleCache& cache, const Tensor& grad_out, ParamStore& ps);

 private:
  struct ConvSlots {
    int w = -1, b = -1;
  };
  struct BnSlots {
    int gamma = -1, beta = -1;
  };
  struct AttSlots {
    int w1 = -1, w2 = -1, sw = -1, sb = -1;
  };
  struct BranchSlots {
    ConvSlots local, context;
    BnSlots bn;
  };
  struct BlockSlots {
    std::vector<BranchSlots> branches;
    AttSlots att;
    ConvSlots proj;
    BnSlots proj_bn;
  };
  std::vector<BlockSlots> block_slots_;
  AttSlots att_slots_;
  ConvSlots fuse_slots_;
  BnSlots fuse_bn_slots_;
};

// Full mirror-segmentation network: a plain 4-stage backbone whose stage
// outputs feed per-level feature modules; mirror maps gate the next-finer
// level's features in a coarse-to-fine pass.
class MirrorNet {
 public:
  explicit MirrorNet(const NetworkConfig& cfg);
  MirrorNet(const MirrorNet&) = delete;
  MirrorNet& operator=(const MirrorNet&) = delete;

  const NetworkConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  struct Forward {
    // level-1 (finest) first, all upsampled to the input resolution
    std::vector<Tensor> maps;
    bool training = false;

    // internals for backward
    std::vector<Tensor> features;       // per stage
    std::vector<ConvBnReluCache> stage_a, stage_b, down;
    std::vector<Tensor> up_logits;      // upsampled lower map, pre-sigmoid, per level < S
    std::vector<Tensor> gates;          // sigmoid(up_logits)
    std::vector<Tensor> gated;          // features after gating (== features at level S)
    std::vector<CcfeModuleCache> ccfe;
    std::vector<Tensor> head_in;
    std::vector<Tensor> level_logits;   // at level resolution
  };

  Forward forward(const Tensor& image, bool training);

  // map_grads[s] is dLoss/d(maps[s]); returns dLoss/d(image) and accumulates
  // parameter gradients. Only valid for a training-mode forward.
  Tensor backward(const Forward& fw, const std::vector<Tensor>& map_grads);

  Tensor predict_prob(const Tensor& image);  // sigmoid of the level-1 map
  Tensor predict(const Tensor& image, Real threshold, const CrfParams* crf = nullptr);

 private:
  NetworkConfig cfg_;
  std::vector<ConvBnRelu> stage_a_, stage_b_;  // two conv-bn-relu per stage
  std::vector<ConvBnRelu> downs_;              // stride-2 between stages
  std::vector<std::unique_ptr<CcfeModuleLayer>> ccfe_;
  std::vector<Conv2dLayer> heads_;             // 1x1 to one logit channel
  ParamStore store_;
};

// All parameters He-initialized (fan-in scaling) deterministically from
// config.seed; biases and batch-norm betas zero, gammas one.
std::unique_ptr<MirrorNet> build_network(const NetworkConfig& cfg);

// He-style initializers shared with the module-level tests.
void he_init_tensor(Tensor& w, int fan_in, Rng& rng);
void he_init_conv(ConvParams& p, Rng& rng);
void he_init_attention(AttentionParams& p, Rng& rng);
void he_init_ccfe_block(CcfeBlockParams& p, Rng& rng);
void he_init_ccfe_module(CcfeModuleParams& p, Rng& rng);

}  // namespace mseg
