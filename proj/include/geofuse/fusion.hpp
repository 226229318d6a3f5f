#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geofuse/core.hpp"
#include "geofuse/locenc.hpp"
#include "geofuse/params.hpp"
#include "geofuse/tokens.hpp"

namespace geofuse {

enum class Pooling { cls, mean };

struct FusionConfig {
  std::size_t token_dim = 0;  // h; 0 = feature dimension
  std::size_t num_layers = 2;
  std::size_t num_heads = 8;
  std::size_t ff_dim = 0;  // 0 = 4h
  double dropout = 0.0;
  double mask_prob = 0.3;
  std::size_t m = 0;   // outputs
  std::size_t j = 4;   // sentences per location
  std::size_t k = 10;  // neighbours
  Pooling pooling = Pooling::cls;

  /// Copy with the data-dependent defaults filled in.
  FusionConfig resolved(std::size_t feature_dim) const {
    FusionConfig c = *this;
    if (c.token_dim == 0) c.token_dim = feature_dim;
    if (c.ff_dim == 0) c.ff_dim = 4 * c.token_dim;
    return c;
  }

  void validate() const {
    require(token_dim > 0, "fusion: token_dim must be positive");
    require(num_heads > 0 && token_dim % num_heads == 0, "fusion: token_dim must be divisible by num_heads");
    require(num_layers >= 1, "fusion: need at least one encoder layer");
    require(ff_dim > 0, "fusion: ff_dim must be positive");
    require(m > 0, "fusion: output count m must be positive");
    require(mask_prob >= 0.0 && mask_prob < 1.0, "fusion: mask_prob must be in [0, 1)");
    require(dropout >= 0.0 && dropout < 1.0, "fusion: dropout must be in [0, 1)");
  }
};

/// Attention weights per layer and head over [CLS] ++ tokens.
struct AttentionRecord {
  std::vector<std::vector<Mat>> weights;  // [layer][head], (n+1) x (n+1)
  std::vector<TokenMeta> tokens;
};

struct ForwardResult {
  std::vector<double> prediction;
  std::optional<AttentionRecord> attention;
};

namespace nn {

inline constexpr double kLayerNormEps = 1e-5;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
  const double pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

/// Row-wise layer norm; keeps xhat and 1/sigma for the backward pass.
inline Mat layer_norm(const Mat& x, ConstVecMap gamma, ConstVecMap beta, Mat& xhat, Vec& rstd) {
  const auto n = x.rows();
  const auto h = static_cast<double>(x.cols());
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).sum() / h;
    const double var = (x.row(r).array() - mu).square().sum() / h;
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * rstd(r);
  }
  Mat y = xhat.array().rowwise() * gamma.array();
  y.rowwise() += beta;
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, ConstVecMap gamma,
                               VecMap dgamma, VecMap dbeta) {
  dgamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gamma.array();
  const double h = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double s1 = dxhat.row(r).sum();
    const double s2 = dxhat.row(r).dot(xhat.row(r));
    dx.row(r) = (rstd(r) / h) * (h * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
  }
  return dx;
}

/// y = x W^T + b with W stored (out x in).
inline Mat linear(const Mat& x, ConstMatMap w, std::optional<ConstVecMap> b) {
  Mat y = x * w.transpose();
  if (b) y.rowwise() += *b;
  return y;
}

}  // namespace nn

/// Attention-based fusion of location-aware tokens: per-token fusion map,
/// pre-norm transformer encoder, final layer norm, CLS pooling, projection.
class FusionModel {
 public:
  FusionModel(const FusionConfig& cfg, const LocEncConfig& loc, std::size_t feature_dim, std::uint64_t seed)
      : cfg_(cfg.resolved(feature_dim)), loc_(loc), d_(feature_dim) {
    require(feature_dim > 0, "fusion: feature dimension must be positive");
    cfg_.validate();
    loc_.validate();
    declare();
    initialize(seed);
  }

  const FusionConfig& config() const { return cfg_; }
  const LocEncConfig& locenc() const { return loc_; }
  std::size_t feature_dim() const { return d_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  ForwardResult forward(const TokenInputs& tokens, bool capture_attention = false) const {
    Cache cache;
    run(tokens, cache, nullptr);
    ForwardResult out;
    out.prediction.assign(cache.y.data(), cache.y.data() + cache.y.size());
    if (capture_attention) {
      AttentionRecord rec;
      rec.tokens = tokens.meta;
      for (auto& layer : cache.layers) rec.weights.push_back(std::move(layer.P));
      out.attention = std::move(rec);
    }
    return out;
  }

  /// Fused tokens (the transformer's input rows, excluding CLS).
  std::vector<Token> fuse(const TokenInputs& tokens) const {
    check_inputs(tokens);
    std::vector<GroupCache> groups;
    const Mat t = fuse_forward(tokens, groups);
    std::vector<Token> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      out.push_back({std::vector<double>(t.row(r).data(), t.row(r).data() + t.cols()),
                     tokens.meta[i].modality, tokens.meta[i].rank, tokens.meta[i].distance_m});
    }
    return out;
  }

  /// MSE loss of one sample; adds `weight * dLoss/dParams` into `grad`.
  /// `dropout_rng` enables training-mode dropout when the config asks for it.
  double loss_and_gradient(const TokenInputs& tokens, std::span<const double> target,
                           std::span<double> grad, double weight, Rng* dropout_rng = nullptr) const {
    require(target.size() == cfg_.m, "loss_and_gradient: target length mismatch");
    require(grad.size() == params_.size(), "loss_and_gradient: gradient buffer size mismatch");
    Cache cache;
    run(tokens, cache, dropout_rng);
    const auto m = static_cast<double>(cfg_.m);
    RowVec dy(cache.y.size());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < cache.y.size(); ++i) {
      const double diff = cache.y(i) - target[static_cast<std::size_t>(i)];
      loss += diff * diff;
      dy(i) = weight * 2.0 * diff / m;
    }
    backward(tokens, cache, dy, grad.data());
    return loss / m;
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct FusionGroupParams {
    std::size_t w = kNone, b = kNone, w2 = kNone, b2 = kNone;
  };
  struct LayerParams {
    std::size_t ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, w1, b1, w2, b2;
  };

  struct GroupCache {
    std::vector<std::size_t> rows;
    Mat x;  // fusion-map input
    Mat pre;  // polar hidden pre-activation
    Mat act;  // polar hidden activation
  };
  struct LayerCache {
    Mat in, xhat1, a, q, kk, v, o, mid, xhat2, b, h1, g;
    Vec rstd1, rstd2;
    std::vector<Mat> P;
    Mat drop_attn, drop_ff;
  };
  struct Cache {
    std::vector<GroupCache> groups;
    std::vector<LayerCache> layers;
    Mat xhatf;
    Vec rstdf;
    RowVec pooled;
    RowVec y;
  };

  std::size_t h() const { return cfg_.token_dim; }
  std::size_t fusion_in() const { return d_ + loc_.encoding_width(); }
  std::size_t num_groups() const { return loc_.shared_fusion ? 1 : 2; }
  std::size_t table_rows() const { return cfg_.k + 1; }

  void declare() {
    const std::size_t hd = h();
    const std::vector<std::string> gnames =
        loc_.shared_fusion ? std::vector<std::string>{"fusion."} : std::vector<std::string>{"fusion.visual.", "fusion.text."};
    if (loc_.kind == LocEncKind::learnable) table_ = params_.add("fusion.table", table_rows(), d_);
    for (const auto& g : gnames) {
      FusionGroupParams p;
      switch (loc_.kind) {
        case LocEncKind::none:
        case LocEncKind::learnable:
          if (hd != d_) p.w = params_.add(g + "w", hd, d_);
          break;
        case LocEncKind::rank:
        case LocEncKind::coordinates:
        case LocEncKind::distance:
          p.w = params_.add(g + "w", hd, fusion_in());
          p.b = params_.add(g + "b", 1, hd);
          break;
        case LocEncKind::polar:
          p.w = params_.add(g + "w1", hd, fusion_in());
          p.b = params_.add(g + "b1", 1, hd);
          p.w2 = params_.add(g + "w2", hd, hd);
          p.b2 = params_.add(g + "b2", 1, hd);
          break;
      }
      groups_.push_back(p);
    }
    cls_ = params_.add("cls", 1, hd);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerParams lp{};
      lp.ln1g = params_.add(p + "ln1.g", 1, hd);
      lp.ln1b = params_.add(p + "ln1.b", 1, hd);
      lp.wq = params_.add(p + "attn.wq", hd, hd);
      lp.bq = params_.add(p + "attn.bq", 1, hd);
      lp.wk = params_.add(p + "attn.wk", hd, hd);
      lp.bk = params_.add(p + "attn.bk", 1, hd);
      lp.wv = params_.add(p + "attn.wv", hd, hd);
      lp.bv = params_.add(p + "attn.bv", 1, hd);
      lp.wo = params_.add(p + "attn.wo", hd, hd);
      lp.bo = params_.add(p + "attn.bo", 1, hd);
      lp.ln2g = params_.add(p + "ln2.g", 1, hd);
      lp.ln2b = params_.add(p + "ln2.b", 1, hd);
      lp.w1 = params_.add(p + "ff.w1", cfg_.ff_dim, hd);
      lp.b1 = params_.add(p + "ff.b1", 1, cfg_.ff_dim);
      lp.w2 = params_.add(p + "ff.w2", hd, cfg_.ff_dim);
      lp.b2 = params_.add(p + "ff.b2", 1, hd);
      layers_.push_back(lp);
    }
    lnfg_ = params_.add("final_ln.g", 1, hd);
    lnfb_ = params_.add("final_ln.b", 1, hd);
    projw_ = params_.add("proj.w", cfg_.m, hd);
    projb_ = params_.add("proj.b", 1, cfg_.m);
  }

  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "fusion_init"));
    auto& v = params_.values();
    for (const auto& t : params_.tensors()) {
      auto s = params_.slice(t);
      const std::string& n = t.name;
      auto ends_with = [&](const char* suffix) {
        const std::string sfx(suffix);
        return n.size() >= sfx.size() && n.compare(n.size() - sfx.size(), sfx.size(), sfx) == 0;
      };
      if (n == "fusion.table") {
        const double bound = 1.0 / std::sqrt(static_cast<double>(loc_.loc_dim));
        for (auto& x : s) x = rng.uniform(-bound, bound);
      } else if (n == "cls") {
        for (auto& x : s) x = 0.02 * rng.normal();
      } else if (ends_with(".g")) {
        for (auto& x : s) x = 1.0;
      } else if (t.rows > 1) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols));
        for (auto& x : s) x = rng.uniform(-bound, bound);
      } else {
        for (auto& x : s) x = 0.0;
      }
    }
    (void)v;
  }

  void check_inputs(const TokenInputs& tokens) const {
    require(tokens.size() >= 1, "forward: need at least one token");
    require(static_cast<std::size_t>(tokens.features.cols()) == d_,
            "forward: token feature dimension does not match the model");
    require(static_cast<std::size_t>(tokens.loc.cols()) == loc_.encoding_width(),
            "forward: location encoding width does not match the model");
    require(static_cast<std::size_t>(tokens.features.rows()) == tokens.size() &&
                static_cast<std::size_t>(tokens.loc.rows()) == tokens.size(),
            "forward: token arrays disagree in length");
    if (loc_.kind == LocEncKind::learnable)
      for (const auto& m : tokens.meta)
        require(m.rank < table_rows(), "encode_learnable: rank " + std::to_string(m.rank) +
                                           " outside table of " + std::to_string(table_rows()) + " rows");
  }

  const double* p() const { return params_.values().data(); }

  Mat fuse_forward(const TokenInputs& tokens, std::vector<GroupCache>& groups) const {
    const std::size_t n = tokens.size();
    const auto hd = static_cast<Eigen::Index>(h());
    Mat out(static_cast<Eigen::Index>(n), hd);
    groups.assign(num_groups(), {});
    for (std::size_t i = 0; i < n; ++i)
      groups[loc_.shared_fusion ? 0 : static_cast<std::size_t>(tokens.meta[i].modality)].rows.push_back(i);

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      auto& g = groups[gi];
      if (g.rows.empty()) continue;
      const auto& gp = groups_[gi];
      const auto rows = static_cast<Eigen::Index>(g.rows.size());
      const auto fin = static_cast<Eigen::Index>(fusion_in());
      g.x.resize(rows, fin);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto src = static_cast<Eigen::Index>(g.rows[static_cast<std::size_t>(r)]);
        g.x.row(r).head(static_cast<Eigen::Index>(d_)) = tokens.features.row(src);
        if (tokens.loc.cols() > 0) g.x.row(r).tail(tokens.loc.cols()) = tokens.loc.row(src);
        if (loc_.kind == LocEncKind::learnable)
          g.x.row(r) += vec(p(), table_ + tokens.meta[static_cast<std::size_t>(src)].rank * d_, d_);
      }
      Mat t;
      switch (loc_.kind) {
        case LocEncKind::none:
        case LocEncKind::learnable:
          t = gp.w == kNone ? g.x : nn::linear(g.x, mat(p(), gp.w, h(), d_), std::nullopt);
          break;
        case LocEncKind::rank:
        case LocEncKind::coordinates:
        case LocEncKind::distance:
          t = nn::linear(g.x, mat(p(), gp.w, h(), fusion_in()), vec(p(), gp.b, h()));
          break;
        case LocEncKind::polar:
          g.pre = nn::linear(g.x, mat(p(), gp.w, h(), fusion_in()), vec(p(), gp.b, h()));
          g.act = g.pre.unaryExpr(&nn::gelu);
          t = nn::linear(g.act, mat(p(), gp.w2, h(), h()), vec(p(), gp.b2, h()));
          break;
      }
      for (Eigen::Index r = 0; r < rows; ++r) out.row(static_cast<Eigen::Index>(g.rows[static_cast<std::size_t>(r)])) = t.row(r);
    }
    return out;
  }

  void fuse_backward(const TokenInputs& tokens, const std::vector<GroupCache>& groups, const Mat& dtok,
                     double* grad) const {
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      if (g.rows.empty()) continue;
      const auto& gp = groups_[gi];
      const auto rows = static_cast<Eigen::Index>(g.rows.size());
      Mat dt(rows, static_cast<Eigen::Index>(h()));
      for (Eigen::Index r = 0; r < rows; ++r) dt.row(r) = dtok.row(static_cast<Eigen::Index>(g.rows[static_cast<std::size_t>(r)]));
      switch (loc_.kind) {
        case LocEncKind::none:
        case LocEncKind::learnable: {
          Mat dx;
          if (gp.w != kNone) {
            mat(grad, gp.w, h(), d_) += dt.transpose() * g.x;
            dx = dt * mat(p(), gp.w, h(), d_);
          } else {
            dx = dt;
          }
          if (loc_.kind == LocEncKind::learnable)
            for (Eigen::Index r = 0; r < rows; ++r)
              vec(grad, table_ + tokens.meta[g.rows[static_cast<std::size_t>(r)]].rank * d_, d_) += dx.row(r);
          break;
        }
        case LocEncKind::rank:
        case LocEncKind::coordinates:
        case LocEncKind::distance:
          mat(grad, gp.w, h(), fusion_in()) += dt.transpose() * g.x;
          vec(grad, gp.b, h()) += dt.colwise().sum();
          break;
        case LocEncKind::polar: {
          mat(grad, gp.w2, h(), h()) += dt.transpose() * g.act;
          vec(grad, gp.b2, h()) += dt.colwise().sum();
          const Mat dact = dt * mat(p(), gp.w2, h(), h());
          const Mat dpre = dact.array() * g.pre.unaryExpr(&nn::gelu_grad).array();
          mat(grad, gp.w, h(), fusion_in()) += dpre.transpose() * g.x;
          vec(grad, gp.b, h()) += dpre.colwise().sum();
          break;
        }
      }
    }
  }

  void run(const TokenInputs& tokens, Cache& c, Rng* dropout_rng) const {
    check_inputs(tokens);
    const auto hd = static_cast<Eigen::Index>(h());
    const auto heads = cfg_.num_heads;
    const auto dh = static_cast<Eigen::Index>(h() / heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool dropping = dropout_rng != nullptr && cfg_.dropout > 0.0;

    const Mat fused = fuse_forward(tokens, c.groups);
    const auto n = fused.rows() + 1;
    Mat s(n, hd);
    s.row(0) = vec(p(), cls_, h());
    s.bottomRows(n - 1) = fused;

    c.layers.resize(cfg_.num_layers);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const auto& lp = layers_[l];
      auto& lc = c.layers[l];
      lc.in = s;
      lc.a = nn::layer_norm(s, vec(p(), lp.ln1g, h()), vec(p(), lp.ln1b, h()), lc.xhat1, lc.rstd1);
      lc.q = nn::linear(lc.a, mat(p(), lp.wq, h(), h()), vec(p(), lp.bq, h()));
      lc.kk = nn::linear(lc.a, mat(p(), lp.wk, h(), h()), vec(p(), lp.bk, h()));
      lc.v = nn::linear(lc.a, mat(p(), lp.wv, h(), h()), vec(p(), lp.bv, h()));
      lc.o.resize(n, hd);
      lc.P.resize(heads);
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const auto off = static_cast<Eigen::Index>(hh) * dh;
        Mat sc = (lc.q.middleCols(off, dh) * lc.kk.middleCols(off, dh).transpose()) * scale;
        for (Eigen::Index r = 0; r < n; ++r) {
          const double mx = sc.row(r).maxCoeff();
          sc.row(r) = (sc.row(r).array() - mx).exp();
          sc.row(r) /= sc.row(r).sum();
        }
        lc.o.middleCols(off, dh) = sc * lc.v.middleCols(off, dh);
        lc.P[hh] = std::move(sc);
      }
      Mat attn = nn::linear(lc.o, mat(p(), lp.wo, h(), h()), vec(p(), lp.bo, h()));
      if (dropping) {
        lc.drop_attn = dropout_mask(n, hd, *dropout_rng);
        attn.array() *= lc.drop_attn.array();
      }
      lc.mid = s + attn;
      lc.b = nn::layer_norm(lc.mid, vec(p(), lp.ln2g, h()), vec(p(), lp.ln2b, h()), lc.xhat2, lc.rstd2);
      lc.h1 = nn::linear(lc.b, mat(p(), lp.w1, cfg_.ff_dim, h()), vec(p(), lp.b1, cfg_.ff_dim));
      lc.g = lc.h1.unaryExpr(&nn::gelu);
      Mat ff = nn::linear(lc.g, mat(p(), lp.w2, h(), cfg_.ff_dim), vec(p(), lp.b2, h()));
      if (dropping) {
        lc.drop_ff = dropout_mask(n, hd, *dropout_rng);
        ff.array() *= lc.drop_ff.array();
      }
      s = lc.mid + ff;
      if (!s.allFinite()) throw Error("forward: non-finite activation in encoder layer " + std::to_string(l));
    }
    Mat z = nn::layer_norm(s, vec(p(), lnfg_, h()), vec(p(), lnfb_, h()), c.xhatf, c.rstdf);
    c.pooled = cfg_.pooling == Pooling::cls ? RowVec(z.row(0)) : RowVec(z.colwise().mean());
    c.y = c.pooled * mat(p(), projw_, cfg_.m, h()).transpose() + vec(p(), projb_, cfg_.m);
    if (!c.y.allFinite()) throw Error("forward: non-finite prediction");
  }

  Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, Rng& rng) const {
    Mat mask(rows, cols);
    const double keep = 1.0 - cfg_.dropout;
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return mask;
  }

  void backward(const TokenInputs& tokens, const Cache& c, const RowVec& dy, double* grad) const {
    const auto hd = static_cast<Eigen::Index>(h());
    const auto heads = cfg_.num_heads;
    const auto dh = static_cast<Eigen::Index>(h() / heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto n = c.xhatf.rows();

    mat(grad, projw_, cfg_.m, h()) += dy.transpose() * c.pooled;
    vec(grad, projb_, cfg_.m) += dy;
    const RowVec dpooled = dy * mat(p(), projw_, cfg_.m, h());
    Mat dz = Mat::Zero(n, hd);
    if (cfg_.pooling == Pooling::cls)
      dz.row(0) = dpooled;
    else
      dz.rowwise() += dpooled / static_cast<double>(n);
    Mat ds = nn::layer_norm_backward(dz, c.xhatf, c.rstdf, vec(p(), lnfg_, h()), vec(grad, lnfg_, h()),
                                     vec(grad, lnfb_, h()));

    for (std::size_t li = cfg_.num_layers; li-- > 0;) {
      const auto& lp = layers_[li];
      const auto& lc = c.layers[li];
      // feed-forward branch
      Mat dff = ds;
      if (lc.drop_ff.size()) dff.array() *= lc.drop_ff.array();
      mat(grad, lp.w2, h(), cfg_.ff_dim) += dff.transpose() * lc.g;
      vec(grad, lp.b2, h()) += dff.colwise().sum();
      const Mat dg = dff * mat(p(), lp.w2, h(), cfg_.ff_dim);
      const Mat dh1 = dg.array() * lc.h1.unaryExpr(&nn::gelu_grad).array();
      mat(grad, lp.w1, cfg_.ff_dim, h()) += dh1.transpose() * lc.b;
      vec(grad, lp.b1, cfg_.ff_dim) += dh1.colwise().sum();
      const Mat db = dh1 * mat(p(), lp.w1, cfg_.ff_dim, h());
      Mat dmid = ds + nn::layer_norm_backward(db, lc.xhat2, lc.rstd2, vec(p(), lp.ln2g, h()),
                                              vec(grad, lp.ln2g, h()), vec(grad, lp.ln2b, h()));
      // attention branch
      Mat dattn = dmid;
      if (lc.drop_attn.size()) dattn.array() *= lc.drop_attn.array();
      mat(grad, lp.wo, h(), h()) += dattn.transpose() * lc.o;
      vec(grad, lp.bo, h()) += dattn.colwise().sum();
      const Mat dout = dattn * mat(p(), lp.wo, h(), h());
      Mat dq(n, hd), dk(n, hd), dv(n, hd);
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const auto off = static_cast<Eigen::Index>(hh) * dh;
        const Mat& P = lc.P[hh];
        const Mat dP = dout.middleCols(off, dh) * lc.v.middleCols(off, dh).transpose();
        dv.middleCols(off, dh) = P.transpose() * dout.middleCols(off, dh);
        Mat dS = P.array() * (dP.array().colwise() - (dP.array() * P.array()).rowwise().sum());
        dS *= scale;
        dq.middleCols(off, dh) = dS * lc.kk.middleCols(off, dh);
        dk.middleCols(off, dh) = dS.transpose() * lc.q.middleCols(off, dh);
      }
      mat(grad, lp.wq, h(), h()) += dq.transpose() * lc.a;
      vec(grad, lp.bq, h()) += dq.colwise().sum();
      mat(grad, lp.wk, h(), h()) += dk.transpose() * lc.a;
      vec(grad, lp.bk, h()) += dk.colwise().sum();
      mat(grad, lp.wv, h(), h()) += dv.transpose() * lc.a;
      vec(grad, lp.bv, h()) += dv.colwise().sum();
      const Mat da = dq * mat(p(), lp.wq, h(), h()) + dk * mat(p(), lp.wk, h(), h()) +
                     dv * mat(p(), lp.wv, h(), h());
      ds = dmid + nn::layer_norm_backward(da, lc.xhat1, lc.rstd1, vec(p(), lp.ln1g, h()),
                                          vec(grad, lp.ln1g, h()), vec(grad, lp.ln1b, h()));
    }
    vec(grad, cls_, h()) += ds.row(0);
    fuse_backward(tokens, c.groups, ds.bottomRows(n - 1), grad);
  }

  FusionConfig cfg_;
  LocEncConfig loc_;
  std::size_t d_;
  ParameterSet params_;
  std::vector<FusionGroupParams> groups_;
  std::vector<LayerParams> layers_;
  std::size_t table_ = kNone;
  std::size_t cls_ = 0, lnfg_ = 0, lnfb_ = 0, projw_ = 0, projb_ = 0;
};

/// Trainable scalar count for a configuration.
inline std::size_t count_parameters(const FusionConfig& cfg, const LocEncConfig& loc, std::size_t feature_dim) {
  return FusionModel(cfg, loc, feature_dim, 0).params().size();
}

}  // namespace geofuse
