#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "alphagen/core.hpp"

namespace alphagen {

struct NetConfig {
  std::size_t input_tokens = 49;  // BEG plus every action token
  std::size_t actions = 48;
  std::size_t embed_dim = 32;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t head_hidden = 64;
  double dropout = 0.1;  // between stacked recurrent layers, training passes only
};

/// Shared recurrent encoder with separate policy and value MLP heads.
///
/// Parameters live in one flat buffer so optimisers, checkpoints and
/// finite-difference checks can treat them uniformly. Matrices are
/// column-major views into that buffer.
template <typename Scalar>
class ActorCritic {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;

  explicit ActorCritic(NetConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    if (cfg_.layers < 1) throw ContractError("network needs at least one recurrent layer");
    layout();
    params_.assign(total_, Scalar(0));
    std::mt19937_64 rng(seed);
    auto fill = [&](const Block& b, double bound) {
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = 0; i < b.rows * b.cols; ++i) params_[b.offset + i] = static_cast<Scalar>(u(rng));
    };
    fill(emb_, 1.0);
    const double rb = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      fill(wx_[l], rb);
      fill(wh_[l], rb);
      // forget-gate bias starts at 1
      for (std::size_t i = 0; i < cfg_.hidden; ++i) params_[bias_[l].offset + cfg_.hidden + i] = Scalar(1);
    }
    for (Head* h : {&policy_, &value_}) {
      fill(h->w1, std::sqrt(6.0 / static_cast<double>(h->w1.rows + h->w1.cols)));
      fill(h->w2, std::sqrt(6.0 / static_cast<double>(h->w2.rows + h->w2.cols)));
      fill(h->w3, 0.01 * std::sqrt(6.0 / static_cast<double>(h->w3.rows + h->w3.cols)));
    }
  }

  const NetConfig& config() const { return cfg_; }
  std::size_t parameter_count() const { return total_; }
  std::vector<Scalar>& parameters() { return params_; }
  const std::vector<Scalar>& parameters() const { return params_; }

  // ---- incremental inference (rollouts) -----------------------------------

  struct Recurrent {
    std::vector<Vec> h, c;
  };

  Recurrent initial_state() const {
    Recurrent s;
    s.h.assign(cfg_.layers, Vec::Zero(static_cast<Eigen::Index>(cfg_.hidden)));
    s.c = s.h;
    return s;
  }

  /// Consumes one input token, advancing `state`; writes the policy logits and
  /// value for the resulting prefix. No dropout.
  void step(std::size_t token, Recurrent& state, Vec& logits, Scalar& value) const {
    Mat x = embed_column(token);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      Mat h = state.h[l], c = state.c[l];
      CellOut out = cell(l, x, h, c);
      state.h[l] = out.h;
      state.c[l] = out.c;
      x = out.h;
    }
    HeadOut p = head_forward(policy_, x);
    HeadOut v = head_forward(value_, x);
    logits = p.out.col(0);
    value = v.out(0, 0);
  }

  // ---- batched training pass ------------------------------------------------

  /// Time-major token ids: tokens[t * batch + b]. Padding positions may hold
  /// any valid id; callers give them zero loss gradient.
  struct Batch {
    std::size_t steps = 0;
    std::size_t batch = 0;
    std::vector<std::size_t> tokens;
  };

  struct Forward {
    std::size_t steps = 0, batch = 0;
    std::vector<std::size_t> tokens;
    // [layer][t]
    std::vector<std::vector<Mat>> input, gates, cell_state, cell_tanh, hidden, drop_mask;
    Mat top;  // hidden x (steps*batch), column t*batch+b
    Mat p1, p2, logits, v1, v2, values;
  };

  /// `dropout_rng` null disables dropout.
  Forward forward(const Batch& batch, std::mt19937_64* dropout_rng = nullptr) const {
    const std::size_t T = batch.steps, B = batch.batch, H = cfg_.hidden, L = cfg_.layers;
    if (batch.tokens.size() != T * B) throw ContractError("batch token count mismatch");
    Forward f;
    f.steps = T;
    f.batch = B;
    f.tokens = batch.tokens;
    for (auto* v : {&f.input, &f.gates, &f.cell_state, &f.cell_tanh, &f.hidden, &f.drop_mask}) v->assign(L, {});
    const auto Bi = static_cast<Eigen::Index>(B), Hi = static_cast<Eigen::Index>(H);
    f.top.resize(Hi, static_cast<Eigen::Index>(T * B));
    const bool use_dropout = dropout_rng != nullptr && cfg_.dropout > 0.0;
    std::bernoulli_distribution keep(1.0 - cfg_.dropout);
    const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - cfg_.dropout));
    std::vector<Mat> h(L, Mat::Zero(Hi, Bi)), c(L, Mat::Zero(Hi, Bi));
    for (std::size_t t = 0; t < T; ++t) {
      Mat x(static_cast<Eigen::Index>(cfg_.embed_dim), Bi);
      for (std::size_t b = 0; b < B; ++b) x.col(static_cast<Eigen::Index>(b)) = embed_column(batch.tokens[t * B + b]);
      for (std::size_t l = 0; l < L; ++l) {
        if (l > 0 && use_dropout) {
          Mat mask(x.rows(), x.cols());
          for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*dropout_rng) ? scale : Scalar(0);
          x = x.cwiseProduct(mask);
          f.drop_mask[l].push_back(std::move(mask));
        }
        CellOut out = cell(l, x, h[l], c[l]);
        f.input[l].push_back(x);
        f.gates[l].push_back(out.gates);
        f.cell_state[l].push_back(out.c);
        f.cell_tanh[l].push_back(out.c_tanh);
        f.hidden[l].push_back(out.h);
        h[l] = out.h;
        c[l] = out.c;
        x = out.h;
      }
      f.top.middleCols(static_cast<Eigen::Index>(t * B), Bi) = x;
    }
    HeadOut p = head_forward(policy_, f.top);
    HeadOut v = head_forward(value_, f.top);
    f.p1 = std::move(p.a1);
    f.p2 = std::move(p.a2);
    f.logits = std::move(p.out);
    f.v1 = std::move(v.a1);
    f.v2 = std::move(v.a2);
    f.values = std::move(v.out);
    return f;
  }

  /// Accumulates parameter gradients into `grad` (same layout as parameters)
  /// given loss gradients w.r.t. logits (actions x steps*batch) and values
  /// (1 x steps*batch).
  void backward(const Forward& f, const Mat& dlogits, const Mat& dvalues, std::vector<Scalar>& grad) const {
    if (grad.size() != total_) grad.assign(total_, Scalar(0));
    const std::size_t T = f.steps, B = f.batch, H = cfg_.hidden, L = cfg_.layers;
    const auto Bi = static_cast<Eigen::Index>(B), Hi = static_cast<Eigen::Index>(H);
    Mat dtop = head_backward(policy_, f.top, f.p1, f.p2, dlogits, grad);
    dtop += head_backward(value_, f.top, f.v1, f.v2, dvalues, grad);

    std::vector<Mat> dh_next(L, Mat::Zero(Hi, Bi)), dc_next(L, Mat::Zero(Hi, Bi));
    for (std::size_t tt = T; tt-- > 0;) {
      Mat dh_above = dtop.middleCols(static_cast<Eigen::Index>(tt * B), Bi);
      for (std::size_t l = L; l-- > 0;) {
        const Mat& g = f.gates[l][tt];
        const auto i = g.topRows(Hi), fg = g.middleRows(Hi, Hi), gg = g.middleRows(2 * Hi, Hi), o = g.bottomRows(Hi);
        const Mat& ct = f.cell_tanh[l][tt];
        const Mat c_prev = tt > 0 ? f.cell_state[l][tt - 1] : Mat::Zero(Hi, Bi);
        const Mat h_prev = tt > 0 ? f.hidden[l][tt - 1] : Mat::Zero(Hi, Bi);
        const Mat dh = dh_above + dh_next[l];
        const Mat dc = dh.cwiseProduct(o).cwiseProduct((Mat::Ones(Hi, Bi) - ct.cwiseProduct(ct))) + dc_next[l];
        Mat dz(4 * Hi, Bi);
        dz.topRows(Hi) = dc.cwiseProduct(gg).cwiseProduct(i).cwiseProduct(Mat::Ones(Hi, Bi) - i);
        dz.middleRows(Hi, Hi) = dc.cwiseProduct(c_prev).cwiseProduct(fg).cwiseProduct(Mat::Ones(Hi, Bi) - fg);
        dz.middleRows(2 * Hi, Hi) = dc.cwiseProduct(i).cwiseProduct(Mat::Ones(Hi, Bi) - gg.cwiseProduct(gg));
        dz.bottomRows(Hi) = dh.cwiseProduct(ct).cwiseProduct(o).cwiseProduct(Mat::Ones(Hi, Bi) - o);
        dc_next[l] = dc.cwiseProduct(fg);
        map(grad, wx_[l]).noalias() += dz * f.input[l][tt].transpose();
        map(grad, wh_[l]).noalias() += dz * h_prev.transpose();
        map(grad, bias_[l]) += dz.rowwise().sum();
        dh_next[l].noalias() = cmap(wh_[l]).transpose() * dz;
        Mat dx = cmap(wx_[l]).transpose() * dz;
        if (l > 0) {
          if (!f.drop_mask[l].empty()) dx = dx.cwiseProduct(f.drop_mask[l][tt]);
          dh_above = std::move(dx);
        } else {
          auto demb = map(grad, emb_);
          for (std::size_t b = 0; b < B; ++b) {
            demb.col(static_cast<Eigen::Index>(f.tokens[tt * B + b])) += dx.col(static_cast<Eigen::Index>(b));
          }
        }
      }
    }
  }

 private:
  struct Block {
    std::size_t offset = 0, rows = 0, cols = 0;
  };
  struct Head {
    Block w1, b1, w2, b2, w3, b3;
  };
  struct CellOut {
    Mat gates, c, c_tanh, h;
  };
  struct HeadOut {
    Mat a1, a2, out;
  };

  Block add_block(std::size_t rows, std::size_t cols) {
    Block b{total_, rows, cols};
    total_ += rows * cols;
    return b;
  }

  void layout() {
    const std::size_t H = cfg_.hidden, Hh = cfg_.head_hidden;
    emb_ = add_block(cfg_.embed_dim, cfg_.input_tokens);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::size_t in = l == 0 ? cfg_.embed_dim : H;
      wx_.push_back(add_block(4 * H, in));
      wh_.push_back(add_block(4 * H, H));
      bias_.push_back(add_block(4 * H, 1));
    }
    for (auto [head, out] : {std::pair{&policy_, cfg_.actions}, std::pair{&value_, std::size_t{1}}}) {
      head->w1 = add_block(Hh, H);
      head->b1 = add_block(Hh, 1);
      head->w2 = add_block(Hh, Hh);
      head->b2 = add_block(Hh, 1);
      head->w3 = add_block(out, Hh);
      head->b3 = add_block(out, 1);
    }
  }

  static MapMat map(std::vector<Scalar>& buf, const Block& b) {
    return MapMat(buf.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
  }
  CMapMat cmap(const Block& b) const {
    return CMapMat(params_.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
  }

  Mat embed_column(std::size_t token) const {
    if (token >= cfg_.input_tokens) throw ContractError("token id outside the embedding table");
    return cmap(emb_).col(static_cast<Eigen::Index>(token));
  }

  static Scalar sigmoid(Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); }

  CellOut cell(std::size_t l, const Mat& x, const Mat& h, const Mat& c) const {
    const auto Hi = static_cast<Eigen::Index>(cfg_.hidden);
    CellOut out;
    out.gates.noalias() = cmap(wx_[l]) * x;
    out.gates.noalias() += cmap(wh_[l]) * h;
    out.gates.colwise() += cmap(bias_[l]).col(0);
    auto g = out.gates.array();
    g.topRows(2 * Hi) = g.topRows(2 * Hi).unaryExpr([](Scalar v) { return sigmoid(v); });
    g.middleRows(2 * Hi, Hi) = g.middleRows(2 * Hi, Hi).tanh();
    g.bottomRows(Hi) = g.bottomRows(Hi).unaryExpr([](Scalar v) { return sigmoid(v); });
    const auto i = out.gates.topRows(Hi), f = out.gates.middleRows(Hi, Hi);
    const auto gg = out.gates.middleRows(2 * Hi, Hi), o = out.gates.bottomRows(Hi);
    out.c = f.cwiseProduct(c) + i.cwiseProduct(gg);
    out.c_tanh = out.c.array().tanh().matrix();
    out.h = o.cwiseProduct(out.c_tanh);
    return out;
  }

  HeadOut head_forward(const Head& hd, const Mat& x) const {
    HeadOut o;
    o.a1.noalias() = cmap(hd.w1) * x;
    o.a1.colwise() += cmap(hd.b1).col(0);
    o.a1 = o.a1.array().tanh().matrix();
    o.a2.noalias() = cmap(hd.w2) * o.a1;
    o.a2.colwise() += cmap(hd.b2).col(0);
    o.a2 = o.a2.array().tanh().matrix();
    o.out.noalias() = cmap(hd.w3) * o.a2;
    o.out.colwise() += cmap(hd.b3).col(0);
    return o;
  }

  Mat head_backward(const Head& hd, const Mat& x, const Mat& a1, const Mat& a2, const Mat& dout,
                    std::vector<Scalar>& grad) const {
    map(grad, hd.w3).noalias() += dout * a2.transpose();
    map(grad, hd.b3) += dout.rowwise().sum();
    Mat d2 = (cmap(hd.w3).transpose() * dout).cwiseProduct((Mat::Ones(a2.rows(), a2.cols()) - a2.cwiseProduct(a2)));
    map(grad, hd.w2).noalias() += d2 * a1.transpose();
    map(grad, hd.b2) += d2.rowwise().sum();
    Mat d1 = (cmap(hd.w2).transpose() * d2).cwiseProduct((Mat::Ones(a1.rows(), a1.cols()) - a1.cwiseProduct(a1)));
    map(grad, hd.w1).noalias() += d1 * x.transpose();
    map(grad, hd.b1) += d1.rowwise().sum();
    return cmap(hd.w1).transpose() * d1;
  }

  NetConfig cfg_;
  std::size_t total_ = 0;
  Block emb_;
  std::vector<Block> wx_, wh_, bias_;
  Head policy_, value_;
  std::vector<Scalar> params_;
};

}  // namespace alphagen
