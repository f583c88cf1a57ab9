#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctpnet/autodiff.hpp"
#include "ctpnet/errors.hpp"

namespace ctp {

/// What the decoder and offset adaptor trade in: per-step coordinate deltas
/// (the default) or absolute coordinates (the ablation switch).
enum class PredSpace { offset, coordinate };

inline const char* to_string(PredSpace p) {
  return p == PredSpace::offset ? "offset" : "coordinate";
}

struct NetConfig {
  int embed_dim = 32;
  int hidden_dim = 512;
  int decoder_mlp_layers = 3;
  int adaptor_layers = 2;
  int offset_critic_layers = 10;
  int feature_critic_layers = 5;
  int ca_window = 6;

  // Hidden widths. The depth of each head is fixed above; widths default to
  // the head's input size (0 = use that default).
  int decoder_mlp_hidden = 0;
  int feature_critic_hidden = 0;
  int offset_critic_hidden = 64;
  int adaptor_hidden = 0;

  PredSpace representation = PredSpace::offset;

  int decoder_width() const { return decoder_mlp_hidden > 0 ? decoder_mlp_hidden : hidden_dim; }
  int feature_critic_width() const {
    return feature_critic_hidden > 0 ? feature_critic_hidden : hidden_dim;
  }
  int offset_critic_width() const {
    return offset_critic_hidden > 0 ? offset_critic_hidden : 2 * ca_window;
  }
  int adaptor_width() const { return adaptor_hidden > 0 ? adaptor_hidden : 2 * ca_window; }
  int chunk_dim() const { return 2 * ca_window; }

  void validate(int lo, int lf) const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ConfigError(std::string("NetConfig: ") + name + " must be positive");
    };
    positive(embed_dim, "embed_dim");
    positive(hidden_dim, "hidden_dim");
    positive(decoder_mlp_layers, "decoder_mlp_layers");
    positive(adaptor_layers, "adaptor_layers");
    positive(offset_critic_layers, "offset_critic_layers");
    positive(feature_critic_layers, "feature_critic_layers");
    positive(ca_window, "ca_window");
    if (ca_window > lf || ca_window > lo - 1)
      throw ConfigError("NetConfig: ca_window must satisfy ca_window <= lf and ca_window <= lo-1");
    if (lf % ca_window != 0)
      throw ConfigError("NetConfig: prediction length must be divisible by ca_window");
  }
};

namespace nets {

template <typename S>
Mat<S> uniform_fan_in(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                      std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = S(dist(rng));
  return m;
}

template <typename S>
struct Linear {
  Var<S> w;  // in x out
  Var<S> b;  // 1 x out

  static Linear init(int in, int out, std::mt19937_64& rng) {
    Linear l;
    l.w = Var<S>::leaf(uniform_fan_in<S>(in, out, in, rng));
    l.b = Var<S>::leaf(Mat<S>::Zero(1, out));
    return l;
  }

  static Linear zeros(int in, int out) {
    Linear l;
    l.w = Var<S>::leaf(Mat<S>::Zero(in, out));
    l.b = Var<S>::leaf(Mat<S>::Zero(1, out));
    return l;
  }

  Var<S> operator()(const Var<S>& x) const {
    if (x.cols() != w.rows())
      throw ShapeError("Linear: input has " + std::to_string(x.cols()) + " features, expected " +
                       std::to_string(w.rows()));
    return ad::affine(x, w, b);
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var<S>>>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

/// Single recurrent cell of the LSTM family. Gate blocks are stored
/// column-concatenated in the order [input, forget, candidate, output];
/// the forget-gate bias starts at one.
template <typename S>
struct LstmCell {
  Var<S> wx;  // in x 4H
  Var<S> wh;  // H x 4H
  Var<S> b;   // 1 x 4H
  int hidden = 0;

  static LstmCell init(int input, int hidden, std::mt19937_64& rng) {
    LstmCell c;
    c.hidden = hidden;
    c.wx = Var<S>::leaf(uniform_fan_in<S>(input, 4 * hidden, input, rng));
    c.wh = Var<S>::leaf(uniform_fan_in<S>(hidden, 4 * hidden, hidden, rng));
    Mat<S> bias = Mat<S>::Zero(1, 4 * hidden);
    bias.middleCols(hidden, hidden).setConstant(S(1));
    c.b = Var<S>::leaf(std::move(bias));
    return c;
  }

  struct State {
    Var<S> h, c;
  };

  State initial(Eigen::Index batch) const {
    return {Var<S>::constant(Mat<S>::Zero(batch, hidden)),
            Var<S>::constant(Mat<S>::Zero(batch, hidden))};
  }

  State step(const Var<S>& x, const State& s) const {
    Var<S> z = ad::add(ad::add(ad::matmul(x, wx), ad::matmul(s.h, wh)),
                       ad::repeat_rows(b, x.rows()));
    Var<S> gi = ad::sigmoid_v(ad::slice_cols(z, 0, hidden));
    Var<S> gf = ad::sigmoid_v(ad::slice_cols(z, hidden, hidden));
    Var<S> gc = ad::tanh_v(ad::slice_cols(z, 2 * hidden, hidden));
    Var<S> go = ad::sigmoid_v(ad::slice_cols(z, 3 * hidden, hidden));
    Var<S> c_next = ad::add(ad::mul(gf, s.c), ad::mul(gi, gc));
    Var<S> h_next = ad::mul(go, ad::tanh_v(c_next));
    return {h_next, c_next};
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var<S>>>& out) const {
    out.emplace_back(prefix + ".wx", wx);
    out.emplace_back(prefix + ".wh", wh);
    out.emplace_back(prefix + ".b", b);
  }
};

/// Fully connected stack, rectified-linear between layers, linear last layer.
template <typename S>
struct Mlp {
  std::vector<Linear<S>> layers;

  /// dims = [in, h1, ..., out]; one Linear per adjacent pair.
  static Mlp init(const std::vector<int>& dims, std::mt19937_64& rng) {
    Mlp m;
    for (size_t i = 0; i + 1 < dims.size(); ++i)
      m.layers.push_back(Linear<S>::init(dims[i], dims[i + 1], rng));
    return m;
  }

  Var<S> operator()(Var<S> x) const {
    for (size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = ad::relu(x);
    }
    return x;
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var<S>>>& out) const {
    for (size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
  }
};

/// Step embedding + recurrent cell. The trajectory feature is the hidden
/// state after the final observation step. The embedding consumes per-step
/// displacements of the observed coordinates (the first step contributes
/// zero), which keeps features independent of where a walk happens and ties
/// the encoder to the same offset space the decoder predicts in.
template <typename S>
struct Encoder {
  Linear<S> embed;  // 2 -> embed_dim
  LstmCell<S> cell;

  static Encoder init(const NetConfig& cfg, std::mt19937_64& rng) {
    Encoder e;
    e.embed = Linear<S>::init(2, cfg.embed_dim, rng);
    e.cell = LstmCell<S>::init(cfg.embed_dim, cfg.hidden_dim, rng);
    return e;
  }

  /// steps: one (batch x 2) coordinate matrix per observation step.
  Var<S> encode(const std::vector<Var<S>>& steps) const {
    if (steps.empty()) throw ShapeError("encode: empty observation");
    for (const auto& s : steps)
      if (!s.value().allFinite()) throw NumericError("encode: non-finite observation");
    auto state = cell.initial(steps[0].rows());
    Var<S> zero = Var<S>::constant(Mat<S>::Zero(steps[0].rows(), 2));
    for (std::size_t k = 0; k < steps.size(); ++k) {
      Var<S> displacement = k == 0 ? zero : ad::sub(steps[k], steps[k - 1]);
      state = cell.step(embed(displacement), state);
    }
    return state.h;
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var<S>>>& out) const {
    embed.collect(prefix + ".embed", out);
    cell.collect(prefix + ".lstm", out);
  }
};

/// Step embedding + recurrent cell + readout. Consumes its own previous
/// prediction unless a teacher sequence supplies ground truth; the first
/// step always consumes the seed. The cell starts from hidden = feature,
/// memory = zeros.
template <typename S>
struct Decoder {
  Linear<S> embed;   // 2 -> embed_dim
  LstmCell<S> cell;  // embed_dim -> hidden_dim
  Mlp<S> readout;    // hidden_dim -> ... -> 2

  static Decoder init(const NetConfig& cfg, std::mt19937_64& rng) {
    Decoder d;
    d.embed = Linear<S>::init(2, cfg.embed_dim, rng);
    d.cell = LstmCell<S>::init(cfg.embed_dim, cfg.hidden_dim, rng);
    std::vector<int> dims{cfg.hidden_dim};
    for (int i = 0; i + 1 < cfg.decoder_mlp_layers; ++i) dims.push_back(cfg.decoder_width());
    dims.push_back(2);
    d.readout = Mlp<S>::init(dims, rng);
    return d;
  }

  std::vector<Var<S>> decode(const Var<S>& feature, const Var<S>& seed, int steps,
                             const std::vector<Var<S>>* teacher = nullptr) const {
    if (steps < 1) throw ShapeError("decode: steps must be >= 1");
    if (teacher && int(teacher->size()) != steps)
      throw ShapeError("decode: teacher length " + std::to_string(teacher->size()) +
                       " != steps " + std::to_string(steps));
    typename LstmCell<S>::State state{feature,
                                      Var<S>::constant(Mat<S>::Zero(feature.rows(), cell.hidden))};
    std::vector<Var<S>> outputs;
    outputs.reserve(steps);
    Var<S> input = seed;
    for (int k = 0; k < steps; ++k) {
      state = cell.step(embed(input), state);
      Var<S> pred = readout(state.h);
      outputs.push_back(pred);
      if (k + 1 < steps) input = teacher ? (*teacher)[k] : pred;
    }
    return outputs;
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var<S>>>& out) const {
    embed.collect(prefix + ".embed", out);
    cell.collect(prefix + ".lstm", out);
    readout.collect(prefix + ".readout", out);
  }
};

/// Scalar-output network with no final squashing, as a Wasserstein critic
/// requires.
template <typename S>
struct Critic {
  Mlp<S> mlp;

  static Critic init(int input_dim, int layers, int width, std::mt19937_64& rng) {
    std::vector<int> dims{input_dim};
    for (int i = 0; i + 1 < layers; ++i) dims.push_back(width);
    dims.push_back(1);
    Critic c;
    c.mlp = Mlp<S>::init(dims, rng);
    return c;
  }

  /// batch x input_dim -> batch x 1 unbounded scores.
  Var<S> score(const Var<S>& x) const { return mlp(x); }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var<S>>>& out) const {
    mlp.collect(prefix + ".mlp", out);
  }
};

/// Residual per-chunk map on flattened prediction windows. The final layer
/// starts at zero, so the adaptor is the identity until trained.
template <typename S>
struct Adaptor {
  Mlp<S> mlp;
  int ca_window = 0;

  static Adaptor init(const NetConfig& cfg, std::mt19937_64& rng) {
    Adaptor a;
    a.ca_window = cfg.ca_window;
    std::vector<int> dims{cfg.chunk_dim()};
    for (int i = 0; i + 1 < cfg.adaptor_layers; ++i) dims.push_back(cfg.adaptor_width());
    dims.push_back(cfg.chunk_dim());
    a.mlp = Mlp<S>::init(dims, rng);
    a.mlp.layers.back() = Linear<S>::zeros(dims[dims.size() - 2], dims.back());
    return a;
  }

  /// One chunk: batch x (2*ca_window) -> same shape, x + mlp(x).
  Var<S> adapt_chunk(const Var<S>& x) const {
    if (x.cols() != 2 * ca_window)
      throw ShapeError("adapt_chunk: expected " + std::to_string(2 * ca_window) + " columns");
    return ad::add(x, mlp(x));
  }

  /// Whole horizon: batch x (2*steps) split into non-overlapping chunks of
  /// ca_window frames, each adapted independently, order preserved.
  Var<S> adapt(const Var<S>& flat) const {
    Eigen::Index dim = 2 * ca_window;
    if (flat.cols() % dim != 0)
      throw ConfigError("adapt: prediction length not divisible by ca_window");
    Eigen::Index chunks = flat.cols() / dim;
    if (chunks == 1) return adapt_chunk(flat);
    std::vector<Var<S>> parts;
    parts.reserve(chunks);
    for (Eigen::Index i = 0; i < chunks; ++i)
      parts.push_back(adapt_chunk(ad::slice_cols(flat, i * dim, dim)));
    return ad::concat_cols(parts);
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Var<S>>>& out) const {
    mlp.collect(prefix + ".mlp", out);
  }
};

}  // namespace nets

/// The parameterized networks of the pipeline plus their shape metadata.
template <typename S>
struct ModelBundle {
  NetConfig cfg;
  nets::Encoder<S> source_encoder;
  nets::Encoder<S> target_encoder;
  nets::Decoder<S> source_decoder;
  nets::Critic<S> feature_critic;
  nets::Critic<S> offset_critic;
  nets::Adaptor<S> offset_adaptor;

  static ModelBundle init(const NetConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModelBundle m;
    m.cfg = cfg;
    m.source_encoder = nets::Encoder<S>::init(cfg, rng);
    m.target_encoder = nets::Encoder<S>::init(cfg, rng);
    m.source_decoder = nets::Decoder<S>::init(cfg, rng);
    m.feature_critic =
        nets::Critic<S>::init(cfg.hidden_dim, cfg.feature_critic_layers, cfg.feature_critic_width(), rng);
    m.offset_critic =
        nets::Critic<S>::init(cfg.chunk_dim(), cfg.offset_critic_layers, cfg.offset_critic_width(), rng);
    m.offset_adaptor = nets::Adaptor<S>::init(cfg, rng);
    return m;
  }

  void copy_source_encoder_to_target() {
    auto src = params_of("source_encoder");
    auto dst = params_of("target_encoder");
    for (size_t i = 0; i < src.size(); ++i) dst[i].assign(src[i].value());
  }

  std::vector<std::pair<std::string, Var<S>>> named_params() const {
    std::vector<std::pair<std::string, Var<S>>> out;
    source_encoder.collect("source_encoder", out);
    target_encoder.collect("target_encoder", out);
    source_decoder.collect("source_decoder", out);
    feature_critic.collect("feature_critic", out);
    offset_critic.collect("offset_critic", out);
    offset_adaptor.collect("offset_adaptor", out);
    return out;
  }

  /// Parameters whose name starts with `prefix`, in declaration order.
  std::vector<Var<S>> params_of(const std::string& prefix) const {
    std::vector<Var<S>> out;
    for (auto& [name, var] : named_params())
      if (name.rfind(prefix, 0) == 0) out.push_back(var);
    return out;
  }
};

template <typename S>
std::size_t param_count(const std::vector<Var<S>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += std::size_t(p.rows() * p.cols());
  return n;
}

}  // namespace ctp
