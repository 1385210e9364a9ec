#include "fedad/ppds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedad/errors.hpp"
#include "fedad/rng.hpp"

namespace fedad::ppds {

void VaeConfig::validate() const {
  if (latent_dim == 0 || hidden_dim == 0 || epochs == 0) {
    throw ConfigError("vae config: latent_dim, hidden_dim, epochs must be positive");
  }
  if (alpha1 < 0.0 || alpha2 < 0.0) throw ConfigError("vae config: alpha weights must be >= 0");
  if (synth_length < 1) throw ConfigError("vae config: synth_length must be >= 1");
  if (mi_bins < 2) throw ConfigError("vae config: mi_bins must be >= 2");
  if (mi_bandwidth < 0.0) throw ConfigError("vae config: mi_bandwidth must be >= 0");
  if (learning_rate <= 0.0) throw ConfigError("vae config: learning_rate must be positive");
}

// --- wasserstein --------------------------------------------------------------

double wasserstein_1d(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw InputError("wasserstein_1d: empty sample set");
  std::vector<double> xs(x.begin(), x.end());
  std::vector<double> ys(y.begin(), y.end());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());

  if (xs.size() == ys.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += std::abs(xs[i] - ys[i]);
    return acc / static_cast<double>(xs.size());
  }

  // exact integral of |F_X - F_Y| over the merged support: both CDFs are
  // piecewise constant, so the integrand is constant between support points
  std::vector<double> support;
  support.reserve(xs.size() + ys.size());
  support.insert(support.end(), xs.begin(), xs.end());
  support.insert(support.end(), ys.begin(), ys.end());
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());

  const double nx = static_cast<double>(xs.size());
  const double ny = static_cast<double>(ys.size());
  double acc = 0.0;
  std::size_t ix = 0, iy = 0;
  for (std::size_t k = 0; k + 1 < support.size(); ++k) {
    const double t = support[k];
    while (ix < xs.size() && xs[ix] <= t) ++ix;
    while (iy < ys.size() && ys[iy] <= t) ++iy;
    const double fx = static_cast<double>(ix) / nx;
    const double fy = static_cast<double>(iy) / ny;
    acc += std::abs(fx - fy) * (support[k + 1] - t);
  }
  return acc;
}

double wasserstein_1d(const Matrix& x, const Matrix& y) {
  if (x.empty() || y.empty()) throw InputError("wasserstein_1d: empty matrix");
  if (x.cols != y.cols) throw InputError("wasserstein_1d: dimension mismatch");
  double acc = 0.0;
  std::vector<double> xc(x.rows), yc(y.rows);
  for (std::size_t c = 0; c < x.cols; ++c) {
    for (std::size_t i = 0; i < x.rows; ++i) xc[i] = x.at(i, c);
    for (std::size_t i = 0; i < y.rows; ++i) yc[i] = y.at(i, c);
    acc += wasserstein_1d(std::span<const double>(xc), std::span<const double>(yc));
  }
  return acc / static_cast<double>(x.cols);
}

// --- gaussian KL ---------------------------------------------------------------

double gaussian_kl(std::span<const double> mu, std::span<const double> log_var) {
  if (mu.size() != log_var.size()) throw InputError("gaussian_kl: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    acc += std::exp(log_var[i]) + mu[i] * mu[i] - log_var[i] - 1.0;
  }
  return 0.5 * acc;
}

// --- mutual information ----------------------------------------------------------

namespace {

struct MiWork {
  double value = 0.0;
  std::vector<double> grad_y;  // filled when requested
};

// Range-normalize to [0, 1]; a constant sample maps to 0.5. The range is
// treated as fixed during backprop.
void range_normalize(std::span<const double> v, std::vector<double>& out, double& inv_range) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  out.resize(v.size());
  if (range <= 0.0) {
    std::fill(out.begin(), out.end(), 0.5);
    inv_range = 0.0;
    return;
  }
  inv_range = 1.0 / range;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) * inv_range;
}

// memberships[j*bins + b]; soft rows sum to one, hard rows are indicators
void soft_memberships(const std::vector<double>& norm, std::size_t bins, double bandwidth,
                      std::vector<double>& memb, std::vector<double>* dmemb) {
  const std::size_t n = norm.size();
  memb.assign(n * bins, 0.0);
  if (dmemb) dmemb->assign(n * bins, 0.0);
  if (bandwidth <= 0.0) {
    for (std::size_t j = 0; j < n; ++j) {
      auto b = static_cast<std::size_t>(norm[j] * static_cast<double>(bins));
      if (b >= bins) b = bins - 1;
      memb[j * bins + b] = 1.0;
    }
    return;
  }
  const double sigma = bandwidth / static_cast<double>(bins);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> k(bins), dk(bins);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0, ds = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      const double c = (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
      const double d = norm[j] - c;
      k[b] = std::exp(-d * d * inv2s2);
      dk[b] = k[b] * (-2.0 * d * inv2s2);  // d k / d norm
      s += k[b];
      ds += dk[b];
    }
    const double inv_s = 1.0 / s;
    for (std::size_t b = 0; b < bins; ++b) {
      memb[j * bins + b] = k[b] * inv_s;
      if (dmemb) (*dmemb)[j * bins + b] = (dk[b] * s - k[b] * ds) * inv_s * inv_s;
    }
  }
}

MiWork mi_soft(std::span<const double> x, std::span<const double> y, std::size_t bins,
               double bandwidth, bool want_grad) {
  if (x.size() != y.size()) throw InputError("mutual_information: sample counts differ");
  if (x.size() < 2) throw InputError("mutual_information: need at least 2 samples");
  if (bins < 2) throw InputError("mutual_information: need at least 2 bins");

  const std::size_t n = x.size();
  std::vector<double> xn, yn;
  double x_inv_range = 0.0, y_inv_range = 0.0;
  range_normalize(x, xn, x_inv_range);
  range_normalize(y, yn, y_inv_range);

  std::vector<double> mx, my, dmy;
  soft_memberships(xn, bins, bandwidth, mx, nullptr);
  soft_memberships(yn, bins, bandwidth, my, want_grad && bandwidth > 0.0 ? &dmy : nullptr);

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> joint(bins * bins, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double* mxj = mx.data() + j * bins;
    const double* myj = my.data() + j * bins;
    for (std::size_t a = 0; a < bins; ++a) {
      if (mxj[a] == 0.0) continue;
      const double w = mxj[a] * inv_n;
      double* row = joint.data() + a * bins;
      for (std::size_t b = 0; b < bins; ++b) row[b] += w * myj[b];
    }
  }
  std::vector<double> px(bins, 0.0), py(bins, 0.0);
  for (std::size_t a = 0; a < bins; ++a)
    for (std::size_t b = 0; b < bins; ++b) {
      px[a] += joint[a * bins + b];
      py[b] += joint[a * bins + b];
    }

  MiWork out;
  std::vector<double> log_ratio(bins * bins, 0.0);
  for (std::size_t a = 0; a < bins; ++a) {
    for (std::size_t b = 0; b < bins; ++b) {
      const double p = joint[a * bins + b];
      if (p <= 0.0 || px[a] <= 0.0 || py[b] <= 0.0) continue;
      const double lr = std::log(p / (px[a] * py[b]));
      log_ratio[a * bins + b] = lr;
      out.value += p * lr;
    }
  }

  if (want_grad) {
    out.grad_y.assign(n, 0.0);
    if (bandwidth > 0.0 && y_inv_range > 0.0) {
      // dMI/dP_ab = log(P/(px py)) - 1; the -1 integrates to zero because the
      // total mass is constant in y, so only the log term survives.
      for (std::size_t j = 0; j < n; ++j) {
        const double* mxj = mx.data() + j * bins;
        const double* dmyj = dmy.data() + j * bins;
        double g = 0.0;
        for (std::size_t a = 0; a < bins; ++a) {
          if (mxj[a] == 0.0) continue;
          const double w = mxj[a] * inv_n;
          const double* lr = log_ratio.data() + a * bins;
          for (std::size_t b = 0; b < bins; ++b) g += w * dmyj[b] * lr[b];
        }
        out.grad_y[j] = g * y_inv_range;
      }
    }
  }
  return out;
}

}  // namespace

double mutual_information(std::span<const double> x, std::span<const double> y, std::size_t bins,
                          double bandwidth) {
  return mi_soft(x, y, bins, bandwidth, false).value;
}

// --- graph ops --------------------------------------------------------------------

Tensor wasserstein_loss(const Tensor& real, const Tensor& synth, std::size_t channels) {
  if (real.shape() != synth.shape()) throw ShapeError("wasserstein_loss: shape mismatch");
  const std::size_t n = real.size();
  if (n == 0) throw InputError("wasserstein_loss: empty input");
  if (channels == 0 || n % channels != 0) {
    throw ShapeError("wasserstein_loss: size not divisible by channel count");
  }

  // sorted pairing per channel; gradient routes to synth through the sort
  // permutation
  const auto& xv = real.values();
  const auto& yv = synth.values();
  const std::size_t per = n / channels;
  double acc = 0.0;
  std::vector<double> grad_y(n, 0.0);
  const double inv = 1.0 / static_cast<double>(per * channels);
  std::vector<std::size_t> xi(per), yi(per);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < per; ++i) xi[i] = yi[i] = i * channels + c;
    std::sort(xi.begin(), xi.end(), [&](std::size_t a, std::size_t b) { return xv[a] < xv[b]; });
    std::sort(yi.begin(), yi.end(), [&](std::size_t a, std::size_t b) { return yv[a] < yv[b]; });
    for (std::size_t i = 0; i < per; ++i) {
      const double d = yv[yi[i]] - xv[xi[i]];
      acc += std::abs(d);
      grad_y[yi[i]] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv;
    }
  }
  acc *= inv;

  return make_op({1}, {acc}, {real, synth}, [grad_y = std::move(grad_y)](autograd::Node& nd) {
    auto& ps = nd.parents[1];
    if (!ps->requires_grad) return;
    ps->ensure_grad();
    const double g = nd.grad[0];
    for (std::size_t i = 0; i < grad_y.size(); ++i) ps->grad[i] += g * grad_y[i];
  });
}

Tensor mutual_information_loss(const Tensor& real, const Tensor& synth, std::size_t bins,
                               double bandwidth) {
  if (real.shape() != synth.shape()) throw ShapeError("mutual_information_loss: shape mismatch");
  MiWork w = mi_soft(std::span<const double>(real.values()), std::span<const double>(synth.values()),
                     bins, bandwidth, true);
  return make_op({1}, {w.value}, {real, synth}, [grad_y = std::move(w.grad_y)](autograd::Node& nd) {
    auto& ps = nd.parents[1];
    if (!ps->requires_grad) return;
    ps->ensure_grad();
    const double g = nd.grad[0];
    for (std::size_t i = 0; i < grad_y.size(); ++i) ps->grad[i] += g * grad_y[i];
  });
}

// --- VAE -----------------------------------------------------------------------

std::vector<Tensor> VaeModel::parameters() {
  return {enc_w1, enc_b1, enc_wmu, enc_bmu, enc_wlv, enc_blv, dec_w1, dec_b1, dec_w2, dec_b2};
}

Tensor VaeModel::encode_hidden(const Tensor& x) const {
  return gelu(add_rowwise(matmul(x, enc_w1), enc_b1));
}

Tensor VaeModel::decode(const Tensor& z) const {
  Tensor h = gelu(add_rowwise(matmul(z, dec_w1), dec_b1));
  return add_rowwise(matmul(h, dec_w2), dec_b2);
}

namespace {

Tensor vae_weight(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<double> v(rows * cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& x : v) x = rng.normal() * s;
  return Tensor({rows, cols}, std::move(v), true);
}

Tensor vae_bias(std::size_t n) { return Tensor(Shape{n}, std::vector<double>(n, 0.0), true); }

}  // namespace

VaeModel train_vae(const std::vector<Matrix>& windows, const VaeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (windows.empty()) throw InputError("train_vae: no training windows");
  const std::size_t wlen = windows[0].rows;
  const std::size_t dim = windows[0].cols;
  for (const auto& w : windows) {
    if (w.rows != wlen || w.cols != dim) throw InputError("train_vae: ragged window shapes");
  }
  const std::size_t in = wlen * dim;
  const std::size_t n = windows.size();

  VaeModel m;
  m.cfg = cfg;
  m.input_dim = in;
  m.series_dim = dim;
  m.window_len = wlen;
  Rng init(derive_seed(seed, "vae_init"));
  m.enc_w1 = vae_weight(init, in, cfg.hidden_dim);
  m.enc_b1 = vae_bias(cfg.hidden_dim);
  m.enc_wmu = vae_weight(init, cfg.hidden_dim, cfg.latent_dim);
  m.enc_bmu = vae_bias(cfg.latent_dim);
  m.enc_wlv = vae_weight(init, cfg.hidden_dim, cfg.latent_dim);
  m.enc_blv = vae_bias(cfg.latent_dim);
  m.dec_w1 = vae_weight(init, cfg.latent_dim, cfg.hidden_dim);
  m.dec_b1 = vae_bias(cfg.hidden_dim);
  m.dec_w2 = vae_weight(init, cfg.hidden_dim, in);
  m.dec_b2 = vae_bias(in);

  std::vector<double> flat(n * in);
  for (std::size_t j = 0; j < n; ++j) {
    std::copy(windows[j].data.begin(), windows[j].data.end(), flat.begin() + j * in);
  }
  const Tensor x({n, in}, std::move(flat));

  Rng eps_rng(derive_seed(seed, "vae_eps"));
  auto params = m.parameters();
  const double kl_scale = 0.5 / static_cast<double>(n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<double> eps(n * cfg.latent_dim);
    for (auto& e : eps) e = eps_rng.normal();
    const Tensor eps_t({n, cfg.latent_dim}, std::move(eps));

    Tensor h = m.encode_hidden(x);
    Tensor mu = add_rowwise(matmul(h, m.enc_wmu), m.enc_bmu);
    Tensor lv = add_rowwise(matmul(h, m.enc_wlv), m.enc_blv);
    Tensor sigma = fedad::exp(scale(lv, 0.5));
    Tensor z = add(mu, multiply(sigma, eps_t));
    Tensor xh = m.decode(z);

    Tensor recon = mse(xh, x);
    Tensor kl_terms = add_scalar(subtract(add(fedad::exp(lv), multiply(mu, mu)), lv), -1.0);
    Tensor loss = add(recon, scale(sum(kl_terms), kl_scale));
    if (cfg.alpha1 > 0.0) loss = add(loss, scale(wasserstein_loss(x, xh, dim), cfg.alpha1));
    if (cfg.alpha2 > 0.0) {
      loss = add(loss, scale(mutual_information_loss(x, xh, cfg.mi_bins, cfg.mi_bandwidth),
                             cfg.alpha2));
    }

    if (!std::isfinite(loss.item())) {
      throw TrainingError("train_vae: loss diverged at epoch " + std::to_string(epoch));
    }

    backward(loss);
    for (auto& p : params) {
      auto& v = p.mutable_values();
      const auto& g = p.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.learning_rate * g[i];
      p.zero_grad();
    }
  }
  return m;
}

Matrix synthesize(const VaeModel& model, std::size_t synth_length, std::uint64_t seed) {
  if (model.input_dim == 0) throw ContractError("synthesize: model not trained");
  const std::size_t wlen = model.window_len;
  const std::size_t dim = model.series_dim;
  const std::size_t n_windows = (synth_length + wlen - 1) / wlen;

  Rng rng(derive_seed(seed, "synthesize"));
  std::vector<double> z(n_windows * model.cfg.latent_dim);
  for (auto& v : z) v = rng.normal();

  autograd::NoGradGuard guard;
  const Tensor out = model.decode(Tensor({n_windows, model.cfg.latent_dim}, std::move(z)));

  Matrix series(synth_length, dim);
  for (std::size_t t = 0; t < synth_length; ++t) {
    const std::size_t w = t / wlen;
    const std::size_t step = t % wlen;
    for (std::size_t d = 0; d < dim; ++d) {
      series.at(t, d) = out.values()[w * model.input_dim + step * dim + d];
    }
  }
  return series;
}

// --- shared dataset -------------------------------------------------------------

SharedDataset pool_shared_dataset(const std::vector<std::pair<int, Matrix>>& syntheses) {
  SharedDataset ds;
  ds.entries.reserve(syntheses.size());
  for (const auto& [id, series] : syntheses) ds.entries.push_back({id, series});
  std::sort(ds.entries.begin(), ds.entries.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  for (std::size_t i = 1; i < ds.entries.size(); ++i) {
    if (ds.entries[i].client_id == ds.entries[i - 1].client_id) {
      throw ProtocolError("pool_shared_dataset: duplicate client id " +
                          std::to_string(ds.entries[i].client_id));
    }
  }
  return ds;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_shared_csv(const std::string& path, const SharedDataset& ds) {
  std::ofstream os(path);
  if (!os) throw InputError("save_shared_csv: cannot open " + path);
  const std::size_t dim = ds.entries.empty() ? 0 : ds.entries[0].series.cols;
  os << "client_id,step";
  for (std::size_t d = 0; d < dim; ++d) os << ",dim_" << d;
  os << "\n";
  for (const auto& e : ds.entries) {
    for (std::size_t t = 0; t < e.series.rows; ++t) {
      os << e.client_id << "," << t;
      for (std::size_t d = 0; d < e.series.cols; ++d) os << "," << fmt_double(e.series.at(t, d));
      os << "\n";
    }
  }
}

SharedDataset load_shared_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("load_shared_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw InputError("load_shared_csv: empty file " + path);

  std::vector<std::pair<int, std::vector<double>>> rows_by_client;
  std::size_t dim = 0;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) {
      throw InputError("load_shared_csv: malformed row " + std::to_string(lineno));
    }
    if (dim == 0) dim = cells.size() - 2;
    const int cid = std::stoi(cells[0]);
    if (rows_by_client.empty() || rows_by_client.back().first != cid) {
      rows_by_client.emplace_back(cid, std::vector<double>{});
    }
    for (std::size_t d = 0; d < dim; ++d) {
      rows_by_client.back().second.push_back(std::stod(cells[2 + d]));
    }
  }
  std::vector<std::pair<int, Matrix>> pooled;
  for (auto& [cid, vals] : rows_by_client) {
    const std::size_t steps = vals.size() / dim;
    pooled.emplace_back(cid, Matrix(steps, dim, std::move(vals)));
  }
  return pool_shared_dataset(pooled);
}

}  // namespace fedad::ppds
