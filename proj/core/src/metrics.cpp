#include "pssc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "pssc/checkpoint.hpp"
#include "pssc/error.hpp"

namespace pssc {
namespace {

constexpr int kChunk = 256;

// Generates codes in chunks so large grids stay within memory.
Tensor<double> generate_chunked(const GeneratorFn& gen, const Tensor<double>& codes) {
  const int n = codes.dim(0), d = codes.dim(1);
  if (n <= kChunk) return gen(codes);
  std::vector<Tensor<double>> parts;
  Shape img_shape;
  for (int s = 0; s < n; s += kChunk) {
    const int m = std::min(kChunk, n - s);
    Tensor<double> c({m, d});
    std::copy_n(codes.data() + static_cast<std::size_t>(s) * d, static_cast<std::size_t>(m) * d, c.data());
    parts.push_back(gen(c));
  }
  Shape shape = parts[0].shape();
  shape[0] = n;
  Tensor<double> out(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  return out;
}

Tensor<double> rows(const Tensor<double>& batch, int first, int count) {
  Shape s = batch.shape();
  const std::size_t per = batch.size() / static_cast<std::size_t>(s[0]);
  s[0] = count;
  Tensor<double> out(s);
  std::copy_n(batch.data() + static_cast<std::size_t>(first) * per, static_cast<std::size_t>(count) * per, out.data());
  return out;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

GeneratorFn bundle_generator(const ModelBundle& bundle) {
  return [&bundle](const Tensor<double>& codes) { return generate_f64(bundle, codes); };
}

EncoderFn bundle_encoder(const ModelBundle& bundle) {
  return [&bundle](const Tensor<float>& images) { return recognize(bundle, images).cast<double>(); };
}

double tpl_dim(const GeneratorFn& gen, int latent_dim, int dim, const PerceptualDistance& dist,
               const TplOptions& opts, RngStream& rng) {
  if (opts.segments < 2) throw std::invalid_argument("TPL needs at least 2 segments");
  if (dim < 0 || dim >= latent_dim) throw std::invalid_argument("TPL dimension out of range");
  if (opts.num_base < 1) throw std::invalid_argument("TPL needs at least one base sample");
  const int n = opts.segments, d = latent_dim;
  const double step = (opts.hi - opts.lo) / n;
  double total = 0;
  for (int b = 0; b < opts.num_base; ++b) {
    std::vector<double> base(static_cast<std::size_t>(d));
    for (auto& v : base) v = rng.normal();
    Tensor<double> codes({n + 1, d});
    for (int s = 0; s <= n; ++s) {
      std::copy(base.begin(), base.end(), codes.data() + static_cast<std::size_t>(s) * d);
      codes[static_cast<std::size_t>(s) * d + dim] = opts.lo + s * step;
    }
    const Tensor<double> imgs = generate_chunked(gen, codes);
    const std::vector<double> dd = dist.batch(rows(imgs, 0, n), rows(imgs, 1, n));
    double sum = 0;
    for (double v : dd) sum += v;
    total += sum;
  }
  return total / opts.num_base;
}

TplReport tpl_total(const GeneratorFn& gen, int latent_dim, const PerceptualDistance& dist, const TplOptions& opts,
                    RngStream& rng) {
  if (opts.threshold < 0) throw std::invalid_argument("TPL threshold must be >= 0");
  TplReport r;
  r.threshold = opts.threshold;
  r.segments = opts.segments;
  r.num_base = opts.num_base;
  for (int i = 0; i < latent_dim; ++i) {
    const double t = tpl_dim(gen, latent_dim, i, dist, opts, rng);
    const bool act = t >= opts.threshold;
    r.tpl_per_dim.push_back(t);
    r.active.push_back(act);
    if (act) {
      r.tpl_total += t;
      ++r.num_active;
    }
  }
  return r;
}

std::vector<double> dis_cum_sweep(const GeneratorFn& gen, int latent_dim, int dim_i, int dim_j,
                                  const PerceptualDistance& dist, int segments, const std::vector<double>& alphas_deg,
                                  double lo, double hi) {
  if (dim_i == dim_j) throw std::invalid_argument("dis_cum needs two distinct dimensions");
  if (dim_i < 0 || dim_j < 0 || dim_i >= latent_dim || dim_j >= latent_dim) {
    throw std::invalid_argument("dis_cum dimension out of range");
  }
  if (segments < 2) throw std::invalid_argument("dis_cum needs at least 2 segments");
  const int n = segments, d = latent_dim;
  const double step = (hi - lo) / n;
  std::vector<double> curve;
  for (double alpha : alphas_deg) {
    const double a = alpha * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    double total = 0;
    // One grid row (fixed v) per batch: n pairs.
    for (int bi = 0; bi < n; ++bi) {
      const double v = lo + bi * step;
      Tensor<double> from({n, d}), to({n, d});
      for (int ai = 0; ai < n; ++ai) {
        const double u = lo + ai * step;
        double* f = from.data() + static_cast<std::size_t>(ai) * d;
        double* t = to.data() + static_cast<std::size_t>(ai) * d;
        f[dim_i] = ca * u - sa * v;
        f[dim_j] = sa * u + ca * v;
        t[dim_i] = ca * (u + step) - sa * v;
        t[dim_j] = sa * (u + step) + ca * v;
      }
      const std::vector<double> dd = dist.batch(generate_chunked(gen, from), generate_chunked(gen, to));
      for (double x : dd) total += x;
    }
    curve.push_back(total);
  }
  return curve;
}

std::vector<double> alpha_range(double first, double last, double step) {
  if (!(step > 0) || last < first) throw std::invalid_argument("alpha range needs step > 0 and last >= first");
  std::vector<double> out;
  const auto count = static_cast<long>(std::floor((last - first) / step + 1e-9));
  for (long i = 0; i <= count; ++i) out.push_back(first + static_cast<double>(i) * step);
  return out;
}

std::vector<std::size_t> circular_local_minima(const std::vector<double>& c) {
  std::vector<std::size_t> out;
  const std::size_t n = c.size();
  if (n < 3) return out;
  for (std::size_t i = 0; i < n; ++i) {
    if (c[i] < c[(i + n - 1) % n] && c[i] < c[(i + 1) % n]) out.push_back(i);
  }
  return out;
}

double ppl(const GeneratorFn& gen, int latent_dim, const PerceptualDistance& dist, int num_pairs, double epsilon,
           RngStream& rng) {
  if (!(epsilon > 0)) throw std::invalid_argument("PPL epsilon must be > 0");
  if (num_pairs < 1) throw std::invalid_argument("PPL needs at least one pair");
  const int d = latent_dim;
  Tensor<double> from({num_pairs, d}), to({num_pairs, d});
  for (int p = 0; p < num_pairs; ++p) {
    std::vector<double> a(static_cast<std::size_t>(d)), b(static_cast<std::size_t>(d));
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const double t = rng.uniform();
    for (int i = 0; i < d; ++i) {
      const double delta = b[static_cast<std::size_t>(i)] - a[static_cast<std::size_t>(i)];
      from[static_cast<std::size_t>(p) * d + i] = a[static_cast<std::size_t>(i)] + t * delta;
      to[static_cast<std::size_t>(p) * d + i] = a[static_cast<std::size_t>(i)] + (t + epsilon) * delta;
    }
  }
  const std::vector<double> dd = dist.batch(generate_chunked(gen, from), generate_chunked(gen, to));
  double total = 0;
  for (double v : dd) total += v / (epsilon * epsilon);
  return total / num_pairs;
}

FvmReport factorvae_metric(const EncoderFn& encoder, const FactorDataset& dataset, const FvmOptions& opts,
                           RngStream& rng) {
  if (!dataset.has_factors()) throw UnsupportedOperation("FactorVAE metric needs factor metadata");
  if (opts.train_votes < 1 || opts.eval_votes < 1 || opts.batch_size < 2 || opts.global_samples < 2) {
    throw std::invalid_argument("FactorVAE metric needs positive vote counts and batches of >= 2");
  }
  const int nf = dataset.num_factors();

  // Global per-dimension variance of the codes.
  const Tensor<double> global = encoder(sample_batch(dataset, opts.global_samples, rng));
  if (global.rank() != 2 || global.dim(0) != opts.global_samples) {
    throw std::invalid_argument("encoder must return [N, k] codes");
  }
  const int k = global.dim(1);
  auto variances = [k](const Tensor<double>& codes) {
    const int n = codes.dim(0);
    std::vector<double> mean(static_cast<std::size_t>(k)), var(static_cast<std::size_t>(k));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) mean[static_cast<std::size_t>(j)] += codes[static_cast<std::size_t>(i) * k + j];
    }
    for (auto& m : mean) m /= n;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        const double e = codes[static_cast<std::size_t>(i) * k + j] - mean[static_cast<std::size_t>(j)];
        var[static_cast<std::size_t>(j)] += e * e;
      }
    }
    for (auto& v : var) v /= (n - 1);
    return var;
  };
  const std::vector<double> gvar = variances(global);
  const double vmax = *std::max_element(gvar.begin(), gvar.end());
  FvmReport report;
  report.active_dims.resize(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    report.active_dims[static_cast<std::size_t>(j)] = vmax > 0 && gvar[static_cast<std::size_t>(j)] >= opts.collapse_ratio * vmax;
  }

  auto vote = [&](int& factor) {
    factor = rng.uniform_int(nf);
    const FixedFactorBatch fb = fix_factor_batch(dataset, factor, rng, opts.batch_size);
    const std::vector<double> v = variances(encoder(fb.images));
    int best = -1;
    double best_val = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
      if (!report.active_dims[static_cast<std::size_t>(j)]) continue;
      const double r = v[static_cast<std::size_t>(j)] / gvar[static_cast<std::size_t>(j)];
      if (r < best_val) {
        best_val = r;
        best = j;
      }
    }
    return best;
  };

  std::vector<std::vector<int>> counts(static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(nf)));
  std::vector<std::pair<int, int>> train, eval;
  for (int i = 0; i < opts.train_votes; ++i) {
    int f;
    const int dim = vote(f);
    train.emplace_back(dim, f);
    if (dim >= 0) ++counts[static_cast<std::size_t>(dim)][static_cast<std::size_t>(f)];
  }
  for (int i = 0; i < opts.eval_votes; ++i) {
    int f;
    const int dim = vote(f);
    eval.emplace_back(dim, f);
  }
  report.dim_to_factor.assign(static_cast<std::size_t>(k), -1);
  for (int j = 0; j < k; ++j) {
    const auto& c = counts[static_cast<std::size_t>(j)];
    const auto it = std::max_element(c.begin(), c.end());
    if (*it > 0) report.dim_to_factor[static_cast<std::size_t>(j)] = static_cast<int>(it - c.begin());
  }
  auto accuracy = [&](const std::vector<std::pair<int, int>>& votes) {
    int hit = 0;
    for (const auto& [dim, f] : votes) {
      if (dim >= 0 && report.dim_to_factor[static_cast<std::size_t>(dim)] == f) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(votes.size());
  };
  report.train_accuracy = accuracy(train);
  report.accuracy = accuracy(eval);
  return report;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("spearman needs at least two points");
  const std::vector<double> rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::vector<RankRow> rank_models(const std::vector<std::string>& dirs, const DistanceConfig& dist_cfg,
                                 const TplOptions& opts, int min_active, std::uint64_t seed) {
  std::vector<RankRow> rows_out;
  for (const auto& dir : dirs) {
    RankRow row;
    row.model_dir = dir;
    try {
      const ModelBundle bundle = load_bundle(dir);
      DistanceConfig dc = dist_cfg;
      dc.image_channels = bundle.arch.image_channels;
      const PerceptualDistance dist(dc);
      RngStream rng = RngStream::derive(seed, "tpl");
      const TplReport rep = tpl_total(bundle_generator(bundle), bundle.arch.latent_dim, dist, opts, rng);
      row.tpl_total = rep.tpl_total;
      row.num_active = rep.num_active;
      row.tpl_per_dim = rep.tpl_per_dim;
      row.status = rep.num_active > min_active ? "ok" : "filtered";
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
    rows_out.push_back(std::move(row));
  }
  auto group = [](const RankRow& r) { return r.status == "ok" ? 0 : r.status == "filtered" ? 1 : 2; };
  std::stable_sort(rows_out.begin(), rows_out.end(), [&](const RankRow& a, const RankRow& b) {
    if (group(a) != group(b)) return group(a) < group(b);
    if (group(a) == 0 && a.tpl_total != b.tpl_total) return a.tpl_total < b.tpl_total;
    return a.model_dir < b.model_dir;
  });
  int rank = 0;
  for (auto& r : rows_out) {
    if (r.status == "ok") r.rank = ++rank;
  }
  return rows_out;
}

std::string ranking_csv(const std::vector<RankRow>& rows) {
  std::size_t dims = 0;
  for (const auto& r : rows) dims = std::max(dims, r.tpl_per_dim.size());
  std::string out = "model_dir,tpl_total,num_active";
  for (std::size_t i = 0; i < dims; ++i) out += ",tpl_" + std::to_string(i);
  out += ",status\n";
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (const auto& r : rows) {
    const bool has = r.status.rfind("error", 0) != 0;
    out += quote(r.model_dir) + "," + (has ? fmt(r.tpl_total) : "") + "," + (has ? std::to_string(r.num_active) : "");
    for (std::size_t i = 0; i < dims; ++i) out += "," + (i < r.tpl_per_dim.size() ? fmt(r.tpl_per_dim[i]) : "");
    out += "," + quote(r.status) + "\n";
  }
  return out;
}

std::string sweep_csv(const std::vector<double>& alphas, const std::vector<double>& values) {
  if (alphas.size() != values.size()) throw std::invalid_argument("sweep_csv: length mismatch");
  std::string out = "alpha_degrees,dis_cum\n";
  for (std::size_t i = 0; i < alphas.size(); ++i) out += fmt(alphas[i]) + "," + fmt(values[i]) + "\n";
  return out;
}

}  // namespace pssc
