#include "affect/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "affect/objectives.hpp"

namespace affect::post {

Series median_filter(const Series& series, int window) {
  if (window < 1 || window % 2 == 0) throw contract_error("median_filter: window must be odd and >= 1");
  if (series.empty()) return series;
  if (window == 1) return series;
  const auto n = static_cast<std::int64_t>(series.size());
  const std::int64_t half = window / 2;
  Series out(series.size());
  std::vector<double> buf(static_cast<size_t>(window));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t k = -half; k <= half; ++k) {
      const std::int64_t j = std::clamp<std::int64_t>(i + k, 0, n - 1);  // replicate padding
      buf[static_cast<size_t>(k + half)] = series[static_cast<size_t>(j)];
    }
    auto mid = buf.begin() + window / 2;
    std::nth_element(buf.begin(), mid, buf.end());
    out[static_cast<size_t>(i)] = *mid;
  }
  return out;
}

Series centre(const Series& pred, double pred_bias, double gold_bias) {
  if (!std::isfinite(pred_bias) || !std::isfinite(gold_bias))
    throw contract_error("centre: biases must be finite");
  Series out(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] - pred_bias + gold_bias;
  return out;
}

Series scale(const Series& pred, double ratio, double pivot) {
  Series out(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) out[i] = (pred[i] - pivot) * ratio + pivot;
  return out;
}

Series time_shift(const Series& pred, int shift) {
  if (shift < 0 || static_cast<size_t>(shift) >= pred.size())
    throw contract_error("time_shift: shift must be in [0, length)");
  Series out(pred.size());
  for (size_t t = 0; t < pred.size(); ++t)
    out[t] = t < static_cast<size_t>(shift) ? pred[0] : pred[t - static_cast<size_t>(shift)];
  return out;
}

// ---------------------------------------------------------------------------
// serialisation

void to_json(nlohmann::json& j, const DimChain& c) {
  j = nlohmann::json::object();
  j["raw_ccc"] = c.raw_ccc;
  j["final_ccc"] = c.final_ccc;
  if (c.median) j["median"] = {{"window", c.median->window}, {"ccc", c.median->ccc}};
  if (c.centre)
    j["centre"] = {{"pred_bias", c.centre->pred_bias}, {"gold_bias", c.centre->gold_bias}, {"ccc", c.centre->ccc}};
  if (c.scale) j["scale"] = {{"ratio", c.scale->ratio}, {"pivot", c.scale->pivot}, {"ccc", c.scale->ccc}};
  if (c.shift) j["shift"] = {{"frames", c.shift->frames}, {"ccc", c.shift->ccc}};
}

void from_json(const nlohmann::json& j, DimChain& c) {
  c = DimChain{};
  c.raw_ccc = j.value("raw_ccc", 0.0);
  c.final_ccc = j.value("final_ccc", 0.0);
  if (j.contains("median"))
    c.median = DimChain::Median{j["median"].at("window").get<int>(), j["median"].value("ccc", 0.0)};
  if (j.contains("centre"))
    c.centre = DimChain::Centre{j["centre"].at("pred_bias").get<double>(),
                                j["centre"].at("gold_bias").get<double>(), j["centre"].value("ccc", 0.0)};
  if (j.contains("scale"))
    c.scale = DimChain::Scale{j["scale"].at("ratio").get<double>(), j["scale"].at("pivot").get<double>(),
                              j["scale"].value("ccc", 0.0)};
  if (j.contains("shift"))
    c.shift = DimChain::Shift{j["shift"].at("frames").get<int>(), j["shift"].value("ccc", 0.0)};
}

void to_json(nlohmann::json& j, const ChainConfig& c) {
  j = nlohmann::json{{"frame_period", c.frame_period}, {"arousal", c.arousal}, {"valence", c.valence}};
}

void from_json(const nlohmann::json& j, ChainConfig& c) {
  j.at("frame_period").get_to(c.frame_period);
  j.at("arousal").get_to(c.arousal);
  j.at("valence").get_to(c.valence);
}

void save_chain(const std::filesystem::path& path, const ChainConfig& chain) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write chain file: " + path.string());
  out << nlohmann::json(chain).dump(2) << "\n";
}

ChainConfig load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open chain file: " + path.string());
  return nlohmann::json::parse(in).get<ChainConfig>();
}

// ---------------------------------------------------------------------------
// search

namespace {

double concat_ccc(const std::vector<Series>& pred, const std::vector<Series>& gold) {
  Series p, g;
  for (const auto& s : pred) p.insert(p.end(), s.begin(), s.end());
  for (const auto& s : gold) g.insert(g.end(), s.begin(), s.end());
  return objectives::ccc(p, g).rho_c;
}

double concat_mean(const std::vector<Series>& xs) {
  double sum = 0.0;
  size_t n = 0;
  for (const auto& s : xs) {
    for (double v : s) sum += v;
    n += s.size();
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double concat_std(const std::vector<Series>& xs, double mean) {
  double sq = 0.0;
  size_t n = 0;
  for (const auto& s : xs) {
    for (double v : s) sq += (v - mean) * (v - mean);
    n += s.size();
  }
  return n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
}

// Geometric grid over [1, hi], snapped to integers (odd when requested),
// deduplicated, ascending.
std::vector<int> int_grid(int hi, int points, bool odd_only) {
  std::set<int> grid;
  if (hi < 1) return {};
  for (int k = 0; k < points; ++k) {
    const double frac = points == 1 ? 0.0 : static_cast<double>(k) / (points - 1);
    double v = std::pow(static_cast<double>(hi), frac);
    int iv = static_cast<int>(std::llround(v));
    if (odd_only && iv % 2 == 0) iv += 1;
    iv = std::clamp(iv, 1, odd_only && hi % 2 == 0 ? hi - 1 : hi);
    if (odd_only && iv % 2 == 0) iv -= 1;
    if (iv >= 1) grid.insert(iv);
  }
  return {grid.begin(), grid.end()};
}

std::vector<Series> map_series(const std::vector<Series>& xs, auto&& fn) {
  std::vector<Series> out;
  out.reserve(xs.size());
  for (const auto& s : xs) out.push_back(fn(s));
  return out;
}

}  // namespace

DimChain chain_search(const std::vector<Series>& val_pred, const std::vector<Series>& val_gold,
                      double frame_period, const SearchOptions& options) {
  if (val_pred.size() != val_gold.size() || val_pred.empty())
    throw contract_error("chain_search: prediction/gold series lists must align");
  for (size_t i = 0; i < val_pred.size(); ++i)
    if (val_pred[i].size() != val_gold[i].size())
      throw contract_error("chain_search: series length mismatch");
  if (frame_period <= 0.0) throw contract_error("chain_search: frame period must be positive");

  DimChain chain;
  std::vector<Series> current = val_pred;
  double best = concat_ccc(current, val_gold);
  chain.raw_ccc = best;

  std::int64_t min_len = std::numeric_limits<std::int64_t>::max();
  for (const auto& s : val_pred) min_len = std::min<std::int64_t>(min_len, static_cast<std::int64_t>(s.size()));

  // (a) median filter
  {
    const int wmax = std::max(1, static_cast<int>(std::llround(options.max_median_seconds / frame_period)));
    double best_step = best;
    int best_window = 0;
    for (int w : int_grid(wmax, options.grid_points, /*odd_only=*/true)) {
      if (w <= 1) continue;
      auto cand = map_series(current, [&](const Series& s) { return median_filter(s, w); });
      const double c = concat_ccc(cand, val_gold);
      if (c > best_step) {
        best_step = c;
        best_window = w;
      }
    }
    if (best_window > 0 && best_step > best) {
      current = map_series(current, [&](const Series& s) { return median_filter(s, best_window); });
      best = best_step;
      chain.median = DimChain::Median{best_window, best};
    }
  }

  // (b) centring from validation statistics
  {
    const double pred_bias = concat_mean(current);
    const double gold_bias = concat_mean(val_gold);
    auto cand = map_series(current, [&](const Series& s) { return centre(s, pred_bias, gold_bias); });
    const double c = concat_ccc(cand, val_gold);
    if (c > best) {
      current = std::move(cand);
      best = c;
      chain.centre = DimChain::Centre{pred_bias, gold_bias, best};
    }
  }

  // (c) scaling by the gold/pred std ratio
  {
    const double pivot = concat_mean(current);
    const double pred_std = concat_std(current, pivot);
    if (pred_std > 0.0) {
      const double gold_mean = concat_mean(val_gold);
      const double ratio = concat_std(val_gold, gold_mean) / pred_std;
      auto cand = map_series(current, [&](const Series& s) { return scale(s, ratio, pivot); });
      const double c = concat_ccc(cand, val_gold);
      if (c > best) {
        current = std::move(cand);
        best = c;
        chain.scale = DimChain::Scale{ratio, pivot, best};
      }
    }
    // zero prediction variance: step skipped
  }

  // (d) forward time shift
  {
    const int smax_cfg = std::max(1, static_cast<int>(std::llround(options.max_shift_seconds / frame_period)));
    const int smax = static_cast<int>(std::min<std::int64_t>(smax_cfg, min_len - 1));
    double best_step = best;
    int best_shift = 0;
    for (int s : int_grid(smax, options.grid_points, /*odd_only=*/false)) {
      auto cand = map_series(current, [&](const Series& ser) { return time_shift(ser, s); });
      const double c = concat_ccc(cand, val_gold);
      if (c > best_step) {
        best_step = c;
        best_shift = s;
      }
    }
    if (best_shift > 0 && best_step > best) {
      best = best_step;
      chain.shift = DimChain::Shift{best_shift, best};
    }
  }

  chain.final_ccc = best;
  return chain;
}

DimChain chain_search(const Series& val_pred, const Series& val_gold, double frame_period,
                      const SearchOptions& options) {
  return chain_search(std::vector<Series>{val_pred}, std::vector<Series>{val_gold}, frame_period, options);
}

Series apply_chain(const DimChain& chain, const Series& pred) {
  Series out = pred;
  if (chain.median) out = median_filter(out, chain.median->window);
  if (chain.centre) out = centre(out, chain.centre->pred_bias, chain.centre->gold_bias);
  if (chain.scale) out = scale(out, chain.scale->ratio, chain.scale->pivot);
  if (chain.shift) out = time_shift(out, chain.shift->frames);
  return out;
}

std::vector<Series> apply_chain(const DimChain& chain, const std::vector<Series>& pred) {
  std::vector<Series> out;
  out.reserve(pred.size());
  for (const auto& s : pred) out.push_back(apply_chain(chain, s));
  return out;
}

}  // namespace affect::post
