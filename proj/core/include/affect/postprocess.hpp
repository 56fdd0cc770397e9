#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "affect/tensor.hpp"

namespace affect::post {

using Series = std::vector<double>;

// Centered sliding median with replicate padding at the edges; length
// preserved. Window must be odd.
Series median_filter(const Series& series, int window);

// output = pred - pred_bias + gold_bias
Series centre(const Series& pred, double pred_bias, double gold_bias);

// Deviations about `pivot` (the validation predictions' mean) rescaled by
// `ratio` (validation gold std / validation pred std).
Series scale(const Series& pred, double ratio, double pivot);

// Delays the prediction by `shift` frames: output[t] = pred[t - shift],
// front-filled with pred[0].
Series time_shift(const Series& pred, int shift);

// One post-processing chain for a single output dimension. Every accepted
// step records the validation CCC the running pipeline achieved with it.
struct DimChain {
  struct Median {
    int window = 1;
    double ccc = 0.0;
  };
  struct Centre {
    double pred_bias = 0.0;
    double gold_bias = 0.0;
    double ccc = 0.0;
  };
  struct Scale {
    double ratio = 1.0;
    double pivot = 0.0;
    double ccc = 0.0;
  };
  struct Shift {
    int frames = 0;
    double ccc = 0.0;
  };

  std::optional<Median> median;
  std::optional<Centre> centre;
  std::optional<Scale> scale;
  std::optional<Shift> shift;
  double raw_ccc = 0.0;
  double final_ccc = 0.0;

  bool empty() const { return !median && !centre && !scale && !shift; }
};

struct ChainConfig {
  double frame_period = 0.040;
  DimChain arousal;
  DimChain valence;
};

void to_json(nlohmann::json& j, const DimChain& c);
void from_json(const nlohmann::json& j, DimChain& c);
void to_json(nlohmann::json& j, const ChainConfig& c);
void from_json(const nlohmann::json& j, ChainConfig& c);

struct SearchOptions {
  int grid_points = 20;
  double max_median_seconds = 20.0;
  double max_shift_seconds = 10.0;
};

// Greedy search in the fixed order median -> centre -> scale -> shift: each
// step's parameter is grid-searched (median/shift) or derived from the
// validation statistics (centre/scale) and kept only when it strictly
// improves the validation CCC of the running pipeline. Steps operate on each
// series separately; the CCC is computed over the concatenation.
DimChain chain_search(const std::vector<Series>& val_pred, const std::vector<Series>& val_gold,
                      double frame_period, const SearchOptions& options = {});
DimChain chain_search(const Series& val_pred, const Series& val_gold, double frame_period,
                      const SearchOptions& options = {});

Series apply_chain(const DimChain& chain, const Series& pred);
std::vector<Series> apply_chain(const DimChain& chain, const std::vector<Series>& pred);

void save_chain(const std::filesystem::path& path, const ChainConfig& chain);
ChainConfig load_chain(const std::filesystem::path& path);

}  // namespace affect::post
