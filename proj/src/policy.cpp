#include "utrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "utrl/errors.hpp"

namespace utrl {

void DecodingParams::validate() const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
  if (!(temperature > 0.0 && std::isfinite(temperature))) throw ConfigError("temperature must be positive");
  if (max_len == 0) throw ConfigError("max_len must be positive");
}

std::vector<double> nucleus_filter(std::span<const double> distribution, double top_p) {
  if (!(top_p > 0.0)) throw ConfigError("top_p must be positive");
  double mass = 0.0;
  for (double p : distribution) {
    if (!(p >= 0.0)) throw DataError("nucleus_filter: negative or NaN probability");
    mass += p;
  }
  if (std::abs(mass - 1.0) > 1e-6) throw DataError("nucleus_filter: distribution does not sum to 1");
  std::vector<double> out(distribution.begin(), distribution.end());
  if (top_p >= 1.0) return out;

  std::vector<std::size_t> order(distribution.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return distribution[a] > distribution[b]; });
  double cumulative = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    cumulative += distribution[order[keep]];
    ++keep;
    if (cumulative >= top_p) break;
  }
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = distribution[order[i]] / cumulative;
  return out;
}

std::size_t sample_index(std::span<const double> distribution, double u) {
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < distribution.size(); ++i) {
    if (distribution[i] <= 0.0) continue;
    acc += distribution[i];
    last = i;
    if (u < acc) return i;
  }
  return last;  // rounding left u beyond the accumulated mass
}

void check_update_batch(std::span<const UpdateItem> batch) {
  for (const auto& item : batch) {
    if (!std::isfinite(item.advantage)) throw NumericError("non-finite advantage in update batch");
    if (!std::isfinite(item.weight)) throw NumericError("non-finite weight in update batch");
  }
}

void to_json(nlohmann::json& j, const DecodingParams& p) {
  j = nlohmann::json{{"top_p", p.top_p},
                     {"temperature", p.temperature},
                     {"max_len", p.max_len},
                     {"mode", p.mode == DecodeMode::greedy ? "greedy" : "nucleus"}};
}

void from_json(const nlohmann::json& j, DecodingParams& p) {
  p.top_p = j.value("top_p", p.top_p);
  p.temperature = j.value("temperature", p.temperature);
  p.max_len = j.value("max_len", p.max_len);
  if (j.contains("mode")) {
    const auto m = j["mode"].get<std::string>();
    if (m == "greedy") {
      p.mode = DecodeMode::greedy;
    } else if (m == "nucleus") {
      p.mode = DecodeMode::nucleus;
    } else {
      throw ConfigError("decoding mode must be 'nucleus' or 'greedy'");
    }
  }
}

}  // namespace utrl
