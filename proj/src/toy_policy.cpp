#include "utrl/toy_policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "utrl/errors.hpp"
#include "utrl/rng.hpp"
#include "utrl/text.hpp"

namespace utrl {

namespace {

constexpr char kMagic[] = "UTRLTOY1\n";
constexpr int kStart = -1;  // padding token before the first generated symbol

std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ splitmix64(v)); }

void log_softmax(std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - m);
  const double lz = m + std::log(z);
  for (double& x : v) x -= lz;
}

using SparseGrad = std::unordered_map<std::size_t, std::vector<double>>;

}  // namespace

void ToyPolicyConfig::validate() const {
  if (vocabulary.empty()) throw ConfigError("toy policy vocabulary must not be empty");
  std::unordered_set<std::string> seen;
  for (const auto& s : vocabulary) {
    if (s.empty()) throw ConfigError("toy policy vocabulary contains an empty symbol");
    if (!seen.insert(s).second) throw ConfigError("duplicate vocabulary symbol '" + s + "'");
  }
  if (context_window == 0) throw ConfigError("context_window must be positive");
  if (buckets == 0) throw ConfigError("buckets must be positive");
  if (!(init_scale >= 0.0 && std::isfinite(init_scale))) throw ConfigError("init_scale must be non-negative");
}

std::vector<std::string> ascii_vocabulary() {
  std::vector<std::string> v;
  v.emplace_back("\n");
  for (char c = ' '; c <= '~'; ++c) v.emplace_back(1, c);
  return v;
}

ToyPolicy::ToyPolicy(ToyPolicyConfig config) : config_(std::move(config)) {
  config_.validate();
  theta_.assign(config_.buckets * actions(), 0.0);
  if (config_.init_scale > 0.0) {
    Rng rng = substream(config_.seed, "toy-init");
    for (double& w : theta_) {
      // Box-Muller on the portable uniform source.
      double u1 = 1.0 - uniform01(rng), u2 = uniform01(rng);
      w = config_.init_scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
  }
  reference_ = theta_;
}

std::vector<std::size_t> ToyPolicy::features(std::uint64_t prompt_hash, std::span<const int> prefix) const {
  const std::uint64_t salt = splitmix64(config_.seed ^ 0x746f79ULL);
  std::vector<std::size_t> rows;
  rows.reserve(2 * config_.context_window + 2);
  rows.push_back(mix(salt, 0) % config_.buckets);
  std::uint64_t ctx = mix(salt, 1);
  std::uint64_t crossed = mix(mix(salt, 2), prompt_hash);
  rows.push_back(crossed % config_.buckets);
  for (std::size_t n = 1; n <= config_.context_window; ++n) {
    const int tok = n <= prefix.size() ? prefix[prefix.size() - n] : kStart;
    ctx = mix(ctx, static_cast<std::uint64_t>(static_cast<std::int64_t>(tok)));
    crossed = mix(crossed, static_cast<std::uint64_t>(static_cast<std::int64_t>(tok)));
    rows.push_back(ctx % config_.buckets);
    rows.push_back(crossed % config_.buckets);
  }
  return rows;
}

void ToyPolicy::logits(const std::vector<double>& params, std::span<const std::size_t> rows,
                       std::vector<double>& out) const {
  const std::size_t a = actions();
  out.assign(a, 0.0);
  for (std::size_t r : rows) {
    const double* row = params.data() + r * a;
    for (std::size_t i = 0; i < a; ++i) out[i] += row[i];
  }
}

std::vector<double> ToyPolicy::next_distribution(const std::string& prompt, std::span<const int> prefix) const {
  std::vector<double> l;
  logits(theta_, features(fnv1a(prompt), prefix), l);
  log_softmax(l);
  for (double& x : l) x = std::exp(x);
  return l;
}

bool ToyPolicy::representable(const std::string& completion) const {
  try {
    tokenize(completion);
    return true;
  } catch (const DataError&) {
    return false;
  }
}

std::vector<int> ToyPolicy::tokenize(const std::string& completion) const {
  std::size_t longest = 0;
  for (const auto& s : config_.vocabulary) longest = std::max(longest, s.size());
  std::vector<int> tokens;
  std::size_t i = 0;
  while (i < completion.size()) {
    int best = -1;
    std::size_t best_len = 0;
    for (std::size_t k = 0; k < config_.vocabulary.size(); ++k) {
      const auto& s = config_.vocabulary[k];
      if (s.size() > best_len && completion.compare(i, s.size(), s) == 0) {
        best = static_cast<int>(k) + 1;
        best_len = s.size();
        if (best_len == longest) break;
      }
    }
    if (best < 0) {
      throw DataError("completion not representable by the toy vocabulary at byte " + std::to_string(i));
    }
    tokens.push_back(best);
    i += best_len;
  }
  return tokens;
}

std::string ToyPolicy::detokenize(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (t == 0) break;
    if (t < 0 || static_cast<std::size_t>(t) > config_.vocabulary.size()) throw DataError("token id out of range");
    out += config_.vocabulary[static_cast<std::size_t>(t) - 1];
  }
  return out;
}

void ToyPolicy::check_prompt(const std::string& prompt, std::size_t max_len) const {
  if (prompt.size() > max_len) {
    throw DataError("prompt of " + std::to_string(prompt.size()) + " characters exceeds max_len " +
                    std::to_string(max_len));
  }
}

Trajectory ToyPolicy::decode(const std::string& prompt, const DecodingParams& params, std::uint64_t seed,
                             std::size_t index) {
  Rng rng = substream(seed, "toy-sample", index);
  const std::uint64_t ph = fnv1a(prompt);
  Trajectory tr;
  tr.prompt = prompt;
  std::vector<double> lp, lr, probs;
  while (tr.tokens.size() < params.max_len) {
    const auto rows = features(ph, tr.tokens);
    logits(theta_, rows, lp);
    logits(reference_, rows, lr);
    std::size_t choice;
    if (params.mode == DecodeMode::greedy) {
      choice = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      probs.resize(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) probs[i] = lp[i] / params.temperature;
      log_softmax(probs);
      for (double& x : probs) x = std::exp(x);
      double mass = 0.0;
      for (double x : probs) mass += x;
      for (double& x : probs) x /= mass;
      probs = nucleus_filter(probs, params.top_p);
      choice = sample_index(probs, uniform01(rng));
    }
    log_softmax(lp);
    log_softmax(lr);
    tr.tokens.push_back(static_cast<int>(choice));
    tr.logp_policy.push_back(lp[choice]);
    tr.logp_reference.push_back(lr[choice]);
    if (choice == 0) {
      tr.terminated = true;
      break;
    }
  }
  tr.text = detokenize(tr.tokens);
  return tr;
}

std::vector<Trajectory> ToyPolicy::sample_batch(const std::string& prompt, std::size_t n,
                                                const DecodingParams& params, std::uint64_t seed) {
  params.validate();
  check_prompt(prompt, params.max_len);
  std::vector<Trajectory> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(decode(prompt, params, seed, i));
  return out;
}

Trajectory ToyPolicy::greedy(const std::string& prompt, std::size_t max_len) {
  DecodingParams p;
  p.mode = DecodeMode::greedy;
  p.max_len = max_len;
  p.validate();
  check_prompt(prompt, max_len);
  return decode(prompt, p, 0, 0);
}

std::vector<double> ToyPolicy::sequence_logp(const std::vector<double>& params, const std::string& prompt,
                                             std::span<const int> tokens) const {
  const std::uint64_t ph = fnv1a(prompt);
  std::vector<double> out, l;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    logits(params, features(ph, tokens.subspan(0, t)), l);
    log_softmax(l);
    out.push_back(l[static_cast<std::size_t>(tokens[t])]);
  }
  return out;
}

ScoreResult ToyPolicy::score(const std::string& prompt, const std::string& completion, bool terminated) {
  ScoreResult r;
  r.tokens = tokenize(completion);
  if (terminated) r.tokens.push_back(0);
  r.logp_policy = sequence_logp(theta_, prompt, r.tokens);
  r.logp_reference = sequence_logp(reference_, prompt, r.tokens);
  return r;
}

double ToyPolicy::objective(std::span<const UpdateItem> batch) const {
  double total = 0.0;
  for (const auto& item : batch) {
    auto tokens = tokenize(item.completion);
    if (item.terminated) tokens.push_back(0);
    double lp = 0.0;
    for (double x : sequence_logp(theta_, item.prompt, tokens)) lp += x;
    total += item.weight * item.advantage * lp;
  }
  return total;
}

namespace {

// d/dtheta[r][a] of coef * log softmax(l)[chosen] for every active row r.
void accumulate_step(SparseGrad& grad, std::span<const std::size_t> rows, const std::vector<double>& logp,
                     std::size_t chosen, double coef) {
  const std::size_t a = logp.size();
  for (std::size_t r : rows) {
    auto& g = grad[r];
    if (g.empty()) g.assign(a, 0.0);
    for (std::size_t i = 0; i < a; ++i) g[i] -= coef * std::exp(logp[i]);
    g[chosen] += coef;
  }
}

}  // namespace

std::vector<double> ToyPolicy::gradient(std::span<const UpdateItem> batch) const {
  SparseGrad grad;
  std::vector<double> l;
  for (const auto& item : batch) {
    auto tokens = tokenize(item.completion);
    if (item.terminated) tokens.push_back(0);
    const std::uint64_t ph = fnv1a(item.prompt);
    const double coef = item.weight * item.advantage;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto rows = features(ph, std::span<const int>(tokens).subspan(0, t));
      logits(theta_, rows, l);
      log_softmax(l);
      accumulate_step(grad, rows, l, static_cast<std::size_t>(tokens[t]), coef);
    }
  }
  std::vector<double> dense(theta_.size(), 0.0);
  const std::size_t a = actions();
  for (const auto& [r, g] : grad) {
    for (std::size_t i = 0; i < a; ++i) dense[r * a + i] += g[i];
  }
  return dense;
}

double ToyPolicy::apply_update(std::span<const UpdateItem> batch, double learning_rate) {
  check_update_batch(batch);
  if (!std::isfinite(learning_rate)) throw NumericError("non-finite learning rate");
  SparseGrad grad;
  std::vector<double> l;
  double value = 0.0;
  for (const auto& item : batch) {
    auto tokens = tokenize(item.completion);
    if (item.terminated) tokens.push_back(0);
    const std::uint64_t ph = fnv1a(item.prompt);
    const double coef = item.weight * item.advantage;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto rows = features(ph, std::span<const int>(tokens).subspan(0, t));
      logits(theta_, rows, l);
      log_softmax(l);
      value += coef * l[static_cast<std::size_t>(tokens[t])];
      accumulate_step(grad, rows, l, static_cast<std::size_t>(tokens[t]), coef);
    }
  }
  const std::size_t a = actions();
  for (const auto& [r, g] : grad) {
    for (std::size_t i = 0; i < a; ++i) {
      const double next = theta_[r * a + i] + learning_rate * g[i];
      if (!std::isfinite(next)) throw NumericError("policy update produced a non-finite parameter");
    }
  }
  for (const auto& [r, g] : grad) {
    for (std::size_t i = 0; i < a; ++i) theta_[r * a + i] += learning_rate * g[i];
  }
  return value;
}

double ToyPolicy::pretrain(std::span<const UpdateItem> corpus, double learning_rate, std::size_t steps) {
  if (corpus.empty()) return 0.0;
  std::vector<UpdateItem> items(corpus.begin(), corpus.end());
  const double scale = 1.0 / static_cast<double>(items.size());
  for (auto& it : items) {
    it.advantage = scale;
    it.weight = 1.0;
  }
  for (std::size_t s = 0; s < steps; ++s) apply_update(items, learning_rate);
  return objective(items);
}

void ToyPolicy::freeze_reference() { reference_ = theta_; }

namespace {

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated toy policy checkpoint");
  return v;
}

// Only non-zero rows are stored; a fresh policy is almost entirely zero.
void write_rows(std::ostream& out, const std::vector<double>& params, std::size_t a) {
  const std::size_t rows = params.size() / a;
  std::vector<std::size_t> nonzero;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < a; ++i) {
      if (params[r * a + i] != 0.0) {
        nonzero.push_back(r);
        break;
      }
    }
  }
  write_u64(out, nonzero.size());
  for (std::size_t r : nonzero) {
    write_u64(out, r);
    out.write(reinterpret_cast<const char*>(params.data() + r * a), static_cast<std::streamsize>(a * sizeof(double)));
  }
}

void read_rows(std::istream& in, std::vector<double>& params, std::size_t a) {
  std::fill(params.begin(), params.end(), 0.0);
  const std::size_t rows = params.size() / a;
  const std::uint64_t n = read_u64(in);
  for (std::uint64_t k = 0; k < n; ++k) {
    const std::uint64_t r = read_u64(in);
    if (r >= rows) throw DataError("toy policy checkpoint row out of range");
    if (!in.read(reinterpret_cast<char*>(params.data() + r * a), static_cast<std::streamsize>(a * sizeof(double)))) {
      throw DataError("truncated toy policy checkpoint");
    }
  }
}

}  // namespace

void ToyPolicy::save(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  const nlohmann::json header = config_;
  out << kMagic << header.dump() << '\n';
  write_rows(out, theta_, actions());
  write_rows(out, reference_, actions());
  if (!out) throw DataError("failed writing " + path);
}

void ToyPolicy::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::string magic(sizeof kMagic - 1, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kMagic) throw DataError(path + " is not a toy policy checkpoint");
  std::string line;
  std::getline(in, line);
  ToyPolicyConfig c;
  try {
    const auto h = nlohmann::json::parse(line);
    for (const char* key : {"vocabulary", "context_window", "buckets", "seed", "init_scale"}) {
      if (!h.contains(key)) throw DataError(path + ": checkpoint header lacks " + key);
    }
    c = h.get<ToyPolicyConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad checkpoint header: " + e.what());
  }
  c.validate();
  const std::size_t a = c.vocabulary.size() + 1;
  std::vector<double> theta(c.buckets * a), reference(c.buckets * a);
  read_rows(in, theta, a);
  read_rows(in, reference, a);
  config_ = std::move(c);
  theta_ = std::move(theta);
  reference_ = std::move(reference);
}

void to_json(nlohmann::json& j, const ToyPolicyConfig& c) {
  j = nlohmann::json{{"vocabulary", c.vocabulary},
                     {"context_window", c.context_window},
                     {"buckets", c.buckets},
                     {"seed", c.seed},
                     {"init_scale", c.init_scale}};
}

void from_json(const nlohmann::json& j, ToyPolicyConfig& c) {
  c.vocabulary = j.value("vocabulary", c.vocabulary);
  c.context_window = j.value("context_window", c.context_window);
  c.buckets = j.value("buckets", c.buckets);
  c.seed = j.value("seed", c.seed);
  c.init_scale = j.value("init_scale", c.init_scale);
}

}  // namespace utrl
