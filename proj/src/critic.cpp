#include "utrl/critic.hpp"

#include <cctype>
#include <cmath>

#include "utrl/errors.hpp"
#include "utrl/rng.hpp"
#include "utrl/text.hpp"

namespace utrl {

namespace {

bool word_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

void normalize(std::vector<double>& x) {
  double n = 0.0;
  for (double v : x) n += v * v;
  if (n == 0.0) return;
  n = std::sqrt(n);
  for (double& v : x) v /= n;
}

double activate(Activation a, double z) { return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

double activate_grad(Activation a, double z) {
  if (a == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(z);
  return 1.0 - t * t;
}

void check_targets(std::span<const double> targets) {
  for (double r : targets) {
    if (!std::isfinite(r)) throw NumericError("non-finite reward in critic batch");
  }
}

}  // namespace

void CriticConfig::validate() const {
  if (feature_dim == 0) throw ConfigError("critic feature_dim must be positive");
  if (head == CriticHead::mlp && hidden == 0) throw ConfigError("critic hidden size must be positive");
}

std::vector<std::string> critic_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (word_char(c)) {
      std::size_t j = i;
      while (j < text.size() && word_char(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, text[i]);
      ++i;
    }
  }
  return out;
}

std::vector<double> hashed_features(const std::string& prompt, const std::string& solution, std::size_t dim) {
  std::vector<double> x(dim, 0.0);
  for (const auto& t : critic_tokens(prompt)) x[fnv1a("q:" + t) % dim] += 1.0;
  for (const auto& t : critic_tokens(solution)) x[fnv1a("s:" + t) % dim] += 1.0;
  normalize(x);
  return x;
}

std::vector<double> fold_embedding(std::span<const double> embedding, std::size_t dim) {
  std::vector<double> x(dim, 0.0);
  for (std::size_t i = 0; i < embedding.size(); ++i) {
    if (!std::isfinite(embedding[i])) throw NumericError("non-finite embedding value");
    x[i % dim] += embedding[i];
  }
  normalize(x);
  return x;
}

Critic::Critic(CriticConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.head == CriticHead::mlp) {
    const std::size_t h = config_.hidden, d = config_.feature_dim;
    w1_.resize(h * d);
    b1_.assign(h, 0.0);
    w2_.assign(h, 0.0);
    Rng rng = substream(config_.seed, "critic-init");
    for (double& w : w1_) {
      double u1 = 1.0 - uniform01(rng), u2 = uniform01(rng);
      w = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
  } else {
    w2_.assign(config_.feature_dim, 0.0);
  }
}

std::vector<double> Critic::features(const std::string& prompt, const std::string& solution,
                                     std::span<const double> embedding) const {
  if (!embedding.empty()) return fold_embedding(embedding, config_.feature_dim);
  return hashed_features(prompt, solution, config_.feature_dim);
}

double Critic::forward(std::span<const double> x, std::vector<double>* hidden_pre) const {
  if (x.size() != config_.feature_dim) throw DataError("critic input has the wrong dimension");
  if (config_.head == CriticHead::linear) {
    double y = b2_;
    for (std::size_t i = 0; i < x.size(); ++i) y += w2_[i] * x[i];
    return y;
  }
  const std::size_t h = config_.hidden, d = config_.feature_dim;
  std::vector<double> local;
  std::vector<double>& z = hidden_pre ? *hidden_pre : local;
  z.assign(h, 0.0);
  double y = b2_;
  for (std::size_t j = 0; j < h; ++j) {
    const double* row = w1_.data() + j * d;
    double s = b1_[j];
    for (std::size_t i = 0; i < d; ++i) s += row[i] * x[i];
    z[j] = s;
    y += w2_[j] * activate(config_.activation, s);
  }
  return y;
}

double Critic::score_features(std::span<const double> x) const { return forward(x, nullptr); }

double Critic::score(const std::string& prompt, const std::string& solution, std::span<const double> embedding) const {
  return score_features(features(prompt, solution, embedding));
}

double Critic::loss_features(const std::vector<std::vector<double>>& xs, std::span<const double> targets) const {
  if (xs.size() != targets.size()) throw DataError("critic batch size mismatch");
  if (xs.empty()) throw DataError("critic batch is empty");
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = score_features(xs[i]) - targets[i];
    loss += e * e;
  }
  return loss / static_cast<double>(xs.size());
}

double Critic::update_features(const std::vector<std::vector<double>>& xs, std::span<const double> targets,
                               double learning_rate) {
  if (xs.size() != targets.size()) throw DataError("critic batch size mismatch");
  if (xs.empty()) throw DataError("critic batch is empty");
  check_targets(targets);
  if (!(learning_rate > 0.0 && std::isfinite(learning_rate))) throw ConfigError("critic learning rate must be positive");
  const double n = static_cast<double>(xs.size());
  const std::size_t d = config_.feature_dim;

  std::vector<double> g_w1(w1_.size(), 0.0), g_b1(b1_.size(), 0.0), g_w2(w2_.size(), 0.0);
  double g_b2 = 0.0, loss = 0.0;
  std::vector<double> z;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& x = xs[k];
    const double y = forward(x, &z);
    const double e = y - targets[k];
    loss += e * e;
    const double dy = 2.0 * e / n;
    g_b2 += dy;
    if (config_.head == CriticHead::linear) {
      for (std::size_t i = 0; i < d; ++i) g_w2[i] += dy * x[i];
      continue;
    }
    for (std::size_t j = 0; j < config_.hidden; ++j) {
      g_w2[j] += dy * activate(config_.activation, z[j]);
      const double dz = dy * w2_[j] * activate_grad(config_.activation, z[j]);
      if (dz == 0.0) continue;
      g_b1[j] += dz;
      double* row = g_w1.data() + j * d;
      for (std::size_t i = 0; i < d; ++i) row[i] += dz * x[i];
    }
  }
  loss /= n;
  if (!std::isfinite(loss)) throw NumericError("critic loss is not finite");
  for (std::size_t i = 0; i < w1_.size(); ++i) w1_[i] -= learning_rate * g_w1[i];
  for (std::size_t i = 0; i < b1_.size(); ++i) b1_[i] -= learning_rate * g_b1[i];
  for (std::size_t i = 0; i < w2_.size(); ++i) w2_[i] -= learning_rate * g_w2[i];
  b2_ -= learning_rate * g_b2;
  return loss;
}

double Critic::update(std::span<const CriticSample> batch, double learning_rate) {
  if (batch.empty()) throw DataError("critic batch is empty");
  std::vector<std::vector<double>> xs;
  std::vector<double> targets;
  xs.reserve(batch.size());
  for (const auto& s : batch) {
    xs.push_back(features(s.prompt, s.solution, s.embedding));
    targets.push_back(s.reward);
  }
  return update_features(xs, targets, learning_rate);
}

std::vector<double> Critic::flat_parameters() const {
  std::vector<double> p(w1_);
  p.insert(p.end(), b1_.begin(), b1_.end());
  p.insert(p.end(), w2_.begin(), w2_.end());
  p.push_back(b2_);
  return p;
}

void Critic::set_flat_parameters(std::span<const double> p) {
  if (p.size() != w1_.size() + b1_.size() + w2_.size() + 1) throw DataError("critic parameter count mismatch");
  auto it = p.begin();
  for (double& w : w1_) w = *it++;
  for (double& w : b1_) w = *it++;
  for (double& w : w2_) w = *it++;
  b2_ = *it;
}

void Critic::save(const std::string& path) const {
  nlohmann::json j{{"config", config_}, {"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_}};
  write_file(path, j.dump() + "\n");
}

void Critic::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  try {
    Critic fresh(j.at("config").get<CriticConfig>());
    fresh.w1_ = j.at("w1").get<std::vector<double>>();
    fresh.b1_ = j.at("b1").get<std::vector<double>>();
    fresh.w2_ = j.at("w2").get<std::vector<double>>();
    fresh.b2_ = j.at("b2").get<double>();
    const bool mlp = fresh.config_.head == CriticHead::mlp;
    const std::size_t expect_w2 = mlp ? fresh.config_.hidden : fresh.config_.feature_dim;
    const std::size_t expect_w1 = mlp ? fresh.config_.hidden * fresh.config_.feature_dim : 0;
    if (fresh.w2_.size() != expect_w2 || fresh.w1_.size() != expect_w1 ||
        fresh.b1_.size() != (mlp ? fresh.config_.hidden : 0)) {
      throw DataError(path + ": parameter shapes do not match the stored config");
    }
    *this = std::move(fresh);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const CriticConfig& c) {
  j = nlohmann::json{{"feature_dim", c.feature_dim},
                     {"hidden", c.hidden},
                     {"activation", c.activation == Activation::relu ? "relu" : "tanh"},
                     {"head", c.head == CriticHead::mlp ? "mlp" : "linear"},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CriticConfig& c) {
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("activation")) {
    const auto a = j["activation"].get<std::string>();
    if (a == "relu") {
      c.activation = Activation::relu;
    } else if (a == "tanh") {
      c.activation = Activation::tanh;
    } else {
      throw ConfigError("critic activation must be 'relu' or 'tanh'");
    }
  }
  if (j.contains("head")) {
    const auto h = j["head"].get<std::string>();
    if (h == "mlp") {
      c.head = CriticHead::mlp;
    } else if (h == "linear") {
      c.head = CriticHead::linear;
    } else {
      throw ConfigError("critic head must be 'mlp' or 'linear'");
    }
  }
  c.seed = j.value("seed", c.seed);
}

}  // namespace utrl
