#include "medroute/embed/embed.hpp"

#include <cctype>
#include <cmath>

#include "medroute/core/error.hpp"
#include "medroute/core/random.hpp"

namespace medroute::embed {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ core::splitmix64(seed);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return core::splitmix64(h);
}

}  // namespace

void EmbedConfig::validate() const {
  if (dim < 8) throw ConfigError("embedding dim must be at least 8");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> unigrams;
  std::string current;
  for (unsigned char c : text) {
    // Bytes >= 0x80 belong to multi-byte UTF-8 sequences and stay inside tokens.
    if (std::isalnum(c) || c >= 0x80) {
      current += static_cast<char>(std::tolower(c));
    } else if (!current.empty()) {
      unigrams.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) unigrams.push_back(std::move(current));

  std::vector<std::string> tokens = unigrams;
  for (std::size_t i = 0; i + 1 < unigrams.size(); ++i)
    tokens.push_back(unigrams[i] + '\x1f' + unigrams[i + 1]);
  return tokens;
}

Embedding hash_embed(std::string_view text, const EmbedConfig& cfg, EmbeddingKind kind) {
  cfg.validate();
  std::vector<double> acc(cfg.dim, 0.0);
  const std::uint64_t index_seed = cfg.hash_seed;
  const std::uint64_t sign_seed = cfg.hash_seed ^ 0xA5A5A5A5DEADBEEFULL;
  for (const auto& tok : tokenize(text)) {
    const auto idx = static_cast<std::size_t>(fnv1a(tok, index_seed) % cfg.dim);
    const double sign = (fnv1a(tok, sign_seed) & 1U) ? 1.0 : -1.0;
    acc[idx] += sign;
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);

  Embedding e{numerics::Tensor({cfg.dim}), kind};
  // n unigrams give 2n-1 tokens; an odd count of ±1 terms can never cancel to zero.
  if (norm > 0.0)
    for (std::size_t i = 0; i < cfg.dim; ++i) e.vector[i] = static_cast<float>(acc[i] / norm);
  return e;
}

Embedding task_embed(const core::Case& c, const EmbedConfig& cfg) {
  std::string text = c.question;
  if (c.caption) text += " " + *c.caption;
  return hash_embed(text, cfg, EmbeddingKind::kTask);
}

Embedding role_embed(const core::Specialist& s, const EmbedConfig& cfg) {
  return hash_embed(s.role_name + " " + s.responsibility, cfg, EmbeddingKind::kRole);
}

Embedding history_embed(const core::DiagnosticRecord& record, const EmbedConfig& cfg,
                        std::size_t max_chars) {
  return hash_embed(core::render_history(record, max_chars), cfg, EmbeddingKind::kHistory);
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.vector.size() != b.vector.size()) throw numerics::ShapeError("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) {
    dot += static_cast<double>(a.vector[i]) * b.vector[i];
    na += static_cast<double>(a.vector[i]) * a.vector[i];
    nb += static_cast<double>(b.vector[i]) * b.vector[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace medroute::embed
