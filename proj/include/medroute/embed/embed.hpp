#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "medroute/core/types.hpp"
#include "medroute/numerics/tensor.hpp"

namespace medroute::embed {

struct EmbedConfig {
  std::size_t dim = 64;
  std::uint64_t hash_seed = 0x5EED;

  void validate() const;

  friend bool operator==(const EmbedConfig&, const EmbedConfig&) = default;
};

enum class EmbeddingKind { kTask, kRole, kHistory };

struct Embedding {
  numerics::Tensor vector;
  EmbeddingKind kind = EmbeddingKind::kTask;
};

/// Lowercased alphanumeric unigrams followed by adjacent-pair bigrams.
std::vector<std::string> tokenize(std::string_view text);

/// Signed feature hashing: each token adds ±1 at a hashed coordinate; the result is
/// L2-normalized. Text without tokens maps to the exact zero vector.
Embedding hash_embed(std::string_view text, const EmbedConfig& cfg,
                     EmbeddingKind kind = EmbeddingKind::kTask);

/// Question followed by the caption, when one exists.
Embedding task_embed(const core::Case& c, const EmbedConfig& cfg);
Embedding role_embed(const core::Specialist& s, const EmbedConfig& cfg);
Embedding history_embed(const core::DiagnosticRecord& record, const EmbedConfig& cfg,
                        std::size_t max_chars);

double cosine(const Embedding& a, const Embedding& b);

}  // namespace medroute::embed
