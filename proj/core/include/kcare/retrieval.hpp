#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kcare/forge.hpp"
#include "kcare/gateway.hpp"
#include "kcare/types.hpp"

namespace kcare {

/// Canonical text embedded for a pair: query, product title, and attributes
/// (the attributes line stays, empty, when a product has none).
std::string embedding_text(const Query& query, const Product& product);

/// dot(a,b) / (|a||b|). Throws DimensionMismatch on unequal dims, ZeroVector
/// when either norm is zero.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

struct IndexEntry {
  std::string prototype_id;
  EmbeddingVector vector;
};

/// Immutable brute-force similarity index over prototype embeddings. All
/// vectors share one dimension; ids are unique; the version binds the source
/// repository version and the embedder name.
class PrototypeIndex {
public:
  /// One vector per prototype. An empty repository produces an empty index
  /// with a logged warning rather than an error.
  static PrototypeIndex build(const Repository& repo, const Gateway& gateway,
                              const ModelEndpoint& embedder, int workers = 4,
                              double abort_fraction = 0.5);

  static PrototypeIndex load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::vector<IndexEntry>& entries() const { return entries_; }
  int dim() const { return dim_; }
  const std::string& version() const { return version_; }
  bool empty() const { return entries_.empty(); }

private:
  std::vector<IndexEntry> entries_;
  int dim_ = 0;
  std::string version_;
};

struct RetrievalHit {
  std::string prototype_id;
  double score = 0.0;
};

/// Top-k entries by cosine similarity to the probe vector, descending score,
/// ties by ascending prototype id. k past the index size returns everything.
/// Throws EmptyIndex on an empty index.
std::vector<RetrievalHit> retrieve_by_vector(const EmbeddingVector& probe,
                                             const PrototypeIndex& index, int k);

/// Embeds the pair's canonical text and retrieves its nearest prototypes.
std::vector<RetrievalHit> retrieve(const LabeledPair& pair, const PrototypeIndex& index,
                                   const Gateway& gateway, const ModelEndpoint& embedder,
                                   int k = 1);

} // namespace kcare
