#include "kcare/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

#include "jsonl.hpp"
#include "kcare/errors.hpp"
#include "kcare/hash.hpp"
#include "kcare/worker_pool.hpp"

namespace kcare {

std::string embedding_text(const Query& query, const Product& product) {
  return "query: " + query.text + "\nproduct: " + product.title +
         "\nattributes: " + render_attributes(product);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    fail(Errc::dimension_mismatch, "cosine over dims " + std::to_string(a.dim()) + " and " +
                                       std::to_string(b.dim()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) {
    fail(Errc::zero_vector, "cosine undefined for a zero vector");
  }
  // Identical vectors can land an ulp past 1.0; the true value never does.
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

PrototypeIndex PrototypeIndex::build(const Repository& repo, const Gateway& gateway,
                                     const ModelEndpoint& embedder, int workers,
                                     double abort_fraction) {
  if (embedder.role != ModelRole::embedder) {
    fail(Errc::config, "index build requires an endpoint with role embedder");
  }
  PrototypeIndex index;
  index.version_ = sha256_hex(repo.version + '\x1f' + embedder.name);
  index.dim_ = embedder.embedding_dim;
  if (repo.prototypes.empty()) {
    std::cerr << "[kcare warn] building index over an empty repository\n";
    return index;
  }

  auto results = parallel_map(repo.prototypes, workers,
                              [&](const Prototype& proto, std::size_t) {
                                return gateway.embed(
                                    embedder, embedding_text(proto.query, proto.product));
                              });
  std::size_t failures = 0;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < repo.prototypes.size(); ++i) {
    if (results[i].failed()) {
      ++failures;
      continue;
    }
    if (results[i].value->dim() != index.dim_) {
      fail(Errc::dimension_mismatch,
           "embedder returned dim " + std::to_string(results[i].value->dim()) +
               ", index expects " + std::to_string(index.dim_));
    }
    if (!ids.insert(repo.prototypes[i].id).second) {
      fail(Errc::invariant, "duplicate prototype id '" + repo.prototypes[i].id + "'");
    }
    index.entries_.push_back(IndexEntry{repo.prototypes[i].id, std::move(*results[i].value)});
  }
  enforce_abort_threshold(failures, repo.prototypes.size(), abort_fraction, "index-build");
  return index;
}

void PrototypeIndex::save(const std::filesystem::path& path) const {
  std::vector<json> rows;
  rows.reserve(entries_.size() + 1);
  rows.push_back({{"dim", dim_}, {"version", version_}});
  for (const auto& entry : entries_) {
    rows.push_back({{"prototype_id", entry.prototype_id}, {"vector", entry.vector.values}});
  }
  write_jsonl(path, rows);
}

PrototypeIndex PrototypeIndex::load(const std::filesystem::path& path) {
  auto rows = read_jsonl(path);
  if (rows.empty()) {
    fail(Errc::invalid_input, path.string() + ": index file lacks its header record");
  }
  PrototypeIndex index;
  index.dim_ = rows.front().value("dim", 0);
  index.version_ = rows.front().value("version", "");
  if (index.dim_ < 1 || index.version_.empty()) {
    fail(Errc::invalid_input, path.string() + ": malformed index header");
  }
  std::set<std::string> ids;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    IndexEntry entry;
    entry.prototype_id = rows[i].value("prototype_id", "");
    if (!rows[i].contains("vector") || !rows[i]["vector"].is_array()) {
      fail(Errc::invalid_input, path.string() + ": entry " + std::to_string(i) +
                                    " lacks a vector");
    }
    entry.vector.values = rows[i]["vector"].get<std::vector<double>>();
    if (entry.vector.dim() != index.dim_) {
      fail(Errc::dimension_mismatch, path.string() + ": entry " + std::to_string(i) +
                                         " has dim " + std::to_string(entry.vector.dim()));
    }
    if (!ids.insert(entry.prototype_id).second) {
      fail(Errc::invariant,
           path.string() + ": duplicate prototype id '" + entry.prototype_id + "'");
    }
    index.entries_.push_back(std::move(entry));
  }
  return index;
}

std::vector<RetrievalHit> retrieve_by_vector(const EmbeddingVector& probe,
                                             const PrototypeIndex& index, int k) {
  if (k < 1) fail(Errc::config, "retrieve requires k >= 1");
  if (index.empty()) fail(Errc::empty_index, "retrieve over an empty index");

  std::vector<RetrievalHit> hits;
  hits.reserve(index.entries().size());
  for (const auto& entry : index.entries()) {
    hits.push_back(RetrievalHit{entry.prototype_id, cosine_similarity(probe, entry.vector)});
  }
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.prototype_id < b.prototype_id;
  });
  if (static_cast<std::size_t>(k) < hits.size()) {
    hits.resize(static_cast<std::size_t>(k));
  }
  return hits;
}

std::vector<RetrievalHit> retrieve(const LabeledPair& pair, const PrototypeIndex& index,
                                   const Gateway& gateway, const ModelEndpoint& embedder,
                                   int k) {
  EmbeddingVector probe = gateway.embed(embedder, embedding_text(pair.query, pair.product));
  return retrieve_by_vector(probe, index, k);
}

} // namespace kcare
