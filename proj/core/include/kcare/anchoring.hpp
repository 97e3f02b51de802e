#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kcare/gateway.hpp"
#include "kcare/types.hpp"

namespace kcare {

struct RankedListSource {
  enum class Kind { live_search, log_file };
  Kind kind = Kind::log_file;
  std::string address;  // URL (live) or file path (log)
  int top_k = 10;
};

struct ClickRecord {
  std::string query_text;
  std::string product_id;
  long clicks = 0;
};

/// Click-through log, indexed by product. (query_text, product_id) must be
/// unique; the loader rejects duplicates and negative counts.
class ClickLog {
public:
  ClickLog() = default;
  explicit ClickLog(std::vector<ClickRecord> records);

  static ClickLog load(const std::filesystem::path& path);

  long total_clicks(const std::string& product_id) const;
  /// Clicked queries for a product, ordered by click count descending, ties
  /// by ascending query text.
  std::vector<std::pair<std::string, long>> queries_for(const std::string& product_id) const;

  const std::vector<ClickRecord>& records() const { return records_; }

private:
  std::vector<ClickRecord> records_;
  std::map<std::string, std::vector<std::pair<std::string, long>>> by_product_;
};

enum class QueryAnchorSource { ranking, none };
enum class ProductAnchorSource { clicks, p2q, mixed, none };

std::string_view to_string(QueryAnchorSource source);
std::string_view to_string(ProductAnchorSource source);

struct QueryAnchor {
  std::string product_title;
  int rank = 0;  // 1-based
};

struct QueryAnchors {
  std::string query_id;
  std::vector<QueryAnchor> anchors;
  QueryAnchorSource source = QueryAnchorSource::none;
};

struct ProductAnchor {
  std::string query_text;
  double weight = 0.0;
};

struct ProductAnchors {
  std::string product_id;
  std::vector<ProductAnchor> anchors;
  ProductAnchorSource source = ProductAnchorSource::none;
};

/// A pair plus whatever anchors were acquired for its two sides.
struct AnchoredPair {
  LabeledPair pair;
  std::optional<QueryAnchors> query_anchors;
  std::optional<ProductAnchors> product_anchors;
};

/// Resolves a RankedListSource once (loads the log file, or holds the live
/// address) so per-query acquisition is cheap.
class RankedSource {
public:
  static RankedSource open(const RankedListSource& config);

  /// Up to top_k titles in rank order; empty result -> source=none, never an
  /// error.
  QueryAnchors acquire(const Query& query) const;

private:
  RankedListSource config_;
  std::map<std::string, std::vector<std::string>> log_;  // query_text -> titles
};

QueryAnchors acquire_query_anchors(const Query& query, const RankedSource& source);

struct ProductAnchorOptions {
  long min_clicks = 3;
  int max_queries = 6;
  bool allow_mixed = false;  // pad click anchors with P2Q output
};

ProductAnchors acquire_product_anchors(const Product& product, const ClickLog& log,
                                       const Gateway& gateway, const ModelEndpoint& p2q,
                                       const ProductAnchorOptions& options);

struct CoverageReport {
  std::size_t pair_count = 0;
  bool empty_input = false;
  double query_fraction = 0.0;
  double product_fraction = 0.0;
  double both_fraction = 0.0;
  std::map<std::string, std::size_t> query_sources;
  std::map<std::string, std::size_t> product_sources;
};

/// Throws KeyMismatch when an anchor set references an id absent from pairs.
CoverageReport anchor_coverage_report(
    const std::vector<LabeledPair>& pairs,
    const std::map<std::string, QueryAnchors>& query_anchors,
    const std::map<std::string, ProductAnchors>& product_anchors);

void save_query_anchors(const std::filesystem::path& path,
                        const std::vector<QueryAnchors>& anchors);
std::map<std::string, QueryAnchors> load_query_anchors(const std::filesystem::path& path);

void save_product_anchors(const std::filesystem::path& path,
                          const std::vector<ProductAnchors>& anchors);
std::map<std::string, ProductAnchors> load_product_anchors(const std::filesystem::path& path);

} // namespace kcare
