#include "kcare/anchoring.hpp"

#include <algorithm>
#include <iostream>
#include <set>
#include <sstream>

#include "httplib.h"
#include "jsonl.hpp"
#include "kcare/errors.hpp"

namespace kcare {

namespace {

void log_warn(const std::string& message) {
  std::cerr << "[kcare warn] " << message << "\n";
}

std::vector<std::string> live_ranked_titles(const std::string& address,
                                            const std::string& query_text) {
  auto scheme_end = address.find("://");
  if (scheme_end == std::string::npos) {
    fail(Errc::config, "live_search address missing scheme: " + address);
  }
  auto path_start = address.find('/', scheme_end + 3);
  std::string base = path_start == std::string::npos ? address : address.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : address.substr(path_start);

  httplib::Client client(base);
  json body = {{"query_text", query_text}};
  auto result = client.Post(path, body.dump(), "application/json");
  if (!result || result->status != 200) {
    fail(Errc::transport, "live search request failed for query '" + query_text + "'");
  }
  json parsed = json::parse(result->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("ranked_product_titles") ||
      !parsed["ranked_product_titles"].is_array()) {
    fail(Errc::transport, "live search response malformed for query '" + query_text + "'");
  }
  std::vector<std::string> titles;
  for (const auto& title : parsed["ranked_product_titles"]) {
    titles.push_back(title.get<std::string>());
  }
  return titles;
}

std::vector<std::string> parse_p2q_lines(const std::string& text, int max_queries) {
  std::vector<std::string> queries;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line) && static_cast<int>(queries.size()) < max_queries) {
    std::string q = trimmed(line);
    if (!q.empty()) queries.push_back(std::move(q));
  }
  return queries;
}

} // namespace

std::string_view to_string(QueryAnchorSource source) {
  switch (source) {
    case QueryAnchorSource::ranking: return "ranking";
    case QueryAnchorSource::none: return "none";
  }
  return "none";
}

std::string_view to_string(ProductAnchorSource source) {
  switch (source) {
    case ProductAnchorSource::clicks: return "clicks";
    case ProductAnchorSource::p2q: return "p2q";
    case ProductAnchorSource::mixed: return "mixed";
    case ProductAnchorSource::none: return "none";
  }
  return "none";
}

ClickLog::ClickLog(std::vector<ClickRecord> records) : records_(std::move(records)) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& record : records_) {
    if (record.clicks < 0) {
      fail(Errc::invalid_input, "click count negative for (" + record.query_text + ", " +
                                    record.product_id + ")");
    }
    if (!seen.emplace(record.query_text, record.product_id).second) {
      fail(Errc::invalid_input, "duplicate click record (" + record.query_text + ", " +
                                    record.product_id + ")");
    }
    by_product_[record.product_id].emplace_back(record.query_text, record.clicks);
  }
  for (auto& [product_id, queries] : by_product_) {
    std::sort(queries.begin(), queries.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
  }
}

ClickLog ClickLog::load(const std::filesystem::path& path) {
  std::vector<ClickRecord> records;
  for (const auto& row : read_jsonl(path)) {
    ClickRecord record;
    record.query_text = row.value("query_text", "");
    record.product_id = row.value("product_id", "");
    record.clicks = row.value("clicks", 0L);
    records.push_back(std::move(record));
  }
  return ClickLog(std::move(records));
}

long ClickLog::total_clicks(const std::string& product_id) const {
  auto it = by_product_.find(product_id);
  if (it == by_product_.end()) return 0;
  long total = 0;
  for (const auto& [_, clicks] : it->second) total += clicks;
  return total;
}

std::vector<std::pair<std::string, long>> ClickLog::queries_for(
    const std::string& product_id) const {
  auto it = by_product_.find(product_id);
  if (it == by_product_.end()) return {};
  return it->second;
}

RankedSource RankedSource::open(const RankedListSource& config) {
  if (config.top_k < 1) {
    fail(Errc::config, "ranked source top_k must be >= 1");
  }
  RankedSource source;
  source.config_ = config;
  if (config.kind == RankedListSource::Kind::log_file) {
    for (const auto& row : read_jsonl(config.address)) {
      std::vector<std::string> titles;
      if (row.contains("ranked_product_titles") && row["ranked_product_titles"].is_array()) {
        for (const auto& title : row["ranked_product_titles"]) {
          titles.push_back(title.get<std::string>());
        }
      }
      // Later lines for the same query replace earlier ones.
      source.log_[row.value("query_text", "")] = std::move(titles);
    }
  }
  return source;
}

QueryAnchors RankedSource::acquire(const Query& query) const {
  std::vector<std::string> titles;
  if (config_.kind == RankedListSource::Kind::log_file) {
    auto it = log_.find(query.text);
    if (it != log_.end()) titles = it->second;
  } else {
    titles = live_ranked_titles(config_.address, query.text);
  }

  QueryAnchors anchors;
  anchors.query_id = query.id;
  int limit = std::min<int>(config_.top_k, static_cast<int>(titles.size()));
  for (int i = 0; i < limit; ++i) {
    anchors.anchors.push_back(QueryAnchor{titles[static_cast<std::size_t>(i)], i + 1});
  }
  anchors.source =
      anchors.anchors.empty() ? QueryAnchorSource::none : QueryAnchorSource::ranking;
  return anchors;
}

QueryAnchors acquire_query_anchors(const Query& query, const RankedSource& source) {
  return source.acquire(query);
}

ProductAnchors acquire_product_anchors(const Product& product, const ClickLog& log,
                                       const Gateway& gateway, const ModelEndpoint& p2q,
                                       const ProductAnchorOptions& options) {
  if (options.max_queries < 1) {
    fail(Errc::config, "max_queries must be >= 1");
  }
  ProductAnchors anchors;
  anchors.product_id = product.id;

  bool has_clicks = log.total_clicks(product.id) >= options.min_clicks;
  if (has_clicks) {
    auto queries = log.queries_for(product.id);
    int limit = std::min<int>(options.max_queries, static_cast<int>(queries.size()));
    for (int i = 0; i < limit; ++i) {
      anchors.anchors.push_back(
          ProductAnchor{queries[static_cast<std::size_t>(i)].first,
                        static_cast<double>(queries[static_cast<std::size_t>(i)].second)});
    }
    anchors.source = ProductAnchorSource::clicks;
    if (!options.allow_mixed ||
        static_cast<int>(anchors.anchors.size()) >= options.max_queries) {
      return anchors;
    }
  }

  // P2Q fallback (or padding when mixed mode is on). Failures degrade to
  // whatever we already have; they never surface as errors.
  std::vector<std::string> predicted;
  try {
    std::string user = "product: " + product.title;
    std::string attrs = render_attributes(product);
    if (!attrs.empty()) user += "\nattributes: " + attrs;
    auto response = gateway.complete(
        p2q, "Predict the search queries a customer would use to find this product. "
             "Output one query per line.",
        user);
    predicted = parse_p2q_lines(response.text, options.max_queries);
  } catch (const Error& e) {
    log_warn("p2q call failed for product '" + product.id + "': " + e.what());
    predicted.clear();
  }

  if (has_clicks) {
    std::set<std::string> present;
    for (const auto& anchor : anchors.anchors) present.insert(anchor.query_text);
    for (const auto& query : predicted) {
      if (static_cast<int>(anchors.anchors.size()) >= options.max_queries) break;
      if (present.insert(query).second) {
        anchors.anchors.push_back(ProductAnchor{query, 0.0});
      }
    }
    anchors.source = ProductAnchorSource::mixed;
    return anchors;
  }

  if (predicted.empty()) {
    anchors.source = ProductAnchorSource::none;
    return anchors;
  }
  for (const auto& query : predicted) {
    anchors.anchors.push_back(ProductAnchor{query, 0.0});
  }
  anchors.source = ProductAnchorSource::p2q;
  return anchors;
}

CoverageReport anchor_coverage_report(
    const std::vector<LabeledPair>& pairs,
    const std::map<std::string, QueryAnchors>& query_anchors,
    const std::map<std::string, ProductAnchors>& product_anchors) {
  std::set<std::string> query_ids;
  std::set<std::string> product_ids;
  for (const auto& pair : pairs) {
    query_ids.insert(pair.query.id);
    product_ids.insert(pair.product.id);
  }
  for (const auto& [id, _] : query_anchors) {
    if (!query_ids.contains(id)) {
      fail(Errc::key_mismatch, "query anchors reference unknown query_id '" + id + "'");
    }
  }
  for (const auto& [id, _] : product_anchors) {
    if (!product_ids.contains(id)) {
      fail(Errc::key_mismatch, "product anchors reference unknown product_id '" + id + "'");
    }
  }

  CoverageReport report;
  report.pair_count = pairs.size();
  if (pairs.empty()) {
    report.empty_input = true;
    return report;
  }

  std::size_t with_query = 0;
  std::size_t with_product = 0;
  std::size_t with_both = 0;
  for (const auto& pair : pairs) {
    auto qit = query_anchors.find(pair.query.id);
    auto pit = product_anchors.find(pair.product.id);
    bool q = qit != query_anchors.end() && !qit->second.anchors.empty();
    bool p = pit != product_anchors.end() && !pit->second.anchors.empty();
    if (q) ++with_query;
    if (p) ++with_product;
    if (q && p) ++with_both;
    std::string qsource = qit == query_anchors.end()
                              ? std::string(to_string(QueryAnchorSource::none))
                              : std::string(to_string(qit->second.source));
    std::string psource = pit == product_anchors.end()
                              ? std::string(to_string(ProductAnchorSource::none))
                              : std::string(to_string(pit->second.source));
    ++report.query_sources[qsource];
    ++report.product_sources[psource];
  }
  auto total = static_cast<double>(pairs.size());
  report.query_fraction = static_cast<double>(with_query) / total;
  report.product_fraction = static_cast<double>(with_product) / total;
  report.both_fraction = static_cast<double>(with_both) / total;
  return report;
}

void save_query_anchors(const std::filesystem::path& path,
                        const std::vector<QueryAnchors>& anchors) {
  std::vector<json> rows;
  rows.reserve(anchors.size());
  for (const auto& entry : anchors) {
    json list = json::array();
    for (const auto& anchor : entry.anchors) {
      list.push_back({{"product_title", anchor.product_title}, {"rank", anchor.rank}});
    }
    rows.push_back({{"query_id", entry.query_id},
                    {"source", std::string(to_string(entry.source))},
                    {"anchors", std::move(list)}});
  }
  write_jsonl(path, rows);
}

std::map<std::string, QueryAnchors> load_query_anchors(const std::filesystem::path& path) {
  std::map<std::string, QueryAnchors> anchors;
  for (const auto& row : read_jsonl(path)) {
    QueryAnchors entry;
    entry.query_id = row.value("query_id", "");
    entry.source = row.value("source", "none") == "ranking" ? QueryAnchorSource::ranking
                                                            : QueryAnchorSource::none;
    if (row.contains("anchors")) {
      for (const auto& anchor : row["anchors"]) {
        entry.anchors.push_back(
            QueryAnchor{anchor.value("product_title", ""), anchor.value("rank", 0)});
      }
    }
    anchors[entry.query_id] = std::move(entry);
  }
  return anchors;
}

void save_product_anchors(const std::filesystem::path& path,
                          const std::vector<ProductAnchors>& anchors) {
  std::vector<json> rows;
  rows.reserve(anchors.size());
  for (const auto& entry : anchors) {
    json list = json::array();
    for (const auto& anchor : entry.anchors) {
      list.push_back({{"query_text", anchor.query_text}, {"weight", anchor.weight}});
    }
    rows.push_back({{"product_id", entry.product_id},
                    {"source", std::string(to_string(entry.source))},
                    {"anchors", std::move(list)}});
  }
  write_jsonl(path, rows);
}

std::map<std::string, ProductAnchors> load_product_anchors(const std::filesystem::path& path) {
  std::map<std::string, ProductAnchors> anchors;
  for (const auto& row : read_jsonl(path)) {
    ProductAnchors entry;
    entry.product_id = row.value("product_id", "");
    std::string source = row.value("source", "none");
    if (source == "clicks") entry.source = ProductAnchorSource::clicks;
    else if (source == "p2q") entry.source = ProductAnchorSource::p2q;
    else if (source == "mixed") entry.source = ProductAnchorSource::mixed;
    else entry.source = ProductAnchorSource::none;
    if (row.contains("anchors")) {
      for (const auto& anchor : row["anchors"]) {
        entry.anchors.push_back(
            ProductAnchor{anchor.value("query_text", ""), anchor.value("weight", 0.0)});
      }
    }
    anchors[entry.product_id] = std::move(entry);
  }
  return anchors;
}

} // namespace kcare
