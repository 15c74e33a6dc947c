#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hmgie/detail/json_extract.hpp"
#include "hmgie/error.hpp"

namespace hmgie {

using json = nlohmann::json;

/// Node identifier of the form "N<positive integer>".
class NodeId {
 public:
  NodeId() = default;
  explicit NodeId(std::string value) : value_(std::move(value)) {}

  const std::string& str() const noexcept { return value_; }

  static bool well_formed(std::string_view s) {
    if (s.size() < 2 || s[0] != 'N' || s[1] == '0') return false;
    return std::all_of(s.begin() + 1, s.end(),
                       [](unsigned char c) { return std::isdigit(c) != 0; });
  }

  friend auto operator<=>(const NodeId&, const NodeId&) = default;

 private:
  std::string value_;
};

/// Edges carry no id in the model schema; they are keyed by position.
using EdgeIndex = std::size_t;

enum class NodeKind { Entity, Location, Concept, Event, Attribute, Other };
enum class EdgeKind { Action, Spatial, HasAttribute, PartOf, Quantity, Other };

constexpr std::string_view to_string(NodeKind k) noexcept {
  switch (k) {
    case NodeKind::Entity: return "Entity";
    case NodeKind::Location: return "Location";
    case NodeKind::Concept: return "Concept";
    case NodeKind::Event: return "Event";
    case NodeKind::Attribute: return "Attribute";
    case NodeKind::Other: return "Other";
  }
  return "Other";
}

constexpr std::string_view to_string(EdgeKind k) noexcept {
  switch (k) {
    case EdgeKind::Action: return "Action";
    case EdgeKind::Spatial: return "Spatial";
    case EdgeKind::HasAttribute: return "HasAttribute";
    case EdgeKind::PartOf: return "PartOf";
    case EdgeKind::Quantity: return "Quantity";
    case EdgeKind::Other: return "Other";
  }
  return "Other";
}

namespace detail {

// "Has Attribute", "has_attribute" and "HasAttribute" all fold to "hasattribute".
inline std::string fold_kind(std::string_view s) {
  std::string out;
  for (const unsigned char c : s) {
    if (std::isalnum(c) != 0) out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

}  // namespace detail

inline std::optional<NodeKind> node_kind_from(std::string_view s) {
  const std::string k = detail::fold_kind(s);
  if (k == "entity") return NodeKind::Entity;
  if (k == "location") return NodeKind::Location;
  if (k == "concept") return NodeKind::Concept;
  if (k == "event") return NodeKind::Event;
  if (k == "attribute") return NodeKind::Attribute;
  if (k == "other" || k == "others") return NodeKind::Other;
  return std::nullopt;
}

inline std::optional<EdgeKind> edge_kind_from(std::string_view s) {
  const std::string k = detail::fold_kind(s);
  if (k == "action") return EdgeKind::Action;
  if (k == "spatial") return EdgeKind::Spatial;
  if (k == "hasattribute" || k == "attribute") return EdgeKind::HasAttribute;
  if (k == "partof") return EdgeKind::PartOf;
  if (k == "quantity") return EdgeKind::Quantity;
  if (k == "other" || k == "others") return EdgeKind::Other;
  return std::nullopt;
}

struct SemanticNode {
  NodeId id;
  NodeKind kind = NodeKind::Other;
  std::string label;

  friend bool operator==(const SemanticNode&, const SemanticNode&) = default;
};

struct SemanticEdge {
  NodeId from;
  NodeId to;
  EdgeKind kind = EdgeKind::Other;
  std::string label;
  std::string description;

  friend bool operator==(const SemanticEdge&, const SemanticEdge&) = default;
};

/// Typed graph of a caption's semantic elements. Only constructible through
/// `make`, which enforces id uniqueness, resolvable edges and non-emptiness.
class SemanticGraph {
 public:
  static SemanticGraph make(std::vector<SemanticNode> nodes, std::vector<SemanticEdge> edges,
                            std::string source_caption, Warnings* warnings = nullptr) {
    if (nodes.empty()) throw Error(ErrorCode::SchemaViolation, "semantic graph has no nodes");
    std::set<NodeId> seen;
    for (const auto& n : nodes) {
      if (!NodeId::well_formed(n.id.str())) {
        throw Error(ErrorCode::SchemaViolation, "node id '" + n.id.str() + "' is not N<int>");
      }
      if (n.label.empty()) {
        throw Error(ErrorCode::SchemaViolation, "node " + n.id.str() + " has an empty label");
      }
      if (!seen.insert(n.id).second) {
        throw Error(ErrorCode::DuplicateNodeId, "node id " + n.id.str() + " appears twice");
      }
    }
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const auto& e = edges[i];
      for (const NodeId* end : {&e.from, &e.to}) {
        if (!seen.contains(*end)) {
          throw Error(ErrorCode::DanglingEdge,
                      "edge " + std::to_string(i) + " references missing node " + end->str());
        }
      }
      if (e.from == e.to) {
        warn(warnings, "edge " + std::to_string(i) + " is a self-loop on " + e.from.str());
      }
    }
    SemanticGraph g;
    g.nodes_ = std::move(nodes);
    g.edges_ = std::move(edges);
    g.source_caption_ = std::move(source_caption);
    return g;
  }

  const std::vector<SemanticNode>& nodes() const noexcept { return nodes_; }
  const std::vector<SemanticEdge>& edges() const noexcept { return edges_; }
  const std::string& source_caption() const noexcept { return source_caption_; }

  const SemanticNode* find(const NodeId& id) const {
    const auto it = std::find_if(nodes_.begin(), nodes_.end(),
                                 [&](const SemanticNode& n) { return n.id == id; });
    return it == nodes_.end() ? nullptr : &*it;
  }

  friend bool operator==(const SemanticGraph&, const SemanticGraph&) = default;

 private:
  SemanticGraph() = default;

  std::vector<SemanticNode> nodes_;
  std::vector<SemanticEdge> edges_;
  std::string source_caption_;
};

/// Serializes to the graph-generation reply shape. Edge endpoints are written
/// as [id, label] pairs, as the prompt shows them.
inline json to_json(const SemanticGraph& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes()) {
    nodes.push_back({{"id", n.id.str()}, {"type", to_string(n.kind)}, {"label", n.label}});
  }
  json edges = json::array();
  for (const auto& e : g.edges()) {
    const auto endpoint = [&](const NodeId& id) {
      return json::array({id.str(), g.find(id)->label});
    };
    edges.push_back({{"from", endpoint(e.from)},
                     {"to", endpoint(e.to)},
                     {"type", to_string(e.kind)},
                     {"label", e.label},
                     {"description", e.description}});
  }
  return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

namespace detail {

inline const json& require(const json& obj, const char* key, std::string_view where) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(ErrorCode::SchemaViolation, std::string(where) + " is missing \"" + key + "\"");
  }
  return *it;
}

inline std::string require_string(const json& obj, const char* key, std::string_view where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) {
    throw Error(ErrorCode::SchemaViolation,
                std::string(where) + " field \"" + key + "\" must be a string");
  }
  return v.get<std::string>();
}

inline NodeId endpoint_id(const json& v, std::string_view where) {
  if (v.is_string()) return NodeId(v.get<std::string>());
  if (v.is_array() && !v.empty() && v[0].is_string()) return NodeId(v[0].get<std::string>());
  throw Error(ErrorCode::SchemaViolation,
              std::string(where) + " endpoint must be an id or an [id, label] pair");
}

}  // namespace detail

/// Types and validates a structured graph payload (already extracted).
inline SemanticGraph semantic_graph_from_json(const json& payload, std::string caption,
                                              Warnings* warnings = nullptr) {
  if (!payload.is_object()) throw Error(ErrorCode::SchemaViolation, "graph payload not an object");
  const json& jnodes = detail::require(payload, "nodes", "graph");
  if (!jnodes.is_array()) throw Error(ErrorCode::SchemaViolation, "\"nodes\" must be an array");

  std::vector<SemanticNode> nodes;
  for (std::size_t i = 0; i < jnodes.size(); ++i) {
    const json& jn = jnodes[i];
    const std::string where = "node " + std::to_string(i);
    if (!jn.is_object()) throw Error(ErrorCode::SchemaViolation, where + " is not an object");
    SemanticNode n;
    n.id = NodeId(detail::require_string(jn, "id", where));
    const std::string type = detail::require_string(jn, "type", where);
    n.label = detail::require_string(jn, "label", where);
    if (const auto kind = node_kind_from(type)) {
      n.kind = *kind;
    } else {
      warn(warnings, where + ": unknown node type '" + type + "' mapped to Other");
    }
    nodes.push_back(std::move(n));
  }

  std::vector<SemanticEdge> edges;
  if (const auto it = payload.find("edges"); it != payload.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(ErrorCode::SchemaViolation, "\"edges\" must be an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& je = (*it)[i];
      const std::string where = "edge " + std::to_string(i);
      if (!je.is_object()) throw Error(ErrorCode::SchemaViolation, where + " is not an object");
      SemanticEdge e;
      e.from = detail::endpoint_id(detail::require(je, "from", where), where);
      e.to = detail::endpoint_id(detail::require(je, "to", where), where);
      const std::string type = detail::require_string(je, "type", where);
      e.label = detail::require_string(je, "label", where);
      if (const auto d = je.find("description"); d != je.end() && d->is_string()) {
        e.description = d->get<std::string>();
      } else {
        warn(warnings, where + ": missing description");
      }
      if (const auto kind = edge_kind_from(type)) {
        e.kind = *kind;
      } else {
        warn(warnings, where + ": unknown edge type '" + type + "' mapped to Other");
      }
      edges.push_back(std::move(e));
    }
  }
  return SemanticGraph::make(std::move(nodes), std::move(edges), std::move(caption), warnings);
}

/// Parses a graph-generation reply. The payload may be wrapped in code fences
/// or prose; the first well-formed object is used.
inline SemanticGraph parse_semantic_graph(std::string_view raw_model_output, std::string caption,
                                          Warnings* warnings = nullptr) {
  if (caption.empty()) throw Error(ErrorCode::InvalidArgument, "caption is empty");
  const auto payload = detail::extract_json(raw_model_output);
  if (!payload) throw Error(ErrorCode::MalformedOutput, "no JSON object in graph reply");
  return semantic_graph_from_json(*payload, std::move(caption), warnings);
}

/// Binary flags over graph elements; 1 marks an element not yet examined.
/// Node flags follow graph order.
class CoverageMask {
 public:
  const std::vector<std::pair<NodeId, bool>>& node_flags() const noexcept { return nodes_; }
  const std::vector<bool>& edge_flags() const noexcept { return edges_; }

  std::size_t size() const noexcept { return nodes_.size() + edges_.size(); }

  bool node(const NodeId& id) const { return nodes_[index_of(id)].second; }
  bool edge(EdgeIndex i) const {
    if (i >= edges_.size()) throw Error(ErrorCode::UnknownElement, "edge " + std::to_string(i));
    return edges_[i];
  }

  bool contains(const NodeId& id) const { return lookup_.contains(id.str()); }
  bool contains(EdgeIndex i) const { return i < edges_.size(); }

  std::size_t remaining() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const auto& p) { return p.second; }) +
        std::count(edges_.begin(), edges_.end(), true));
  }

  friend bool operator==(const CoverageMask& a, const CoverageMask& b) {
    return a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  friend CoverageMask fresh_mask(const SemanticGraph& graph);
  friend CoverageMask apply_coverage(const CoverageMask&, const std::set<NodeId>&,
                                     const std::set<EdgeIndex>&);

  std::size_t index_of(const NodeId& id) const {
    const auto it = lookup_.find(id.str());
    if (it == lookup_.end()) throw Error(ErrorCode::UnknownElement, "node " + id.str());
    return it->second;
  }

  std::vector<std::pair<NodeId, bool>> nodes_;
  std::vector<bool> edges_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

inline CoverageMask fresh_mask(const SemanticGraph& graph) {
  CoverageMask m;
  for (const auto& n : graph.nodes()) {
    m.lookup_.emplace(n.id.str(), m.nodes_.size());
    m.nodes_.emplace_back(n.id, true);
  }
  m.edges_.assign(graph.edges().size(), true);
  return m;
}

/// Returns a copy with the listed elements cleared. Flags never go 0 -> 1.
inline CoverageMask apply_coverage(const CoverageMask& mask, const std::set<NodeId>& examined_nodes,
                                   const std::set<EdgeIndex>& examined_edges) {
  CoverageMask out = mask;
  for (const auto& id : examined_nodes) out.nodes_[out.index_of(id)].second = false;
  for (const EdgeIndex i : examined_edges) {
    if (i >= out.edges_.size()) {
      throw Error(ErrorCode::UnknownElement, "edge " + std::to_string(i));
    }
    out.edges_[i] = false;
  }
  return out;
}

inline bool is_fully_covered(const CoverageMask& mask) { return mask.remaining() == 0; }

}  // namespace hmgie
