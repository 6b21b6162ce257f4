#include "distillab/grammar.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace distillab {

namespace {

[[noreturn]] void parse_error(int line, const std::string& msg) {
  throw std::runtime_error("grammar parse error at line " + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

// Shortest decimal string that round-trips to the same double.
std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

}  // namespace

void Grammar::validate() const {
  if (root < 0 || root >= num_symbols() || !is_nonterminal[static_cast<size_t>(root)])
    throw std::runtime_error("grammar: root is not a nonterminal");
  for (int s = 0; s < num_symbols(); ++s) {
    if (!is_nonterminal[static_cast<size_t>(s)]) continue;
    double sum = 0.0;
    for (int r : rules_of[static_cast<size_t>(s)]) {
      if (rules[static_cast<size_t>(r)].prob < 0.0)
        throw std::runtime_error("grammar: negative probability for " +
                                 symbol_names[static_cast<size_t>(s)]);
      sum += rules[static_cast<size_t>(r)].prob;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::runtime_error("grammar: probabilities for " +
                               symbol_names[static_cast<size_t>(s)] + " sum to " +
                               format_double(sum));
  }
}

Grammar load_grammar(const std::string& text) {
  Grammar g;
  auto intern = [&](const std::string& name) {
    auto it = g.symbol_ids.find(name);
    if (it != g.symbol_ids.end()) return it->second;
    int id = g.num_symbols();
    g.symbol_ids.emplace(name, id);
    g.symbol_names.push_back(name);
    return id;
  };

  std::string root_name;
  int root_line = 0;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "root:") {
      if (toks.size() != 2) parse_error(lineno, "expected 'root: SYMBOL'");
      if (!root_name.empty()) parse_error(lineno, "duplicate root declaration");
      root_name = toks[1];
      root_line = lineno;
      continue;
    }
    // LHS -> sym1 sym2 ... [p]
    if (toks.size() < 4 || toks[1] != "->")
      parse_error(lineno, "expected 'LHS -> sym ... [p]'");
    const std::string& ptok = toks.back();
    if (ptok.size() < 3 || ptok.front() != '[' || ptok.back() != ']')
      parse_error(lineno, "rule must end with a bracketed probability");
    char* end = nullptr;
    std::string pnum = ptok.substr(1, ptok.size() - 2);
    double p = std::strtod(pnum.c_str(), &end);
    if (end == pnum.c_str() || *end != '\0')
      parse_error(lineno, "bad probability '" + pnum + "'");
    if (p < 0.0) parse_error(lineno, "negative probability");
    GrammarRule rule;
    rule.lhs = intern(toks[0]);
    for (size_t i = 2; i + 1 < toks.size(); ++i) rule.rhs.push_back(intern(toks[i]));
    if (rule.rhs.empty()) parse_error(lineno, "empty right-hand side");
    rule.prob = p;
    rule.line = lineno;
    g.rules.push_back(std::move(rule));
  }
  if (root_name.empty()) throw std::runtime_error("grammar parse error: missing 'root:' line");

  g.is_nonterminal.assign(static_cast<size_t>(g.num_symbols()), false);
  for (const auto& r : g.rules) g.is_nonterminal[static_cast<size_t>(r.lhs)] = true;

  auto root_it = g.symbol_ids.find(root_name);
  if (root_it == g.symbol_ids.end() || !g.is_nonterminal[static_cast<size_t>(root_it->second)])
    parse_error(root_line, "root symbol '" + root_name + "' has no rules");
  g.root = root_it->second;

  g.rules_of.assign(static_cast<size_t>(g.num_symbols()), {});
  for (size_t i = 0; i < g.rules.size(); ++i)
    g.rules_of[static_cast<size_t>(g.rules[i].lhs)].push_back(static_cast<int>(i));

  // Renormalize per LHS when the sum is within 1e-6 of 1, otherwise reject.
  for (int s = 0; s < g.num_symbols(); ++s) {
    if (!g.is_nonterminal[static_cast<size_t>(s)]) continue;
    double sum = 0.0;
    for (int r : g.rules_of[static_cast<size_t>(s)]) sum += g.rules[static_cast<size_t>(r)].prob;
    if (std::abs(sum - 1.0) > 1e-6) {
      int first_line = g.rules[static_cast<size_t>(g.rules_of[static_cast<size_t>(s)][0])].line;
      parse_error(first_line, "probability sum " + format_double(sum) + " for " +
                                  g.symbol_names[static_cast<size_t>(s)]);
    }
    for (int r : g.rules_of[static_cast<size_t>(s)]) g.rules[static_cast<size_t>(r)].prob /= sum;
  }

  g.token_of_symbol.assign(static_cast<size_t>(g.num_symbols()), -1);
  for (int s = 0; s < g.num_symbols(); ++s) {
    if (!g.is_nonterminal[static_cast<size_t>(s)]) {
      g.token_of_symbol[static_cast<size_t>(s)] = static_cast<int>(g.symbol_of_token.size());
      g.symbol_of_token.push_back(s);
    }
  }
  g.validate();
  return g;
}

Grammar load_grammar_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open grammar file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return load_grammar(ss.str());
}

std::string save_grammar(const Grammar& g) {
  std::ostringstream os;
  os << "root: " << g.symbol_names[static_cast<size_t>(g.root)] << "\n";
  for (const auto& r : g.rules) {
    os << g.symbol_names[static_cast<size_t>(r.lhs)] << " ->";
    for (int s : r.rhs) os << " " << g.symbol_names[static_cast<size_t>(s)];
    os << " [" << format_double(r.prob) << "]\n";
  }
  return os.str();
}

Sentence sample_sentence(const Grammar& g, Rng& rng, int64_t max_nodes) {
  Sentence out;
  auto& nodes = out.tree.nodes;

  // Recursive leftmost-complete expansion via an explicit stack of
  // (node, next-child-to-expand) pairs.
  struct Frame {
    int node;
    int rule;
    size_t next_child;
  };

  auto expand = [&](int node_idx, auto&& self) -> void {
    if (static_cast<int64_t>(nodes.size()) > max_nodes)
      throw std::runtime_error("sample_sentence: derivation exceeded node budget of " +
                               std::to_string(max_nodes));
    TreeNode& node = nodes[static_cast<size_t>(node_idx)];
    int sym = node.symbol;
    if (!g.is_nonterminal[static_cast<size_t>(sym)]) {
      node.token = g.token_of_symbol[static_cast<size_t>(sym)];
      node.position = static_cast<int>(out.tokens.size());
      node.last_leaf_pos = node.position;
      out.tokens.push_back(node.token);
      return;
    }
    const auto& candidates = g.rules_of[static_cast<size_t>(sym)];
    double u = rng.uniform();
    int chosen = candidates.back();
    double acc = 0.0;
    for (int r : candidates) {
      acc += g.rules[static_cast<size_t>(r)].prob;
      if (u < acc) {
        chosen = r;
        break;
      }
    }
    const auto& rhs = g.rules[static_cast<size_t>(chosen)].rhs;
    int level = node.level;
    std::vector<int> children;
    children.reserve(rhs.size());
    for (int child_sym : rhs) {
      int child_idx = static_cast<int>(nodes.size());
      TreeNode child;
      child.symbol = child_sym;
      child.level = level + 1;
      nodes.push_back(std::move(child));
      children.push_back(child_idx);
      self(child_idx, self);
    }
    nodes[static_cast<size_t>(node_idx)].children = std::move(children);
    nodes[static_cast<size_t>(node_idx)].last_leaf_pos =
        nodes[static_cast<size_t>(nodes[static_cast<size_t>(node_idx)].children.back())]
            .last_leaf_pos;
  };

  TreeNode root;
  root.symbol = g.root;
  root.level = 0;
  nodes.push_back(std::move(root));
  expand(0, expand);

  int max_level = 0, min_level = 1 << 30;
  for (const auto& n : nodes) {
    if (n.children.empty() && n.token >= 0) {
      max_level = std::max(max_level, n.level);
      min_level = std::min(min_level, n.level);
    }
  }
  out.tree.depth = max_level;
  out.tree.uniform_depth = (max_level == min_level);
  return out;
}

bool validate_tree(const Grammar& g, const ParseTree& tree, const std::vector<int>& tokens) {
  std::vector<int> leaf_tokens;
  for (const auto& n : tree.nodes) {
    if (n.children.empty()) {
      if (n.token < 0) return false;
      continue;
    }
    bool matched = false;
    for (int r : g.rules_of[static_cast<size_t>(n.symbol)]) {
      const auto& rule = g.rules[static_cast<size_t>(r)];
      if (rule.prob <= 0.0) continue;
      if (rule.rhs.size() != n.children.size()) continue;
      bool same = true;
      for (size_t i = 0; i < rule.rhs.size(); ++i)
        if (rule.rhs[i] != tree.nodes[static_cast<size_t>(n.children[i])].symbol) {
          same = false;
          break;
        }
      if (same) {
        matched = true;
        break;
      }
    }
    if (!matched) return false;
  }
  // Leaves in index order are creation order, which is left-to-right.
  for (const auto& n : tree.nodes)
    if (n.children.empty() && n.token >= 0) leaf_tokens.push_back(n.token);
  return leaf_tokens == tokens;
}

std::vector<std::pair<int, int>> boundary_positions(const ParseTree& tree, int level) {
  if (level < 1 || level > tree.depth - 1)
    throw std::invalid_argument("boundary_positions: level " + std::to_string(level) +
                                " outside [1, " + std::to_string(tree.depth - 1) + "]");
  std::vector<std::pair<int, int>> out;
  for (const auto& n : tree.nodes)
    if (n.level == level && !n.children.empty())
      out.emplace_back(n.last_leaf_pos, n.symbol);
  return out;
}

}  // namespace distillab
