#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "distillab/rng.hpp"

namespace distillab {

struct GrammarRule {
  int lhs = -1;
  std::vector<int> rhs;
  double prob = 0.0;
  int line = 0;
};

// PCFG over whitespace-delimited symbols. A symbol is a terminal iff it
// never appears on the left-hand side of a rule. Terminals get dense token
// ids in order of symbol id.
struct Grammar {
  std::vector<std::string> symbol_names;
  std::unordered_map<std::string, int> symbol_ids;
  std::vector<bool> is_nonterminal;
  int root = -1;
  std::vector<GrammarRule> rules;
  std::vector<std::vector<int>> rules_of;  // symbol id -> rule indices
  std::vector<int> token_of_symbol;        // -1 for nonterminals
  std::vector<int> symbol_of_token;

  int num_symbols() const { return static_cast<int>(symbol_names.size()); }
  int num_terminals() const { return static_cast<int>(symbol_of_token.size()); }
  const std::string& token_name(int token) const {
    return symbol_names[static_cast<size_t>(symbol_of_token[static_cast<size_t>(token)])];
  }
  void validate() const;
};

// File format:
//   # comment
//   root: S
//   S -> NP VP [1.0]
Grammar load_grammar(const std::string& text);
Grammar load_grammar_file(const std::string& path);
std::string save_grammar(const Grammar& g);

struct TreeNode {
  int symbol = -1;
  int level = 0;  // distance from the root node; root = 0
  std::vector<int> children;
  int token = -1;     // leaves only
  int position = -1;  // leaves only
  int last_leaf_pos = -1;
};

struct ParseTree {
  std::vector<TreeNode> nodes;
  int root = 0;
  int depth = 0;  // maximum leaf level
  bool uniform_depth = false;
};

struct Sentence {
  std::vector<int> tokens;  // dense token ids
  ParseTree tree;
};

// Recursive expansion by rule probability. Throws when the derivation
// exceeds max_nodes (non-terminating grammar guard).
Sentence sample_sentence(const Grammar& g, Rng& rng, int64_t max_nodes = 100000);

// Every expansion in the tree must match a positive-probability rule and the
// leaves must reproduce `tokens` left to right.
bool validate_tree(const Grammar& g, const ParseTree& tree, const std::vector<int>& tokens);

// Rightmost leaf position of every level-`level` nonterminal node, in
// left-to-right order, paired with the node's symbol id.
std::vector<std::pair<int, int>> boundary_positions(const ParseTree& tree, int level);

}  // namespace distillab
