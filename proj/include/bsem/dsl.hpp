#pragma once
// lavaan-style model DSL: parser producing an AST of measurement ("=~"),
// regression ("~"), covariance ("~~"), intercept ("~1"), and defined-parameter
// (":=") statements, with per-term modifiers (fixed value, prior, start,
// label) and optional "level:" block headers.

#include <cctype>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bsem {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& code, const std::string& msg) : std::runtime_error(code + ": " + msg), code_(code) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct PriorSpec {
  enum class Family { Normal, Gamma, Beta };
  enum class Scale { Coefficient, Sd, Var, Cor };
  Family family = Family::Normal;
  double p1 = 0.0, p2 = 1.0;
  Scale target_scale = Scale::Coefficient;

  std::string to_string() const {
    std::ostringstream os;
    switch (family) {
      case Family::Normal: os << "normal("; break;
      case Family::Gamma: os << "gamma("; break;
      case Family::Beta: os << "beta("; break;
    }
    os << p1 << "," << p2 << ")";
    switch (target_scale) {
      case Scale::Sd: os << "[sd]"; break;
      case Scale::Var: os << "[var]"; break;
      case Scale::Cor: os << "[cor]"; break;
      case Scale::Coefficient: break;
    }
    return os.str();
  }
};

struct Term {
  std::string variable;
  std::optional<double> fixed_value;
  std::optional<PriorSpec> prior;
  std::optional<double> start;
  std::optional<std::string> label;

  bool operator==(const Term& o) const {
    auto eq = [](const std::optional<double>& a, const std::optional<double>& b) {
      return a.has_value() == b.has_value() && (!a || *a == *b);
    };
    return variable == o.variable && eq(fixed_value, o.fixed_value) && eq(start, o.start) && label == o.label &&
           prior.has_value() == o.prior.has_value() &&
           (!prior || prior->to_string() == o.prior->to_string());
  }
};

struct ModelStatement {
  std::vector<std::string> lhs;
  std::string op;  // "=~", "~", "~~", "~1", ":="
  std::vector<Term> rhs;
  int level = 1;
  std::string expression;  // for ":=" statements

  bool operator==(const ModelStatement& o) const {
    return lhs == o.lhs && op == o.op && rhs == o.rhs && level == o.level && expression == o.expression;
  }
};

using ModelAst = std::vector<ModelStatement>;

// ---------- prior strings ----------

inline PriorSpec parse_prior_string(const std::string& text) {
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  const auto lp = s.find('(');
  const auto rp = s.find(')');
  if (lp == std::string::npos || rp == std::string::npos || rp < lp)
    throw ParseError("MalformedPrior", "expected family(p1,p2): " + text);
  const std::string fam = s.substr(0, lp);
  PriorSpec spec;
  if (fam == "normal")
    spec.family = PriorSpec::Family::Normal, spec.target_scale = PriorSpec::Scale::Coefficient;
  else if (fam == "gamma")
    spec.family = PriorSpec::Family::Gamma, spec.target_scale = PriorSpec::Scale::Sd;
  else if (fam == "beta")
    spec.family = PriorSpec::Family::Beta, spec.target_scale = PriorSpec::Scale::Cor;
  else
    throw ParseError("UnknownFamily", fam);

  const std::string args = s.substr(lp + 1, rp - lp - 1);
  std::vector<double> vals;
  std::string cur;
  std::istringstream as(args);
  while (std::getline(as, cur, ',')) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(cur, &pos);
      if (pos != cur.size()) throw std::invalid_argument(cur);
      vals.push_back(v);
    } catch (const std::exception&) {
      throw ParseError("MalformedPrior", "non-numeric parameter '" + cur + "' in " + text);
    }
  }
  if (vals.size() != 2) throw ParseError("WrongArity", "expected 2 parameters in " + text);
  spec.p1 = vals[0];
  spec.p2 = vals[1];

  std::string suffix = s.substr(rp + 1);
  if (!suffix.empty()) {
    if (suffix == "[sd]")
      spec.target_scale = PriorSpec::Scale::Sd;
    else if (suffix == "[var]")
      spec.target_scale = PriorSpec::Scale::Var;
    else if (suffix == "[cor]")
      spec.target_scale = PriorSpec::Scale::Cor;
    else
      throw ParseError("MalformedPrior", "bad scale suffix '" + suffix + "'");
  }
  if ((spec.family == PriorSpec::Family::Gamma || spec.family == PriorSpec::Family::Beta) &&
      (spec.p1 <= 0.0 || spec.p2 <= 0.0))
    throw ParseError("MalformedPrior", "gamma/beta parameters must be positive: " + text);
  if (spec.family == PriorSpec::Family::Normal && spec.p2 <= 0.0)
    throw ParseError("MalformedPrior", "normal scale must be positive: " + text);
  return spec;
}

// ---------- ":=" expressions ----------
// Standard arithmetic over labels: + - * / and parentheses.

namespace detail {

struct ExprParser {
  const std::string& s;
  std::size_t i = 0;
  const std::map<std::string, double>* env;  // null = syntax check only
  std::vector<std::string>* labels;          // collects identifiers when non-null

  void skip() {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  }
  bool eat(char c) {
    skip();
    if (i < s.size() && s[i] == c) {
      ++i;
      return true;
    }
    return false;
  }
  double primary() {
    skip();
    if (i >= s.size()) throw ParseError("MalformedExpression", "unexpected end of expression: " + s);
    if (eat('(')) {
      const double v = expr();
      if (!eat(')')) throw ParseError("MalformedExpression", "missing ')': " + s);
      return v;
    }
    if (eat('-')) return -primary();
    if (eat('+')) return primary();
    if (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.') {
      std::size_t pos = 0;
      const double v = std::stod(s.substr(i), &pos);
      i += pos;
      return v;
    }
    if (std::isalpha(static_cast<unsigned char>(s[i])) || s[i] == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_' || s[j] == '.')) ++j;
      const std::string name = s.substr(i, j - i);
      i = j;
      if (labels) labels->push_back(name);
      if (!env) return 0.0;
      auto it = env->find(name);
      if (it == env->end()) throw ParseError("UnknownLabel", name);
      return it->second;
    }
    throw ParseError("MalformedExpression", std::string("unexpected character '") + s[i] + "' in " + s);
  }
  double term() {
    double v = primary();
    for (;;) {
      if (eat('*'))
        v *= primary();
      else if (eat('/'))
        v /= primary();
      else
        return v;
    }
  }
  double expr() {
    double v = term();
    for (;;) {
      if (eat('+'))
        v += term();
      else if (eat('-'))
        v -= term();
      else
        return v;
    }
  }
};

}  // namespace detail

inline double evaluate_expression(const std::string& expr, const std::map<std::string, double>& env) {
  detail::ExprParser p{expr, 0, &env, nullptr};
  const double v = p.expr();
  p.skip();
  if (p.i != expr.size()) throw ParseError("MalformedExpression", "trailing input in " + expr);
  return v;
}

inline std::vector<std::string> expression_labels(const std::string& expr) {
  std::vector<std::string> labels;
  detail::ExprParser p{expr, 0, nullptr, &labels};
  p.expr();
  p.skip();
  if (p.i != expr.size()) throw ParseError("MalformedExpression", "trailing input in " + expr);
  return labels;
}

// ---------- model parser ----------

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline bool is_identifier(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.') return false;
  return true;
}

inline bool is_number(const std::string& s, double* out) {
  if (s.empty()) return false;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) return false;
    if (out) *out = v;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

// split on a character, respecting parentheses and quotes
inline std::vector<std::string> split_top(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  char quote = 0;
  for (char c : s) {
    if (quote) {
      if (c == quote) quote = 0;
      cur.push_back(c);
      continue;
    }
    if (c == '\'' || c == '"') {
      quote = c;
      cur.push_back(c);
      continue;
    }
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == sep && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline Term parse_term(const std::string& raw) {
  Term term;
  const auto parts = split_top(raw, '*');
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::string p = strip(parts[k]);
    if (p.empty()) throw ParseError("DanglingModifier", "empty factor in term '" + raw + "'");
    const bool last = (k + 1 == parts.size());
    double num = 0.0;
    if (last) {
      if (!is_identifier(p) && !is_number(p, &num))
        throw ParseError("MalformedTerm", "bad variable '" + p + "' in term '" + raw + "'");
      term.variable = p;  // numeric "1" target allowed for intercept statements
      break;
    }
    if (is_number(p, &num)) {
      if (term.fixed_value) throw ParseError("MalformedTerm", "duplicate fixed value in '" + raw + "'");
      term.fixed_value = num;
    } else if (p.rfind("prior(", 0) == 0 && p.back() == ')') {
      std::string inner = strip(p.substr(6, p.size() - 7));
      if (inner.size() >= 2 && (inner.front() == '\'' || inner.front() == '"')) {
        if (inner.back() != inner.front()) throw ParseError("MalformedPrior", "unbalanced quotes in '" + p + "'");
        inner = inner.substr(1, inner.size() - 2);
      }
      term.prior = parse_prior_string(inner);
    } else if (p.rfind("start(", 0) == 0 && p.back() == ')') {
      const std::string inner = strip(p.substr(6, p.size() - 7));
      double v = 0.0;
      if (!is_number(inner, &v)) throw ParseError("MalformedTerm", "non-numeric start in '" + p + "'");
      term.start = v;
    } else if (is_identifier(p)) {
      if (term.label) throw ParseError("MalformedTerm", "duplicate label in '" + raw + "'");
      term.label = p;
    } else {
      throw ParseError("DanglingModifier", "unrecognized modifier '" + p + "' in term '" + raw + "'");
    }
  }
  if (term.fixed_value && term.prior)
    throw ParseError("MalformedTerm", "term '" + raw + "' has both a fixed value and a prior");
  return term;
}

}  // namespace detail

inline ModelAst parse_model(const std::string& source) {
  using namespace detail;
  // strip comments, join continuations, split statements
  std::vector<std::string> lines;
  {
    std::istringstream in(source);
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      for (auto& piece : split_top(line, ';')) lines.push_back(strip(piece));
    }
  }
  std::vector<std::string> stmts;
  std::string pending;
  for (const auto& l : lines) {
    if (l.empty()) continue;
    pending = pending.empty() ? l : pending + " " + l;
    if (pending.back() == '+' || pending.back() == ',') continue;  // continuation
    // also continue when a binary op dangles at the end ("=~", "~", ":=")
    if (pending.size() >= 2 && (pending.substr(pending.size() - 2) == "=~" || pending.substr(pending.size() - 2) == "~~" ||
                                pending.substr(pending.size() - 2) == ":="))
      continue;
    if (pending.back() == '~') continue;
    stmts.push_back(pending);
    pending.clear();
  }
  if (!pending.empty()) stmts.push_back(pending);

  ModelAst ast;
  int current_level = 1;
  bool saw_level_header = false;
  std::vector<int> seen_levels;

  for (const auto& stmt : stmts) {
    // level header
    if (stmt.rfind("level", 0) == 0) {
      const std::string rest = strip(stmt.substr(5));
      if (!rest.empty() && rest[0] == ':') {
        double lv = 0.0;
        if (!is_number(strip(rest.substr(1)), &lv))
          throw ParseError("MalformedLevel", "bad level header '" + stmt + "'");
        const int ilv = static_cast<int>(lv);
        for (int s : seen_levels)
          if (s == ilv) throw ParseError("DuplicateLevel", "level " + std::to_string(ilv) + " declared twice");
        if (ilv != static_cast<int>(seen_levels.size()) + 1)
          throw ParseError("MalformedLevel", "level indices must be contiguous from 1");
        seen_levels.push_back(ilv);
        current_level = ilv;
        saw_level_header = true;
        continue;
      }
    }

    // find operator at top level
    static const std::vector<std::string> ops = {"=~", "~~", ":=", "~"};
    std::size_t op_pos = std::string::npos;
    std::string op;
    {
      int depth = 0;
      char quote = 0;
      for (std::size_t i = 0; i < stmt.size() && op_pos == std::string::npos; ++i) {
        const char c = stmt[i];
        if (quote) {
          if (c == quote) quote = 0;
          continue;
        }
        if (c == '\'' || c == '"') {
          quote = c;
          continue;
        }
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (depth > 0) continue;
        for (const auto& candidate : ops) {
          if (stmt.compare(i, candidate.size(), candidate) == 0) {
            // "~" must not be part of "=~": check the preceding char
            if (candidate == "~" && i > 0 && stmt[i - 1] == '=') break;
            if (candidate == "~" && i > 0 && stmt[i - 1] == '<')
              throw ParseError("UnknownOperator", "formative indicator operator '<~' is not supported");
            op_pos = i;
            op = candidate;
            break;
          }
        }
      }
    }
    if (op_pos == std::string::npos) throw ParseError("UnknownOperator", "no operator in statement '" + stmt + "'");

    ModelStatement ms;
    ms.level = current_level;
    const std::string lhs_text = strip(stmt.substr(0, op_pos));
    const std::string rhs_text = strip(stmt.substr(op_pos + op.size()));
    if (lhs_text.empty()) throw ParseError("MalformedStatement", "empty left-hand side in '" + stmt + "'");
    if (rhs_text.empty()) throw ParseError("MalformedStatement", "empty right-hand side in '" + stmt + "'");

    for (auto& piece : split_top(lhs_text, '+')) {
      const std::string v = strip(piece);
      if (!is_identifier(v)) throw ParseError("MalformedStatement", "bad lhs variable '" + v + "' in '" + stmt + "'");
      ms.lhs.push_back(v);
    }

    if (op == ":=") {
      ms.op = ":=";
      ms.expression = rhs_text;
      expression_labels(ms.expression);  // syntax check
      ast.push_back(std::move(ms));
      continue;
    }

    std::vector<Term> terms;
    for (auto& piece : split_top(rhs_text, '+')) {
      const std::string t = strip(piece);
      if (t.empty()) throw ParseError("MalformedStatement", "dangling '+' in '" + stmt + "'");
      terms.push_back(parse_term(t));
    }

    if (op == "~" && terms.size() == 1 && terms[0].variable == "1") {
      ms.op = "~1";
      terms[0].variable.clear();
      ms.rhs = std::move(terms);
    } else {
      for (const auto& t : terms)
        if (!is_identifier(t.variable))
          throw ParseError("MalformedStatement", "numeric right-hand variable in '" + stmt + "'");
      ms.op = op;
      ms.rhs = std::move(terms);
    }
    ast.push_back(std::move(ms));
  }

  (void)saw_level_header;
  if (ast.empty()) throw ParseError("EmptyModel", "model source contains no statements");
  return ast;
}

// ---------- pretty printer (round-trip support) ----------

inline std::string pretty_print(const ModelAst& ast) {
  std::ostringstream os;
  os.precision(17);
  int level = 1;
  bool any_multilevel = false;
  for (const auto& s : ast)
    if (s.level > 1) any_multilevel = true;
  if (any_multilevel) os << "level: 1\n";
  for (const auto& s : ast) {
    if (s.level != level) {
      level = s.level;
      os << "level: " << level << "\n";
    }
    for (std::size_t i = 0; i < s.lhs.size(); ++i) os << (i ? " + " : "") << s.lhs[i];
    if (s.op == ":=") {
      os << " := " << s.expression << "\n";
      continue;
    }
    os << " " << (s.op == "~1" ? "~" : s.op) << " ";
    for (std::size_t i = 0; i < s.rhs.size(); ++i) {
      if (i) os << " + ";
      const Term& t = s.rhs[i];
      if (t.fixed_value) os << *t.fixed_value << "*";
      if (t.prior) os << "prior('" << t.prior->to_string() << "')*";
      if (t.start) os << "start(" << *t.start << ")*";
      if (t.label) os << *t.label << "*";
      os << (s.op == "~1" ? "1" : t.variable);
    }
    os << "\n";
  }
  return os.str();
}

inline nlohmann::json ast_to_json(const ModelAst& ast) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : ast) {
    nlohmann::json js;
    js["lhs"] = s.lhs;
    js["op"] = s.op;
    js["level"] = s.level;
    if (s.op == ":=") {
      js["expression"] = s.expression;
    } else {
      nlohmann::json terms = nlohmann::json::array();
      for (const auto& t : s.rhs) {
        nlohmann::json jt;
        jt["variable"] = t.variable;
        if (t.fixed_value) jt["fixed_value"] = *t.fixed_value;
        if (t.prior) jt["prior"] = t.prior->to_string();
        if (t.start) jt["start"] = *t.start;
        if (t.label) jt["label"] = *t.label;
        terms.push_back(jt);
      }
      js["terms"] = terms;
    }
    out.push_back(js);
  }
  return out;
}

}  // namespace bsem
