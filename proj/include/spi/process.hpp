#ifndef SPI_PROCESS_HPP
#define SPI_PROCESS_HPP

#include <algorithm>
#include <cassert>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spi/term.hpp"

namespace spi {

// Spi-calculus process terms. Binders (input, restriction, let, case)
// bind plain names; alpha-equivalence is the identity notion.
class Process {
 public:
  enum class Kind { Nil, Output, Input, Par, Restrict, Bang, Match, Let, Case };

  Process() : Process(nil()) {}

  static Process nil() { return Process(make(Kind::Nil)); }
  static Process output(Message chan, Message msg, Process cont) {
    auto n = make(Kind::Output);
    n->m1 = box(std::move(chan));
    n->m2 = box(std::move(msg));
    n->p1 = cont.n_;
    return Process(n);
  }
  static Process input(Message chan, std::string binder, Process cont) {
    auto n = make(Kind::Input);
    n->m1 = box(std::move(chan));
    n->x1 = std::move(binder);
    n->p1 = cont.n_;
    return Process(n);
  }
  static Process par(Process l, Process r) {
    auto n = make(Kind::Par);
    n->p1 = l.n_;
    n->p2 = r.n_;
    return Process(n);
  }
  static Process nu(std::string binder, Process body) {
    auto n = make(Kind::Restrict);
    n->x1 = std::move(binder);
    n->p1 = body.n_;
    return Process(n);
  }
  static Process bang(Process body) {
    auto n = make(Kind::Bang);
    n->p1 = body.n_;
    return Process(n);
  }
  static Process match(Message a, Message b, Process cont) {
    auto n = make(Kind::Match);
    n->m1 = box(std::move(a));
    n->m2 = box(std::move(b));
    n->p1 = cont.n_;
    return Process(n);
  }
  static Process let_in(std::string x, std::string y, Message src, Process cont) {
    auto n = make(Kind::Let);
    n->x1 = std::move(x);
    n->x2 = std::move(y);
    n->m1 = box(std::move(src));
    n->p1 = cont.n_;
    return Process(n);
  }
  static Process case_of(Message src, std::string binder, Message key,
                         Process cont) {
    auto n = make(Kind::Case);
    n->m1 = box(std::move(src));
    n->x1 = std::move(binder);
    n->m2 = box(std::move(key));
    n->p1 = cont.n_;
    return Process(n);
  }

  Kind kind() const { return n_->kind; }
  bool is_nil() const { return kind() == Kind::Nil; }

  // Output: chan/payload. Input: chan. Match: lhs/rhs. Let: source.
  // Case: source/key.
  const Message& msg1() const { return *n_->m1; }
  const Message& msg2() const { return *n_->m2; }
  // Input/Restrict/Case binder; Let first binder.
  const std::string& binder() const { return n_->x1; }
  // Let second binder.
  const std::string& binder2() const { return n_->x2; }
  const Process left() const { return Process(n_->p1); }
  const Process right() const { return Process(n_->p2); }
  const Process cont() const { return Process(n_->p1); }

  bool contains_bang() const {
    if (kind() == Kind::Bang) return true;
    if (n_->p1 && Process(n_->p1).contains_bang()) return true;
    if (n_->p2 && Process(n_->p2).contains_bang()) return true;
    return false;
  }

 private:
  struct Node {
    Kind kind;
    std::shared_ptr<const Message> m1, m2;
    std::string x1, x2;
    std::shared_ptr<const Node> p1, p2;
  };

  static std::shared_ptr<Node> make(Kind k) {
    auto n = std::make_shared<Node>();
    n->kind = k;
    return n;
  }
  static std::shared_ptr<const Message> box(Message m) {
    return std::make_shared<const Message>(std::move(m));
  }

  explicit Process(std::shared_ptr<const Node> n) : n_(std::move(n)) {}

  std::shared_ptr<const Node> n_;
};

// ---- Free names ----

namespace detail {

inline void collect_scoped(const Message& m, const std::set<std::string>& bound,
                           NameSets& out) {
  switch (m.kind()) {
    case Message::Kind::Name:
      if (!bound.count(m.id())) out.names.insert(m.id());
      break;
    case Message::Kind::Rigid:
      out.rigids.insert(m.id());
      break;
    default:
      collect_scoped(m.left(), bound, out);
      collect_scoped(m.right(), bound, out);
  }
}

inline void collect_scoped(const Process& p, std::set<std::string> bound,
                           NameSets& out) {
  using K = Process::Kind;
  switch (p.kind()) {
    case K::Nil:
      return;
    case K::Output:
      collect_scoped(p.msg1(), bound, out);
      collect_scoped(p.msg2(), bound, out);
      collect_scoped(p.cont(), bound, out);
      return;
    case K::Input: {
      collect_scoped(p.msg1(), bound, out);
      bound.insert(p.binder());
      collect_scoped(p.cont(), std::move(bound), out);
      return;
    }
    case K::Par:
      collect_scoped(p.left(), bound, out);
      collect_scoped(p.right(), std::move(bound), out);
      return;
    case K::Restrict:
      bound.insert(p.binder());
      collect_scoped(p.cont(), std::move(bound), out);
      return;
    case K::Bang:
      collect_scoped(p.cont(), std::move(bound), out);
      return;
    case K::Match:
      collect_scoped(p.msg1(), bound, out);
      collect_scoped(p.msg2(), bound, out);
      collect_scoped(p.cont(), std::move(bound), out);
      return;
    case K::Let: {
      collect_scoped(p.msg1(), bound, out);
      bound.insert(p.binder());
      bound.insert(p.binder2());
      collect_scoped(p.cont(), std::move(bound), out);
      return;
    }
    case K::Case: {
      collect_scoped(p.msg1(), bound, out);
      collect_scoped(p.msg2(), bound, out);
      bound.insert(p.binder());
      collect_scoped(p.cont(), std::move(bound), out);
      return;
    }
  }
}

}  // namespace detail

inline NameSets free_names(const Process& p) {
  NameSets out;
  detail::collect_scoped(p, {}, out);
  return out;
}

inline bool is_pure(const Process& p) { return free_names(p).rigids.empty(); }

// ---- Substitution (capture-avoiding) ----

namespace detail {

// Names that must not be shadowed by a binder when applying s under it.
inline std::set<std::string> subst_range_names(const Substitution& s,
                                               const NameSets& body_free) {
  std::set<std::string> out;
  for (auto& [x, m] : s.bindings()) {
    if (!body_free.names.count(x)) continue;
    NameSets r = free_names(m);
    out.insert(r.names.begin(), r.names.end());
  }
  return out;
}

struct BinderRename {
  std::string name;
  Substitution subst;  // extended with the renaming when one is needed
};

inline BinderRename rename_binder(const std::string& x, const Process& body,
                                  const Substitution& s) {
  Substitution inner;
  for (auto& [y, m] : s.bindings())
    if (y != x) inner.bind(y, m);
  NameSets bf = free_names(body);
  std::set<std::string> danger = subst_range_names(inner, bf);
  if (!danger.count(x)) return {x, std::move(inner)};
  std::set<std::string> used = danger;
  used.insert(bf.names.begin(), bf.names.end());
  for (auto& [y, _] : inner.bindings()) used.insert(y);
  std::string fresh = fresh_name(x, used);
  inner.bind(x, Message::name(fresh));
  return {fresh, std::move(inner)};
}

}  // namespace detail

inline Process apply_subst(const Process& p, const Substitution& s) {
  using K = Process::Kind;
  if (s.empty()) return p;
  switch (p.kind()) {
    case K::Nil:
      return p;
    case K::Output:
      return Process::output(apply_subst(p.msg1(), s), apply_subst(p.msg2(), s),
                             apply_subst(p.cont(), s));
    case K::Input: {
      auto [x, inner] = detail::rename_binder(p.binder(), p.cont(), s);
      return Process::input(apply_subst(p.msg1(), s), x,
                            apply_subst(p.cont(), inner));
    }
    case K::Par:
      return Process::par(apply_subst(p.left(), s), apply_subst(p.right(), s));
    case K::Restrict: {
      auto [x, inner] = detail::rename_binder(p.binder(), p.cont(), s);
      return Process::nu(x, apply_subst(p.cont(), inner));
    }
    case K::Bang:
      return Process::bang(apply_subst(p.cont(), s));
    case K::Match:
      return Process::match(apply_subst(p.msg1(), s), apply_subst(p.msg2(), s),
                            apply_subst(p.cont(), s));
    case K::Let: {
      auto [x, s1] = detail::rename_binder(p.binder(), p.cont(), s);
      auto [y, s2] = detail::rename_binder(p.binder2(), p.cont(), s1);
      if (x == y) {
        std::set<std::string> used = free_names(p.cont()).names;
        used.insert(x);
        for (auto& [k, v] : s2.bindings()) {
          NameSets r = free_names(v);
          used.insert(r.names.begin(), r.names.end());
        }
        y = fresh_name(p.binder2(), used);
        s2.bind(p.binder2(), Message::name(y));
      }
      return Process::let_in(x, y, apply_subst(p.msg1(), s),
                             apply_subst(p.cont(), s2));
    }
    case K::Case: {
      auto [x, inner] = detail::rename_binder(p.binder(), p.cont(), s);
      return Process::case_of(apply_subst(p.msg1(), s), x,
                              apply_subst(p.msg2(), s),
                              apply_subst(p.cont(), inner));
    }
  }
  return p;
}

// ---- Alpha-equivalence and canonical ordering keys ----

namespace detail {

inline void alpha_key_msg(const Message& m,
                          const std::map<std::string, int>& env,
                          std::string& out) {
  switch (m.kind()) {
    case Message::Kind::Name: {
      auto it = env.find(m.id());
      if (it != env.end())
        out += "%" + std::to_string(it->second);
      else
        out += m.id();
      return;
    }
    case Message::Kind::Rigid:
      out += "#" + m.id();
      return;
    case Message::Kind::Pair:
    case Message::Kind::Enc:
      out += m.is_pair() ? "pr(" : "enc(";
      alpha_key_msg(m.left(), env, out);
      out += ",";
      alpha_key_msg(m.right(), env, out);
      out += ")";
      return;
  }
}

inline void alpha_key_rec(const Process& p, std::map<std::string, int> env,
                          int& counter, std::string& out) {
  using K = Process::Kind;
  auto msg = [&](const Message& m) { alpha_key_msg(m, env, out); };
  switch (p.kind()) {
    case K::Nil:
      out += "0";
      return;
    case K::Output:
      out += "out(";
      msg(p.msg1());
      out += ",";
      msg(p.msg2());
      out += ").";
      alpha_key_rec(p.cont(), std::move(env), counter, out);
      return;
    case K::Input: {
      out += "in(";
      msg(p.msg1());
      out += ",%" + std::to_string(counter) + ").";
      env[p.binder()] = counter++;
      alpha_key_rec(p.cont(), std::move(env), counter, out);
      return;
    }
    case K::Par:
      out += "(";
      alpha_key_rec(p.left(), env, counter, out);
      out += "|";
      alpha_key_rec(p.right(), std::move(env), counter, out);
      out += ")";
      return;
    case K::Restrict: {
      out += "nu%" + std::to_string(counter) + ".";
      env[p.binder()] = counter++;
      alpha_key_rec(p.cont(), std::move(env), counter, out);
      return;
    }
    case K::Bang:
      out += "!";
      alpha_key_rec(p.cont(), std::move(env), counter, out);
      return;
    case K::Match:
      out += "[";
      msg(p.msg1());
      out += "=";
      msg(p.msg2());
      out += "]";
      alpha_key_rec(p.cont(), std::move(env), counter, out);
      return;
    case K::Let: {
      out += "let(%" + std::to_string(counter) + ",%" +
             std::to_string(counter + 1) + ")=";
      msg(p.msg1());
      out += ".";
      env[p.binder()] = counter++;
      env[p.binder2()] = counter++;
      alpha_key_rec(p.cont(), std::move(env), counter, out);
      return;
    }
    case K::Case: {
      out += "case ";
      msg(p.msg1());
      out += "{%" + std::to_string(counter) + "}";
      msg(p.msg2());
      out += ".";
      env[p.binder()] = counter++;
      alpha_key_rec(p.cont(), std::move(env), counter, out);
      return;
    }
  }
}

}  // namespace detail

// Canonical string key invariant under alpha-renaming of binders.
inline std::string alpha_key(const Process& p) {
  std::string out;
  int counter = 0;
  detail::alpha_key_rec(p, {}, counter, out);
  return out;
}

inline bool alpha_equal(const Process& p, const Process& q) {
  return alpha_key(p) == alpha_key(q);
}

// ---- Concrete syntax ----

namespace detail {

Process parse_process(Cursor& cur);  // fwd

inline std::string parse_binder(Cursor& cur, const std::string& what) {
  std::string id = cur.expect_ident(what);
  if (is_reserved_word(id)) cur.fail("reserved word '" + id + "' used as binder");
  return id;
}

inline Process parse_prefix(Cursor& cur) {
  if (cur.try_consume('0')) return Process::nil();
  if (cur.try_consume('(')) {
    Process p = parse_process(cur);
    cur.expect(')', "to close group");
    return p;
  }
  if (cur.try_consume('!')) return Process::bang(parse_prefix(cur));
  if (cur.try_consume('[')) {
    Message a = parse_message(cur);
    cur.expect('=', "in match");
    Message b = parse_message(cur);
    cur.expect(']', "to close match");
    return Process::match(std::move(a), std::move(b), parse_prefix(cur));
  }
  if (cur.try_keyword("out")) {
    cur.expect('(', "after 'out'");
    Message c = parse_message(cur);
    cur.expect(',', "in output");
    Message m = parse_message(cur);
    cur.expect(')', "to close output");
    cur.expect('.', "after output prefix");
    return Process::output(std::move(c), std::move(m), parse_prefix(cur));
  }
  if (cur.try_keyword("in")) {
    cur.expect('(', "after 'in'");
    Message c = parse_message(cur);
    cur.expect(',', "in input");
    std::string x = parse_binder(cur, "as input binder");
    cur.expect(')', "to close input");
    cur.expect('.', "after input prefix");
    return Process::input(std::move(c), std::move(x), parse_prefix(cur));
  }
  if (cur.try_keyword("nu")) {
    std::string x = parse_binder(cur, "after 'nu'");
    cur.expect('.', "after restriction binder");
    return Process::nu(std::move(x), parse_prefix(cur));
  }
  if (cur.try_keyword("let")) {
    cur.expect('(', "after 'let'");
    std::string x = parse_binder(cur, "as first let binder");
    cur.expect(',', "in let binders");
    std::string y = parse_binder(cur, "as second let binder");
    cur.expect(')', "to close let binders");
    cur.expect('=', "in let");
    Message src = parse_message(cur);
    if (!cur.try_keyword("in")) cur.fail("expected 'in' in let");
    return Process::let_in(std::move(x), std::move(y), std::move(src),
                           parse_prefix(cur));
  }
  if (cur.try_keyword("case")) {
    Message src = parse_message(cur);
    if (!cur.try_keyword("of")) cur.fail("expected 'of' in case");
    cur.expect('{', "in case pattern");
    std::string x = parse_binder(cur, "as case binder");
    cur.expect('}', "to close case pattern");
    Message key = parse_message(cur);
    if (!cur.try_keyword("in")) cur.fail("expected 'in' in case");
    return Process::case_of(std::move(src), std::move(x), std::move(key),
                            parse_prefix(cur));
  }
  cur.fail("expected a process");
}

inline Process parse_process(Cursor& cur) {
  Process p = parse_prefix(cur);
  while (cur.try_consume('|')) p = Process::par(std::move(p), parse_prefix(cur));
  return p;
}

}  // namespace detail

inline Process parse_process(std::string_view text) {
  detail::Cursor cur(text);
  Process p = detail::parse_process(cur);
  if (!cur.eof()) cur.fail("trailing input after process");
  return p;
}

inline std::string print_process(const Process& p) {
  using K = Process::Kind;
  auto sub = [](const Process& q) {
    std::string s = print_process(q);
    return q.kind() == K::Par ? "(" + s + ")" : s;
  };
  switch (p.kind()) {
    case K::Nil:
      return "0";
    case K::Output:
      return "out(" + print_message(p.msg1()) + "," + print_message(p.msg2()) +
             ")." + sub(p.cont());
    case K::Input:
      return "in(" + print_message(p.msg1()) + "," + p.binder() + ")." +
             sub(p.cont());
    case K::Par: {
      std::string l = print_process(p.left());
      if (p.left().kind() == K::Par) l = "(" + l + ")";  // keep left-assoc shape
      return l + " | " + sub(p.right());
    }
    case K::Restrict:
      return "nu " + p.binder() + ". " + sub(p.cont());
    case K::Bang:
      return "!" + sub(p.cont());
    case K::Match:
      return "[" + print_message(p.msg1()) + " = " + print_message(p.msg2()) +
             "]" + sub(p.cont());
    case K::Let:
      return "let (" + p.binder() + "," + p.binder2() + ") = " +
             print_message(p.msg1()) + " in " + sub(p.cont());
    case K::Case:
      return "case " + print_message(p.msg1()) + " of {" + p.binder() + "}" +
             print_message(p.msg2()) + " in " + sub(p.cont());
  }
  return {};
}

// ---- Reduction relation > ----

// One application of a reduction rule at the top of the process:
//   !P > P | !P      [M = M]P > P
//   let (x,y) = pr(M,N) in P > P[M/x][N/y]
//   case enc(M,N) of {x}N in P > P[M/x]
inline std::optional<Process> reduce(const Process& p) {
  using K = Process::Kind;
  switch (p.kind()) {
    case K::Bang:
      return Process::par(p.cont(), p);
    case K::Match:
      if (p.msg1() == p.msg2()) return p.cont();
      return std::nullopt;
    case K::Let: {
      if (!p.msg1().is_pair()) return std::nullopt;
      // P[M/x][N/y], applied in sequence as written
      Substitution sx, sy;
      sx.bind(p.binder(), p.msg1().left());
      sy.bind(p.binder2(), p.msg1().right());
      return apply_subst(apply_subst(p.cont(), sx), sy);
    }
    case K::Case: {
      if (!p.msg1().is_enc() || !(p.msg1().right() == p.msg2()))
        return std::nullopt;
      Substitution s;
      s.bind(p.binder(), p.msg1().left());
      return apply_subst(p.cont(), s);
    }
    default:
      return std::nullopt;
  }
}

// ---- Agents and actions ----

struct Agent {
  enum class Kind { Proc, Abs, Concr };
  Kind kind = Kind::Proc;
  Process body;
  std::string binder;                   // Abs
  std::vector<std::string> restricted;  // Concr, outermost first
  std::optional<Message> msg;           // Concr

  static Agent proc(Process p) {
    Agent a;
    a.kind = Kind::Proc;
    a.body = std::move(p);
    return a;
  }
  static Agent abs(std::string x, Process p) {
    Agent a;
    a.kind = Kind::Abs;
    a.binder = std::move(x);
    a.body = std::move(p);
    return a;
  }
  static Agent concr(std::vector<std::string> names, Message m, Process p) {
    Agent a;
    a.kind = Kind::Concr;
    a.restricted = std::move(names);
    a.msg = std::move(m);
    a.body = std::move(p);
    return a;
  }
};

struct Action {
  enum class Kind { Tau, In, Out };
  Kind kind = Kind::Tau;
  std::optional<Message> chan;

  static Action tau() { return {}; }
  static Action in(Message m) { return {Kind::In, std::move(m)}; }
  static Action out(Message m) { return {Kind::Out, std::move(m)}; }

  friend bool operator==(const Action& a, const Action& b) {
    if (a.kind != b.kind) return false;
    if (!a.chan || !b.chan) return !a.chan && !b.chan;
    return *a.chan == *b.chan;
  }
};

inline NameSets free_names(const Agent& a) {
  NameSets out;
  switch (a.kind) {
    case Agent::Kind::Proc:
      return free_names(a.body);
    case Agent::Kind::Abs: {
      out = free_names(a.body);
      out.names.erase(a.binder);
      return out;
    }
    case Agent::Kind::Concr: {
      std::set<std::string> bound(a.restricted.begin(), a.restricted.end());
      detail::collect_scoped(*a.msg, bound, out);
      NameSets b = free_names(a.body);
      for (auto& n : b.names)
        if (!bound.count(n)) out.names.insert(n);
      out.rigids.insert(b.rigids.begin(), b.rigids.end());
      return out;
    }
  }
  return out;
}

inline bool is_pure(const Agent& a) { return free_names(a).rigids.empty(); }

inline std::string print_action(const Action& a) {
  switch (a.kind) {
    case Action::Kind::Tau: return "tau";
    case Action::Kind::In: return "in " + print_message(*a.chan);
    case Action::Kind::Out: return "out " + print_message(*a.chan);
  }
  return {};
}

inline std::string print_agent(const Agent& a) {
  switch (a.kind) {
    case Agent::Kind::Proc:
      return print_process(a.body);
    case Agent::Kind::Abs:
      return "(" + a.binder + ")" + print_process(a.body);
    case Agent::Kind::Concr: {
      std::string out;
      if (!a.restricted.empty()) {
        out = "(nu";
        for (size_t i = 0; i < a.restricted.size(); ++i)
          out += (i ? "," : " ") + a.restricted[i];
        out += ")";
      }
      out += "<" + print_message(*a.msg) + "> " + print_process(a.body);
      return out;
    }
  }
  return {};
}

inline std::string alpha_key(const Agent& a) {
  switch (a.kind) {
    case Agent::Kind::Proc:
      return "P:" + alpha_key(a.body);
    case Agent::Kind::Abs:
      return "A:" + alpha_key(Process::input(Message::name("_ch"), a.binder, a.body));
    case Agent::Kind::Concr: {
      Process wrapped = Process::output(Message::name("_ch"), *a.msg, a.body);
      for (auto it = a.restricted.rbegin(); it != a.restricted.rend(); ++it)
        wrapped = Process::nu(*it, std::move(wrapped));
      return "C" + std::to_string(a.restricted.size()) + ":" + alpha_key(wrapped);
    }
  }
  return {};
}

// ---- Agent compositions and interactions ----

namespace detail {

inline Agent rename_agent_binders(Agent a, const std::set<std::string>& avoid) {
  switch (a.kind) {
    case Agent::Kind::Proc:
      return a;
    case Agent::Kind::Abs: {
      if (!avoid.count(a.binder)) return a;
      std::set<std::string> used = avoid;
      NameSets f = free_names(a.body);
      used.insert(f.names.begin(), f.names.end());
      std::string nb = fresh_name(a.binder, used);
      Substitution s;
      s.bind(a.binder, Message::name(nb));
      return Agent::abs(nb, apply_subst(a.body, s));
    }
    case Agent::Kind::Concr: {
      bool clash = false;
      for (auto& x : a.restricted)
        if (avoid.count(x)) clash = true;
      if (!clash) return a;
      std::set<std::string> used = avoid;
      NameSets f = free_names(a.body);
      used.insert(f.names.begin(), f.names.end());
      NameSets fm = free_names(*a.msg);
      used.insert(fm.names.begin(), fm.names.end());
      Substitution s;
      std::vector<std::string> nr;
      for (auto& x : a.restricted) {
        if (avoid.count(x)) {
          std::string nx = fresh_name(x, used);
          used.insert(nx);
          s.bind(x, Message::name(nx));
          nr.push_back(nx);
        } else {
          used.insert(x);
          nr.push_back(x);
        }
      }
      return Agent::concr(std::move(nr), apply_subst(*a.msg, s),
                          apply_subst(a.body, s));
    }
  }
  return a;
}

}  // namespace detail

// R | A and A | R, following the defining equations; binders of A are
// renamed away from fn(R) first.
inline Agent compose_process_agent(const Process& r, Agent a, bool agent_left) {
  NameSets rf = free_names(r);
  a = detail::rename_agent_binders(std::move(a), rf.names);
  switch (a.kind) {
    case Agent::Kind::Proc:
      return Agent::proc(agent_left ? Process::par(a.body, r)
                                    : Process::par(r, a.body));
    case Agent::Kind::Abs:
      return Agent::abs(a.binder, agent_left ? Process::par(a.body, r)
                                             : Process::par(r, a.body));
    case Agent::Kind::Concr:
      return Agent::concr(a.restricted, *a.msg,
                          agent_left ? Process::par(a.body, r)
                                     : Process::par(r, a.body));
  }
  return a;
}

// (nu x)A per the defining equations. For concretions the restriction
// joins the extruded names when x occurs in the emitted message.
inline Agent restrict_agent(const std::string& x, Agent a) {
  a = detail::rename_agent_binders(std::move(a), {x});
  switch (a.kind) {
    case Agent::Kind::Proc:
      return Agent::proc(Process::nu(x, a.body));
    case Agent::Kind::Abs:
      return Agent::abs(a.binder, Process::nu(x, a.body));
    case Agent::Kind::Concr: {
      NameSets fm = free_names(*a.msg);
      if (fm.names.count(x)) {
        std::vector<std::string> nr;
        nr.push_back(x);
        nr.insert(nr.end(), a.restricted.begin(), a.restricted.end());
        return Agent::concr(std::move(nr), *a.msg, a.body);
      }
      return Agent::concr(a.restricted, *a.msg, Process::nu(x, a.body));
    }
  }
  return a;
}

// F @ C and C @ F. The abstraction receives the concretion's message;
// the concretion's restricted names are renamed fresh for the
// abstraction's body first.
inline Process interact(const Agent& f, const Agent& c, bool abs_first) {
  assert(f.kind == Agent::Kind::Abs && c.kind == Agent::Kind::Concr);
  NameSets ff = free_names(f.body);
  std::set<std::string> avoid = ff.names;
  avoid.insert(f.binder);
  Agent cc = detail::rename_agent_binders(c, avoid);
  Substitution s;
  s.bind(f.binder, *cc.msg);
  Process fb = apply_subst(f.body, s);
  Process inner = abs_first ? Process::par(std::move(fb), cc.body)
                            : Process::par(cc.body, std::move(fb));
  for (auto it = cc.restricted.rbegin(); it != cc.restricted.rend(); ++it)
    inner = Process::nu(*it, std::move(inner));
  return inner;
}

// ---- One-step transitions (the operational semantics) ----

inline std::vector<std::pair<Action, Agent>> step(const Process& p) {
  using K = Process::Kind;
  std::vector<std::pair<Action, Agent>> out;
  switch (p.kind()) {
    case K::Nil:
      break;
    case K::Input:
      out.push_back({Action::in(p.msg1()), Agent::abs(p.binder(), p.cont())});
      break;
    case K::Output:
      out.push_back({Action::out(p.msg1()), Agent::concr({}, p.msg2(), p.cont())});
      break;
    case K::Par: {
      auto ls = step(p.left());
      auto rs = step(p.right());
      for (auto& [a, ag] : ls)
        out.push_back({a, compose_process_agent(p.right(), ag, true)});
      for (auto& [a, ag] : rs)
        out.push_back({a, compose_process_agent(p.left(), ag, false)});
      for (auto& [la, lag] : ls)
        for (auto& [ra, rag] : rs) {
          if (la.kind == Action::Kind::In && ra.kind == Action::Kind::Out &&
              *la.chan == *ra.chan)
            out.push_back({Action::tau(), Agent::proc(interact(lag, rag, true))});
          if (la.kind == Action::Kind::Out && ra.kind == Action::Kind::In &&
              *la.chan == *ra.chan)
            out.push_back({Action::tau(), Agent::proc(interact(rag, lag, false))});
        }
      break;
    }
    case K::Restrict: {
      for (auto& [a, ag] : step(p.cont())) {
        if (a.chan && free_names(*a.chan).names.count(p.binder())) continue;
        out.push_back({a, restrict_agent(p.binder(), ag)});
      }
      break;
    }
    case K::Bang: {
      // !P > P | !P, unfolded once per invocation: the residual
      // replication is inert within this step.
      for (auto& [a, ag] : step(p.cont()))
        out.push_back({a, compose_process_agent(p, ag, true)});
      break;
    }
    case K::Match:
    case K::Let:
    case K::Case: {
      if (auto q = reduce(p)) out = step(*q);
      break;
    }
  }
  // Deduplicate and order by (action, agent) keys.
  auto key = [](const std::pair<Action, Agent>& t) {
    std::string k;
    switch (t.first.kind) {
      case Action::Kind::Tau: k = "0tau"; break;
      case Action::Kind::In: k = "1in:" + print_message(*t.first.chan); break;
      case Action::Kind::Out: k = "2out:" + print_message(*t.first.chan); break;
    }
    return k + ";" + alpha_key(t.second);
  };
  std::sort(out.begin(), out.end(),
            [&](const auto& a, const auto& b) { return key(a) < key(b); });
  out.erase(std::unique(out.begin(), out.end(),
                        [&](const auto& a, const auto& b) {
                          return key(a) == key(b);
                        }),
            out.end());
  return out;
}

// ---- Structural equivalence (sound canonical-form check) ----

namespace detail {

inline Process fold_par_sorted(std::vector<Process> comps) {
  if (comps.empty()) return Process::nil();
  std::sort(comps.begin(), comps.end(), [](const Process& a, const Process& b) {
    return alpha_key(a) < alpha_key(b);
  });
  Process acc = comps.front();
  for (size_t i = 1; i < comps.size(); ++i)
    acc = Process::par(std::move(acc), comps[i]);
  return acc;
}

inline Process top_reduce(Process p) {
  while (p.kind() != Process::Kind::Bang) {
    auto r = reduce(p);
    if (!r) break;
    p = std::move(*r);
  }
  return p;
}

// Hoists all restrictions on the parallel spine to one level, renaming a
// binder only when it collides with an already-seen name. Components are
// the non-spine subprocesses, with top reductions applied.
inline void collect_spine(const Process& p, std::set<std::string>& used,
                          std::vector<std::string>& binders,
                          std::vector<Process>& comps) {
  Process q = top_reduce(p);
  switch (q.kind()) {
    case Process::Kind::Nil:
      return;
    case Process::Kind::Par:
      collect_spine(q.left(), used, binders, comps);
      collect_spine(q.right(), used, binders, comps);
      return;
    case Process::Kind::Restrict: {
      std::string x = q.binder();
      Process body = q.cont();
      if (used.count(x)) {
        std::string nx = fresh_name(x, used);
        Substitution s;
        s.bind(x, Message::name(nx));
        body = apply_subst(body, s);
        x = nx;
      }
      used.insert(x);
      binders.push_back(x);
      collect_spine(body, used, binders, comps);
      return;
    }
    default:
      comps.push_back(q);
      return;
  }
}

// Rebuilds a spine: every binder wraps exactly the connected cluster of
// components reachable through shared binders; outer binders are the
// ones used by the most components, remaining ties resolved by the least
// resulting canonical key.
inline Process build_spine(std::vector<std::string> binders,
                           std::vector<Process> comps) {
  // usage sets; vacuous binders disappear
  std::vector<std::pair<std::string, std::vector<size_t>>> use;
  for (auto& b : binders) {
    std::vector<size_t> ids;
    for (size_t i = 0; i < comps.size(); ++i)
      if (free_names(comps[i]).names.count(b)) ids.push_back(i);
    if (!ids.empty()) use.push_back({b, std::move(ids)});
  }
  if (use.empty()) return fold_par_sorted(std::move(comps));

  // connected clusters of components linked by shared binders
  std::vector<size_t> parent(comps.size());
  for (size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  std::function<size_t(size_t)> find = [&](size_t i) {
    return parent[i] == i ? i : parent[i] = find(parent[i]);
  };
  for (auto& [b, ids] : use)
    for (size_t k = 1; k < ids.size(); ++k) parent[find(ids[0])] = find(ids[k]);

  std::map<size_t, std::vector<size_t>> clusters;
  for (size_t i = 0; i < comps.size(); ++i) clusters[find(i)].push_back(i);

  std::vector<Process> top;
  for (auto& [root, ids] : clusters) {
    std::vector<std::string> cluster_binders;
    size_t max_use = 0;
    for (auto& [b, bids] : use)
      if (find(bids[0]) == root) {
        cluster_binders.push_back(b);
        max_use = std::max(max_use, bids.size());
      }
    if (cluster_binders.empty()) {
      for (size_t i : ids) top.push_back(comps[i]);
      continue;
    }
    std::vector<Process> cluster_comps;
    for (size_t i : ids) cluster_comps.push_back(comps[i]);
    // outermost binder: widest usage, ties by least resulting key
    std::optional<Process> best;
    std::string best_key;
    for (auto& [b, bids] : use) {
      if (find(bids[0]) != root || bids.size() != max_use) continue;
      std::vector<std::string> rest;
      for (auto& c : cluster_binders)
        if (c != b) rest.push_back(c);
      Process cand = Process::nu(b, build_spine(rest, cluster_comps));
      std::string k = alpha_key(cand);
      if (!best || k < best_key) {
        best = cand;
        best_key = k;
      }
    }
    top.push_back(*best);
  }
  return fold_par_sorted(std::move(top));
}

inline Process canon(const Process& p) {
  Process q = top_reduce(p);
  if (q.kind() != Process::Kind::Par && q.kind() != Process::Kind::Restrict &&
      !q.is_nil())
    return q;
  NameSets all = free_names(q);
  std::set<std::string> used = all.names;
  std::vector<std::string> binders;
  std::vector<Process> comps;
  collect_spine(q, used, binders, comps);
  return build_spine(std::move(binders), std::move(comps));
}

}  // namespace detail

// Canonical form under the structural-equivalence axioms: reductions
// applied at parallel/restriction spines, parallel composition flattened
// and sorted, vacuous restrictions erased, restriction scopes minimized,
// comparison up to alpha. Sound: equal canonical forms imply structural
// equivalence; completeness is not claimed.
inline Process struct_canon(const Process& p) {
  if (p.contains_bang())
    throw std::invalid_argument("struct_canon: replication not supported");
  return detail::canon(p);
}

inline bool struct_equiv(const Process& p, const Process& q) {
  return alpha_equal(struct_canon(p), struct_canon(q));
}

inline bool struct_equiv(const Agent& a, const Agent& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case Agent::Kind::Proc:
      return struct_equiv(a.body, b.body);
    case Agent::Kind::Abs: {
      if (a.binder == b.binder) return struct_equiv(a.body, b.body);
      std::set<std::string> used = free_names(a.body).names;
      NameSets bf = free_names(b.body);
      used.insert(bf.names.begin(), bf.names.end());
      std::string x = fresh_name(a.binder, used);
      Substitution sa, sb;
      sa.bind(a.binder, Message::name(x));
      sb.bind(b.binder, Message::name(x));
      return struct_equiv(apply_subst(a.body, sa), apply_subst(b.body, sb));
    }
    case Agent::Kind::Concr: {
      if (a.restricted.size() != b.restricted.size()) return false;
      // permutations of the restricted names are allowed
      std::vector<size_t> idx(b.restricted.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end());
      do {
        std::set<std::string> used = free_names(a.body).names;
        NameSets am = free_names(*a.msg);
        used.insert(am.names.begin(), am.names.end());
        NameSets bf = free_names(b.body);
        used.insert(bf.names.begin(), bf.names.end());
        Substitution sa, sb;
        std::vector<std::string> canon_names;
        bool ok = true;
        for (size_t i = 0; i < a.restricted.size(); ++i) {
          std::string x = fresh_name("cn" + std::to_string(i), used);
          used.insert(x);
          sa.bind(a.restricted[i], Message::name(x));
          sb.bind(b.restricted[idx[i]], Message::name(x));
        }
        if (!(apply_subst(*a.msg, sa) == apply_subst(*b.msg, sb))) ok = false;
        if (ok && struct_equiv(apply_subst(a.body, sa), apply_subst(b.body, sb)))
          return true;
      } while (std::next_permutation(idx.begin(), idx.end()));
      return false;
    }
  }
  return false;
}

}  // namespace spi

#endif  // SPI_PROCESS_HPP
