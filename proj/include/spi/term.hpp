#ifndef SPI_TERM_HPP
#define SPI_TERM_HPP

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "spi/syntax.hpp"

namespace spi {

// Messages are terms over names, rigid names, pairing and shared-key
// encryption. Names are the substitutable entities; rigid names are
// constants and never appear in substitution domains. Values are
// immutable and structurally shared.
class Message {
 public:
  enum class Kind { Name, Rigid, Pair, Enc };

  // Placeholder value for aggregate members that are always overwritten.
  Message() : Message(Kind::Name, "_", nullptr, nullptr) {}

  static Message name(std::string id) {
    return Message(Kind::Name, std::move(id), nullptr, nullptr);
  }
  static Message rigid(std::string id) {
    return Message(Kind::Rigid, std::move(id), nullptr, nullptr);
  }
  static Message pair(Message l, Message r) {
    return Message(Kind::Pair, {}, std::make_shared<Message>(std::move(l)),
                   std::make_shared<Message>(std::move(r)));
  }
  static Message enc(Message body, Message key) {
    return Message(Kind::Enc, {}, std::make_shared<Message>(std::move(body)),
                   std::make_shared<Message>(std::move(key)));
  }

  Kind kind() const { return kind_; }
  bool is_name() const { return kind_ == Kind::Name; }
  bool is_rigid() const { return kind_ == Kind::Rigid; }
  bool is_pair() const { return kind_ == Kind::Pair; }
  bool is_enc() const { return kind_ == Kind::Enc; }

  // Identifier of a Name or Rigid node.
  const std::string& id() const { return id_; }
  // Left component of a pair / body of an encryption.
  const Message& left() const { return *a_; }
  // Right component of a pair / key of an encryption.
  const Message& right() const { return *b_; }

  // Total order: constructor tag, then recursive comparison, then
  // identifier. Used for canonical printing and redex selection.
  friend int compare(const Message& x, const Message& y) {
    if (x.kind_ != y.kind_) return x.kind_ < y.kind_ ? -1 : 1;
    switch (x.kind_) {
      case Kind::Name:
      case Kind::Rigid:
        return x.id_.compare(y.id_);
      default: {
        if (int c = compare(*x.a_, *y.a_)) return c;
        return compare(*x.b_, *y.b_);
      }
    }
  }
  friend bool operator==(const Message& x, const Message& y) {
    return compare(x, y) == 0;
  }
  friend bool operator!=(const Message& x, const Message& y) {
    return compare(x, y) != 0;
  }
  friend bool operator<(const Message& x, const Message& y) {
    return compare(x, y) < 0;
  }

 private:
  Message(Kind k, std::string id, std::shared_ptr<const Message> a,
          std::shared_ptr<const Message> b)
      : kind_(k), id_(std::move(id)), a_(std::move(a)), b_(std::move(b)) {}

  Kind kind_;
  std::string id_;
  std::shared_ptr<const Message> a_, b_;
};

using MessagePair = std::pair<Message, Message>;

// Free names and free rigid names of an expression, kept separate.
struct NameSets {
  std::set<std::string> names;
  std::set<std::string> rigids;

  void merge(const NameSets& other) {
    names.insert(other.names.begin(), other.names.end());
    rigids.insert(other.rigids.begin(), other.rigids.end());
  }
};

inline void collect_names(const Message& m, NameSets& out) {
  switch (m.kind()) {
    case Message::Kind::Name:
      out.names.insert(m.id());
      break;
    case Message::Kind::Rigid:
      out.rigids.insert(m.id());
      break;
    default:
      collect_names(m.left(), out);
      collect_names(m.right(), out);
  }
}

inline NameSets free_names(const Message& m) {
  NameSets out;
  collect_names(m, out);
  return out;
}

inline bool is_pure(const Message& m) { return free_names(m).rigids.empty(); }

// A substitution maps names to messages. Identity bindings are never
// stored, so the key set is exactly dom(s). Application is simultaneous.
class Substitution {
 public:
  Substitution() = default;

  static Substitution of(std::initializer_list<std::pair<std::string, Message>> bs) {
    Substitution s;
    for (auto& [x, m] : bs) s.bind(x, m);
    return s;
  }

  void bind(const std::string& x, const Message& m) {
    if (m.is_name() && m.id() == x)
      map_.erase(x);
    else
      map_.insert_or_assign(x, m);
  }

  Message get(const std::string& x) const {
    auto it = map_.find(x);
    return it != map_.end() ? it->second : Message::name(x);
  }

  bool binds(const std::string& x) const { return map_.count(x) != 0; }
  bool empty() const { return map_.empty(); }
  size_t size() const { return map_.size(); }

  std::set<std::string> domain() const {
    std::set<std::string> d;
    for (auto& [x, _] : map_) d.insert(x);
    return d;
  }

  const std::map<std::string, Message>& bindings() const { return map_; }

  friend bool operator==(const Substitution& a, const Substitution& b) {
    return a.map_ == b.map_;
  }

 private:
  std::map<std::string, Message> map_;
};

struct SubstitutionPair {
  Substitution first;
  Substitution second;

  friend bool operator==(const SubstitutionPair& a, const SubstitutionPair& b) {
    return a.first == b.first && a.second == b.second;
  }
};

inline Message apply_subst(const Message& m, const Substitution& s) {
  switch (m.kind()) {
    case Message::Kind::Name:
      return s.get(m.id());
    case Message::Kind::Rigid:
      return m;
    case Message::Kind::Pair:
      return Message::pair(apply_subst(m.left(), s), apply_subst(m.right(), s));
    case Message::Kind::Enc:
      return Message::enc(apply_subst(m.left(), s), apply_subst(m.right(), s));
  }
  return m;  // unreachable
}

// Composition t then s: apply_subst(M, compose(t, s)) = (M t) s.
inline Substitution compose_subst(const Substitution& t, const Substitution& s) {
  Substitution out;
  for (auto& [x, m] : t.bindings()) out.bind(x, apply_subst(m, s));
  for (auto& [y, m] : s.bindings())
    if (!t.binds(y)) out.bind(y, m);
  return out;
}

inline Substitution restrict_subst(const Substitution& s,
                                   const std::set<std::string>& v) {
  Substitution out;
  for (auto& [x, m] : s.bindings())
    if (v.count(x)) out.bind(x, m);
  return out;
}

// sigma extends theta: they agree on dom(theta).
inline bool extends(const Substitution& theta, const Substitution& sigma) {
  for (auto& [x, m] : theta.bindings())
    if (!(sigma.get(x) == m)) return false;
  return true;
}

// Deterministic fresh-name scheme for plain names: the base itself when
// unused, otherwise base + smallest unused numeric suffix.
inline std::string fresh_name(const std::string& base,
                              const std::set<std::string>& used) {
  if (!used.count(base)) return base;
  for (int i = 0;; ++i) {
    std::string cand = base + std::to_string(i);
    if (!used.count(cand)) return cand;
  }
}

// Fresh rigid names always carry a numeric suffix, starting at 0.
inline std::string fresh_rigid_id(const std::string& base,
                                  const std::set<std::string>& used) {
  for (int i = 0;; ++i) {
    std::string cand = base + std::to_string(i);
    if (!used.count(cand)) return cand;
  }
}

// ---- Concrete syntax ----
//
//   ident        name
//   #ident       rigid name
//   pr(M,N)      pair
//   enc(M,K)     encryption
//
// `pr` and `enc` are reserved and cannot be used as names.

inline bool is_reserved_word(const std::string& id) {
  return id == "pr" || id == "enc" || id == "in" || id == "out" ||
         id == "nu" || id == "let" || id == "case" || id == "of";
}

namespace detail {

inline Message parse_message(Cursor& cur) {
  if (cur.try_consume('#')) {
    std::string id = cur.expect_ident("after '#'");
    return Message::rigid(id);
  }
  std::string id = cur.expect_ident("at start of message");
  if (id == "pr" || id == "enc") {
    cur.expect('(', "after '" + id + "'");
    Message a = parse_message(cur);
    cur.expect(',', "between components");
    Message b = parse_message(cur);
    cur.expect(')', "to close '" + id + "'");
    return id == "pr" ? Message::pair(std::move(a), std::move(b))
                      : Message::enc(std::move(a), std::move(b));
  }
  if (is_reserved_word(id)) cur.fail("reserved word '" + id + "' used as name");
  return Message::name(id);
}

}  // namespace detail

inline Message parse_message(std::string_view text) {
  detail::Cursor cur(text);
  Message m = detail::parse_message(cur);
  if (!cur.eof()) cur.fail("trailing input after message");
  return m;
}

inline std::string print_message(const Message& m) {
  switch (m.kind()) {
    case Message::Kind::Name:
      return m.id();
    case Message::Kind::Rigid:
      return "#" + m.id();
    case Message::Kind::Pair:
      return "pr(" + print_message(m.left()) + "," + print_message(m.right()) + ")";
    case Message::Kind::Enc:
      return "enc(" + print_message(m.left()) + "," + print_message(m.right()) + ")";
  }
  return {};
}

inline std::string print_subst(const Substitution& s) {
  std::string out = "[";
  bool first = true;
  for (auto& [x, m] : s.bindings()) {
    if (!first) out += ", ";
    first = false;
    out += print_message(m) + "/" + x;
  }
  return out + "]";
}

}  // namespace spi

#endif  // SPI_TERM_HPP
