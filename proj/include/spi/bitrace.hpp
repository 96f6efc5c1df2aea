#ifndef SPI_BITRACE_HPP
#define SPI_BITRACE_HPP

#include <optional>
#include <string>
#include <vector>

#include "spi/theory.hpp"

namespace spi {

enum class Mark { Input, Output };

// An I/O message pair: input pairs introduce symbolic names, output
// pairs record emitted messages (and may introduce fresh rigid names).
struct IOPair {
  Message left;
  Message right;
  Mark mark = Mark::Input;

  friend bool operator==(const IOPair& a, const IOPair& b) {
    return a.mark == b.mark && a.left == b.left && a.right == b.right;
  }
};

inline IOPair in_pair(Message l, Message r) {
  return {std::move(l), std::move(r), Mark::Input};
}
inline IOPair out_pair(Message l, Message r) {
  return {std::move(l), std::move(r), Mark::Output};
}

struct ScopingError : std::runtime_error {
  size_t index;
  ScopingError(std::string msg, size_t idx)
      : std::runtime_error(std::move(msg)), index(idx) {}
};

// A bi-trace: an ordered list of I/O pairs subject to output scoping.
// Every plain name of an output pair must occur earlier in the trace;
// rigid names in outputs may be new (they model freshly extruded
// values).
class BiTrace {
 public:
  BiTrace() = default;

  static BiTrace validate(std::vector<IOPair> entries) {
    std::set<std::string> seen;
    for (size_t k = 0; k < entries.size(); ++k) {
      NameSets f;
      collect_names(entries[k].left, f);
      collect_names(entries[k].right, f);
      if (entries[k].mark == Mark::Output) {
        for (auto& x : f.names)
          if (!seen.count(x))
            throw ScopingError("output at index " + std::to_string(k) +
                                   " uses name '" + x +
                                   "' not introduced earlier",
                               k);
      }
      seen.insert(f.names.begin(), f.names.end());
    }
    BiTrace h;
    h.entries_ = std::move(entries);
    return h;
  }

  const std::vector<IOPair>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const IOPair& operator[](size_t i) const { return entries_[i]; }

  BiTrace prefix(size_t n) const {
    BiTrace h;
    h.entries_.assign(entries_.begin(), entries_.begin() + n);
    return h;
  }

  BiTrace append(IOPair p) const {
    std::vector<IOPair> es = entries_;
    es.push_back(std::move(p));
    return validate(std::move(es));
  }

  friend bool operator==(const BiTrace& a, const BiTrace& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<IOPair> entries_;
};

inline ObserverTheory underlying_theory(const BiTrace& h) {
  ObserverTheory g;
  for (auto& e : h.entries()) g.insert({e.left, e.right});
  return g;
}

inline BiTrace inverse_bitrace(const BiTrace& h) {
  std::vector<IOPair> es;
  for (auto& e : h.entries()) es.push_back({e.right, e.left, e.mark});
  return BiTrace::validate(std::move(es));
}

inline std::vector<std::pair<Message, Mark>> project(const BiTrace& h, int side) {
  std::vector<std::pair<Message, Mark>> out;
  for (auto& e : h.entries())
    out.push_back({side == 1 ? e.left : e.right, e.mark});
  return out;
}

inline MessageSet project_msgs(const BiTrace& h, int side) {
  MessageSet out;
  for (auto& e : h.entries()) out.insert(side == 1 ? e.left : e.right);
  return out;
}

inline NameSets free_names(const BiTrace& h) {
  NameSets out;
  for (auto& e : h.entries()) {
    collect_names(e.left, out);
    collect_names(e.right, out);
  }
  return out;
}

inline BiTrace apply_subst_pair(const BiTrace& h, const SubstitutionPair& sp) {
  std::vector<IOPair> es;
  for (auto& e : h.entries())
    es.push_back({apply_subst(e.left, sp.first), apply_subst(e.right, sp.second),
                  e.mark});
  return BiTrace::validate(std::move(es));
}

inline bool bitrace_reflexive(const BiTrace& h) {
  for (auto& e : h.entries())
    if (!(e.left == e.right)) return false;
  return true;
}

// A universal bi-trace: identity input pairs of names only.
inline BiTrace universal_bitrace(const std::set<std::string>& names) {
  std::vector<IOPair> es;
  for (auto& x : names) es.push_back(in_pair(Message::name(x), Message::name(x)));
  return BiTrace::validate(std::move(es));
}

// ---- Respectful substitution pairs ----

struct RespectsResult {
  bool ok = true;
  size_t position = 0;   // first failing input entry
  std::string name;      // first failing name at that entry

  explicit operator bool() const { return ok; }
};

// sp respects h when, for every input pair and every name free in it,
// the instantiated values are derivably equivalent under the
// instantiated strict prefix.
inline RespectsResult respects(const SubstitutionPair& sp, const BiTrace& h) {
  for (size_t k = 0; k < h.size(); ++k) {
    if (h[k].mark != Mark::Input) continue;
    NameSets f;
    collect_names(h[k].left, f);
    collect_names(h[k].right, f);
    if (f.names.empty()) continue;
    EquivEngine eng(underlying_theory(apply_subst_pair(h.prefix(k), sp)));
    for (auto& x : f.names) {
      Message vl = sp.first.get(x);
      Message vr = sp.second.get(x);
      if (!eng.derivable(vl, vr)) return {false, k, x};
    }
  }
  return {};
}

// ---- Bounded enumeration of respectful substitution pairs ----

// Yields substitution pairs over the names of h, built left to right
// over input positions. At each input pair a newly introduced name may
// stay symbolic, be identified with an already-visible or fresh name, or
// take a value from the bounded synthesis closure of the first
// projection of the instantiated prefix (the second component then being
// the unique equivalent under the prefix theory). The result is finite,
// deterministically ordered and every element respects h.
inline std::vector<SubstitutionPair> enumerate_respectful(
    const BiTrace& h, int depth, const std::set<std::string>& extra_names = {}) {
  std::vector<SubstitutionPair> states{{}};
  std::set<std::string> introduced;

  for (size_t k = 0; k < h.size(); ++k) {
    NameSets f;
    collect_names(h[k].left, f);
    collect_names(h[k].right, f);
    if (h[k].mark != Mark::Input) {
      introduced.insert(f.names.begin(), f.names.end());
      continue;
    }
    std::vector<std::string> fresh_here;
    for (auto& x : f.names)
      if (!introduced.count(x)) fresh_here.push_back(x);
    introduced.insert(f.names.begin(), f.names.end());
    if (fresh_here.empty()) continue;

    std::vector<SubstitutionPair> next;
    for (auto& sp : states) {
      BiTrace inst_prefix = apply_subst_pair(h.prefix(k), sp);
      ObserverTheory prefix_theory = underlying_theory(inst_prefix);
      EquivEngine eng(prefix_theory);

      // name pool for identity candidates
      std::set<std::string> pool;
      NameSets pf = free_names(inst_prefix);
      pool.insert(pf.names.begin(), pf.names.end());
      pool.insert(extra_names.begin(), extra_names.end());

      // synthesis closure of the first projection, bounded by depth
      SynthEngine synth(project_msgs(inst_prefix, 1));
      std::set<Message> closure = synth.analyzed();
      for (auto& y : pool) closure.insert(Message::name(y));
      for (int d = 0; d < depth; ++d) {
        std::set<Message> grown = closure;
        for (auto& a : closure)
          for (auto& b : closure) {
            grown.insert(Message::pair(a, b));
            grown.insert(Message::enc(a, b));
          }
        closure.swap(grown);
      }

      // per-name candidate values; nullopt = leave the name symbolic
      std::vector<std::vector<std::optional<MessagePair>>> cands;
      for (auto& x : fresh_here) {
        std::vector<std::optional<MessagePair>> cs;
        cs.push_back(std::nullopt);
        std::set<std::string> used = pool;
        used.insert(x);
        for (auto& s : sp.first.domain()) used.insert(s);
        std::string fresh = fresh_name(x, used);
        for (auto& y : pool)
          cs.push_back(MessagePair{Message::name(y), Message::name(y)});
        cs.push_back(MessagePair{Message::name(fresh), Message::name(fresh)});
        for (auto& m : closure) {
          if (m.is_name()) continue;  // covered by the identity candidates
          const auto& ps = eng.partners(m);
          if (ps.size() == 1) cs.push_back(MessagePair{m, *ps.begin()});
        }
        cands.push_back(std::move(cs));
      }

      // cartesian combination over the names introduced here
      std::vector<SubstitutionPair> exts{sp};
      for (size_t i = 0; i < fresh_here.size(); ++i) {
        std::vector<SubstitutionPair> grown;
        for (auto& base : exts)
          for (auto& c : cands[i]) {
            SubstitutionPair e = base;
            if (c) {
              e.first.bind(fresh_here[i], c->first);
              e.second.bind(fresh_here[i], c->second);
            }
            grown.push_back(std::move(e));
          }
        exts.swap(grown);
      }

      // keep extensions whose values are equivalent under the prefix
      for (auto& e : exts) {
        bool ok = true;
        for (auto& x : fresh_here) {
          Message vl = e.first.get(x);
          Message vr = e.second.get(x);
          if (vl.is_name() && vl == vr) continue;  // names are always equal
          if (!eng.derivable(vl, vr)) {
            ok = false;
            break;
          }
        }
        if (ok) next.push_back(std::move(e));
      }
    }
    states.swap(next);
  }

  // deduplicate, preserving generation order
  std::vector<SubstitutionPair> out;
  std::set<std::string> seen;
  for (auto& sp : states) {
    std::string key = print_subst(sp.first) + "|" + print_subst(sp.second);
    if (seen.insert(key).second) out.push_back(std::move(sp));
  }
  return out;
}

// ---- Bounded bi-trace consistency ----

struct BitraceVerdict {
  bool consistent = true;
  size_t position = 0;
  std::optional<SubstitutionPair> witness;
  ConsistencyReport report;

  explicit operator bool() const { return consistent; }
};

// Inductive check: input extensions need the pair derivable under the
// prefix; output extensions quantify over the bounded respectful
// substitutions of the prefix and require the instantiated underlying
// theory to stay consistent (when the instantiated prefix theory is).
// The verdict is "consistent up to the given depth", never absolute.
inline BitraceVerdict bitrace_consistent_bounded(const BiTrace& h, int depth) {
  for (size_t k = 0; k < h.size(); ++k) {
    BiTrace pre = h.prefix(k);
    if (h[k].mark == Mark::Input) {
      if (!derivable_equiv(underlying_theory(pre), h[k].left, h[k].right)) {
        BitraceVerdict v;
        v.consistent = false;
        v.position = k;
        return v;
      }
      continue;
    }
    BiTrace upto = h.prefix(k + 1);
    if (bitrace_reflexive(upto)) continue;  // reflexive traces are consistent
    for (auto& sp : enumerate_respectful(pre, depth)) {
      if (!is_consistent(underlying_theory(apply_subst_pair(pre, sp))))
        continue;
      ConsistencyReport rep =
          is_consistent(underlying_theory(apply_subst_pair(upto, sp)));
      if (!rep) {
        BitraceVerdict v;
        v.consistent = false;
        v.position = k;
        v.witness = sp;
        v.report = std::move(rep);
        return v;
      }
    }
  }
  return {};
}

// ---- Composition ----

inline std::optional<BiTrace> compose_bitraces(const BiTrace& h1,
                                               const BiTrace& h2) {
  if (h1.size() != h2.size()) return std::nullopt;
  std::vector<IOPair> es;
  for (size_t k = 0; k < h1.size(); ++k) {
    if (h1[k].mark != h2[k].mark) return std::nullopt;
    if (!(h1[k].right == h2[k].left)) return std::nullopt;
    es.push_back({h1[k].left, h2[k].right, h1[k].mark});
  }
  return BiTrace::validate(std::move(es));
}

// ---- Weakening / contraction / flex-rigid orders ----

enum class OrderKind { Weakening, Contraction, FlexRigid };

struct OrderJustification {
  std::vector<size_t> positions;  // inserted/removed/reversed entries
  Substitution theta;             // flex-rigid only
};

namespace detail {

// h embeds into hp as a subsequence; skipped entries of hp must satisfy
// `skippable` (evaluated against hp and the skipped index).
template <typename F>
inline std::optional<std::vector<size_t>> embed_subsequence(
    const BiTrace& h, const BiTrace& hp, F skippable) {
  size_t n = h.size(), m = hp.size();
  if (n > m) return std::nullopt;
  // memo[i][j]: can h[i..) embed into hp[j..)
  std::vector<std::vector<int>> memo(n + 1, std::vector<int>(m + 1, -1));
  std::function<bool(size_t, size_t)> go = [&](size_t i, size_t j) -> bool {
    if (memo[i][j] != -1) return memo[i][j];
    bool res;
    if (i == n) {
      res = true;
      for (size_t t = j; t < m; ++t)
        if (!skippable(t)) {
          res = false;
          break;
        }
    } else if (j == m) {
      res = false;
    } else {
      res = (h[i] == hp[j] && go(i + 1, j + 1)) || (skippable(j) && go(i, j + 1));
    }
    memo[i][j] = res;
    return res;
  };
  if (!go(0, 0)) return std::nullopt;
  // reconstruct skipped positions along a witnessing embedding
  std::vector<size_t> skipped;
  size_t i = 0, j = 0;
  while (j < hp.size()) {
    if (i < n && h[i] == hp[j] && memo[i + 1][j + 1] == 1) {
      ++i;
      ++j;
    } else {
      skipped.push_back(j);
      ++j;
    }
  }
  return skipped;
}

}  // namespace detail

// Decides the reflexive-transitive closures of the one-step bi-trace
// orders, reading h <=_kind hp:
//   weakening:   hp extends h with pairs scoped by their hp-prefix
//   contraction: h extends hp with pairs derivable from their h-prefix
//   flex-rigid:  h replaces some identity name inputs of hp with fresh
//                rigid-name outputs, substituted through the suffix
inline std::optional<OrderJustification> bitrace_le(const BiTrace& h,
                                                    const BiTrace& hp,
                                                    OrderKind kind) {
  switch (kind) {
    case OrderKind::Weakening: {
      auto skipped = detail::embed_subsequence(h, hp, [&](size_t j) {
        NameSets f;
        collect_names(hp[j].left, f);
        collect_names(hp[j].right, f);
        NameSets pre = free_names(hp.prefix(j));
        for (auto& x : f.names)
          if (!pre.names.count(x)) return false;
        for (auto& r : f.rigids)
          if (!pre.rigids.count(r)) return false;
        return true;
      });
      if (!skipped) return std::nullopt;
      return OrderJustification{std::move(*skipped), {}};
    }
    case OrderKind::Contraction: {
      auto skipped = detail::embed_subsequence(hp, h, [&](size_t j) {
        return derivable_equiv(underlying_theory(h.prefix(j)), h[j].left,
                               h[j].right);
      });
      if (!skipped) return std::nullopt;
      return OrderJustification{std::move(*skipped), {}};
    }
    case OrderKind::FlexRigid: {
      if (h.size() != hp.size()) return std::nullopt;
      Substitution theta;
      std::vector<size_t> positions;
      NameSets hp_names = free_names(hp);
      for (size_t k = 0; k < h.size(); ++k) {
        IOPair expect{apply_subst(hp[k].left, theta),
                      apply_subst(hp[k].right, theta), hp[k].mark};
        if (h[k] == expect) continue;
        if (!(hp[k].mark == Mark::Input && hp[k].left.is_name() &&
              hp[k].left == hp[k].right && h[k].mark == Mark::Output &&
              h[k].left.is_rigid() && h[k].left == h[k].right))
          return std::nullopt;
        const std::string& x = hp[k].left.id();
        const std::string& c = h[k].left.id();
        if (theta.binds(x)) return std::nullopt;
        if (free_names(hp.prefix(k)).names.count(x)) return std::nullopt;
        if (hp_names.rigids.count(c)) return std::nullopt;
        bool reused = false;
        for (auto& [y, v] : theta.bindings())
          if (v == h[k].left) reused = true;
        if (reused) return std::nullopt;
        theta.bind(x, h[k].left);
        positions.push_back(k);
      }
      return OrderJustification{std::move(positions), std::move(theta)};
    }
  }
  return std::nullopt;
}

// ---- File format ----

// Bi-trace files: one entry per line, `i: M <-> N` or `o: M <-> N`.
inline BiTrace parse_bitrace_text(std::string_view text) {
  detail::Cursor cur(text);
  std::vector<IOPair> es;
  while (!cur.eof()) {
    std::string mark = cur.expect_ident("('i' or 'o') at start of entry");
    if (mark != "i" && mark != "o")
      cur.fail("expected 'i' or 'o', got '" + mark + "'");
    cur.expect(':', "after entry mark");
    Message m = detail::parse_message(cur);
    cur.expect('<', "in '<->'");
    cur.expect('-', "in '<->'");
    cur.expect('>', "in '<->'");
    Message n = detail::parse_message(cur);
    es.push_back({std::move(m), std::move(n),
                  mark == "i" ? Mark::Input : Mark::Output});
  }
  return BiTrace::validate(std::move(es));
}

inline std::string print_bitrace(const BiTrace& h) {
  std::string out;
  for (auto& e : h.entries()) {
    out += e.mark == Mark::Input ? "i: " : "o: ";
    out += print_message(e.left) + " <-> " + print_message(e.right) + "\n";
  }
  return out;
}

}  // namespace spi

#endif  // SPI_BITRACE_HPP
