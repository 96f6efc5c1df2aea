#ifndef SPI_BISIM_HPP
#define SPI_BISIM_HPP

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "spi/bitrace.hpp"
#include "spi/process.hpp"
#include "spi/theory.hpp"

namespace spi {

// A traced process pair: the trace records the interaction history; the
// processes' free names must all occur in the trace (free rigid names
// may be new, they are global constants).
struct TracedTriple {
  BiTrace trace;
  Process left;
  Process right;
};

inline std::string triple_key(const TracedTriple& t) {
  return print_bitrace(t.trace) + "$" + alpha_key(t.left) + "$" +
         alpha_key(t.right);
}

inline TracedTriple inverse_triple(const TracedTriple& t) {
  return {inverse_bitrace(t.trace), t.right, t.left};
}

class TracedRelation {
 public:
  // Deduplicates by trace and alpha-equivalence of the processes.
  bool add(TracedTriple t) {
    if (!keys_.insert(triple_key(t)).second) return false;
    triples_.push_back(std::move(t));
    return true;
  }

  const std::vector<TracedTriple>& triples() const { return triples_; }
  size_t size() const { return triples_.size(); }

  // Members followed by their inverses, deduplicated, stable order.
  // origins, when given, receives the member index each entry came from.
  std::vector<TracedTriple> symmetric_closure(
      std::vector<size_t>* origins = nullptr) const {
    std::vector<TracedTriple> out = triples_;
    if (origins)
      for (size_t i = 0; i < triples_.size(); ++i) origins->push_back(i);
    std::set<std::string> keys = keys_;
    for (size_t i = 0; i < triples_.size(); ++i) {
      TracedTriple inv = inverse_triple(triples_[i]);
      if (keys.insert(triple_key(inv)).second) {
        out.push_back(std::move(inv));
        if (origins) origins->push_back(i);
      }
    }
    return out;
  }

 private:
  std::vector<TracedTriple> triples_;
  std::set<std::string> keys_;
};

enum class UpToRule {
  Structural,        // eq
  Weakening,         // w
  Contraction,       // c
  Substitution,      // s
  InjectiveRenaming, // i
  FlexRigid,         // f
  Restriction,       // r
  Parallel           // p
};

inline std::optional<UpToRule> up_to_rule_from_tag(const std::string& tag) {
  if (tag == "eq") return UpToRule::Structural;
  if (tag == "w") return UpToRule::Weakening;
  if (tag == "c") return UpToRule::Contraction;
  if (tag == "s") return UpToRule::Substitution;
  if (tag == "i") return UpToRule::InjectiveRenaming;
  if (tag == "f") return UpToRule::FlexRigid;
  if (tag == "r") return UpToRule::Restriction;
  if (tag == "p") return UpToRule::Parallel;
  return std::nullopt;
}

struct ParallelContext {
  Process process;                  // pure, replication-free template
  std::set<std::string> domain;    // names the instantiation may bind
};

struct CheckConfig {
  int subst_depth = 1;
  std::set<UpToRule> up_to;
  int closure_budget = 3;
  std::vector<ParallelContext> parallel_contexts;
};

struct VerifiedUpToBound {
  int depth = 0;
  size_t obligations_checked = 0;
};

struct Counterexample {
  TracedTriple triple;
  SubstitutionPair subst;
  Action action;
  std::string reason;
};

struct RelationIllFormed {
  size_t position = 0;
  std::string reason;
};

using Verdict = std::variant<VerifiedUpToBound, Counterexample, RelationIllFormed>;

// ---- Equivalent substitutions (for up-to parallel composition) ----

inline bool equiv_subst(const Substitution& s1, const Substitution& s2,
                        const BiTrace& h) {
  if (s1.domain() != s2.domain()) return false;
  NameSets hf = free_names(h);
  std::optional<EquivEngine> eng;
  for (auto& [x, v1] : s1.bindings()) {
    Message v2 = s2.get(x);
    NameSets vf = free_names(v1);
    collect_names(v2, vf);
    for (auto& n : vf.names)
      if (!hf.names.count(n)) return false;
    if (v1.is_name() && v1 == v2) continue;
    if (!eng) eng.emplace(underlying_theory(h));
    if (!eng->derivable(v1, v2)) return false;
  }
  return true;
}

// ---- Deterministic fresh rigid names ----

class FreshSupply {
 public:
  explicit FreshSupply(std::set<std::string> excluded)
      : used_(std::move(excluded)) {}

  Message draw(const std::string& base) {
    std::string id = fresh_rigid_id(base, used_);
    used_.insert(id);
    return Message::rigid(id);
  }

 private:
  std::set<std::string> used_;
};

inline Message fresh_rigid(FreshSupply& supply, const std::string& base) {
  return supply.draw(base);
}

// ---- One-sided matching helpers ----

namespace detail {

// Match a pattern message against a subject, binding the pattern's
// names. Rigid names and already-bound names must agree exactly.
inline bool match_message(const Message& pat, const Message& subj,
                          Substitution& out) {
  switch (pat.kind()) {
    case Message::Kind::Name: {
      if (out.binds(pat.id())) return out.get(pat.id()) == subj;
      if (subj.is_name() && subj.id() == pat.id()) return true;  // identity
      out.bind(pat.id(), subj);
      return true;
    }
    case Message::Kind::Rigid:
      return subj == pat;
    case Message::Kind::Pair:
      return subj.is_pair() && match_message(pat.left(), subj.left(), out) &&
             match_message(pat.right(), subj.right(), out);
    case Message::Kind::Enc:
      return subj.is_enc() && match_message(pat.left(), subj.left(), out) &&
             match_message(pat.right(), subj.right(), out);
  }
  return false;
}

// Injective renaming of rigid names: match structurally, names equal,
// rigid names building a bijection.
inline bool match_rigid_bijection(const Message& a, const Message& b,
                                  std::map<std::string, std::string>& fwd,
                                  std::map<std::string, std::string>& bwd) {
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case Message::Kind::Name:
      return a == b;
    case Message::Kind::Rigid: {
      auto f = fwd.find(a.id());
      auto g = bwd.find(b.id());
      if (f == fwd.end() && g == bwd.end()) {
        fwd[a.id()] = b.id();
        bwd[b.id()] = a.id();
        return true;
      }
      return f != fwd.end() && g != bwd.end() && f->second == b.id() &&
             g->second == a.id();
    }
    default:
      return match_rigid_bijection(a.left(), b.left(), fwd, bwd) &&
             match_rigid_bijection(a.right(), b.right(), fwd, bwd);
  }
}

inline Message apply_rigid_renaming(const Message& m,
                                    const std::map<std::string, std::string>& ren) {
  switch (m.kind()) {
    case Message::Kind::Name:
      return m;
    case Message::Kind::Rigid: {
      auto it = ren.find(m.id());
      return it == ren.end() ? m : Message::rigid(it->second);
    }
    case Message::Kind::Pair:
      return Message::pair(apply_rigid_renaming(m.left(), ren),
                           apply_rigid_renaming(m.right(), ren));
    case Message::Kind::Enc:
      return Message::enc(apply_rigid_renaming(m.left(), ren),
                          apply_rigid_renaming(m.right(), ren));
  }
  return m;
}

inline Process apply_rigid_renaming(const Process& p,
                                    const std::map<std::string, std::string>& ren) {
  using K = Process::Kind;
  auto msg = [&](const Message& m) { return apply_rigid_renaming(m, ren); };
  switch (p.kind()) {
    case K::Nil:
      return p;
    case K::Output:
      return Process::output(msg(p.msg1()), msg(p.msg2()),
                             apply_rigid_renaming(p.cont(), ren));
    case K::Input:
      return Process::input(msg(p.msg1()), p.binder(),
                            apply_rigid_renaming(p.cont(), ren));
    case K::Par:
      return Process::par(apply_rigid_renaming(p.left(), ren),
                          apply_rigid_renaming(p.right(), ren));
    case K::Restrict:
      return Process::nu(p.binder(), apply_rigid_renaming(p.cont(), ren));
    case K::Bang:
      return Process::bang(apply_rigid_renaming(p.cont(), ren));
    case K::Match:
      return Process::match(msg(p.msg1()), msg(p.msg2()),
                            apply_rigid_renaming(p.cont(), ren));
    case K::Let:
      return Process::let_in(p.binder(), p.binder2(), msg(p.msg1()),
                             apply_rigid_renaming(p.cont(), ren));
    case K::Case:
      return Process::case_of(msg(p.msg1()), p.binder(), msg(p.msg2()),
                              apply_rigid_renaming(p.cont(), ren));
  }
  return p;
}

}  // namespace detail

// ---- The relation checker ----

struct Justification {
  std::vector<std::string> chain;  // rule tags, ending in "member"/"reflexive"
};

class BisimChecker {
 public:
  BisimChecker(TracedRelation relation, CheckConfig cfg)
      : relation_(std::move(relation)), cfg_(std::move(cfg)) {
    closure_ = relation_.symmetric_closure(&origins_);
  }

  Verdict run() {
    collected_.clear();
    if (auto bad = well_formed()) return *bad;
    size_t obligations = 0;
    for (size_t idx = 0; idx < closure_.size(); ++idx) {
      const TracedTriple& t = closure_[idx];
      auto sps = enumerate_respectful(t.trace, cfg_.subst_depth);
      for (auto& sp : sps) {
        auto fail = check_obligations(t, sp, obligations);
        if (fail) return *fail;
      }
    }
    return VerifiedUpToBound{cfg_.subst_depth, obligations};
  }

  // Runs the checker to a fixpoint, adding every justified continuation
  // target as an explicit member. Returns the saturated relation; stops
  // early if a counterexample appears.
  std::optional<TracedRelation> saturate(int max_rounds = 16) {
    TracedRelation current = relation_;
    for (int round = 0; round < max_rounds; ++round) {
      BisimChecker step_checker(current, cfg_);
      Verdict v = step_checker.run();
      if (!std::holds_alternative<VerifiedUpToBound>(v)) return std::nullopt;
      bool grew = false;
      for (auto& t : step_checker.collected_)
        if (current.add(t)) grew = true;
      if (!grew) return current;
    }
    return std::nullopt;
  }

  // Bounded backward search for a justification of target membership in
  // the up-to closure of the relation.
  std::optional<Justification> justify(const TracedTriple& target) {
    return justify(target, cfg_.closure_budget);
  }

 private:
  std::optional<RelationIllFormed> well_formed() {
    for (size_t i = 0; i < closure_.size(); ++i) {
      const TracedTriple& t = closure_[i];
      size_t pos = origins_[i];
      if (t.left.contains_bang() || t.right.contains_bang())
        return RelationIllFormed{pos, "replication is not supported by the checker"};
      NameSets tf = free_names(t.trace);
      NameSets pf = free_names(t.left);
      NameSets qf = free_names(t.right);
      for (auto& x : pf.names)
        if (!tf.names.count(x))
          return RelationIllFormed{pos, "left process name '" + x +
                                            "' does not occur in the trace"};
      for (auto& x : qf.names)
        if (!tf.names.count(x))
          return RelationIllFormed{pos, "right process name '" + x +
                                            "' does not occur in the trace"};
      ConsistencyReport rep = is_consistent(underlying_theory(t.trace));
      if (!rep)
        return RelationIllFormed{
            pos, std::string("trace theory inconsistent (condition ") +
                     rep.condition + ")"};
      auto bv = bitrace_consistent_bounded(t.trace, cfg_.subst_depth);
      if (!bv.consistent)
        return RelationIllFormed{
            pos, "bi-trace inconsistent (bounded) at entry " +
                     std::to_string(bv.position)};
    }
    return std::nullopt;
  }

  bool trace_consistent(const BiTrace& h) {
    std::string key = print_bitrace(h);
    auto it = trace_ok_.find(key);
    if (it != trace_ok_.end()) return it->second;
    bool ok = is_consistent(underlying_theory(h)).consistent &&
              bitrace_consistent_bounded(h, cfg_.subst_depth).consistent;
    trace_ok_.emplace(std::move(key), ok);
    return ok;
  }

  std::optional<Counterexample> check_obligations(const TracedTriple& t,
                                                  const SubstitutionPair& sp,
                                                  size_t& obligations) {
    BiTrace h = apply_subst_pair(t.trace, sp);
    Process p = apply_subst(t.left, sp.first);
    Process q = apply_subst(t.right, sp.second);
    if (!trace_consistent(h))
      return Counterexample{t, sp, Action::tau(),
                            "instantiated trace is inconsistent"};
    SynthEngine synth(project_msgs(h, 1));
    EquivEngine eng(underlying_theory(h));
    NameSets used_ns = free_names(h);
    {
      NameSets pf = free_names(p), qf = free_names(q);
      used_ns.merge(pf);
      used_ns.merge(qf);
    }
    auto q_steps = step(q);
    for (auto& [act, agent] : step(p)) {
      ++obligations;
      switch (act.kind) {
        case Action::Kind::Tau: {
          bool matched = false;
          for (auto& [bact, bagent] : q_steps) {
            if (bact.kind != Action::Kind::Tau) continue;
            if (justify({h, agent.body, bagent.body}, cfg_.closure_budget)) {
              matched = true;
              break;
            }
          }
          if (!matched)
            return Counterexample{t, sp, act,
                                  "tau move has no matching continuation"};
          break;
        }
        case Action::Kind::In: {
          const Message& chan = *act.chan;
          if (!synth.derivable(chan)) break;  // not detectable
          std::string x = fresh_name(agent.binder, used_ns.names);
          Substitution rl;
          rl.bind(agent.binder, Message::name(x));
          Process pa = apply_subst(agent.body, rl);
          bool matched = false;
          for (auto& [bact, bagent] : q_steps) {
            if (bact.kind != Action::Kind::In) continue;
            if (!eng.derivable(chan, *bact.chan)) continue;
            Substitution rr;
            rr.bind(bagent.binder, Message::name(x));
            Process qa = apply_subst(bagent.body, rr);
            BiTrace ext = h.append(in_pair(chan, *bact.chan))
                              .append(in_pair(Message::name(x), Message::name(x)));
            if (!trace_consistent(ext)) continue;
            if (justify({ext, pa, qa}, cfg_.closure_budget)) {
              matched = true;
              break;
            }
          }
          if (!matched)
            return Counterexample{t, sp, act,
                                  "input on a derivable channel has no "
                                  "matching continuation"};
          break;
        }
        case Action::Kind::Out: {
          const Message& chan = *act.chan;
          if (!synth.derivable(chan)) break;  // not detectable
          NameSets rigid_base = free_names(h);
          {
            NameSets pf = free_names(p), qf = free_names(q);
            rigid_base.merge(pf);
            rigid_base.merge(qf);
          }
          FreshSupply left_supply(rigid_base.rigids);
          Substitution instl;
          for (auto& b : agent.restricted)
            instl.bind(b, left_supply.draw(b));
          Message ml = apply_subst(*agent.msg, instl);
          Process pa = apply_subst(agent.body, instl);
          bool matched = false;
          for (auto& [bact, bagent] : q_steps) {
            if (bact.kind != Action::Kind::Out) continue;
            if (!eng.derivable(chan, *bact.chan)) continue;
            FreshSupply right_supply(rigid_base.rigids);
            Substitution instr;
            for (auto& b : bagent.restricted)
              instr.bind(b, right_supply.draw(b));
            Message mr = apply_subst(*bagent.msg, instr);
            Process qa = apply_subst(bagent.body, instr);
            BiTrace ext =
                h.append(in_pair(chan, *bact.chan)).append(out_pair(ml, mr));
            if (!trace_consistent(ext)) continue;
            if (justify({ext, pa, qa}, cfg_.closure_budget)) {
              matched = true;
              break;
            }
          }
          if (!matched)
            return Counterexample{t, sp, act,
                                  "output on a derivable channel has no "
                                  "matching continuation"};
          break;
        }
      }
    }
    return std::nullopt;
  }

  bool enabled(UpToRule r) const { return cfg_.up_to.count(r) != 0; }

  bool processes_match(const Process& a, const Process& b) {
    if (alpha_equal(a, b)) return true;
    if (enabled(UpToRule::Structural) && !a.contains_bang() &&
        !b.contains_bang())
      return struct_equiv(a, b);
    return false;
  }

  std::optional<Justification> justify(const TracedTriple& target, int budget) {
    std::string key = triple_key(target) + "#" + std::to_string(budget);
    auto it = justify_memo_.find(key);
    if (it != justify_memo_.end()) {
      if (!it->second) return std::nullopt;
      return *it->second;
    }
    justify_memo_[key] = std::nullopt;  // pessimistic while in progress
    auto res = justify_impl(target, budget);
    justify_memo_[key] = res;
    if (res) collected_.push_back(target);
    return res;
  }

  std::optional<Justification> justify_impl(const TracedTriple& target,
                                            int budget) {
    // direct membership
    for (auto& m : closure_)
      if (m.trace == target.trace && alpha_equal(m.left, target.left) &&
          alpha_equal(m.right, target.right))
        return Justification{{"member"}};

    // reflexive traced pairs over syntactically reflexive traces are
    // open-bisimilar outright
    if (bitrace_reflexive(target.trace) && alpha_equal(target.left, target.right))
      return Justification{{"reflexive"}};

    if (budget <= 0) return std::nullopt;

    // structural equivalence, anchored at members with the same trace
    if (enabled(UpToRule::Structural) && !target.left.contains_bang() &&
        !target.right.contains_bang()) {
      for (auto& m : closure_) {
        if (!(m.trace == target.trace)) continue;
        if (m.left.contains_bang() || m.right.contains_bang()) continue;
        if (struct_equiv(m.left, target.left) &&
            struct_equiv(m.right, target.right))
          return Justification{{"eq", "member"}};
      }
    }

    // weakening: the target trace is a scoped subsequence of a member's
    if (enabled(UpToRule::Weakening)) {
      for (auto& m : closure_) {
        if (!processes_match(m.left, target.left) ||
            !processes_match(m.right, target.right))
          continue;
        if (bitrace_le(target.trace, m.trace, OrderKind::Weakening))
          return Justification{{"w", "member"}};
      }
    }

    // contraction (direct): target trace = member trace plus entries
    // derivable from their prefixes
    if (enabled(UpToRule::Contraction)) {
      for (auto& m : closure_) {
        if (!processes_match(m.left, target.left) ||
            !processes_match(m.right, target.right))
          continue;
        if (bitrace_le(target.trace, m.trace, OrderKind::Contraction))
          return Justification{{"c", "member"}};
      }
    }

    // substitution: target is an instance of a member under a respectful
    // pair; with contraction also enabled, redundant entries of the
    // target trace may be skipped while matching
    if (enabled(UpToRule::Substitution)) {
      for (auto& m : closure_) {
        if (auto j = justify_substitution(m, target, /*allow_skips=*/false))
          return j;
      }
      if (enabled(UpToRule::Contraction)) {
        for (auto& m : closure_) {
          if (auto j = justify_substitution(m, target, /*allow_skips=*/true))
            return j;
        }
      }
    }

    // injective renaming of rigid names
    if (enabled(UpToRule::InjectiveRenaming)) {
      for (auto& m : closure_) {
        if (m.trace.size() != target.trace.size()) continue;
        std::map<std::string, std::string> f1, b1, f2, b2;
        bool ok = true;
        for (size_t k = 0; ok && k < m.trace.size(); ++k) {
          if (m.trace[k].mark != target.trace[k].mark) ok = false;
          ok = ok &&
               detail::match_rigid_bijection(m.trace[k].left,
                                             target.trace[k].left, f1, b1) &&
               detail::match_rigid_bijection(m.trace[k].right,
                                             target.trace[k].right, f2, b2);
        }
        if (!ok) continue;
        Process pl = detail::apply_rigid_renaming(m.left, f1);
        Process pr = detail::apply_rigid_renaming(m.right, f2);
        if (processes_match(pl, target.left) && processes_match(pr, target.right))
          return Justification{{"i", "member"}};
      }
    }

    // flex-rigid reversal
    if (enabled(UpToRule::FlexRigid)) {
      for (auto& m : closure_) {
        auto ord = bitrace_le(target.trace, m.trace, OrderKind::FlexRigid);
        if (!ord) continue;
        Process pl = apply_subst(m.left, ord->theta);
        Process pr = apply_subst(m.right, ord->theta);
        if (processes_match(pl, target.left) && processes_match(pr, target.right))
          return Justification{{"f", "member"}};
      }
    }

    // restriction: strip outer restrictions, replacing the bound names
    // by fresh rigid names, and recurse
    if (enabled(UpToRule::Restriction)) {
      if (target.left.kind() == Process::Kind::Restrict ||
          target.right.kind() == Process::Kind::Restrict) {
        NameSets hf = free_names(target.trace);
        auto strip = [&](Process pr) {
          // stripping a binder substitutes exactly its bound
          // occurrences, which subsumes any alpha-renaming the rule's
          // freshness side conditions would require
          std::vector<std::string> binders;
          NameSets excl = hf;
          NameSets prf = free_names(pr);
          excl.merge(prf);
          while (pr.kind() == Process::Kind::Restrict) {
            binders.push_back(pr.binder());
            pr = pr.cont();
          }
          FreshSupply supply(excl.rigids);
          Substitution inst;
          for (auto& b : binders) inst.bind(b, supply.draw(b));
          return std::pair{apply_subst(pr, inst), binders};
        };
        auto [pl, lb] = strip(target.left);
        auto [qr, rb] = strip(target.right);
        if (!lb.empty() || !rb.empty()) {
          if (auto sub = justify({target.trace, pl, qr}, budget - 1)) {
            Justification j{{"r"}};
            j.chain.insert(j.chain.end(), sub->chain.begin(), sub->chain.end());
            return j;
          }
        }
      }
    }

    // parallel composition with an instantiated pure template
    if (enabled(UpToRule::Parallel)) {
      for (auto& ctx : cfg_.parallel_contexts)
        for (auto& m : closure_) {
          if (auto j = justify_parallel(m, ctx, target, budget)) return j;
        }
    }

    return std::nullopt;
  }

  std::optional<Justification> justify_substitution(const TracedTriple& m,
                                                    const TracedTriple& target,
                                                    bool allow_skips) {
    // embed the member trace into the target trace, solving the
    // substitution pair positionally; skipped target entries must be
    // derivable from their prefix
    size_t n = m.trace.size(), len = target.trace.size();
    if (!allow_skips && n != len) return std::nullopt;
    if (n > len) return std::nullopt;

    std::optional<std::pair<SubstitutionPair, bool>> found;
    std::function<bool(size_t, size_t, SubstitutionPair, bool)> go =
        [&](size_t i, size_t j, SubstitutionPair sp, bool skipped) -> bool {
      if (j == len) {
        if (i != n) return false;
        if (!respects(sp, m.trace).ok) return false;
        if (!processes_match(apply_subst(m.left, sp.first), target.left) ||
            !processes_match(apply_subst(m.right, sp.second), target.right))
          return false;
        found = {std::move(sp), skipped};
        return true;
      }
      if (i < n && m.trace[i].mark == target.trace[j].mark) {
        SubstitutionPair ext = sp;
        if (detail::match_message(m.trace[i].left, target.trace[j].left,
                                  ext.first) &&
            detail::match_message(m.trace[i].right, target.trace[j].right,
                                  ext.second)) {
          if (go(i + 1, j + 1, std::move(ext), skipped)) return true;
        }
      }
      if (allow_skips &&
          derivable_equiv(underlying_theory(target.trace.prefix(j)),
                          target.trace[j].left, target.trace[j].right))
        return go(i, j + 1, std::move(sp), true);
      return false;
    };
    if (!go(0, 0, {}, false)) return std::nullopt;
    if (!found->second) return Justification{{"s", "member"}};
    return Justification{{"s", "c", "member"}};
  }

  std::optional<Justification> justify_parallel(const TracedTriple& m,
                                                const ParallelContext& ctx,
                                                const TracedTriple& target,
                                                int budget) {
    (void)budget;
    if (!bitrace_le(target.trace, m.trace, OrderKind::Contraction))
      return std::nullopt;
    NameSets cf = free_names(ctx.process);
    if (!cf.rigids.empty()) return std::nullopt;
    auto solve = [&](const Process& whole, const Process& part)
        -> std::optional<Substitution> {
      // whole == part | ctx.process sigma, modulo structural equivalence
      if (whole.contains_bang() || part.contains_bang()) return std::nullopt;
      std::vector<Process> wc, pc, tc;
      Process wcanon = struct_canon(whole);
      Process pcanon = struct_canon(part);
      auto flatten = [](const Process& x, std::vector<Process>& out) {
        std::vector<Process> stack{x};
        while (!stack.empty()) {
          Process c = stack.back();
          stack.pop_back();
          if (c.kind() == Process::Kind::Par) {
            stack.push_back(c.left());
            stack.push_back(c.right());
          } else if (!c.is_nil()) {
            out.push_back(c);
          }
        }
      };
      flatten(wcanon, wc);
      flatten(pcanon, pc);
      flatten(ctx.process, tc);
      // remove part components from whole components (by alpha key)
      std::vector<Process> rest;
      std::vector<bool> used(wc.size(), false);
      for (auto& c : pc) {
        bool found = false;
        for (size_t k = 0; k < wc.size(); ++k) {
          if (!used[k] && alpha_equal(wc[k], c)) {
            used[k] = true;
            found = true;
            break;
          }
        }
        if (!found) return std::nullopt;
      }
      for (size_t k = 0; k < wc.size(); ++k)
        if (!used[k]) rest.push_back(wc[k]);
      if (rest.size() != tc.size()) return std::nullopt;
      // match template components against the remainder, in order with
      // permutations
      std::vector<size_t> idx(rest.size());
      for (size_t k = 0; k < idx.size(); ++k) idx[k] = k;
      std::sort(idx.begin(), idx.end());
      do {
        Substitution sigma;
        bool ok = true;
        for (size_t k = 0; ok && k < tc.size(); ++k)
          ok = match_template(tc[k], rest[idx[k]], ctx.domain, sigma);
        if (ok) {
          bool covered = true;
          for (auto& x : cf.names)
            if (!ctx.domain.count(x)) {
              covered = false;
              break;
            }
          if (covered) return sigma;
        }
      } while (std::next_permutation(idx.begin(), idx.end()));
      return std::nullopt;
    };
    auto s1 = solve(target.left, m.left);
    if (!s1) return std::nullopt;
    auto s2 = solve(target.right, m.right);
    if (!s2) return std::nullopt;
    if (!equiv_subst(*s1, *s2, target.trace)) return std::nullopt;
    return Justification{{"p", "member"}};
  }

  // Structural template matching: names in `vars` bind, other names and
  // binders must agree literally.
  static bool match_template(const Process& pat, const Process& subj,
                             const std::set<std::string>& vars,
                             Substitution& out) {
    using K = Process::Kind;
    if (pat.kind() != subj.kind()) return false;
    auto msg = [&](const Message& pm, const Message& sm) {
      return match_template_msg(pm, sm, vars, out);
    };
    switch (pat.kind()) {
      case K::Nil:
        return true;
      case K::Output:
        return msg(pat.msg1(), subj.msg1()) && msg(pat.msg2(), subj.msg2()) &&
               match_template(pat.cont(), subj.cont(), vars, out);
      case K::Input:
        return msg(pat.msg1(), subj.msg1()) && pat.binder() == subj.binder() &&
               match_template(pat.cont(), subj.cont(), vars, out);
      case K::Par:
        return match_template(pat.left(), subj.left(), vars, out) &&
               match_template(pat.right(), subj.right(), vars, out);
      case K::Restrict:
        return pat.binder() == subj.binder() &&
               match_template(pat.cont(), subj.cont(), vars, out);
      case K::Bang:
        return match_template(pat.cont(), subj.cont(), vars, out);
      case K::Match:
        return msg(pat.msg1(), subj.msg1()) && msg(pat.msg2(), subj.msg2()) &&
               match_template(pat.cont(), subj.cont(), vars, out);
      case K::Let:
        return pat.binder() == subj.binder() && pat.binder2() == subj.binder2() &&
               msg(pat.msg1(), subj.msg1()) &&
               match_template(pat.cont(), subj.cont(), vars, out);
      case K::Case:
        return pat.binder() == subj.binder() && msg(pat.msg1(), subj.msg1()) &&
               msg(pat.msg2(), subj.msg2()) &&
               match_template(pat.cont(), subj.cont(), vars, out);
    }
    return false;
  }

  static bool match_template_msg(const Message& pat, const Message& subj,
                                 const std::set<std::string>& vars,
                                 Substitution& out) {
    switch (pat.kind()) {
      case Message::Kind::Name:
        if (vars.count(pat.id())) {
          if (out.binds(pat.id())) return out.get(pat.id()) == subj;
          if (subj.is_name() && subj.id() == pat.id()) return true;
          out.bind(pat.id(), subj);
          return true;
        }
        return subj == pat;
      case Message::Kind::Rigid:
        return subj == pat;
      case Message::Kind::Pair:
        return subj.is_pair() &&
               match_template_msg(pat.left(), subj.left(), vars, out) &&
               match_template_msg(pat.right(), subj.right(), vars, out);
      case Message::Kind::Enc:
        return subj.is_enc() &&
               match_template_msg(pat.left(), subj.left(), vars, out) &&
               match_template_msg(pat.right(), subj.right(), vars, out);
    }
    return false;
  }

  TracedRelation relation_;
  CheckConfig cfg_;
  std::vector<TracedTriple> closure_;
  std::vector<size_t> origins_;
  std::map<std::string, bool> trace_ok_;
  std::map<std::string, std::optional<Justification>> justify_memo_;
  std::vector<TracedTriple> collected_;
};

inline Verdict check_relation(const TracedRelation& r, const CheckConfig& cfg) {
  return BisimChecker(r, cfg).run();
}

inline std::string print_verdict(const Verdict& v) {
  if (auto* ok = std::get_if<VerifiedUpToBound>(&v))
    return "VerifiedUpToBound depth=" + std::to_string(ok->depth) +
           " obligations=" + std::to_string(ok->obligations_checked);
  if (auto* ce = std::get_if<Counterexample>(&v)) {
    std::string out = "Counterexample\n";
    out += "  action: " + print_action(ce->action) + "\n";
    out += "  reason: " + ce->reason + "\n";
    out += "  subst: " + print_subst(ce->subst.first) + " / " +
           print_subst(ce->subst.second) + "\n";
    out += "  left: " + print_process(ce->triple.left) + "\n";
    out += "  right: " + print_process(ce->triple.right) + "\n";
    out += "  bitrace:\n";
    for (auto& e : ce->triple.trace.entries())
      out += std::string("    ") + (e.mark == Mark::Input ? "i: " : "o: ") +
             print_message(e.left) + " <-> " + print_message(e.right) + "\n";
    return out;
  }
  auto& bad = std::get<RelationIllFormed>(v);
  return "RelationIllFormed at pair " + std::to_string(bad.position) + ": " +
         bad.reason;
}

inline std::optional<Justification> up_to_member(const TracedTriple& target,
                                                 const TracedRelation& r,
                                                 const CheckConfig& cfg) {
  return BisimChecker(r, cfg).justify(target);
}

// ---- Bounded testing-equivalence refuter ----

struct Distinguisher {
  Process observer;
  Action barb;
  std::vector<Action> trace;  // tau prefix leading to the barb
};

namespace detail {

// Barbs reachable within `depth` tau steps; also returns, for one
// designated barb, a witnessing tau path.
inline std::set<std::string> reachable_barbs(
    const Process& p, int depth,
    std::map<std::string, std::vector<Action>>* paths = nullptr) {
  std::set<std::string> barbs;
  std::set<std::string> seen{alpha_key(p)};
  std::vector<std::pair<Process, std::vector<Action>>> frontier{{p, {}}};
  for (int d = 0; d <= depth; ++d) {
    std::vector<std::pair<Process, std::vector<Action>>> next;
    for (auto& [proc, path] : frontier) {
      for (auto& [act, agent] : step(proc)) {
        if (act.kind == Action::Kind::Tau) {
          if (d == depth) continue;
          std::string k = alpha_key(agent.body);
          if (seen.insert(k).second) {
            auto path2 = path;
            path2.push_back(Action::tau());
            next.push_back({agent.body, std::move(path2)});
          }
        } else if (free_names(*act.chan).rigids.empty()) {
          std::string b = print_action(act);
          if (barbs.insert(b).second && paths) (*paths)[b] = path;
        }
      }
    }
    frontier.swap(next);
  }
  return barbs;
}

// Prefix-sequence observers: channels range over the visible names plus
// received values; output payloads additionally over one fresh name.
inline void observer_family(const std::vector<Message>& chans,
                            const Message& fresh_payload, int depth,
                            std::vector<Process>& out, int var_counter) {
  out.push_back(Process::nil());
  if (depth == 0) return;
  for (auto& c : chans) {
    std::string v = "ob" + std::to_string(var_counter);
    std::vector<Message> chans2 = chans;
    chans2.push_back(Message::name(v));
    std::vector<Process> tails;
    observer_family(chans2, fresh_payload, depth - 1, tails, var_counter + 1);
    for (auto& t : tails) out.push_back(Process::input(c, v, t));

    std::vector<Process> tails2;
    observer_family(chans, fresh_payload, depth - 1, tails2, var_counter);
    std::vector<Message> payloads = chans;
    payloads.push_back(fresh_payload);
    for (auto& m : payloads)
      for (auto& t : tails2) out.push_back(Process::output(c, m, t));
  }
}

}  // namespace detail

// Enumerates pure prefix-sequence observers over the free names of p and
// q plus one fresh name, composes each with both processes and compares
// the barbs reachable within `depth` silent steps. A returned observer
// witnesses inequivalence; absence proves nothing.
inline std::optional<Distinguisher> bounded_distinguisher(const Process& p,
                                                          const Process& q,
                                                          int depth) {
  if (!is_pure(p) || !is_pure(q))
    throw std::invalid_argument("bounded_distinguisher: processes must be pure");
  NameSets pf = free_names(p), qf = free_names(q);
  std::set<std::string> names = pf.names;
  names.insert(qf.names.begin(), qf.names.end());
  std::string fresh = fresh_name("obs", names);
  std::vector<Message> chans;
  for (auto& n : names) chans.push_back(Message::name(n));

  std::vector<Process> observers;
  detail::observer_family(chans, Message::name(fresh), depth, observers, 0);
  // deduplicate and fix the order
  std::sort(observers.begin(), observers.end(),
            [](const Process& a, const Process& b) {
              std::string ka = alpha_key(a), kb = alpha_key(b);
              if (ka.size() != kb.size()) return ka.size() < kb.size();
              return ka < kb;
            });
  observers.erase(std::unique(observers.begin(), observers.end(),
                              [](const Process& a, const Process& b) {
                                return alpha_equal(a, b);
                              }),
                  observers.end());

  for (auto& r : observers) {
    std::map<std::string, std::vector<Action>> paths_p, paths_q;
    auto bp = detail::reachable_barbs(Process::par(p, r), depth, &paths_p);
    auto bq = detail::reachable_barbs(Process::par(q, r), depth, &paths_q);
    if (bp == bq) continue;
    for (auto& b : bp)
      if (!bq.count(b)) {
        Distinguisher d;
        d.observer = r;
        d.trace = paths_p[b];
        d.barb = b.rfind("in ", 0) == 0
                     ? Action::in(parse_message(b.substr(3)))
                     : Action::out(parse_message(b.substr(4)));
        return d;
      }
    for (auto& b : bq)
      if (!bp.count(b)) {
        Distinguisher d;
        d.observer = r;
        d.trace = paths_q[b];
        d.barb = b.rfind("in ", 0) == 0
                     ? Action::in(parse_message(b.substr(3)))
                     : Action::out(parse_message(b.substr(4)));
        return d;
      }
  }
  return std::nullopt;
}

// ---- Relation file format ----

// Relation files: repeated blocks
//   pair
//     bitrace:
//       i: M <-> N
//       ...
//     left: <process>
//     right: <process>
// Indentation is not significant; the keywords delimit the sections.
inline TracedRelation parse_relation_text(std::string_view text) {
  TracedRelation rel;
  detail::Cursor cur(text);
  while (!cur.eof()) {
    if (!cur.try_keyword("pair")) cur.fail("expected 'pair'");
    if (!cur.try_keyword("bitrace")) cur.fail("expected 'bitrace' in pair block");
    cur.expect(':', "after 'bitrace'");
    std::vector<IOPair> entries;
    while (true) {
      bool is_in = false;
      if (cur.try_keyword("left")) break;
      if (cur.try_keyword("i"))
        is_in = true;
      else if (cur.try_keyword("o"))
        is_in = false;
      else
        cur.fail("expected a bitrace entry or 'left:'");
      cur.expect(':', "after entry mark");
      Message m = detail::parse_message(cur);
      cur.expect('<', "in '<->'");
      cur.expect('-', "in '<->'");
      cur.expect('>', "in '<->'");
      Message n = detail::parse_message(cur);
      entries.push_back({std::move(m), std::move(n),
                         is_in ? Mark::Input : Mark::Output});
    }
    cur.expect(':', "after 'left'");
    Process left = detail::parse_prefix(cur);
    while (cur.try_consume('|'))
      left = Process::par(std::move(left), detail::parse_prefix(cur));
    if (!cur.try_keyword("right")) cur.fail("expected 'right:'");
    cur.expect(':', "after 'right'");
    Process right = detail::parse_prefix(cur);
    while (cur.try_consume('|'))
      right = Process::par(std::move(right), detail::parse_prefix(cur));
    rel.add({BiTrace::validate(std::move(entries)), std::move(left),
             std::move(right)});
  }
  return rel;
}

inline std::string print_relation(const TracedRelation& rel) {
  std::string out;
  for (auto& t : rel.triples()) {
    out += "pair\n  bitrace:\n";
    for (auto& e : t.trace.entries()) {
      out += e.mark == Mark::Input ? "    i: " : "    o: ";
      out += print_message(e.left) + " <-> " + print_message(e.right) + "\n";
    }
    out += "  left: " + print_process(t.left) + "\n";
    out += "  right: " + print_process(t.right) + "\n";
  }
  return out;
}

}  // namespace spi

#endif  // SPI_BISIM_HPP
