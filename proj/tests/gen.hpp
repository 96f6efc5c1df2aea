// Deterministic random generators for property tests.
#ifndef SPI_TESTS_GEN_HPP
#define SPI_TESTS_GEN_HPP

#include <random>

#include "spi/process.hpp"
#include "spi/theory.hpp"

namespace spi::testing {

using Rng = std::mt19937;

inline int pick(Rng& rng, int n) {
  return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

struct MsgGenConfig {
  std::vector<std::string> names{"x", "y", "z"};
  std::vector<std::string> rigids{"a", "b", "k"};
  int max_depth = 2;
};

inline Message gen_message(Rng& rng, const MsgGenConfig& cfg, int depth = -1) {
  if (depth < 0) depth = cfg.max_depth;
  int leaf_choices = static_cast<int>(cfg.names.size() + cfg.rigids.size());
  if (depth == 0 || pick(rng, 3) == 0) {
    int i = pick(rng, leaf_choices);
    if (i < static_cast<int>(cfg.names.size())) return Message::name(cfg.names[i]);
    return Message::rigid(cfg.rigids[i - cfg.names.size()]);
  }
  Message l = gen_message(rng, cfg, depth - 1);
  Message r = gen_message(rng, cfg, depth - 1);
  return pick(rng, 2) ? Message::pair(std::move(l), std::move(r))
                      : Message::enc(std::move(l), std::move(r));
}

inline ObserverTheory gen_theory(Rng& rng, const MsgGenConfig& cfg,
                                 int max_pairs = 4) {
  ObserverTheory g;
  int n = 1 + pick(rng, max_pairs);
  for (int i = 0; i < n; ++i) {
    Message m = gen_message(rng, cfg);
    // bias towards pairs that relate same-shaped messages
    Message r = pick(rng, 2) ? gen_message(rng, cfg) : m;
    g.insert({std::move(m), std::move(r)});
  }
  return g;
}

// Random replication-free processes over the given pools. When `pure`
// is set no rigid names are used.
struct ProcGenConfig {
  std::vector<std::string> free_names{"a", "b", "c"};
  std::vector<std::string> rigids{"ra", "rk"};
  bool pure = true;
  bool allow_bang = false;
  int max_depth = 3;
  int binder_counter = 0;
};

inline Message gen_simple_msg(Rng& rng, ProcGenConfig& cfg,
                              const std::vector<std::string>& scope,
                              int depth = 1) {
  int total = static_cast<int>(cfg.free_names.size() + scope.size() +
                               (cfg.pure ? 0 : cfg.rigids.size()));
  if (depth == 0 || pick(rng, 2) == 0) {
    int i = pick(rng, total);
    if (i < static_cast<int>(cfg.free_names.size()))
      return Message::name(cfg.free_names[i]);
    i -= static_cast<int>(cfg.free_names.size());
    if (i < static_cast<int>(scope.size())) return Message::name(scope[i]);
    return Message::rigid(cfg.rigids[i - scope.size()]);
  }
  Message l = gen_simple_msg(rng, cfg, scope, depth - 1);
  Message r = gen_simple_msg(rng, cfg, scope, depth - 1);
  return pick(rng, 2) ? Message::pair(std::move(l), std::move(r))
                      : Message::enc(std::move(l), std::move(r));
}

inline Process gen_process(Rng& rng, ProcGenConfig& cfg,
                           std::vector<std::string> scope, int depth) {
  if (depth == 0) return Process::nil();
  int c = pick(rng, cfg.allow_bang ? 8 : 7);
  switch (c) {
    case 0:
      return Process::nil();
    case 1:
      return Process::output(gen_simple_msg(rng, cfg, scope),
                             gen_simple_msg(rng, cfg, scope),
                             gen_process(rng, cfg, scope, depth - 1));
    case 2: {
      std::string x = "v" + std::to_string(cfg.binder_counter++);
      Message chan = gen_simple_msg(rng, cfg, scope);
      scope.push_back(x);
      return Process::input(std::move(chan), x,
                            gen_process(rng, cfg, std::move(scope), depth - 1));
    }
    case 3:
      return Process::par(gen_process(rng, cfg, scope, depth - 1),
                          gen_process(rng, cfg, scope, depth - 1));
    case 4: {
      std::string x = "n" + std::to_string(cfg.binder_counter++);
      scope.push_back(x);
      return Process::nu(x, gen_process(rng, cfg, std::move(scope), depth - 1));
    }
    case 5: {
      Message m = gen_simple_msg(rng, cfg, scope);
      Message n = pick(rng, 2) ? m : gen_simple_msg(rng, cfg, scope);
      return Process::match(std::move(m), std::move(n),
                            gen_process(rng, cfg, scope, depth - 1));
    }
    case 6: {
      std::string x = "l" + std::to_string(cfg.binder_counter++);
      std::string y = "l" + std::to_string(cfg.binder_counter++);
      Message src = pick(rng, 2)
                        ? Message::pair(gen_simple_msg(rng, cfg, scope),
                                        gen_simple_msg(rng, cfg, scope))
                        : gen_simple_msg(rng, cfg, scope);
      scope.push_back(x);
      scope.push_back(y);
      return Process::let_in(x, y, std::move(src),
                             gen_process(rng, cfg, std::move(scope), depth - 1));
    }
    default:
      return Process::bang(gen_process(rng, cfg, scope, depth - 1));
  }
}

inline Process gen_process(Rng& rng, ProcGenConfig cfg) {
  return gen_process(rng, cfg, {}, cfg.max_depth);
}

// Messages mentioned in a theory, closed under subterms, plus its names.
inline std::vector<Message> theory_closure0(const ObserverTheory& g) {
  std::set<Message> out;
  for (auto& [m, n] : g) {
    std::vector<Message> stack{m, n};
    while (!stack.empty()) {
      Message t = stack.back();
      stack.pop_back();
      out.insert(t);
      if (t.is_pair() || t.is_enc()) {
        stack.push_back(t.left());
        stack.push_back(t.right());
      }
    }
  }
  for (auto& x : free_names(g).names) out.insert(Message::name(x));
  out.insert(Message::name("x"));
  return {out.begin(), out.end()};
}

// A random pair derivable from g, when one exists.
inline std::optional<MessagePair> sample_derivable(Rng& rng,
                                                   const EquivEngine& eng,
                                                   const ObserverTheory& g) {
  auto cands = theory_closure0(g);
  std::shuffle(cands.begin(), cands.end(), rng);
  for (auto& m : cands) {
    const auto& ps = eng.partners(m);
    if (ps.empty()) continue;
    int k = pick(rng, static_cast<int>(ps.size()));
    auto it = ps.begin();
    std::advance(it, k);
    if (pick(rng, 3) == 0) {
      if (pick(rng, 2))
        return MessagePair{Message::pair(m, m), Message::pair(*it, *it)};
      return MessagePair{Message::enc(m, m), Message::enc(*it, *it)};
    }
    return MessagePair{m, *it};
  }
  return std::nullopt;
}

// All single-step structural-equivalence variants of p (axioms applied
// at one position reachable through the | and nu congruence rules).
inline void equiv_variants(const Process& p, std::vector<Process>& out) {
  using K = Process::Kind;
  if (p.kind() == K::Par) {
    out.push_back(Process::par(p.right(), p.left()));
    if (p.left().kind() == K::Par)
      out.push_back(Process::par(
          p.left().left(), Process::par(p.left().right(), p.right())));
    if (p.right().kind() == K::Par)
      out.push_back(Process::par(Process::par(p.left(), p.right().left()),
                                 p.right().right()));
    if (p.right().is_nil()) out.push_back(p.left());
    if (p.left().is_nil()) out.push_back(p.right());
    std::vector<Process> lv, rv;
    equiv_variants(p.left(), lv);
    for (auto& v : lv) out.push_back(Process::par(v, p.right()));
    equiv_variants(p.right(), rv);
    for (auto& v : rv) out.push_back(Process::par(p.left(), v));
  }
  if (p.kind() == K::Restrict) {
    Process b = p.cont();
    if (b.kind() == K::Restrict && b.binder() != p.binder())
      out.push_back(Process::nu(b.binder(), Process::nu(p.binder(), b.cont())));
    if (!free_names(b).names.count(p.binder())) out.push_back(b);
    if (b.kind() == K::Par) {
      if (!free_names(b.left()).names.count(p.binder()))
        out.push_back(Process::par(b.left(), Process::nu(p.binder(), b.right())));
      if (!free_names(b.right()).names.count(p.binder()))
        out.push_back(Process::par(Process::nu(p.binder(), b.left()), b.right()));
    }
    std::vector<Process> bv;
    equiv_variants(b, bv);
    for (auto& v : bv) out.push_back(Process::nu(p.binder(), v));
  }
  if (p.kind() != K::Bang) {
    if (auto q = reduce(p)) out.push_back(*q);
  }
  out.push_back(Process::par(p, Process::nil()));
  out.push_back(Process::match(Message::name("u"), Message::name("u"), p));
  std::string fresh = fresh_name("nn", free_names(p).names);
  out.push_back(Process::nu(fresh, p));
}

// One-step mutual simulation up to structural equivalence.
inline bool transitions_correspond(const Process& p, const Process& q) {
  auto sp = step(p);
  auto sq = step(q);
  auto covered = [](const std::vector<std::pair<Action, Agent>>& xs,
                    const std::vector<std::pair<Action, Agent>>& ys) {
    for (auto& [a, ag] : xs) {
      bool found = false;
      for (auto& [b, bg] : ys)
        if (a == b && struct_equiv(ag, bg)) {
          found = true;
          break;
        }
      if (!found) return false;
    }
    return true;
  };
  return covered(sp, sq) && covered(sq, sp);
}

}  // namespace spi::testing

#endif
