// Acceptance suite: runs every shipped acceptance criterion at its
// stated size and tolerance and prints one PASS/FAIL line per
// criterion. Exits nonzero when any criterion fails.
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gen.hpp"
#include "spi/cli.hpp"

using namespace spi;
using spi::testing::Rng;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;
double total_ms = 0;
double max_criterion_ms = 0;

struct Criterion {
  int number;
  std::string label;
  Clock::time_point start = Clock::now();
  bool ok = true;
  std::string detail;

  Criterion(int n, std::string l) : number(n), label(std::move(l)) {}

  void require(bool cond, const std::string& why) {
    if (!cond && ok) {
      ok = false;
      detail = why;
    }
  }

  ~Criterion() {
    double ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    total_ms += ms;
    max_criterion_ms = std::max(max_criterion_ms, ms);
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << number << ": "
              << label << " (" << static_cast<long>(ms) << " ms)";
    if (!ok) std::cout << " -- " << detail;
    std::cout << "\n";
    if (!ok) ++failures;
  }
};

std::string fixture(const std::string& name) {
  for (const char* base : {"fixtures/", "tests/fixtures/", "../tests/fixtures/"}) {
    std::ifstream probe(std::string(base) + name);
    if (probe.good()) return std::string(base) + name;
  }
  std::cerr << "fixture not found: " << name << "\n";
  std::exit(2);
}

TracedRelation load_rel(const std::string& name) {
  std::ifstream in(fixture(name));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_relation_text(ss.str());
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  if (out_text) *out_text = out.str();
  return code;
}

void criterion1() {
  Criterion c(1, "handshake relation verifies with --up-to c,s --subst-depth 1");
  auto t0 = Clock::now();
  std::string out;
  int code = run_cli({"check-bisim", "--relation", fixture("ex8.rel"),
                      "--subst-depth", "1", "--up-to", "c,s"},
                     &out);
  double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  c.require(code == 0, "exit code " + std::to_string(code) + ": " + out);
  c.require(out.rfind("VerifiedUpToBound", 0) == 0, "unexpected report: " + out);
  c.require(ms < 10000, "took " + std::to_string(ms) + " ms (limit 10 s)");
}

void criterion2() {
  Criterion c(2, "match-guard pair verifies; revealed key yields x=#a counterexample");
  for (int depth : {1, 2}) {
    CheckConfig cfg;
    cfg.subst_depth = depth;
    Verdict v = check_relation(load_rel("match5.rel"), cfg);
    c.require(std::holds_alternative<VerifiedUpToBound>(v),
              "guarded pair failed at depth " + std::to_string(depth) + ": " +
                  print_verdict(v));
  }
  CheckConfig cfg;
  cfg.subst_depth = 1;
  Verdict v = check_relation(load_rel("match5_revealed.rel"), cfg);
  auto* ce = std::get_if<Counterexample>(&v);
  c.require(ce != nullptr, "expected a counterexample: " + print_verdict(v));
  if (ce) {
    c.require(ce->subst.first.get("x") == Message::rigid("a") &&
                  ce->subst.second.get("x") == Message::rigid("a"),
              "counterexample substitution does not map x to #a");
  }
}

void criterion3() {
  Criterion c(3, "encrypted-payload relation verifies; no bounded distinguisher at depth 3");
  CheckConfig cfg;
  cfg.subst_depth = 1;
  Verdict v = check_relation(load_rel("intro.rel"), cfg);
  c.require(std::holds_alternative<VerifiedUpToBound>(v), print_verdict(v));

  auto t0 = Clock::now();
  auto d = bounded_distinguisher(parse_process("nu x. out(a, enc(b, x)).0"),
                                 parse_process("nu x. out(a, enc(c, x)).0"), 3);
  double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  c.require(!d, "unexpected distinguisher found");
  c.require(ms < 30000, "distinguisher sweep took " + std::to_string(ms) + " ms");
}

void criterion4() {
  Criterion c(4, "cut produces valid, independently confirmed derivations (500 cases)");
  Rng rng(401);
  testing::MsgGenConfig cfg;
  cfg.max_depth = 3;
  int done = 0, attempts = 0;
  while (done < 500 && attempts < 5000) {
    ++attempts;
    ObserverTheory g = testing::gen_theory(rng, cfg, 4);
    EquivEngine ge(g);
    auto cutpair = testing::sample_derivable(rng, ge, g);
    if (!cutpair) continue;
    ObserverTheory d = testing::gen_theory(rng, cfg, 3);
    d.insert(*cutpair);
    EquivEngine de(d);
    auto goal = testing::sample_derivable(rng, de, d);
    if (!goal) continue;
    auto d1 = ge.prove(cutpair->first, cutpair->second);
    auto d2 = de.prove(goal->first, goal->second);
    if (!d1 || !d2) {
      c.require(false, "prover failed on a derivable goal");
      return;
    }
    Derivation cut_result = cut(*d1, *d2);
    auto err = validate_derivation(cut_result);
    c.require(!err, err ? *err : "");
    auto& cc = std::get<EquivSequent>(cut_result.conclusion);
    c.require(derivable_equiv(cc.theory, cc.lhs, cc.rhs),
              "cut conclusion not independently derivable");
    ++done;
    if (!c.ok) return;
  }
  c.require(done >= 500, "only " + std::to_string(done) + " derivable premise pairs");
}

void criterion5() {
  Criterion c(5, "randomized reduction orders reach one irreducible form (500 theories)");
  Rng rng(501);
  testing::MsgGenConfig cfg;
  for (int i = 0; i < 500; ++i) {
    ObserverTheory g = testing::gen_theory(rng, cfg, 4);
    ObserverTheory a = g, b = g;
    for (;;) {
      auto rs = theory_redexes(a);
      if (rs.empty()) break;
      a = apply_theory_redex(a, rs[testing::pick(rng, static_cast<int>(rs.size()))]);
    }
    for (;;) {
      auto rs = theory_redexes(b);
      if (rs.empty()) break;
      b = apply_theory_redex(b, rs[testing::pick(rng, static_cast<int>(rs.size()))]);
    }
    c.require(a == b && a == normalize(g), "distinct irreducible forms for\n" + print_theory(g));
    if (!c.ok) return;
  }
}

void criterion6() {
  Criterion c(6, "consistency characterisation agrees with the depth-2 oracle (500 theories)");
  Rng rng(601);
  testing::MsgGenConfig cfg;
  cfg.max_depth = 2;
  for (int i = 0; i < 500; ++i) {
    ObserverTheory g = testing::gen_theory(rng, cfg, 4);
    bool a = is_consistent(g).consistent;
    bool b = is_consistent_oracle(g, 2);
    c.require(a == b, std::string(a ? "characterisation accepts" : "characterisation rejects") +
                          " but oracle disagrees on\n" + print_theory(g));
    if (!c.ok) return;
  }
}

void criterion7() {
  Criterion c(7, "composition preserves consistency and transitivity (200 pairs)");
  Rng rng(701);
  testing::MsgGenConfig cfg;
  cfg.max_depth = 2;
  cfg.rigids = {"a", "b", "c", "k"};
  auto shape_variant = [&](auto&& self, const Message& m) -> Message {
    switch (m.kind()) {
      case Message::Kind::Name:
        return m;
      case Message::Kind::Rigid:
        return Message::rigid(cfg.rigids[testing::pick(rng, static_cast<int>(cfg.rigids.size()))]);
      case Message::Kind::Pair:
        return Message::pair(self(self, m.left()), self(self, m.right()));
      case Message::Kind::Enc:
        return Message::enc(self(self, m.left()), self(self, m.right()));
    }
    return m;
  };
  int done = 0, attempts = 0;
  while (done < 200 && attempts < 20000) {
    ++attempts;
    int n = 1 + testing::pick(rng, 3);
    ObserverTheory g1, g2;
    std::set<Message> mids;
    bool bad = false;
    for (int k = 0; k < n; ++k) {
      Message mid = testing::gen_message(rng, cfg);
      if (!mids.insert(mid).second) continue;
      Message first = shape_variant(shape_variant, mid);
      Message last = shape_variant(shape_variant, mid);
      if (project1(g1).count(first) || project2(g2).count(last)) {
        bad = true;
        break;
      }
      g1.insert({first, mid});
      g2.insert({mid, last});
    }
    if (bad || g1.empty()) continue;
    if (project2(g1) != project1(g2) || g1.size() != g2.size()) continue;
    if (!is_consistent(g1).consistent || !is_consistent(g2).consistent) continue;
    auto comp = compose_theories(g1, g2);
    if (!comp) {
      c.require(false, "composable pair did not compose");
      return;
    }
    c.require(is_consistent(*comp).consistent,
              "composition inconsistent for\n" + print_theory(g1) + "--\n" + print_theory(g2));
    EquivEngine e1(g1), e2(g2), ec(*comp);
    auto goal = testing::sample_derivable(rng, e1, g1);
    if (goal) {
      for (auto& n2 : e2.partners(goal->second))
        c.require(ec.derivable(goal->first, n2), "transitivity instance failed");
    }
    ++done;
    if (!c.ok) return;
  }
  c.require(done >= 200, "only " + std::to_string(done) + " consistent composable pairs");
}

void criterion8() {
  Criterion c(8, "structural equivalence coherence on 200 axiom-related pairs");
  Rng rng(801);
  testing::ProcGenConfig cfg;
  cfg.pure = false;
  cfg.allow_bang = false;
  cfg.max_depth = 3;
  for (int i = 0; i < 200; ++i) {
    testing::ProcGenConfig c2 = cfg;
    Process p = testing::gen_process(rng, c2);
    Process q = p;
    int hops = 1 + testing::pick(rng, 4);
    for (int h = 0; h < hops; ++h) {
      std::vector<Process> vs;
      testing::equiv_variants(q, vs);
      if (vs.empty()) break;
      q = vs[testing::pick(rng, static_cast<int>(vs.size()))];
    }
    c.require(struct_equiv(p, q),
              "not recognized: " + print_process(p) + "  vs  " + print_process(q));
    c.require(testing::transitions_correspond(p, q),
              "transition mismatch: " + print_process(p) + "  vs  " + print_process(q));
    if (!c.ok) return;
  }
}

void criterion9() {
  Criterion c(9, "reflexive singleton relations verify at subst-depth 1 (100 processes)");
  Rng rng(901);
  testing::ProcGenConfig cfg;
  cfg.pure = true;
  cfg.allow_bang = false;
  cfg.free_names = {"a", "b"};
  cfg.max_depth = 3;
  for (int i = 0; i < 100; ++i) {
    testing::ProcGenConfig c2 = cfg;
    Process p = testing::gen_process(rng, c2);
    TracedRelation r;
    r.add({universal_bitrace(free_names(p).names), p, p});
    CheckConfig check_cfg;
    check_cfg.subst_depth = 1;
    Verdict v = check_relation(r, check_cfg);
    c.require(std::holds_alternative<VerifiedUpToBound>(v),
              print_process(p) + ": " + print_verdict(v));
    if (!c.ok) return;
  }
}

void criterion10() {
  Criterion c(10, "saturated fixtures verify with all up-to rules disabled");
  struct Case {
    const char* file;
    std::set<UpToRule> rules;
  };
  for (auto& cs : {Case{"ex8.rel", {UpToRule::Contraction, UpToRule::Substitution}},
                   Case{"match5.rel", {}},
                   Case{"intro.rel", {}}}) {
    TracedRelation r = load_rel(cs.file);
    CheckConfig cfg;
    cfg.subst_depth = 1;
    cfg.up_to = cs.rules;
    BisimChecker checker(r, cfg);
    auto saturated = checker.saturate();
    c.require(saturated.has_value(), std::string(cs.file) + ": saturation failed");
    if (!saturated) return;
    CheckConfig plain;
    plain.subst_depth = 1;
    Verdict v = check_relation(*saturated, plain);
    c.require(std::holds_alternative<VerifiedUpToBound>(v),
              std::string(cs.file) + " saturated: " + print_verdict(v));
  }
}

}  // namespace

int main() {
  auto t0 = Clock::now();
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  {
    Criterion c(11, "wall clock: suite < 5 min, every criterion < 30 s");
    double suite_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    c.require(suite_ms < 300000, "suite took " + std::to_string(suite_ms) + " ms");
    c.require(max_criterion_ms < 30000,
              "slowest criterion took " + std::to_string(max_criterion_ms) + " ms");
  }
  std::cout << (failures ? "ACCEPTANCE: FAIL (" : "ACCEPTANCE: PASS (")
            << (failures ? std::to_string(failures) + " failing)" : "11 criteria)")
            << std::endl;
  return failures ? 1 : 0;
}
