#include <algorithm>

#include "doctest.h"
#include "gen.hpp"
#include "spi/process.hpp"

using namespace spi;
using spi::testing::Rng;

namespace {

Message N(const std::string& s) { return Message::name(s); }
Message R(const std::string& s) { return Message::rigid(s); }

}  // namespace

TEST_CASE("process parsing") {
  CHECK(alpha_equal(parse_process("0"), Process::nil()));
  CHECK(alpha_equal(parse_process("in(#a,x).out(#a,x).0"),
                    Process::input(R("a"), "x",
                                   Process::output(R("a"), N("x"), Process::nil()))));

  Process p = parse_process("nu k. out(#a, enc(x,k)).0 | 0");
  REQUIRE(p.kind() == Process::Kind::Par);  // prefix binds tighter than |
  CHECK(p.left().kind() == Process::Kind::Restrict);
  CHECK(p.right().is_nil());

  CHECK(parse_process("!0").kind() == Process::Kind::Bang);
  CHECK(parse_process("[x = y]0").kind() == Process::Kind::Match);
  CHECK(parse_process("let (x,y) = pr(#a,#b) in out(x,y).0").kind() ==
        Process::Kind::Let);
  CHECK(parse_process("case enc(#m,#k) of {x}#k in out(x,x).0").kind() ==
        Process::Kind::Case);

  CHECK_THROWS_AS(parse_process("out(a)"), ParseError);
  CHECK_THROWS_AS(parse_process("nu #a. 0"), ParseError);
  CHECK_THROWS_AS(parse_process("0 | "), ParseError);

  SUBCASE("print/parse round trip") {
    Rng rng(31);
    testing::ProcGenConfig cfg;
    cfg.pure = false;
    cfg.allow_bang = true;
    for (int i = 0; i < 200; ++i) {
      Process p2 = testing::gen_process(rng, cfg);
      CHECK(alpha_equal(parse_process(print_process(p2)), p2));
    }
  }
}

TEST_CASE("reduce examples") {
  auto r1 = reduce(parse_process("[#a = #a]0"));
  REQUIRE(r1);
  CHECK(alpha_equal(*r1, Process::nil()));

  auto r2 = reduce(parse_process("let (x,y) = pr(#a,#b) in out(x,y).0"));
  REQUIRE(r2);
  CHECK(alpha_equal(*r2, parse_process("out(#a,#b).0")));

  auto r3 = reduce(parse_process("case enc(#m,#k) of {x}#k in out(x,x).0"));
  REQUIRE(r3);
  CHECK(alpha_equal(*r3, parse_process("out(#m,#m).0")));

  CHECK(!reduce(parse_process("case enc(#m,#k) of {x}#j in out(x,x).0")));
  CHECK(!reduce(parse_process("[#a = #b]0")));

  auto r4 = reduce(parse_process("!out(#a,#b).0"));
  REQUIRE(r4);
  CHECK(alpha_equal(*r4, parse_process("out(#a,#b).0 | !out(#a,#b).0")));

  SUBCASE("let substitution is sequential") {
    auto r = reduce(parse_process("let (x,y) = pr(y, #a) in out(x, y).0"));
    REQUIRE(r);
    CHECK(alpha_equal(*r, parse_process("out(y, #a).0")) == false);
    CHECK(alpha_equal(*r, parse_process("out(#a, #a).0")));
  }
}

TEST_CASE("step examples") {
  auto s1 = step(parse_process("in(#a,x).0"));
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].first == Action::in(R("a")));
  CHECK(s1[0].second.kind == Agent::Kind::Abs);

  auto s2 = step(parse_process("out(#a,#n).0"));
  REQUIRE(s2.size() == 1);
  CHECK(s2[0].first == Action::out(R("a")));
  CHECK(s2[0].second.kind == Agent::Kind::Concr);
  CHECK(s2[0].second.restricted.empty());
  CHECK(*s2[0].second.msg == R("n"));

  auto s3 = step(parse_process("in(#a,x).0 | out(#a,#n).0"));
  bool has_tau = false;
  for (auto& [a, ag] : s3)
    if (a.kind == Action::Kind::Tau) {
      has_tau = true;
      CHECK(ag.kind == Agent::Kind::Proc);
      CHECK(alpha_equal(ag.body, parse_process("0 | 0")));
    }
  CHECK(has_tau);
  CHECK(s3.size() == 3);

  auto s4 = step(parse_process("nu k. out(#a, k).0"));
  REQUIRE(s4.size() == 1);
  CHECK(s4[0].second.kind == Agent::Kind::Concr);
  CHECK(s4[0].second.restricted == std::vector<std::string>{"k"});
  CHECK(*s4[0].second.msg == N("k"));

  SUBCASE("restriction blocks actions on the restricted channel") {
    CHECK(step(parse_process("nu a. out(a, #n).0")).empty());
    CHECK(step(parse_process("nu a. in(a, x).0")).empty());
  }

  SUBCASE("replication unfolds once per step") {
    auto s = step(parse_process("!out(#a,#b).0"));
    REQUIRE(s.size() == 1);
    CHECK(s[0].first == Action::out(R("a")));
    CHECK(alpha_equal(s[0].second.body, parse_process("0 | !out(#a,#b).0")));
  }
}

TEST_CASE("interact and compose") {
  Agent f = Agent::abs("x", parse_process("out(x,x).0"));
  Agent c = Agent::concr({}, R("n"), Process::nil());
  CHECK(alpha_equal(interact(f, c, true), parse_process("out(#n,#n).0 | 0")));

  // extruded name: the received message is the restricted name itself
  Agent f2 = Agent::abs("x", Process::nil());
  Agent c2 = Agent::concr({"k"}, N("k"), Process::nil());
  Process i2 = interact(f2, c2, true);
  REQUIRE(i2.kind() == Process::Kind::Restrict);
  CHECK(alpha_equal(i2, parse_process("nu k. (0 | 0)")));

  // restricted names are renamed away from the abstraction's body
  Agent f3 = Agent::abs("x", parse_process("out(k, x).0"));
  Agent c3 = Agent::concr({"k"}, N("k"), Process::nil());
  Process i3 = interact(f3, c3, true);
  REQUIRE(i3.kind() == Process::Kind::Restrict);
  CHECK(i3.binder() != "k");
  CHECK(alpha_equal(i3, parse_process("nu k0. (out(k, k0).0 | 0)")));

  // composition renames a clashing abstraction binder
  Agent a = Agent::abs("x", parse_process("out(x,x).0"));
  Agent composed = compose_process_agent(parse_process("out(x,#n).0"), a, false);
  CHECK(composed.kind == Agent::Kind::Abs);
  CHECK(composed.binder != "x");
}

TEST_CASE("struct_equiv examples") {
  Process p = parse_process("out(#a,#b).0");
  CHECK(struct_equiv(Process::par(p, Process::nil()), p));
  CHECK(struct_equiv(parse_process("nu x. (out(#a,#b).0 | out(x,x).0)"),
                     parse_process("out(#a,#b).0 | nu x. out(x,x).0")));
  CHECK(!struct_equiv(parse_process("out(#a,#b).0"), parse_process("out(#a,#c).0")));
  CHECK(struct_equiv(parse_process("nu x. nu y. (out(x,y).0 | 0)"),
                     parse_process("nu y. nu x. out(x,y).0")));
  CHECK(struct_equiv(parse_process("[#a = #a]out(#a,#b).0 | 0"),
                     parse_process("out(#a,#b).0")));
  CHECK_THROWS_AS(struct_equiv(parse_process("!0"), Process::nil()),
                  std::invalid_argument);
}

TEST_CASE("transition/structure coherence on random pairs") {
  Rng rng(41);
  testing::ProcGenConfig cfg;
  cfg.pure = false;
  cfg.allow_bang = false;
  cfg.max_depth = 3;
  int checked = 0;
  for (int i = 0; i < 120; ++i) {
    testing::ProcGenConfig fresh_cfg = cfg;
    Process p = testing::gen_process(rng, fresh_cfg);
    Process q = p;
    int hops = 1 + testing::pick(rng, 4);
    for (int h = 0; h < hops; ++h) {
      std::vector<Process> vs;
      testing::equiv_variants(q, vs);
      if (vs.empty()) break;
      q = vs[testing::pick(rng, static_cast<int>(vs.size()))];
    }
    INFO(print_process(p), " vs ", print_process(q));
    CHECK(struct_equiv(p, q));
    CHECK(testing::transitions_correspond(p, q));
    ++checked;
  }
  CHECK(checked == 120);
}

TEST_CASE("process free names and purity") {
  NameSets f1 = free_names(parse_process("nu x. out(#a, x).0"));
  CHECK(f1.names.empty());
  CHECK(f1.rigids == std::set<std::string>{"a"});

  NameSets f2 = free_names(parse_process("in(#a,x). out(#a, pr(x, y)).0"));
  CHECK(f2.names == std::set<std::string>{"y"});
  CHECK(f2.rigids == std::set<std::string>{"a"});

  NameSets f3 = free_names(parse_process("let (x,y) = pr(a,b) in out(x,z).0"));
  CHECK(f3.names == std::set<std::string>{"a", "b", "z"});

  CHECK(is_pure(parse_process("out(a, b).0")));
  CHECK(!is_pure(parse_process("out(#a, b).0")));
  CHECK(is_pure(parse_process("nu x. 0")));
  CHECK(is_pure(Agent::abs("x", parse_process("out(x,x).0"))));
  CHECK(!is_pure(Agent::concr({"k"}, Message::rigid("n"), Process::nil())));
}

TEST_CASE("pure processes have pure transitions") {
  Rng rng(43);
  testing::ProcGenConfig cfg;
  cfg.pure = true;
  for (int i = 0; i < 80; ++i) {
    testing::ProcGenConfig c2 = cfg;
    Process p = testing::gen_process(rng, c2);
    for (auto& [a, ag] : step(p)) {
      if (a.chan) CHECK(free_names(*a.chan).rigids.empty());
      CHECK(is_pure(ag));
    }
  }
}

TEST_CASE("process parser rejects garbage without crashing") {
  Rng rng(79);
  const std::string alphabet = "ax# (),.<->|=!{}0bnuletcasinofr\n";
  for (int i = 0; i < 3000; ++i) {
    std::string s;
    int len = testing::pick(rng, 50);
    for (int k = 0; k < len; ++k)
      s.push_back(alphabet[testing::pick(rng, static_cast<int>(alphabet.size()))]);
    try {
      parse_process(s);
    } catch (const ParseError&) {
    }
  }
}

TEST_CASE("restricted names never escape into actions") {
  Rng rng(47);
  testing::ProcGenConfig cfg;
  cfg.pure = false;
  for (int i = 0; i < 80; ++i) {
    testing::ProcGenConfig c2 = cfg;
    Process body = testing::gen_process(rng, c2);
    Process p = Process::nu("secret", body);
    for (auto& [a, ag] : step(p))
      if (a.chan) CHECK(!free_names(*a.chan).names.count("secret"));
  }
}
