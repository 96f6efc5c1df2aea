#ifndef SPI_CLI_HPP
#define SPI_CLI_HPP

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spi/bisim.hpp"

namespace spi::cli {

// Exit codes: 0 when the queried property holds (or a derivation /
// distinguisher was found), 1 when it does not, 2 for usage, parse or
// well-formedness errors.
enum ExitCode { kHolds = 0, kFails = 1, kError = 2 };

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void bounded_traces(const Process& p, int depth,
                           std::vector<std::string>& acc,
                           std::vector<std::string>& out) {
  auto ts = step(p);
  if (ts.empty() || depth == 0) {
    std::string line;
    for (size_t i = 0; i < acc.size(); ++i)
      line += (i ? " ; " : "") + acc[i];
    out.push_back(line.empty() ? "(no transitions)" : line);
    return;
  }
  for (auto& [act, agent] : ts) {
    acc.push_back(print_action(act));
    switch (agent.kind) {
      case Agent::Kind::Proc:
        bounded_traces(agent.body, depth - 1, acc, out);
        break;
      case Agent::Kind::Abs: {
        // feed a fresh name, as an environment with no extra knowledge
        std::set<std::string> used = free_names(agent.body).names;
        used.insert(agent.binder);
        std::string v = fresh_name("z", used);
        Substitution s;
        s.bind(agent.binder, Message::name(v));
        bounded_traces(apply_subst(agent.body, s), depth - 1, acc, out);
        break;
      }
      case Agent::Kind::Concr: {
        NameSets f = free_names(agent.body);
        NameSets fm = free_names(*agent.msg);
        f.merge(fm);
        FreshSupply supply(f.rigids);
        Substitution s;
        for (auto& b : agent.restricted) s.bind(b, supply.draw(b));
        bounded_traces(apply_subst(agent.body, s), depth - 1, acc, out);
        break;
      }
    }
    acc.pop_back();
  }
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"spi calculus equivalence-checking toolkit"};
  app.require_subcommand(1);

  std::string theory_path, msgs_path, left_str, right_str, goal_str;
  std::string emit_path, process_path, bitrace_path, relation_path;
  std::string left_path, right_path, up_to_str;
  int depth = 2, subst_depth = 1, budget = 3;
  bool oracle = false;

  auto* prove = app.add_subcommand("prove", "search for a message-equivalence derivation");
  prove->add_option("--theory", theory_path, "theory file (.thy)")->required();
  prove->add_option("--left", left_str, "left message")->required();
  prove->add_option("--right", right_str, "right message")->required();
  prove->add_option("--emit-derivation", emit_path, "write the derivation to a file");

  auto* synth = app.add_subcommand("synth", "search for a message-synthesis derivation");
  synth->add_option("--msgs", msgs_path, "message set file")->required();
  synth->add_option("--goal", goal_str, "goal message")->required();
  synth->add_option("--emit-derivation", emit_path, "write the derivation to a file");

  auto* normalize_cmd = app.add_subcommand("normalize", "print the irreducible form of a theory");
  normalize_cmd->add_option("--theory", theory_path, "theory file (.thy)")->required();

  auto* consistent = app.add_subcommand("consistent", "check theory consistency");
  consistent->add_option("--theory", theory_path, "theory file (.thy)")->required();
  consistent->add_flag("--oracle", oracle, "use the bounded enumeration oracle");
  consistent->add_option("--depth", depth, "oracle closure depth (default 2)");

  auto* compose = app.add_subcommand("compose", "compose two theories");
  compose->add_option("--left", left_path, "left theory file")->required();
  compose->add_option("--right", right_path, "right theory file")->required();

  auto* step_cmd = app.add_subcommand("step", "list one-step transitions of a process");
  step_cmd->add_option("--process", process_path, "process file (.spi)")->required();

  auto* traces = app.add_subcommand("traces", "bounded action-trace exploration");
  traces->add_option("--process", process_path, "process file (.spi)")->required();
  traces->add_option("--depth", depth, "exploration depth")->required();

  auto* check_bt = app.add_subcommand("check-bitrace", "bounded bi-trace consistency check");
  check_bt->add_option("--bitrace", bitrace_path, "bi-trace file (.bt)")->required();
  check_bt->add_option("--subst-depth", subst_depth, "respectful-substitution depth");

  auto* check_bisim = app.add_subcommand("check-bisim", "verify a candidate open-bisimulation relation");
  check_bisim->add_option("--relation", relation_path, "relation file (.rel)")->required();
  check_bisim->add_option("--subst-depth", subst_depth, "respectful-substitution depth");
  check_bisim->add_option("--up-to", up_to_str, "comma-separated rules: eq,w,c,s,i,f,r,p");
  check_bisim->add_option("--budget", budget, "justification search budget");

  auto* distinguish = app.add_subcommand("distinguish", "search for a bounded testing-equivalence refutation");
  distinguish->add_option("--left", left_path, "left process file")->required();
  distinguish->add_option("--right", right_path, "right process file")->required();
  distinguish->add_option("--depth", depth, "observer and exploration depth")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kHolds;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }

  try {
    if (*prove) {
      ObserverTheory g = parse_theory_text(detail::read_file(theory_path));
      Message m = parse_message(left_str);
      Message n = parse_message(right_str);
      auto d = prove_equiv(g, m, n);
      if (!d) {
        out << "not derivable\n";
        return kFails;
      }
      std::string rendered = print_derivation(*d);
      out << rendered << "\n";
      if (!emit_path.empty()) {
        std::ofstream f(emit_path);
        if (!f.good()) throw std::runtime_error("cannot write " + emit_path);
        f << rendered << "\n";
      }
      return kHolds;
    }
    if (*synth) {
      MessageSet s = parse_message_set_text(detail::read_file(msgs_path));
      Message m = parse_message(goal_str);
      auto d = prove_synth(s, m);
      if (!d) {
        out << "not derivable\n";
        return kFails;
      }
      std::string rendered = print_derivation(*d);
      out << rendered << "\n";
      if (!emit_path.empty()) {
        std::ofstream f(emit_path);
        if (!f.good()) throw std::runtime_error("cannot write " + emit_path);
        f << rendered << "\n";
      }
      return kHolds;
    }
    if (*normalize_cmd) {
      ObserverTheory g = parse_theory_text(detail::read_file(theory_path));
      out << print_theory(normalize(g));
      return kHolds;
    }
    if (*consistent) {
      ObserverTheory g = parse_theory_text(detail::read_file(theory_path));
      if (oracle) {
        bool ok = is_consistent_oracle(g, depth);
        out << (ok ? "consistent (oracle)\n" : "inconsistent (oracle)\n");
        return ok ? kHolds : kFails;
      }
      ConsistencyReport rep = is_consistent(g);
      if (rep.consistent) {
        out << "consistent\n";
        return kHolds;
      }
      out << "inconsistent: condition (" << rep.condition << ") violated\n";
      for (auto& [m, n] : rep.witnesses)
        out << "  " << print_message(m) << " <-> " << print_message(n) << "\n";
      return kFails;
    }
    if (*compose) {
      ObserverTheory g1 = parse_theory_text(detail::read_file(left_path));
      ObserverTheory g2 = parse_theory_text(detail::read_file(right_path));
      auto c = compose_theories(g1, g2);
      if (!c) {
        out << "not composable\n";
        return kFails;
      }
      out << print_theory(*c);
      return kHolds;
    }
    if (*step_cmd) {
      Process p = parse_process(detail::read_file(process_path));
      for (auto& [act, agent] : step(p))
        out << print_action(act) << " ; " << print_agent(agent) << "\n";
      return kHolds;
    }
    if (*traces) {
      Process p = parse_process(detail::read_file(process_path));
      std::vector<std::string> acc, lines;
      detail::bounded_traces(p, depth, acc, lines);
      std::sort(lines.begin(), lines.end());
      lines.erase(std::unique(lines.begin(), lines.end()), lines.end());
      for (auto& l : lines) out << l << "\n";
      return kHolds;
    }
    if (*check_bt) {
      BiTrace h = parse_bitrace_text(detail::read_file(bitrace_path));
      auto v = bitrace_consistent_bounded(h, subst_depth);
      if (v.consistent) {
        out << "consistent-up-to-depth " << subst_depth << "\n";
        return kHolds;
      }
      out << "inconsistent at entry " << v.position << "\n";
      if (v.witness)
        out << "  witness: " << print_subst(v.witness->first) << " / "
            << print_subst(v.witness->second) << "\n";
      if (v.report.condition)
        out << "  theory condition (" << v.report.condition << ") violated\n";
      return kFails;
    }
    if (*check_bisim) {
      TracedRelation r = parse_relation_text(detail::read_file(relation_path));
      CheckConfig cfg;
      cfg.subst_depth = subst_depth;
      cfg.closure_budget = budget;
      if (!up_to_str.empty()) {
        std::stringstream ss(up_to_str);
        std::string tag;
        while (std::getline(ss, tag, ',')) {
          auto rule = up_to_rule_from_tag(tag);
          if (!rule) throw std::runtime_error("unknown up-to rule: " + tag);
          cfg.up_to.insert(*rule);
        }
      }
      Verdict v = check_relation(r, cfg);
      out << print_verdict(v) << "\n";
      if (std::holds_alternative<VerifiedUpToBound>(v)) return kHolds;
      if (std::holds_alternative<Counterexample>(v)) return kFails;
      return kError;
    }
    if (*distinguish) {
      Process p = parse_process(detail::read_file(left_path));
      Process q = parse_process(detail::read_file(right_path));
      auto d = bounded_distinguisher(p, q, depth);
      if (!d) {
        out << "absent\n";
        return kFails;
      }
      out << "observer: " << print_process(d->observer) << "\n";
      out << "barb: " << print_action(d->barb) << "\n";
      out << "trace:";
      for (auto& a : d->trace) out << " " << print_action(a);
      out << "\n";
      return kHolds;
    }
  } catch (const ParseError& e) {
    err << "error at " << e.line << ":" << e.column << ": " << e.what() << "\n";
    return kError;
  } catch (const ScopingError& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }
  err << "error: no subcommand\n";
  return kError;
}

}  // namespace spi::cli

#endif  // SPI_CLI_HPP
