#include <algorithm>

#include "doctest.h"
#include "ssufs/model.hpp"
#include "ssufs/typestate.hpp"

using namespace ssufs;
using namespace ssufs::model;

TEST_CASE("model passes at the default bounds") {
  auto r = check(Bounds{2, 8, 24});
  CHECK(r.verdict == Verdict::Pass);
  CHECK(r.states > 100);
  CHECK(r.trace.empty());
}

TEST_CASE("disabling rename recovery lets a hidden entry reappear") {
  Toggles t;
  t.rename_recovery = false;
  auto r = check(Bounds{2, 8, 24}, t, kReappear);
  REQUIRE(r.verdict == Verdict::Counterexample);
  CHECK(r.violation.find("reappear") != std::string::npos);
  std::vector<std::string> labels;
  bool crashed = false, renamed = false;
  for (const auto& s : r.trace) {
    labels.push_back(s.label);
    crashed |= s.transition == "crash";
    renamed |= s.transition == "commit_rename";
  }
  CHECK(crashed);
  CHECK(renamed);
  CHECK(replay(Bounds{2, 8, 24}, t, labels, kReappear) == r.violation);
  CHECK(!print_trace(r).empty());

  auto full = check(Bounds{2, 8, 24}, t);
  CHECK(full.verdict == Verdict::Counterexample);
}

TEST_CASE("rename recovery prevents the reappearance") {
  auto r = check(Bounds{2, 8, 24}, Toggles{}, kReappear);
  CHECK(r.verdict == Verdict::Pass);
}

TEST_CASE("a single object and no operations pass trivially") {
  auto r = check(Bounds{0, 1, 4});
  CHECK(r.verdict == Verdict::Pass);
  CHECK(r.states >= 1);
}

TEST_CASE("a tiny state budget reports the bound") {
  Bounds b{2, 8, 24};
  b.max_states = 10;
  CHECK(check(b).verdict == Verdict::BoundExceeded);
}

TEST_CASE("model labels match the typestate transitions") {
  std::set<std::string> expected(kTransitionNames.begin(), kTransitionNames.end());
  auto labels = transition_labels();
  for (auto l : kModelOnlyLabels) {
    CHECK(labels.count(std::string(l)) == 1);
    labels.erase(std::string(l));
  }
  CHECK(labels == expected);
}

TEST_CASE("the default run exercises every operation transition") {
  auto r = check(Bounds{2, 8, 24});
  std::vector<std::string> missing;
  for (auto name : kTransitionNames)
    if (r.transitions_seen.count(std::string(name)) == 0) missing.emplace_back(name);
  for (auto name : kModelOnlyLabels)
    if (r.transitions_seen.count(std::string(name)) == 0 && name != "recover_complete_rename" &&
        name != "recover_rollback_rename")
      missing.emplace_back(name);
  CHECK_MESSAGE(missing.empty(), "unseen: " << [&] {
    std::string s;
    for (auto& m : missing) s += m + " ";
    return s;
  }());
}

TEST_CASE("invariant list parsing") {
  CHECK(parse_invariants("all") == kAllInvariants);
  CHECK(parse_invariants("I1,reappear") == (kI1 | kReappear));
  CHECK(parse_invariants("i2") == kI2);
  CHECK_THROWS(parse_invariants("I9"));
  CHECK(pool_split(8)[0] + pool_split(8)[1] + pool_split(8)[2] == 8);
}
