#include <doctest.h>

#include <set>

#include "ca3/gradcheck.hpp"

using namespace ca3;

TEST_SUITE("gradcheck") {
  TEST_CASE("registry lists each op once") {
    const auto& ops = differentiable_ops();
    CHECK(std::set<std::string>(ops.begin(), ops.end()).size() == ops.size());
    CHECK(ops.size() == 25);
  }

  TEST_CASE("every op passes") {
    const auto results = run_gradcheck();
    REQUIRE(results.size() == differentiable_ops().size());
    for (const auto& r : results) {
      INFO(r.op);
      CHECK(r.passed);
      CHECK(r.max_rel_error < 1e-3);
    }
  }

  TEST_CASE("a corrupted gradient fails for that op only") {
    GradcheckOptions o;
    o.corrupt_op = "conv_transpose2d";
    o.trials = 4;
    for (const auto& r : run_gradcheck(o)) {
      INFO(r.op);
      CHECK(r.passed == (r.op != "conv_transpose2d"));
    }
  }

  TEST_CASE("filtering and the table") {
    GradcheckOptions o;
    o.only = {"elu", "bce"};
    const auto results = run_gradcheck(o);
    REQUIRE(results.size() == 2);
    const std::string table = format_gradcheck_table(results);
    CHECK(table.find("elu") != std::string::npos);
    CHECK(table.find("bce") != std::string::npos);
    o.only = {"nope"};
    CHECK_THROWS(run_gradcheck(o));
  }
}
