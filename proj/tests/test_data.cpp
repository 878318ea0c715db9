#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "rmpw/data.hpp"

using namespace rmpw;
using testutil::write_file;

static VariableRoles basic_roles() {
  VariableRoles r;
  r.treatment = "a";
  r.mediator = "z";
  r.outcome = "y";
  return r;
}

TEST_CASE("csv loading binds role columns") {
  const auto path = write_file("basic",
                               "a,z,y\n"
                               "0,0,1.5\n"
                               "0,1,2.25\n"
                               "1,0,3\n"
                               "1,1,4.125\n");
  const Dataset ds = load_csv(path, basic_roles());
  REQUIRE(ds.size() == 4);
  CHECK(ds.treatment == std::vector<int>{0, 0, 1, 1});
  CHECK(ds.mediator == std::vector<int>{0, 1, 0, 1});
  CHECK(ds.outcome == std::vector<double>{1.5, 2.25, 3.0, 4.125});
  // No id column bound: row numbers become ids.
  CHECK(ds.unit_ids == std::vector<std::string>{"1", "2", "3", "4"});
}

TEST_CASE("csv loading reads extra role columns and ignores others") {
  const auto path = write_file("extra",
                               "id,a,x1,z,junk,y,l1\n"
                               "u1,0,0.5,0,9,1.0,0\n"
                               "u2,1,-0.25,1,9,2.0,1\n");
  VariableRoles roles = basic_roles();
  roles.id = "id";
  roles.covariates = {"x1"};
  roles.post_treatment = {"l1"};
  const Dataset ds = load_csv(path, roles);
  REQUIRE(ds.size() == 2);
  CHECK(ds.unit_ids == std::vector<std::string>{"u1", "u2"});
  CHECK(ds.covariate("x1") == std::vector<double>{0.5, -0.25});
  CHECK(ds.post_treatment_column("l1") == std::vector<double>{0.0, 1.0});
}

TEST_CASE("csv loading rejects malformed input") {
  SECTION("treatment outside 0/1") {
    const auto path = write_file("bad_a", "a,z,y\n2,0,1\n");
    REQUIRE_THROWS_WITH(load_csv(path, basic_roles()),
                        Catch::Matchers::ContainsSubstring("must be 0/1"));
  }
  SECTION("missing mediator column is named") {
    const auto path = write_file("no_z", "a,y\n0,1\n");
    REQUIRE_THROWS_WITH(load_csv(path, basic_roles()),
                        Catch::Matchers::ContainsSubstring("'z'"));
  }
  SECTION("non-numeric outcome cell") {
    const auto path = write_file("bad_y", "a,z,y\n0,0,abc\n");
    REQUIRE_THROWS_WITH(load_csv(path, basic_roles()),
                        Catch::Matchers::ContainsSubstring("non-numeric"));
  }
  SECTION("empty file") {
    const auto path = write_file("empty", "");
    REQUIRE_THROWS_WITH(load_csv(path, basic_roles()),
                        Catch::Matchers::ContainsSubstring("empty"));
  }
  SECTION("header but no rows") {
    const auto path = write_file("header_only", "a,z,y\n");
    REQUIRE_THROWS_AS(load_csv(path, basic_roles()), Error);
  }
  SECTION("ragged row") {
    const auto path = write_file("ragged", "a,z,y\n0,0\n");
    REQUIRE_THROWS_WITH(load_csv(path, basic_roles()),
                        Catch::Matchers::ContainsSubstring("cells"));
  }
  SECTION("duplicate header column") {
    const auto path = write_file("dup_col", "a,z,y,y\n0,0,1,2\n");
    REQUIRE_THROWS_WITH(load_csv(path, basic_roles()),
                        Catch::Matchers::ContainsSubstring("duplicate column"));
  }
  SECTION("nonexistent file") {
    REQUIRE_THROWS_AS(load_csv("/nonexistent/nowhere.csv", basic_roles()), Error);
  }
}

TEST_CASE("role bindings are checked before any file access") {
  VariableRoles roles = basic_roles();
  roles.mediator = "";
  REQUIRE_THROWS_AS(roles.check(), Error);
  roles = basic_roles();
  roles.covariates = {"a"};  // collides with the treatment column
  REQUIRE_THROWS_WITH(roles.check(),
                      Catch::Matchers::ContainsSubstring("more than one role"));
  try {
    roles.check();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("write and reload round-trips values exactly") {
  Dataset ds = testutil::make_dataset({0, 0, 1, 1}, {0, 1, 1, 0},
                                      {0.1, -2.5e-7, 1.0 / 3.0, 12345.6789},
                                      {0.25, -1.125, 3.0, 0.7});
  const auto path = testutil::temp_path("roundtrip") + ".csv";
  write_csv(path, ds);
  VariableRoles roles = basic_roles();
  roles.id = "id";
  roles.covariates = {"x"};
  const Dataset back = load_csv(path, roles);
  REQUIRE(back.size() == ds.size());
  // Shortest round-trip formatting makes the reload bit-exact.
  CHECK(back.outcome == ds.outcome);
  CHECK(back.covariates[0] == ds.covariates[0]);
  CHECK(back.treatment == ds.treatment);
  CHECK(back.mediator == ds.mediator);
}

TEST_CASE("validation counts cells and flags structural problems") {
  SECTION("balanced design is clean") {
    const auto ds = testutil::make_dataset({0, 0, 1, 1}, {0, 1, 0, 1}, {1, 2, 3, 4});
    const auto rep = validate(ds);
    CHECK(rep.n == 4);
    CHECK(rep.arms_ok());
    CHECK(rep.cells_ok());
    CHECK(rep.duplicate_ids.empty());
    CHECK(rep.cell_counts[0][0] == 1);
    CHECK(rep.cell_counts[1][1] == 1);
  }
  SECTION("treated units all sharing one mediator value flag the empty cell") {
    const auto ds = testutil::make_dataset({0, 0, 1, 1}, {0, 1, 1, 1}, {1, 2, 3, 4});
    const auto rep = validate(ds);
    REQUIRE(rep.empty_cells.size() == 1);
    CHECK(rep.empty_cells[0] == std::pair<int, int>{1, 0});
  }
  SECTION("an empty arm is reported as empty, not as empty cells") {
    const auto ds = testutil::make_dataset({0, 0}, {0, 1}, {1, 2});
    const auto rep = validate(ds);
    CHECK(rep.arm_empty[1]);
    CHECK_FALSE(rep.arms_ok());
    CHECK(rep.empty_cells.empty());
  }
  SECTION("duplicate unit ids are listed once each") {
    auto ds = testutil::make_dataset({0, 1, 0, 1}, {0, 1, 1, 0}, {1, 2, 3, 4});
    ds.unit_ids = {"u1", "u2", "u1", "u1"};
    const auto rep = validate(ds);
    CHECK(rep.duplicate_ids == std::vector<std::string>{"u1"});
  }
  SECTION("constant columns are reported by name") {
    auto ds = testutil::make_dataset({0, 1, 0, 1}, {0, 1, 1, 0}, {1, 2, 3, 4},
                                     {2.0, 2.0, 2.0, 2.0});
    const auto rep = validate(ds);
    CHECK(rep.constant_columns == std::vector<std::string>{"x"});
  }
  SECTION("validation is pure") {
    const auto ds = testutil::make_dataset({0, 0, 1, 1}, {0, 1, 1, 1}, {1, 2, 3, 4});
    const auto r1 = validate(ds);
    const auto r2 = validate(ds);
    CHECK(r1.cell_counts == r2.cell_counts);
    CHECK(r1.empty_cells == r2.empty_cells);
    CHECK(r1.constant_columns == r2.constant_columns);
    CHECK(r1.duplicate_ids == r2.duplicate_ids);
  }
}
