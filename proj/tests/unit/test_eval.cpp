#include <cmath>

#include "doctest.h"
#include "tonguesync/error.hpp"
#include "tonguesync/eval.hpp"
#include "tonguesync/rng.hpp"

using namespace tonguesync;

TEST_CASE("discrepancy") {
  CHECK(discrepancy(45, 45) == 0);
  CHECK(discrepancy(100, 50) == 50);
  CHECK(discrepancy(-100, 25) == -125);
  CHECK(make_row("u", "d", "t", "s", 90, -45).disc_ms == 135);
}

TEST_CASE("scoring boundaries are open intervals") {
  const auto hard = ScoringBoundary::hard(), soft = ScoringBoundary::soft();
  CHECK(score(0, hard));
  CHECK(score(0, soft));
  CHECK_FALSE(score(60, hard));
  CHECK(score(60, soft));
  CHECK_FALSE(score(-125, hard));
  CHECK(score(-124, hard));
  CHECK_FALSE(score(45, hard));
  CHECK(score(44, hard));
  CHECK_FALSE(score(-185, soft));
  CHECK_FALSE(score(90, soft));
  CHECK(score(89, soft));
  CHECK_THROWS_AS(ScoringBoundary::custom(10, 20), ValidationError);
  CHECK_THROWS_AS(ScoringBoundary::custom(-10, 0), ValidationError);
}

TEST_CASE("scoring properties") {
  Rng rng(12);
  const auto sym = ScoringBoundary::custom(-70, 70);
  for (int i = 0; i < 5000; ++i) {
    const int d = static_cast<int>(rng.index(801)) - 400;
    if (score(d, ScoringBoundary::hard())) CHECK(score(d, ScoringBoundary::soft()));
    CHECK(score(d, sym) == score(-d, sym));
  }
}

TEST_CASE("aggregation") {
  std::vector<EvalRow> zero{make_row("a", "x", "read", "s1", 10, 10), make_row("b", "x", "read", "s1", -5, -5)};
  const Report z = aggregate(zero, GroupKey::kDataset);
  REQUIRE(z.rows.size() == 2);
  CHECK(z.rows.back().group == "All");
  CHECK(z.rows.back().hard_accuracy == 100.0);
  CHECK(z.rows.back().soft_accuracy == 100.0);
  CHECK(z.rows.back().mean_disc_ms == 0.0);
  CHECK(z.rows.back().sd_disc_ms == 0.0);

  std::vector<EvalRow> rows{make_row("a", "x", "read", "s1", 0, 0), make_row("b", "y", "read", "s2", 60, 0)};
  const Report r = aggregate(rows, GroupKey::kDataset);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].group == "x");
  CHECK(r.rows[1].group == "y");
  const ReportRow& all = r.rows[2];
  CHECK(all.n == 2);
  CHECK(all.hard_correct == 1);
  CHECK(all.soft_correct == 2);
  CHECK(all.hard_accuracy == 50.0);
  CHECK(all.soft_accuracy == 100.0);
  CHECK(all.mean_disc_ms == 30.0);
  CHECK(all.sd_disc_ms == 30.0);
  CHECK(aggregate(rows, GroupKey::kType).rows.size() == 2);

  std::vector<EvalRow> reversed(rows.rbegin(), rows.rend());
  CHECK(format_report(aggregate(reversed, GroupKey::kDataset)) == format_report(r));
  CHECK_THROWS_AS(aggregate({}, GroupKey::kDataset), EmptyDataError);
}

TEST_CASE("report formats") {
  std::vector<EvalRow> rows{make_row("a", "x", "read", "s1", 0, 0), make_row("b", "x", "read", "s1", 60, 0)};
  const Report r = aggregate(rows, GroupKey::kSpeaker);
  const std::string text = format_report(r);
  CHECK(text.find("population standard deviation") != std::string::npos);
  CHECK(text.find("30.0 +/- 30.0") != std::string::npos);
  const std::string jsonl = report_to_jsonl(r);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
  CHECK(jsonl.find("\"group\":\"All\"") != std::string::npos);
  CHECK(parse_group_key("type") == GroupKey::kType);
  CHECK_THROWS(parse_group_key("colour"));
}
