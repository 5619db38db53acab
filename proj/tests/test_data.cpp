#include <gtest/gtest.h>

#include "support.hpp"

using namespace mpqg;

namespace {

const std::string kSquad = std::string(MPQG_FIXTURES) + "/squad_10.json";

template <class E, class F>
std::string error_message(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "<no exception>";
}

}  // namespace

TEST(LoadJsonl, ParsesAndTokenizes) {
  auto dir = test::scratch_dir("jsonl");
  test::write_text(dir / "a.jsonl",
                   "{\"id\": \"q1\", \"passage\": \"Tesla was born in 1856.\", \"query\": \"1856\", "
                   "\"target\": \"When was Tesla born?\"}\n\n{\"id\": 7, \"passage\": \"x\", \"query\": \"y\", "
                   "\"target\": \"z\"}\n");
  const auto ex = load_jsonl((dir / "a.jsonl").string());
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].id, "q1");
  EXPECT_EQ(ex[0].passage, (Tokens{"tesla", "was", "born", "in", "1856", "."}));
  EXPECT_EQ(ex[0].query, Tokens{"1856"});
  EXPECT_EQ(ex[0].target, (Tokens{"when", "was", "tesla", "born", "?"}));
  EXPECT_EQ(ex[1].id, "7");
}

TEST(LoadJsonl, EmptyFileGivesNoExamples) {
  auto dir = test::scratch_dir("jsonl_empty");
  test::write_text(dir / "e.jsonl", "");
  EXPECT_TRUE(load_jsonl((dir / "e.jsonl").string()).empty());
  EXPECT_THROW(load_jsonl((dir / "missing.jsonl").string()), LoadError);
}

TEST(LoadJsonl, ErrorsNameFieldAndLine) {
  auto dir = test::scratch_dir("jsonl_bad");
  test::write_text(dir / "nofield.jsonl", "{\"id\": \"a\", \"passage\": \"p\", \"query\": \"q\"}\n");
  const auto m = error_message<SchemaError>([&] { load_jsonl((dir / "nofield.jsonl").string()); });
  EXPECT_NE(m.find("\"target\""), std::string::npos) << m;
  EXPECT_NE(m.find(":1:"), std::string::npos) << m;

  test::write_text(dir / "broken.jsonl",
                   "{\"id\": \"a\", \"passage\": \"p\", \"query\": \"q\", \"target\": \"t\"}\n{\"id\": \n");
  const auto b = error_message<ParseError>([&] { load_jsonl((dir / "broken.jsonl").string()); });
  EXPECT_NE(b.find(":2:"), std::string::npos) << b;

  test::write_text(dir / "type.jsonl", "{\"id\": \"a\", \"passage\": 3, \"query\": \"q\", \"target\": \"t\"}\n");
  EXPECT_THROW(load_jsonl((dir / "type.jsonl").string()), SchemaError);
  test::write_text(dir / "array.jsonl", "[1, 2]\n");
  EXPECT_THROW(load_jsonl((dir / "array.jsonl").string()), SchemaError);
}

TEST(LoadJsonl, TruncatesLongPassages) {
  auto dir = test::scratch_dir("jsonl_trunc");
  test::write_text(dir / "t.jsonl", "{\"id\": \"a\", \"passage\": \"a b c d e f\", \"query\": \"q\", \"target\": \"t\"}\n");
  EXPECT_EQ(load_jsonl((dir / "t.jsonl").string(), 4)[0].passage, (Tokens{"a", "b", "c", "d"}));
  EXPECT_EQ(load_jsonl((dir / "t.jsonl").string(), 0)[0].passage.size(), 6u);
}

TEST(Jsonl, RoundTripIsLossless) {
  auto dir = test::scratch_dir("jsonl_rt");
  const auto examples = squad_adapter(kSquad, TaskMode::kQG);
  write_jsonl((dir / "rt.jsonl").string(), examples);
  EXPECT_EQ(load_jsonl((dir / "rt.jsonl").string()), examples);
  const auto j = to_json(examples[0]);
  EXPECT_EQ(j["target"], "when was nikola tesla born ?");
}

TEST(Squad, CountMatchesQuestions) {
  const auto qg = squad_adapter(kSquad, TaskMode::kQG);
  EXPECT_EQ(qg.size(), 10u);
  EXPECT_EQ(qg[0].id, "t1");
  EXPECT_EQ(qg[9].id, "1-1-2");
}

TEST(Squad, TeslaFraming) {
  const auto qg = squad_adapter(kSquad, TaskMode::kQG);
  EXPECT_EQ(qg[0].passage, tokenize("Nikola Tesla was born on 10 July 1856 in Smiljan. He emigrated to the United "
                                    "States in 1884."));
  EXPECT_EQ(qg[0].query, Tokens{"1856"});
  EXPECT_EQ(qg[0].target, tokenize("When was Nikola Tesla born?"));
  const auto qa = squad_adapter(kSquad, TaskMode::kQA);
  EXPECT_EQ(qa[0].query, tokenize("When was Nikola Tesla born?"));
  EXPECT_EQ(qa[0].target, Tokens{"1856"});
  // The first listed answer is used.
  EXPECT_EQ(qa[4].target, tokenize("his own laboratory"));
}

TEST(Squad, ModesSwapQueryAndTarget) {
  const auto qg = squad_adapter(kSquad, TaskMode::kQG);
  const auto qa = squad_adapter(kSquad, TaskMode::kQA);
  ASSERT_EQ(qg.size(), qa.size());
  for (std::size_t i = 0; i < qg.size(); ++i) {
    EXPECT_EQ(qg[i].id, qa[i].id);
    EXPECT_EQ(qg[i].passage, qa[i].passage);
    EXPECT_EQ(qg[i].query, qa[i].target);
    EXPECT_EQ(qg[i].target, qa[i].query);
  }
}

TEST(Squad, SchemaErrorsCarryJsonPaths) {
  auto dir = test::scratch_dir("squad_bad");
  test::write_text(dir / "noq.json",
                   R"({"data": [{"paragraphs": [{"context": "c", "qas": [{"answers": [{"text": "a"}]}]}]}]})");
  const auto m = error_message<SchemaError>([&] { squad_adapter((dir / "noq.json").string(), TaskMode::kQG); });
  EXPECT_NE(m.find("$.data[0].paragraphs[0].qas[0]"), std::string::npos) << m;
  EXPECT_NE(m.find("question"), std::string::npos) << m;

  test::write_text(dir / "noans.json",
                   R"({"data": [{"paragraphs": [{"context": "c", "qas": [{"question": "q", "answers": []}]}]}]})");
  EXPECT_THROW(squad_adapter((dir / "noans.json").string(), TaskMode::kQA), SchemaError);
  test::write_text(dir / "nodata.json", R"({"version": "1"})");
  EXPECT_THROW(squad_adapter((dir / "nodata.json").string(), TaskMode::kQA), SchemaError);
  test::write_text(dir / "broken.json", "{");
  EXPECT_THROW(squad_adapter((dir / "broken.json").string(), TaskMode::kQA), ParseError);
  EXPECT_THROW(squad_adapter((dir / "none.json").string(), TaskMode::kQA), LoadError);
}

TEST(Split, SizesFollowFloorRule) {
  const auto examples = squad_adapter(kSquad, TaskMode::kQG);
  const auto s = split_dataset(examples, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.dev.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  const auto all = split_dataset(examples, {1.0, 0.0, 0.0}, 3);
  EXPECT_EQ(all.train.size(), 10u);
  EXPECT_TRUE(all.dev.empty());
  EXPECT_TRUE(all.test.empty());
  const auto odd = split_dataset(examples, {0.5, 0.25, 0.25}, 3);
  EXPECT_EQ(odd.train.size(), 6u);
  EXPECT_EQ(odd.dev.size(), 2u);
}

TEST(Split, DisjointExhaustiveAndDeterministic) {
  const auto examples = squad_adapter(kSquad, TaskMode::kQG);
  const auto a = split_dataset(examples, {0.6, 0.2, 0.2}, 11);
  const auto b = split_dataset(examples, {0.6, 0.2, 0.2}, 11);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.dev, b.dev);
  EXPECT_EQ(a.test, b.test);
  std::vector<std::string> ids;
  for (const auto* part : {&a.train, &a.dev, &a.test})
    for (const auto& ex : *part) ids.push_back(ex.id);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(std::unique(ids.begin(), ids.end()), ids.end());
  EXPECT_EQ(ids.size(), examples.size());
}

TEST(Split, BadRatiosAreContractErrors) {
  const auto examples = squad_adapter(kSquad, TaskMode::kQG);
  EXPECT_THROW(split_dataset(examples, {0.8, 0.1, 0.2}, 1), ContractError);
  EXPECT_THROW(split_dataset(examples, {1.2, -0.1, -0.1}, 1), ContractError);
}

TEST(TaskMode, Parsing) {
  EXPECT_EQ(parse_mode("qg"), TaskMode::kQG);
  EXPECT_EQ(parse_mode("QA"), TaskMode::kQA);
  EXPECT_THROW(parse_mode("summarize"), ContractError);
  EXPECT_STREQ(mode_name(TaskMode::kQA), "qa");
}
