#include <doctest.h>

#include "synthrank/corpus.hpp"
#include "synthrank/error.hpp"
#include "toy_data.hpp"

using namespace synthrank;
using testing::TempDir;
using testing::write_file;

TEST_CASE("jsonl corpus with alternate field names") {
  TempDir dir;
  write_file(dir / "c.jsonl",
             "{\"doc_id\": \"a\", \"title\": \"T\", \"body\": \"one two\"}\n"
             "\n"
             "{\"_id\": \"b\", \"text\": \"three\"}\n"
             "{\"doc_id\": 7, \"body\": \"seven\"}\n");
  const auto c = ingest_corpus(dir / "c.jsonl", CorpusFormat::kJsonl);
  REQUIRE(c.size() == 3);
  CHECK(c[0].combined_text() == "T one two");
  CHECK(c[1].doc_id == "b");
  CHECK_FALSE(c[1].has_title());
  CHECK(c.get("7").body == "seven");
  CHECK(c.has_titles());
  CHECK(c.ordinal_of("b").value() == 1);
  CHECK_FALSE(c.ordinal_of("zzz").has_value());
}

TEST_CASE("tsv corpus with two and three columns") {
  TempDir dir;
  write_file(dir / "c.tsv", "a\tbody a\nb\ttitle b\tbody b\nc\t\tbody c\r\n");
  const auto c = ingest_corpus(dir / "c.tsv", CorpusFormat::kTsv);
  REQUIRE(c.size() == 3);
  CHECK(c[0].body == "body a");
  CHECK(*c[1].title == "title b");
  CHECK_FALSE(c[2].has_title());
  CHECK(c[2].body == "body c");
}

TEST_CASE("malformed records report their line") {
  TempDir dir;
  write_file(dir / "bad.jsonl", "{\"doc_id\": \"a\", \"body\": \"x\"}\n{\"doc_id\": \"b\"}\n");
  try {
    ingest_corpus(dir / "bad.jsonl", CorpusFormat::kJsonl);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  write_file(dir / "bad2.jsonl", "{\"doc_id\": \"a\", \"body\": \"x\"}\n\n{not json\n");
  try {
    ingest_corpus(dir / "bad2.jsonl", CorpusFormat::kJsonl);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  write_file(dir / "bad.tsv", "a\tb\tc\td\n");
  CHECK_THROWS_AS(ingest_corpus(dir / "bad.tsv", CorpusFormat::kTsv), ParseError);
  write_file(dir / "utf.tsv", "a\tok\nb\tbad \xFF byte\n");
  try {
    ingest_corpus(dir / "utf.tsv", CorpusFormat::kTsv);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("duplicate doc ids are rejected") {
  TempDir dir;
  write_file(dir / "dup.tsv", "a\tx\nb\ty\na\tz\n");
  try {
    ingest_corpus(dir / "dup.tsv", CorpusFormat::kTsv);
    FAIL("expected DuplicateIdError");
  } catch (const DuplicateIdError& e) {
    CHECK(e.id() == "a");
  }
  CHECK_THROWS_AS(parse_corpus_format("xml"), Error);
  CHECK_THROWS_AS(ingest_corpus(dir / "missing.tsv", CorpusFormat::kTsv), Error);
}

TEST_CASE("queries: tsv, plain jsonl, multi-field jsonl") {
  TempDir dir;
  write_file(dir / "q.tsv", "1\tfirst query\n2\tsecond\n");
  auto tsv = read_queries(dir / "q.tsv");
  REQUIRE(tsv.size() == 2);
  CHECK(tsv[1].lexical_text() == "second");

  write_file(dir / "q.jsonl",
             "{\"query_id\": \"301\", \"title\": \"oil spills\", \"description\": \"What damage do "
             "oil spills cause?\", \"narrative\": \"ignored\"}\n"
             "{\"query_id\": \"302\", \"text\": \"plain\"}\n");
  auto js = read_queries(dir / "q.jsonl");
  REQUIRE(js.size() == 2);
  CHECK(js[0].lexical_text() == "oil spills");
  CHECK(js[0].ranker_text() == "What damage do oil spills cause?");
  CHECK(js[1].ranker_text() == "plain");

  write_file(dir / "dup.tsv", "1\ta\n1\tb\n");
  CHECK_THROWS_AS(read_queries(dir / "dup.tsv"), DuplicateIdError);
  write_file(dir / "empty.tsv", "1\t  \n");
  CHECK_THROWS_AS(read_queries(dir / "empty.tsv"), ParseError);
}

TEST_CASE("qrels round trip and queries") {
  TempDir dir;
  write_file(dir / "qrels.txt", "q1 0 d1 2\nq1 0 d2 0\nq2 0 d3 1\n");
  const auto qrels = read_qrels(dir / "qrels.txt");
  CHECK(qrels.grade("q1", "d1") == 2);
  CHECK(qrels.grade("q1", "d9") == 0);
  CHECK(qrels.relevant_count("q1") == 1);
  CHECK(qrels.judged("q2"));
  CHECK_FALSE(qrels.judged("q3"));
  write_qrels(qrels, dir / "out.txt");
  const auto again = read_qrels(dir / "out.txt");
  CHECK(again.judgments() == qrels.judgments());

  write_file(dir / "dup.txt", "q1 0 d1 1\nq1 0 d1 0\n");
  CHECK_THROWS_AS(read_qrels(dir / "dup.txt"), DuplicateIdError);
  write_file(dir / "bad.txt", "q1 0 d1 x\n");
  CHECK_THROWS_AS(read_qrels(dir / "bad.txt"), ParseError);
}

TEST_CASE("runs: reading sorts by rank, invalid ranks name the query") {
  TempDir dir;
  write_file(dir / "r.run", "q1 Q0 b 2 0.5 t\nq1 Q0 a 1 0.9 t\nq2 Q0 c 1 1.0 t\n");
  const auto run = read_run(dir / "r.run");
  CHECK(run.at("q1")[0].doc_id == "a");
  CHECK(run.at("q1")[1].rank == 2);

  write_file(dir / "gap.run", "q7 Q0 a 1 0.9 t\nq7 Q0 b 3 0.5 t\n");
  try {
    read_run(dir / "gap.run");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("q7") != std::string::npos);
  }
  write_file(dir / "zero.run", "q1 Q0 a 0 0.9 t\n");
  CHECK_THROWS_AS(read_run(dir / "zero.run"), ParseError);

  RunSet out = run;
  write_run(out, "mytag", dir / "w.run");
  const auto text = testing::read_file(dir / "w.run");
  CHECK(text.find("q1 Q0 a 1 0.900000 mytag\n") == 0);
  out["q1"][1].score = 5.0;
  CHECK_THROWS_AS(write_run(out, "x", dir / "bad.run"), Error);
}
