#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "filterlab/corpus.hpp"
#include "filterlab/text_metrics.hpp"
#include "filterlab/trojan.hpp"
#include "filterlab/vocab.hpp"

using namespace filterlab;

TEST_CASE("vocabulary construction and specials") {
  const auto vocab = build_vocabulary({"the cat sat", "the dog ran"});
  CHECK(vocab.bos_id != vocab.eos_id);
  CHECK(vocab.bos_id < vocab.size());
  CHECK(vocab.unk_id >= 0);
  CHECK(vocab.lookup("cat") >= 0);
  CHECK(vocab.lookup("zebra") == -1);
  // Deterministic ids regardless of input order.
  const auto vocab2 = build_vocabulary({"the dog ran", "the cat sat"});
  CHECK(vocab.tokens == vocab2.tokens);
}

TEST_CASE("tokenize basics") {
  const auto vocab = build_vocabulary({"the cat sat", "Alpha"});
  CHECK(tokenize("", vocab).empty());
  const auto ids = tokenize("Alpha", vocab);
  REQUIRE(ids.size() == 1);
  CHECK(ids[0] == vocab.lookup("Alpha"));
}

TEST_CASE("unknown units fall back to UNK or are rejected") {
  auto vocab = build_vocabulary({"the cat"}, TokenUnit::word, /*with_unk=*/true);
  CHECK(tokenize("the zebra", vocab)[1] == vocab.unk_id);
  const auto strict = build_vocabulary({"the cat"}, TokenUnit::word, /*with_unk=*/false);
  CHECK_THROWS_WITH_AS(tokenize("the zebra", strict),
                       doctest::Contains("zebra"), std::invalid_argument);
}

TEST_CASE("round-trip of random corpus lines") {
  const auto lines = generate_story_corpus(100, 7);
  auto texts = lines;
  const auto vocab = build_vocabulary(texts);
  for (const auto& line : lines) {
    const auto ids = tokenize(line, vocab);
    CHECK(detokenize(ids, vocab) == normalize_whitespace(line));
  }
}

TEST_CASE("character unit vocabulary") {
  const auto vocab = build_vocabulary({"abc"}, TokenUnit::character);
  const auto ids = tokenize("cab", vocab);
  REQUIRE(ids.size() == 3);
  CHECK(detokenize(ids, vocab) == "cab");
}

TEST_CASE("detokenize skips specials") {
  const auto vocab = build_vocabulary({"hello world"});
  std::vector<int> ids = {vocab.bos_id, vocab.lookup("hello"), vocab.lookup("world"),
                          vocab.eos_id, vocab.eos_id};
  CHECK(detokenize(ids, vocab) == "hello world");
}

TEST_CASE("vocabulary file round-trip") {
  const auto vocab = build_vocabulary({"some words here"});
  const auto path = std::filesystem::temp_directory_path() / "filterlab_vocab_test.json";
  save_vocabulary(vocab, path.string());
  const auto loaded = load_vocabulary(path.string());
  CHECK(loaded.tokens == vocab.tokens);
  CHECK(loaded.bos_id == vocab.bos_id);
  CHECK(loaded.eos_id == vocab.eos_id);
  CHECK(loaded.unk_id == vocab.unk_id);
  CHECK(loaded.unit == vocab.unit);
  std::filesystem::remove(path);
}

TEST_CASE("story corpus is deterministic and sized") {
  const auto a = generate_story_corpus(50, 3);
  const auto b = generate_story_corpus(50, 3);
  CHECK(a == b);
  CHECK(a.size() == 50);
  const auto c = generate_story_corpus(50, 4);
  CHECK(a != c);
  for (const auto& s : a) CHECK(!s.empty());
}

TEST_CASE("trojan triggers are single tokens in a corpus-built vocabulary") {
  const auto lines = generate_story_corpus(200, 11);
  std::vector<std::string> texts = lines;
  for (const auto& t : default_trojans()) {
    texts.push_back(t.trigger);
    texts.push_back(t.followup);
  }
  const auto vocab = build_vocabulary(texts);
  for (const auto& t : default_trojans()) {
    const auto ids = tokenize(t.trigger, vocab);
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] != vocab.unk_id);
    // Followups tokenize without UNK and round-trip.
    const auto fids = tokenize(t.followup, vocab);
    for (int id : fids) CHECK(id != vocab.unk_id);
    CHECK(detokenize(fids, vocab) == normalize_whitespace(t.followup));
  }
}

TEST_CASE("text corpus loader skips comments and blank lines") {
  const auto path = std::filesystem::temp_directory_path() / "filterlab_corpus_test.txt";
  save_text_corpus({"# not data", "one story", "", "another story"}, path.string());
  const auto lines = load_text_corpus(path.string());
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "one story");
  std::filesystem::remove(path);
}
