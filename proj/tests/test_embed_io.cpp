#include "otlex/embed_io.hpp"
#include "otlex/map_io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace otlex;
using otlex::testing::TempDir;
using otlex::testing::read_file;
using otlex::testing::write_file;

namespace {

struct Fixture : ::testing::Test {
  TempDir dir{"embed"};
  std::string vec() {
    const std::string p = dir.file("s.vec");
    write_file(p, "2 3\ncat 1 0 0\ndog 0 2 0\n");
    return p;
  }
};

}  // namespace

TEST_F(Fixture, LoadsAndUnitNormalizes) {
  const EmbeddingSpace s = load_embeddings(vec());
  ASSERT_EQ(s.size(), 2);
  ASSERT_EQ(s.dim(), 3);
  EXPECT_EQ(s.normalized(), Normalization::unit);
  Matrix want(2, 3);
  want << 1, 0, 0, 0, 1, 0;
  EXPECT_EQ(s.matrix(), want);
  EXPECT_EQ(s.word(1), "dog");
  EXPECT_EQ(*s.find("cat"), 0);
  EXPECT_FALSE(s.find("cow"));
}

TEST_F(Fixture, MaxVocabTruncates) {
  EmbeddingLoadOptions o;
  o.max_vocab = 1;
  const EmbeddingSpace s = load_embeddings(vec(), o);
  ASSERT_EQ(s.size(), 1);
  EXPECT_EQ(s.word(0), "cat");
}

TEST_F(Fixture, RawModeKeepsValues) {
  EmbeddingLoadOptions o;
  o.normalize = false;
  const EmbeddingSpace s = load_embeddings(vec(), o);
  EXPECT_EQ(s.normalized(), Normalization::raw);
  EXPECT_EQ(s.matrix()(1, 1), 2.0);
}

TEST_F(Fixture, DimensionMismatchIsFormatError) {
  const std::string p = dir.file("bad.vec");
  write_file(p, "1 3\ncat 1 0\n");
  EXPECT_THROW(load_embeddings(p), FormatError);
}

TEST_F(Fixture, MalformedInputs) {
  const std::string empty = dir.file("empty.vec");
  write_file(empty, "");
  EXPECT_THROW(load_embeddings(empty), FormatError);

  const std::string header = dir.file("header.vec");
  write_file(header, "two 3\ncat 1 0 0\n");
  EXPECT_THROW(load_embeddings(header), FormatError);

  const std::string trunc = dir.file("trunc.vec");
  write_file(trunc, "3 2\na 1 0\nb 0 1\n");
  EXPECT_THROW(load_embeddings(trunc), FormatError);

  const std::string number = dir.file("number.vec");
  write_file(number, "1 2\na 1 x\n");
  EXPECT_THROW(load_embeddings(number), FormatError);

  EXPECT_THROW(load_embeddings(dir.file("missing.vec")), IoError);
}

TEST_F(Fixture, ZeroRowRejectedUnderNormalization) {
  const std::string p = dir.file("zero.vec");
  write_file(p, "2 2\na 0 0\nb 1 1\n");
  EXPECT_THROW(load_embeddings(p), NumericError);
  EmbeddingLoadOptions raw;
  raw.normalize = false;
  EXPECT_NO_THROW(load_embeddings(p, raw));
}

TEST_F(Fixture, DuplicateTokensSkippedAndCounted) {
  const std::string p = dir.file("dup.vec");
  write_file(p, "3 2\na 1 0\na 0 1\nb 1 1\n");
  EmbeddingLoadStats st;
  const EmbeddingSpace s = load_embeddings(p, {}, &st);
  EXPECT_EQ(s.size(), 2);
  EXPECT_EQ(st.duplicates_skipped, 1u);
  EXPECT_EQ(s.matrix()(0, 0), 1.0);
}

TEST_F(Fixture, TokenIsTextBeforeFirstSpace) {
  const std::string p = dir.file("utf8.vec");
  write_file(p, "1 2\nniño 3 4\n");
  const EmbeddingSpace s = load_embeddings(p);
  EXPECT_EQ(s.word(0), "niño");
  EXPECT_NEAR(s.matrix()(0, 0), 0.6, 1e-15);
}

TEST(EmbeddingSpaceTest, InvariantsEnforced) {
  Matrix m(2, 2);
  m << 1, 0, 0, 1;
  EXPECT_THROW(EmbeddingSpace({"a", "a"}, m), FormatError);
  EXPECT_THROW(EmbeddingSpace({"a"}, m), ShapeError);
  Matrix notunit(1, 2);
  notunit << 1, 1;
  EXPECT_THROW(EmbeddingSpace({"a"}, notunit, Normalization::unit), NumericError);
}

TEST(EmbeddingSpaceTest, NormalizationIsIdempotent) {
  std::mt19937_64 rng(5);
  const EmbeddingSpace raw = otlex::testing::make_space(otlex::testing::gaussian(50, 7, rng), "w");
  const EmbeddingSpace once = normalized_copy(raw);
  const EmbeddingSpace twice = normalized_copy(once);
  EXPECT_LE((once.matrix() - twice.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  for (Index i = 0; i < once.size(); ++i) EXPECT_NEAR(once.matrix().row(i).norm(), 1.0, 1e-12);
}

TEST(EmbeddingSpaceTest, SaveLoadRoundTripIsExact) {
  TempDir dir("roundtrip");
  std::mt19937_64 rng(11);
  const EmbeddingSpace s = otlex::testing::make_space(otlex::testing::gaussian(20, 5, rng), "w");
  save_embeddings(s, dir.file("x.vec"));
  EmbeddingLoadOptions raw;
  raw.normalize = false;
  const EmbeddingSpace back = load_embeddings(dir.file("x.vec"), raw);
  EXPECT_EQ(back.words(), s.words());
  EXPECT_EQ(back.matrix(), s.matrix());
}

// ---------------------------------------------------------------------------

namespace {

struct LexFixture : ::testing::Test {
  TempDir dir{"lex"};
  EmbeddingSpace src, tgt;
  void SetUp() override {
    Matrix a(3, 2), b(3, 2);
    a << 1, 0, 0, 1, 1, 1;
    b << 0, 1, 1, 0, 1, -1;
    src = EmbeddingSpace({"cat", "dog", "bird"}, a);
    tgt = EmbeddingSpace({"gato", "perro", "pajaro"}, b);
  }
};

}  // namespace

TEST_F(LexFixture, LoadsPairsInFileOrder) {
  write_file(dir.file("l.txt"), "cat gato\ndog perro\n");
  const Lexicon lex = load_lexicon(dir.file("l.txt"), src, tgt);
  ASSERT_EQ(lex.size(), 2u);
  EXPECT_EQ(lex[0].src, 0);
  EXPECT_EQ(lex[0].tgt, 0);
  EXPECT_EQ(lex[1].src, 1);
  EXPECT_EQ(lex[1].tgt, 1);
}

TEST_F(LexFixture, DeduplicatesAndSkipsOov) {
  write_file(dir.file("l.txt"), "cat gato\ncat gato\n\nunicorn gato\n");
  LexiconLoadStats st;
  const Lexicon lex = load_lexicon(dir.file("l.txt"), src, tgt, &st);
  EXPECT_EQ(lex.size(), 1u);
  EXPECT_EQ(st.duplicates, 1u);
  EXPECT_EQ(st.skipped_oov, 1u);
  EXPECT_EQ(st.lines, 3u);
}

TEST_F(LexFixture, OnlyOovGivesEmpty) {
  write_file(dir.file("l.txt"), "unicorn gato\n");
  LexiconLoadStats st;
  EXPECT_TRUE(load_lexicon(dir.file("l.txt"), src, tgt, &st).empty());
  EXPECT_EQ(st.skipped_oov, 1u);
}

TEST_F(LexFixture, Errors) {
  write_file(dir.file("l.txt"), "cat\n");
  EXPECT_THROW(load_lexicon(dir.file("l.txt"), src, tgt), FormatError);
  EXPECT_THROW(load_lexicon(dir.file("nope.txt"), src, tgt), IoError);
}

TEST_F(LexFixture, OneToManyKept) {
  write_file(dir.file("l.txt"), "cat gato\ncat perro\n");
  const Lexicon lex = load_lexicon(dir.file("l.txt"), src, tgt);
  EXPECT_EQ(lex.size(), 2u);
}

TEST_F(LexFixture, SubsetRows) {
  Lexicon lex;
  lex.add(0, 1);
  lex.add(1, 0);
  const Matrix s = subset_rows(src, lex, Side::source);
  const Matrix t = subset_rows(tgt, lex, Side::target);
  EXPECT_EQ(s.row(0), src.matrix().row(0));
  EXPECT_EQ(s.row(1), src.matrix().row(1));
  EXPECT_EQ(t.row(0), tgt.matrix().row(1));
  EXPECT_EQ(t.row(1), tgt.matrix().row(0));

  Lexicon many;
  many.add(0, 0);
  many.add(0, 1);
  const Matrix r = subset_rows(src, many, Side::source);
  ASSERT_EQ(r.rows(), 2);
  EXPECT_EQ(r.row(0), r.row(1));
  EXPECT_EQ(subset_rows(tgt, many, Side::target).rows(), 2);

  Lexicon bad;
  bad.add(7, 0);
  EXPECT_THROW(subset_rows(src, bad, Side::source), RangeError);
}

TEST_F(LexFixture, SaveRoundTrip) {
  Lexicon lex;
  lex.add(2, 0);
  lex.add(0, 1, PairOrigin::additional);
  save_lexicon(lex, src, tgt, dir.file("o.txt"));
  EXPECT_EQ(read_file(dir.file("o.txt")), "bird gato\ncat perro\n");
  const Lexicon back = load_lexicon(dir.file("o.txt"), src, tgt);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.pairs(), lex.pairs());

  save_lexicon(Lexicon{}, src, tgt, dir.file("empty.txt"));
  EXPECT_EQ(read_file(dir.file("empty.txt")), "");

  save_lexicon(lex, src, tgt, dir.file("origin.txt"), true);
  EXPECT_EQ(read_file(dir.file("origin.txt")), "bird gato\tannotated\ncat perro\tadditional\n");
  EXPECT_EQ(load_lexicon(dir.file("origin.txt"), src, tgt).pairs(), lex.pairs());
}

TEST(LexiconTest, SetSemanticsAndOrigins) {
  Lexicon lex;
  EXPECT_TRUE(lex.add(1, 2));
  EXPECT_FALSE(lex.add(1, 2, PairOrigin::additional));
  EXPECT_TRUE(lex.add(1, 3, PairOrigin::additional));
  EXPECT_EQ(lex.count(PairOrigin::annotated), 1u);
  EXPECT_EQ(lex.count(PairOrigin::additional), 1u);
  EXPECT_TRUE(lex.contains(1, 3));
  EXPECT_FALSE(lex.contains(3, 1));
}

// ---------------------------------------------------------------------------

TEST(MapIoTest, RoundTripIsBitExact) {
  TempDir dir("map");
  std::mt19937_64 rng(3);
  const LinearMap q(otlex::testing::gaussian(5, 5, rng), false);
  save_map(q, dir.file("q.otlx"));
  const LinearMap back = load_map(dir.file("q.otlx"));
  EXPECT_EQ(back.matrix(), q.matrix());
  EXPECT_FALSE(back.orthogonal());
  EXPECT_EQ(read_file(dir.file("q.otlx")).size(), kMapHeaderBytes + 8 * 25);

  const LinearMap r(otlex::testing::gram_schmidt_orthogonal(4, rng), true);
  save_map(r, dir.file("r.otlx"));
  EXPECT_TRUE(load_map(dir.file("r.otlx")).orthogonal());
}

TEST(MapIoTest, HeaderLayout) {
  const auto buf = encode_map(LinearMap::identity(3));
  ASSERT_EQ(buf.size(), 16u + 72u);
  EXPECT_EQ(std::string(buf.begin(), buf.begin() + 4), "OTLX");
  EXPECT_EQ(buf[4], 3);
  EXPECT_EQ(buf[5] | buf[6] | buf[7], 0);
  EXPECT_EQ(buf[8], 1);
  // 1.0 little-endian: 00 .. 00 f0 3f
  EXPECT_EQ(buf[16 + 6], 0xf0);
  EXPECT_EQ(buf[16 + 7], 0x3f);
}

TEST(MapIoTest, RejectsCorruptFiles) {
  auto buf = encode_map(LinearMap::identity(2));
  auto bad_magic = buf;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_map(bad_magic), FormatError);
  auto bad_version = buf;
  bad_version[9] = 99;
  EXPECT_THROW(decode_map(bad_version), FormatError);
  buf.pop_back();
  EXPECT_THROW(decode_map(buf), FormatError);
  EXPECT_THROW(load_map("/nonexistent/q.otlx"), IoError);
}
