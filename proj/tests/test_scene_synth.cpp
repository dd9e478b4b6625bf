#include "sgvlp/dataset_io.hpp"
#include "sgvlp/scene_synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

namespace {

using namespace sgvlp;

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "sgvlp_test_scene_synth";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

SceneObject make_object(int id, Category c, Color col, Vec3 center, Vec3 size = {0.6, 0.6, 0.9}) {
  SceneObject o;
  o.id = id;
  o.category = c;
  o.attribute = col;
  o.box.center = center;
  o.box.size = size;
  return o;
}

SyntheticScene scene_from(std::vector<SceneObject> objects) {
  SyntheticScene s;
  s.room.center = {0, 0, 1.5};
  s.room.size = {8, 6, 3};
  s.objects = std::move(objects);
  s.relations = compute_relations(s.objects);
  s.scene_description = describe_scene(s.objects);
  return s;
}

/// Objects matching (category, color) that stand in `pred` to some object of
/// `anchor`, evaluated directly from the box centers.
std::vector<int> brute_force_matches(const SyntheticScene& s, Category cat, std::optional<Color> col,
                                     Predicate pred, Category anchor) {
  std::vector<int> ids;
  for (const auto& x : s.objects) {
    if (x.category != cat || (col && x.attribute != *col)) continue;
    bool ok = false;
    for (const auto& y : s.objects) {
      if (y.id == x.id || y.category != anchor) continue;
      const double dx = x.box.center[0] - y.box.center[0];
      const double dy = x.box.center[1] - y.box.center[1];
      const double dz = x.box.center[2] - y.box.center[2];
      const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
      switch (pred) {
        case Predicate::kLeft: ok = ok || dx < -0.3; break;
        case Predicate::kRight: ok = ok || dx > 0.3; break;
        case Predicate::kFront: ok = ok || dy < -0.3; break;
        case Predicate::kBehind: ok = ok || dy > 0.3; break;
        case Predicate::kNear: ok = ok || (dist < 1.5 && std::abs(dx) <= 0.3 && std::abs(dy) <= 0.3); break;
      }
    }
    if (ok) ids.push_back(x.id);
  }
  return ids;
}

std::vector<SyntheticScene> many_scenes(int n, std::uint64_t base = 11) {
  std::vector<SyntheticScene> out;
  GeneratorConfig g;
  for (int i = 0; i < n; ++i) out.push_back(generate_scene(scene_seed(base, 0, i), g));
  return out;
}

TEST(SceneSynth, ForcedObjectCountInsideRoom) {
  GeneratorConfig g;
  g.min_objects = g.max_objects = 10;
  const auto s = generate_scene(7, g);
  ASSERT_EQ(s.objects.size(), 10u);
  std::set<int> ids;
  for (const auto& o : s.objects) {
    EXPECT_TRUE(s.room.contains(o.box));
    EXPECT_TRUE(o.box.valid());
    ids.insert(o.id);
  }
  EXPECT_EQ(ids.size(), 10u);
}

TEST(SceneSynth, SameSeedSameScene) {
  GeneratorConfig g;
  EXPECT_EQ(generate_scene(7, g), generate_scene(7, g));
  EXPECT_EQ(scene_to_json(generate_scene(7, g)).dump(), scene_to_json(generate_scene(7, g)).dump());
  EXPECT_NE(generate_scene(7, g), generate_scene(8, g));
}

TEST(SceneSynth, LeftPredicateDefinitionInstance) {
  Aabb subject, object;
  subject.center = {0, 0, 0};
  object.center = {2, 0, 0};
  EXPECT_TRUE(predicate_holds(Predicate::kLeft, subject, object));
  EXPECT_FALSE(predicate_holds(Predicate::kRight, subject, object));
  EXPECT_FALSE(predicate_holds(Predicate::kNear, subject, object));
  object.center = {0.2, 0, 0};
  EXPECT_FALSE(predicate_holds(Predicate::kLeft, subject, object));
}

TEST(SceneSynth, RejectsFewerThanTwoObjects) {
  GeneratorConfig g;
  g.min_objects = 1;
  EXPECT_THROW(generate_scene(1, g), std::invalid_argument);
}

TEST(SceneSynth, BoxCornersAverageToCenter) {
  for (const auto& s : many_scenes(20)) {
    for (const auto& o : s.objects) {
      Vec3 mean{0, 0, 0};
      for (const auto& c : o.box.corners()) {
        for (int a = 0; a < 3; ++a) mean[a] += c[a] / 8.0;
      }
      for (int a = 0; a < 3; ++a) EXPECT_NEAR(mean[a], o.box.center[a], 1e-12);
    }
  }
}

TEST(SceneSynth, BlackChairLeftOfTheOnlyCabinet) {
  auto s = scene_from({make_object(0, Category::kChair, Color::kBlack, {0, 0, 0.45}),
                       make_object(1, Category::kCabinet, Color::kWhite, {2, 0, 0.9})});
  std::mt19937_64 rng(1);
  const auto u = generate_utterance(s, 0, rng);
  ASSERT_TRUE(u.has_value());
  const std::vector<std::string> expected{"there", "is", "a", "black", "chair", "left", "the", "cabinet"};
  EXPECT_EQ(u->tokens, expected);
  ASSERT_EQ(u->name_spans.size(), 2u);
  EXPECT_EQ(u->name_spans[0], (NameSpan{4, Category::kChair, SpanRole::kReferential}));
  EXPECT_EQ(u->name_spans[1], (NameSpan{7, Category::kCabinet, SpanRole::kAuxiliary}));
  EXPECT_EQ(u->referred_id, 0);
  EXPECT_EQ(u->auxiliary_id, std::optional<int>(1));
}

TEST(SceneSynth, TwoIdenticalRedLampsAreAmbiguous) {
  // Stacked lamps: each is near the other and both are left of the table,
  // so no relation singles either one out.
  auto s = scene_from({make_object(0, Category::kLamp, Color::kRed, {0, 0, 0.75}),
                       make_object(1, Category::kLamp, Color::kRed, {0, 0, 2.0}),
                       make_object(2, Category::kTable, Color::kBrown, {3, 0, 0.4})});
  std::mt19937_64 rng(1);
  EXPECT_FALSE(generate_utterance(s, 0, rng).has_value());
  EXPECT_FALSE(generate_utterance(s, 1, rng).has_value());
  EXPECT_TRUE(generate_utterance(s, 2, rng).has_value());
}

TEST(SceneSynth, EveryRelationHoldsGeometrically) {
  for (const auto& s : many_scenes(100)) {
    for (const auto& r : s.relations) {
      EXPECT_TRUE(predicate_holds(r.predicate, s.object(r.subject_id).box, s.object(r.object_id).box));
    }
    // and every holding relation is listed
    std::size_t expected = 0;
    for (const auto& a : s.objects) {
      for (const auto& b : s.objects) {
        if (a.id == b.id) continue;
        for (int p = 0; p < kNumPredicates; ++p) expected += predicate_holds(static_cast<Predicate>(p), a.box, b.box);
      }
    }
    EXPECT_EQ(s.relations.size(), expected);
  }
}

TEST(SceneSynth, EveryUtteranceHasExactlyOneSatisfier) {
  int checked = 0;
  for (const auto& s : many_scenes(200)) {
    for (const auto& u : s.utterances) {
      const auto cat = parse_category(u.tokens[4]);
      const auto col = parse_color(u.tokens[3]);
      const auto pred = parse_predicate(u.tokens[5]);
      const auto anchor = parse_category(u.tokens[7]);
      ASSERT_TRUE(cat && col && pred && anchor);
      const auto ids = brute_force_matches(s, *cat, *col, *pred, *anchor);
      ASSERT_EQ(ids.size(), 1u);
      EXPECT_EQ(ids[0], u.referred_id);
      for (const auto& span : u.name_spans) EXPECT_EQ(u.tokens[span.token_index], name_of(span.object_category));
      ++checked;
    }
  }
  EXPECT_GT(checked, 500);
}

TEST(SceneSynth, UtteranceFromUniqueSofa) {
  auto s = scene_from({make_object(0, Category::kSofa, Color::kGray, {-2, 0, 0.4}, {2, 0.9, 0.85}),
                       make_object(1, Category::kTable, Color::kBrown, {1, 0, 0.4}, {1.6, 1, 0.75}),
                       make_object(2, Category::kChair, Color::kGray, {3, 1, 0.45})});
  std::mt19937_64 rng(5);
  const auto u = generate_utterance(s, 0, rng);
  ASSERT_TRUE(u.has_value());
  const auto ids = brute_force_matches(s, Category::kSofa, Color::kGray, *parse_predicate(u->tokens[5]),
                                       *parse_category(u->tokens[7]));
  EXPECT_EQ(ids, std::vector<int>{0});
}

TEST(SceneSynth, AnswersStayInAnswerVocabulary) {
  const auto space = answer_vocabulary();
  int pairs = 0;
  std::mt19937_64 rng(3);
  for (const auto& s : many_scenes(400, 5)) {
    for (int i = 0; i < 10 && pairs < 1000; ++i) {
      const auto qa = generate_qa_pair(s, rng);
      if (!qa) continue;
      ++pairs;
      EXPECT_NE(std::find(space.begin(), space.end(), qa->answer), space.end()) << qa->answer;
      EXPECT_EQ(qa->question[0], "what");
    }
  }
  EXPECT_EQ(pairs, 1000);
}

TEST(SceneSynth, QaRelevantObjectIsTheUniqueSatisfier) {
  for (const auto& s : many_scenes(100, 9)) {
    for (const auto& qa : s.qa_pairs) {
      const auto& rel = s.object(qa.relevant_id);
      if (qa.question[1] == "color") {
        const auto ids = brute_force_matches(s, *parse_category(qa.question[4]), std::nullopt,
                                             *parse_predicate(qa.question[5]), *parse_category(qa.question[7]));
        EXPECT_EQ(ids, std::vector<int>{qa.relevant_id});
        EXPECT_EQ(qa.answer, name_of(rel.attribute));
      } else {
        int count = 0;
        for (int c = 0; c < kNumCategories; ++c) {
          count += static_cast<int>(brute_force_matches(s, static_cast<Category>(c), std::nullopt,
                                                        *parse_predicate(qa.question[2]),
                                                        *parse_category(qa.question[4]))
                                         .size());
        }
        EXPECT_EQ(count, 1);
        EXPECT_EQ(qa.answer, name_of(rel.category));
      }
    }
  }
}

TEST(SceneSynth, AmbiguousQuestionsAreDropped) {
  auto s = scene_from({make_object(0, Category::kLamp, Color::kRed, {0, 0, 0.75}),
                       make_object(1, Category::kLamp, Color::kBlue, {0, 0, 2.0}),
                       make_object(2, Category::kTable, Color::kBrown, {3, 0, 0.4})});
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto qa = generate_qa_pair(s, rng);
    if (!qa) continue;
    // Only questions anchored on a lamp ("what is right the lamp") are unique.
    EXPECT_EQ(qa->relevant_id, 2);
  }
}

TEST(SceneSynth, DescriptionMentionsEveryCategory) {
  for (const auto& s : many_scenes(100)) {
    for (const auto& o : s.objects) {
      EXPECT_NE(std::find(s.scene_description.begin(), s.scene_description.end(), name_of(o.category)),
                s.scene_description.end());
    }
    for (const auto& u : s.utterances) EXPECT_NO_THROW(s.object(u.referred_id));
  }
}

TEST(SceneSynth, ClosedVocabularyIsSmallAndCoversOutput) {
  const auto words = closed_vocabulary_words();
  EXPECT_LE(words.size(), 60u);
  std::set<std::string> vocab(words.begin(), words.end());
  EXPECT_EQ(vocab.size(), words.size());
  for (const auto& s : many_scenes(50)) {
    for (const auto& u : s.utterances) {
      for (const auto& w : u.tokens) EXPECT_TRUE(vocab.count(w)) << w;
    }
    for (const auto& w : s.scene_description) EXPECT_TRUE(vocab.count(w)) << w;
    for (const auto& q : s.qa_pairs) {
      for (const auto& w : q.question) EXPECT_TRUE(vocab.count(w)) << w;
    }
  }
}

TEST(Dataset, RoundTripHundredScenes) {
  const auto scenes = many_scenes(100);
  const auto path = temp_path("round_trip.jsonl");
  write_dataset(scenes, path);
  const auto back = read_dataset(path);
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) EXPECT_EQ(back[i], scenes[i]);
}

TEST(Dataset, RecordsCarrySchemaVersion) {
  const auto j = scene_to_json(many_scenes(1)[0]);
  EXPECT_EQ(j.at("schema"), "v1");
  for (const char* key : {"objects", "relations", "utterances", "scene_description", "qa_pairs"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST(Dataset, TruncatedFileNamesLine) {
  const auto scenes = many_scenes(3);
  const auto path = temp_path("truncated.jsonl");
  write_dataset(scenes, path);
  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  text.resize(text.size() - 40);
  std::ofstream(path, std::ios::trunc) << text;
  try {
    read_dataset(path);
    FAIL() << "expected a parse error";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Dataset, MissingFieldNamesField) {
  auto j = scene_to_json(many_scenes(1)[0]);
  j["objects"][0].erase("category");
  const auto path = temp_path("missing_field.jsonl");
  std::ofstream(path, std::ios::trunc) << "\n" << j.dump() << "\n";
  try {
    read_dataset(path);
    FAIL() << "expected a parse error";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(e.field().find("category"), std::string::npos) << e.field();
  }
}

TEST(Dataset, WrongSchemaRejected) {
  auto j = scene_to_json(many_scenes(1)[0]);
  j["schema"] = "v0";
  const auto path = temp_path("schema.jsonl");
  std::ofstream(path, std::ios::trunc) << j.dump() << "\n";
  EXPECT_THROW(read_dataset(path), DatasetError);
}

TEST(Dataset, EmptyFileGivesNoScenes) {
  const auto path = temp_path("empty.jsonl");
  std::ofstream(path, std::ios::trunc).flush();
  EXPECT_TRUE(read_dataset(path).empty());
}

}  // namespace
