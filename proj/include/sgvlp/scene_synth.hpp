#pragma once

// Deterministic synthetic rooms: labeled boxes, the pairwise spatial
// relations that hold between them, referring utterances that pick out
// exactly one object, an inventory sentence and templated QA pairs.

#include "sgvlp/geometry.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sgvlp {

enum class Category : int { kChair, kTable, kCabinet, kSofa, kLamp, kBed, kDesk, kShelf };
enum class Color : int { kBlack, kWhite, kRed, kBlue, kGreen, kBrown, kGray, kYellow };
enum class Predicate : int { kLeft, kRight, kFront, kBehind, kNear };
enum class SpanRole : int { kReferential, kAuxiliary };

inline constexpr int kNumCategories = 8;
inline constexpr int kNumColors = 8;
inline constexpr int kNumPredicates = 5;

inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames{
    "chair", "table", "cabinet", "sofa", "lamp", "bed", "desk", "shelf"};
inline constexpr std::array<std::string_view, kNumColors> kColorNames{
    "black", "white", "red", "blue", "green", "brown", "gray", "yellow"};
inline constexpr std::array<std::string_view, kNumPredicates> kPredicateNames{
    "left", "right", "front", "behind", "near"};
inline constexpr std::array<std::string_view, 10> kCountWords{
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};

/// Typical extent (x, y, z) per category, meters.
inline constexpr std::array<Vec3, kNumCategories> kCategorySizes{{
    {0.7, 0.7, 0.9},   // chair
    {1.6, 1.0, 0.75},  // table
    {0.9, 0.6, 1.8},   // cabinet
    {2.0, 0.9, 0.85},  // sofa
    {0.6, 0.6, 1.5},   // lamp
    {2.0, 1.6, 0.6},   // bed
    {1.2, 0.6, 0.8},   // desk
    {1.2, 0.5, 2.0},   // shelf
}};

/// Mean RGB appearance per color name.
inline constexpr std::array<Vec3, kNumColors> kColorRgb{{
    {0.10, 0.10, 0.10},
    {0.90, 0.90, 0.90},
    {0.80, 0.10, 0.10},
    {0.10, 0.20, 0.80},
    {0.10, 0.70, 0.20},
    {0.50, 0.30, 0.10},
    {0.50, 0.50, 0.50},
    {0.90, 0.80, 0.10},
}};

inline constexpr double kRelationMargin = 0.3;
inline constexpr double kNearDistance = 1.5;

inline std::string_view name_of(Category c) { return kCategoryNames[static_cast<int>(c)]; }
inline std::string_view name_of(Color c) { return kColorNames[static_cast<int>(c)]; }
inline std::string_view name_of(Predicate p) { return kPredicateNames[static_cast<int>(p)]; }
inline std::string_view name_of(SpanRole r) {
  return r == SpanRole::kReferential ? "referential" : "auxiliary";
}

template <class Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view word, const std::array<std::string_view, N>& names) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == word) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

inline std::optional<Category> parse_category(std::string_view w) {
  return parse_enum<Category>(w, kCategoryNames);
}
inline std::optional<Color> parse_color(std::string_view w) {
  return parse_enum<Color>(w, kColorNames);
}
inline std::optional<Predicate> parse_predicate(std::string_view w) {
  return parse_enum<Predicate>(w, kPredicateNames);
}
inline std::optional<SpanRole> parse_role(std::string_view w) {
  if (w == "referential") return SpanRole::kReferential;
  if (w == "auxiliary") return SpanRole::kAuxiliary;
  return std::nullopt;
}

struct SceneObject {
  int id = 0;
  Category category = Category::kChair;
  Color attribute = Color::kBlack;
  Aabb box;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Relation {
  int subject_id = 0;
  int object_id = 0;
  Predicate predicate = Predicate::kLeft;
  friend bool operator==(const Relation&, const Relation&) = default;
};

struct NameSpan {
  int token_index = 0;
  Category object_category = Category::kChair;
  SpanRole role = SpanRole::kReferential;
  friend bool operator==(const NameSpan&, const NameSpan&) = default;
};

struct Utterance {
  std::vector<std::string> tokens;
  std::vector<NameSpan> name_spans;
  int referred_id = 0;
  std::optional<int> auxiliary_id;
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct QaPair {
  std::vector<std::string> question;
  std::string answer;
  int relevant_id = 0;
  friend bool operator==(const QaPair&, const QaPair&) = default;
};

struct SyntheticScene {
  std::uint64_t scene_id = 0;
  Aabb room;
  std::vector<SceneObject> objects;
  std::vector<Relation> relations;
  std::vector<Utterance> utterances;
  std::vector<std::string> scene_description;
  std::vector<QaPair> qa_pairs;
  friend bool operator==(const SyntheticScene&, const SyntheticScene&) = default;

  const SceneObject& object(int id) const {
    for (const auto& o : objects) {
      if (o.id == id) return o;
    }
    throw std::out_of_range("no object with id " + std::to_string(id));
  }
};

struct GeneratorConfig {
  int min_objects = 5;
  int max_objects = 9;
  Vec3 room_size{8.0, 6.0, 3.0};
  int num_categories = kNumCategories;
  int num_colors = kNumColors;
  int utterances_per_scene = 4;
  int qa_per_scene = 3;
  /// Per-axis relative spread of an object's size around its category size.
  double size_spread = 0.08;
  /// Probability that a lamp is placed on top of a table, desk or cabinet.
  double stack_probability = 0.3;
  int placement_attempts = 200;
};

// ---------------------------------------------------------------------------
// Predicates

/// Whether `pred` holds with `subject` as the subject and `object` as the
/// anchor. left/right compare x and front/behind compare y, each with a
/// 0.3 m margin; near needs center distance < 1.5 m and no axis relation.
inline bool predicate_holds(Predicate pred, const Aabb& subject, const Aabb& object) {
  const double dx = subject.center[0] - object.center[0];
  const double dy = subject.center[1] - object.center[1];
  switch (pred) {
    case Predicate::kLeft: return dx < -kRelationMargin;
    case Predicate::kRight: return dx > kRelationMargin;
    case Predicate::kFront: return dy < -kRelationMargin;
    case Predicate::kBehind: return dy > kRelationMargin;
    case Predicate::kNear:
      return center_distance(subject, object) < kNearDistance && std::abs(dx) <= kRelationMargin &&
             std::abs(dy) <= kRelationMargin;
  }
  return false;
}

inline std::vector<Relation> compute_relations(const std::vector<SceneObject>& objects) {
  std::vector<Relation> out;
  for (const auto& s : objects) {
    for (const auto& o : objects) {
      if (s.id == o.id) continue;
      for (int p = 0; p < kNumPredicates; ++p) {
        const auto pred = static_cast<Predicate>(p);
        if (predicate_holds(pred, s.box, o.box)) out.push_back({s.id, o.id, pred});
      }
    }
  }
  return out;
}

/// Objects of `category` (and `color`, when given) standing in relation
/// `pred` to at least one other object of `anchor`. Brute force.
inline std::vector<int> satisfiers(const SyntheticScene& scene, std::optional<Category> category,
                                   std::optional<Color> color, Predicate pred, Category anchor) {
  std::vector<int> ids;
  for (const auto& x : scene.objects) {
    if (category && x.category != *category) continue;
    if (color && x.attribute != *color) continue;
    for (const auto& y : scene.objects) {
      if (y.id == x.id || y.category != anchor) continue;
      if (predicate_holds(pred, x.box, y.box)) {
        ids.push_back(x.id);
        break;
      }
    }
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Language

/// Every word the generator can emit plus the reserved tokens, in id order.
inline std::vector<std::string> closed_vocabulary_words() {
  std::vector<std::string> words{"pad", "unk", "sos", "eos", "there", "is",   "a",
                                 "the", "what", "color", "room", "with"};
  for (auto w : kColorNames) words.emplace_back(w);
  for (auto w : kCategoryNames) words.emplace_back(w);
  for (auto w : kPredicateNames) words.emplace_back(w);
  for (auto w : kCountWords) words.emplace_back(w);
  return words;
}

/// Closed answer space for QA: colors then categories.
inline std::vector<std::string> answer_vocabulary() {
  std::vector<std::string> words;
  for (auto w : kColorNames) words.emplace_back(w);
  for (auto w : kCategoryNames) words.emplace_back(w);
  return words;
}

/// "there is a <color> <category> <predicate> the <category>" for `target`,
/// trying the target's relations in random order until one picks out the
/// target alone. Returns nullopt when no relation disambiguates it.
inline std::optional<Utterance> generate_utterance(const SyntheticScene& scene, int target_id,
                                                   std::mt19937_64& rng) {
  const SceneObject& target = scene.object(target_id);
  std::vector<Relation> candidates;
  for (const auto& r : scene.relations) {
    if (r.subject_id == target_id) candidates.push_back(r);
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  for (const auto& r : candidates) {
    const SceneObject& anchor = scene.object(r.object_id);
    auto ids = satisfiers(scene, target.category, target.attribute, r.predicate, anchor.category);
    if (ids.size() != 1 || ids.front() != target_id) continue;
    Utterance u;
    u.tokens = {"there", "is", "a", std::string(name_of(target.attribute)),
                std::string(name_of(target.category)), std::string(name_of(r.predicate)), "the",
                std::string(name_of(anchor.category))};
    u.name_spans = {{4, target.category, SpanRole::kReferential},
                    {7, anchor.category, SpanRole::kAuxiliary}};
    u.referred_id = target_id;
    u.auxiliary_id = anchor.id;
    return u;
  }
  return std::nullopt;
}

/// One templated question with a unique answer, or nullopt if the sampled
/// question is ambiguous.
inline std::optional<QaPair> generate_qa_pair(const SyntheticScene& scene, std::mt19937_64& rng) {
  if (scene.objects.empty()) throw std::invalid_argument("generate_qa_pair: empty scene");
  if (scene.relations.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, scene.relations.size() - 1);
  const Relation& r = scene.relations[pick(rng)];
  const SceneObject& subject = scene.object(r.subject_id);
  const SceneObject& anchor = scene.object(r.object_id);
  const bool ask_color = std::bernoulli_distribution(0.5)(rng);
  QaPair qa;
  if (ask_color) {
    auto ids = satisfiers(scene, subject.category, std::nullopt, r.predicate, anchor.category);
    if (ids.size() != 1) return std::nullopt;
    qa.question = {"what", "color", "is", "the", std::string(name_of(subject.category)),
                   std::string(name_of(r.predicate)), "the", std::string(name_of(anchor.category))};
    qa.answer = std::string(name_of(subject.attribute));
  } else {
    auto ids = satisfiers(scene, std::nullopt, std::nullopt, r.predicate, anchor.category);
    if (ids.size() != 1) return std::nullopt;
    qa.question = {"what", "is", std::string(name_of(r.predicate)), "the",
                   std::string(name_of(anchor.category))};
    qa.answer = std::string(name_of(subject.category));
  }
  qa.relevant_id = subject.id;
  return qa;
}

/// "room with <count> <category> ..." over the categories present, in
/// category order.
inline std::vector<std::string> describe_scene(const std::vector<SceneObject>& objects) {
  std::array<int, kNumCategories> counts{};
  for (const auto& o : objects) ++counts[static_cast<int>(o.category)];
  std::vector<std::string> words{"room", "with"};
  for (int c = 0; c < kNumCategories; ++c) {
    if (counts[c] == 0) continue;
    const int n = std::min<int>(counts[c], static_cast<int>(kCountWords.size()));
    words.emplace_back(kCountWords[n - 1]);
    words.emplace_back(kCategoryNames[c]);
  }
  return words;
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline bool overlaps(const Aabb& a, const std::vector<SceneObject>& placed) {
  for (const auto& o : placed) {
    if (intersection_volume(a, o.box) > 0.0) return true;
  }
  return false;
}
}  // namespace detail

/// Deterministic in (seed, config).
inline SyntheticScene generate_scene(std::uint64_t seed, const GeneratorConfig& config) {
  if (config.min_objects < 2) {
    throw std::invalid_argument("generate_scene: object count must be at least 2");
  }
  if (config.max_objects < config.min_objects) {
    throw std::invalid_argument("generate_scene: max_objects < min_objects");
  }
  if (config.num_categories < 1 || config.num_categories > kNumCategories ||
      config.num_colors < 1 || config.num_colors > kNumColors) {
    throw std::invalid_argument("generate_scene: vocabulary size out of range");
  }
  std::mt19937_64 rng(detail::splitmix64(seed));
  SyntheticScene scene;
  scene.scene_id = seed;
  scene.room.center = {0.0, 0.0, 0.5 * config.room_size[2]};
  scene.room.size = config.room_size;

  std::uniform_int_distribution<int> count_dist(config.min_objects, config.max_objects);
  std::uniform_int_distribution<int> cat_dist(0, config.num_categories - 1);
  std::uniform_int_distribution<int> color_dist(0, config.num_colors - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n_objects = count_dist(rng);

  // The requested count is a contract: retry placement with fresh draws until
  // every object fits.
  for (int restart = 0; static_cast<int>(scene.objects.size()) < n_objects; ++restart) {
    if (restart > 100) throw std::runtime_error("generate_scene: room too small for object count");
    scene.objects.clear();
    for (int i = 0; i < n_objects; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < config.placement_attempts && !placed; ++attempt) {
        SceneObject obj;
        obj.id = i;
        obj.category = static_cast<Category>(cat_dist(rng));
        obj.attribute = static_cast<Color>(color_dist(rng));
        const Vec3& base = kCategorySizes[static_cast<int>(obj.category)];
        for (int a = 0; a < 3; ++a) {
          obj.box.size[a] = base[a] * (1.0 + config.size_spread * (2.0 * unit(rng) - 1.0));
        }
        const Aabb* support = nullptr;
        if (obj.category == Category::kLamp && unit(rng) < config.stack_probability) {
          std::vector<const SceneObject*> tops;
          for (const auto& o : scene.objects) {
            if (o.category == Category::kTable || o.category == Category::kDesk ||
                o.category == Category::kCabinet) {
              tops.push_back(&o);
            }
          }
          if (!tops.empty()) {
            std::uniform_int_distribution<std::size_t> t(0, tops.size() - 1);
            support = &tops[t(rng)]->box;
          }
        }
        if (support) {
          const double slack_x = std::max(0.0, 0.5 * (support->size[0] - obj.box.size[0]));
          const double slack_y = std::max(0.0, 0.5 * (support->size[1] - obj.box.size[1]));
          obj.box.center[0] = support->center[0] + slack_x * (2.0 * unit(rng) - 1.0);
          obj.box.center[1] = support->center[1] + slack_y * (2.0 * unit(rng) - 1.0);
          obj.box.center[2] = support->max(2) + 0.5 * obj.box.size[2] + 1e-3;
        } else {
          for (int a = 0; a < 2; ++a) {
            const double half_room = 0.5 * config.room_size[a];
            const double half_obj = 0.5 * obj.box.size[a];
            obj.box.center[a] = (2.0 * unit(rng) - 1.0) * (half_room - half_obj - 1e-3);
          }
          obj.box.center[2] = 0.5 * obj.box.size[2];
        }
        if (!scene.room.contains(obj.box) || detail::overlaps(obj.box, scene.objects)) continue;
        scene.objects.push_back(obj);
        placed = true;
      }
      if (!placed) break;
    }
  }

  scene.relations = compute_relations(scene.objects);
  scene.scene_description = describe_scene(scene.objects);

  std::vector<int> order(scene.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng);
  for (int id : order) {
    if (static_cast<int>(scene.utterances.size()) >= config.utterances_per_scene) break;
    if (auto u = generate_utterance(scene, id, rng)) scene.utterances.push_back(std::move(*u));
  }
  for (int attempt = 0; attempt < 10 * config.qa_per_scene &&
                        static_cast<int>(scene.qa_pairs.size()) < config.qa_per_scene;
       ++attempt) {
    auto qa = generate_qa_pair(scene, rng);
    if (!qa) continue;
    bool duplicate = false;
    for (const auto& q : scene.qa_pairs) duplicate = duplicate || q.question == qa->question;
    if (!duplicate) scene.qa_pairs.push_back(std::move(*qa));
  }
  return scene;
}

/// Scene seeds for a dataset split; `split` keeps train and validation seeds
/// disjoint.
inline std::uint64_t scene_seed(std::uint64_t base_seed, std::uint64_t split, std::uint64_t index) {
  return detail::splitmix64(base_seed ^ detail::splitmix64(split * 0x100000001B3ull + index));
}

}  // namespace sgvlp
