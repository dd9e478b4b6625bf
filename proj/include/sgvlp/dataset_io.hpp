#pragma once

// Line-delimited JSON datasets: one SyntheticScene per line, every record
// tagged with "schema": "v1". Field names follow the in-memory types.

#include "sgvlp/scene_synth.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgvlp {

inline constexpr const char* kDatasetSchema = "v1";

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::size_t line, const std::string& field, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", field '" + field + "': " + what),
        line_(line),
        field_(field) {}
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

namespace io_detail {

using nlohmann::json;

inline json vec_to_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
inline json box_to_json(const Aabb& b) {
  return {{"center", vec_to_json(b.center)}, {"size", vec_to_json(b.size)}};
}

/// Reads checked fields out of one record, naming the offending path.
class Reader {
 public:
  explicit Reader(std::size_t line) : line_(line) {}

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    throw DatasetError(line_, path, what);
  }

  const json& at(const json& j, const char* key, const std::string& path) const {
    if (!j.is_object()) fail(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) fail(join(path, key), "missing");
    return *it;
  }

  double number(const json& j, const std::string& path) const {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
  }

  int integer(const json& j, const std::string& path) const {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<int>();
  }

  std::string string(const json& j, const std::string& path) const {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
  }

  const json& array(const json& j, const std::string& path) const {
    if (!j.is_array()) fail(path, "expected an array");
    return j;
  }

  std::vector<std::string> words(const json& j, const std::string& path) const {
    std::vector<std::string> out;
    const auto& a = array(j, path);
    for (std::size_t i = 0; i < a.size(); ++i) out.push_back(string(a[i], idx(path, i)));
    return out;
  }

  Vec3 vec3(const json& j, const std::string& path) const {
    const auto& a = array(j, path);
    if (a.size() != 3) fail(path, "expected 3 numbers");
    return {number(a[0], idx(path, 0)), number(a[1], idx(path, 1)), number(a[2], idx(path, 2))};
  }

  Aabb box(const json& j, const std::string& path) const {
    Aabb b;
    b.center = vec3(at(j, "center", path), join(path, "center"));
    b.size = vec3(at(j, "size", path), join(path, "size"));
    if (!b.valid()) fail(join(path, "size"), "box extents must be positive");
    return b;
  }

  template <class Enum>
  Enum enumeration(const json& j, const std::string& path,
                   std::optional<Enum> (*parse)(std::string_view)) const {
    auto word = string(j, path);
    auto v = parse(word);
    if (!v) fail(path, "unknown value '" + word + "'");
    return *v;
  }

  static std::string join(const std::string& path, const char* key) {
    return path.empty() ? std::string(key) : path + "." + key;
  }
  static std::string idx(const std::string& path, std::size_t i) {
    return path + "[" + std::to_string(i) + "]";
  }

 private:
  std::size_t line_;
};

}  // namespace io_detail

inline nlohmann::json scene_to_json(const SyntheticScene& s) {
  using io_detail::box_to_json;
  using nlohmann::json;
  json objects = json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"id", o.id},
                       {"category", name_of(o.category)},
                       {"attribute", name_of(o.attribute)},
                       {"box", box_to_json(o.box)}});
  }
  json relations = json::array();
  for (const auto& r : s.relations) {
    relations.push_back(
        {{"subject_id", r.subject_id}, {"object_id", r.object_id}, {"predicate", name_of(r.predicate)}});
  }
  json utterances = json::array();
  for (const auto& u : s.utterances) {
    json spans = json::array();
    for (const auto& sp : u.name_spans) {
      spans.push_back({{"token_index", sp.token_index},
                       {"object_category", name_of(sp.object_category)},
                       {"role", name_of(sp.role)}});
    }
    utterances.push_back({{"tokens", u.tokens},
                          {"name_spans", spans},
                          {"referred_id", u.referred_id},
                          {"auxiliary_id", u.auxiliary_id ? json(*u.auxiliary_id) : json(nullptr)}});
  }
  json qa = json::array();
  for (const auto& q : s.qa_pairs) {
    qa.push_back({{"question", q.question}, {"answer", q.answer}, {"relevant_id", q.relevant_id}});
  }
  return {{"schema", kDatasetSchema},
          {"scene_id", s.scene_id},
          {"room", box_to_json(s.room)},
          {"objects", objects},
          {"relations", relations},
          {"utterances", utterances},
          {"scene_description", s.scene_description},
          {"qa_pairs", qa}};
}

inline SyntheticScene scene_from_json(const nlohmann::json& j, std::size_t line) {
  io_detail::Reader rd(line);
  using R = io_detail::Reader;
  if (!j.is_object()) rd.fail("", "record is not an object");
  if (rd.string(rd.at(j, "schema", ""), "schema") != kDatasetSchema) {
    rd.fail("schema", "unsupported schema version");
  }
  SyntheticScene s;
  const auto& sid = rd.at(j, "scene_id", "");
  if (!sid.is_number_unsigned() && !sid.is_number_integer()) rd.fail("scene_id", "expected an integer");
  s.scene_id = sid.get<std::uint64_t>();
  s.room = rd.box(rd.at(j, "room", ""), "room");

  const auto& objs = rd.array(rd.at(j, "objects", ""), "objects");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto p = R::idx("objects", i);
    SceneObject o;
    o.id = rd.integer(rd.at(objs[i], "id", p), R::join(p, "id"));
    o.category = rd.enumeration<Category>(rd.at(objs[i], "category", p), R::join(p, "category"),
                                          parse_category);
    o.attribute = rd.enumeration<Color>(rd.at(objs[i], "attribute", p), R::join(p, "attribute"),
                                        parse_color);
    o.box = rd.box(rd.at(objs[i], "box", p), R::join(p, "box"));
    s.objects.push_back(o);
  }

  const auto& rels = rd.array(rd.at(j, "relations", ""), "relations");
  for (std::size_t i = 0; i < rels.size(); ++i) {
    const auto p = R::idx("relations", i);
    Relation r;
    r.subject_id = rd.integer(rd.at(rels[i], "subject_id", p), R::join(p, "subject_id"));
    r.object_id = rd.integer(rd.at(rels[i], "object_id", p), R::join(p, "object_id"));
    r.predicate = rd.enumeration<Predicate>(rd.at(rels[i], "predicate", p),
                                            R::join(p, "predicate"), parse_predicate);
    s.relations.push_back(r);
  }

  const auto& utts = rd.array(rd.at(j, "utterances", ""), "utterances");
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const auto p = R::idx("utterances", i);
    Utterance u;
    u.tokens = rd.words(rd.at(utts[i], "tokens", p), R::join(p, "tokens"));
    const auto sp_path = R::join(p, "name_spans");
    const auto& spans = rd.array(rd.at(utts[i], "name_spans", p), sp_path);
    for (std::size_t k = 0; k < spans.size(); ++k) {
      const auto q = R::idx(sp_path, k);
      NameSpan ns;
      ns.token_index = rd.integer(rd.at(spans[k], "token_index", q), R::join(q, "token_index"));
      ns.object_category = rd.enumeration<Category>(rd.at(spans[k], "object_category", q),
                                                    R::join(q, "object_category"), parse_category);
      ns.role = rd.enumeration<SpanRole>(rd.at(spans[k], "role", q), R::join(q, "role"), parse_role);
      u.name_spans.push_back(ns);
    }
    u.referred_id = rd.integer(rd.at(utts[i], "referred_id", p), R::join(p, "referred_id"));
    const auto& aux = rd.at(utts[i], "auxiliary_id", p);
    if (!aux.is_null()) u.auxiliary_id = rd.integer(aux, R::join(p, "auxiliary_id"));
    s.utterances.push_back(std::move(u));
  }

  s.scene_description = rd.words(rd.at(j, "scene_description", ""), "scene_description");

  const auto& qas = rd.array(rd.at(j, "qa_pairs", ""), "qa_pairs");
  for (std::size_t i = 0; i < qas.size(); ++i) {
    const auto p = R::idx("qa_pairs", i);
    QaPair q;
    q.question = rd.words(rd.at(qas[i], "question", p), R::join(p, "question"));
    q.answer = rd.string(rd.at(qas[i], "answer", p), R::join(p, "answer"));
    q.relevant_id = rd.integer(rd.at(qas[i], "relevant_id", p), R::join(p, "relevant_id"));
    s.qa_pairs.push_back(std::move(q));
  }
  return s;
}

inline void write_dataset(const std::vector<SyntheticScene>& scenes, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& s : scenes) out << scene_to_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<SyntheticScene> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<SyntheticScene> scenes;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetError(line, "<record>", std::string("malformed JSON: ") + e.what());
    }
    scenes.push_back(scene_from_json(j, line));
  }
  return scenes;
}

}  // namespace sgvlp
