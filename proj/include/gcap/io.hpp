#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcap/decoder.hpp"
#include "gcap/errors.hpp"
#include "gcap/geometry.hpp"
#include "gcap/metrics.hpp"
#include "gcap/sample.hpp"
#include "gcap/train.hpp"
#include "gcap/vocab.hpp"

namespace gcap {

using Json = nlohmann::json;

// ---- files -----------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a sibling temporary and renames, so readers never see a partial file.
inline void write_file(const std::string& path, const std::string& bytes) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

inline Json parse_json(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

/// Shortest round-trip decimal for a double, for CSV cells.
inline std::string format_double(double v) { return Json(v).dump(); }

// ---- boxes -----------------------------------------------------------------

inline Json box_to_json(const Box& b) { return Json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw FormatError(where + ": box must be [x1, y1, x2, y2]");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  try {
    validate(b);
  } catch (const ValidationError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return b;
}

// ---- dataset ---------------------------------------------------------------

inline Json sample_to_json(const Sample& s) {
  Json grid = Json::array();
  for (std::size_t r = 0; r < s.grid_size; ++r) {
    Json row = Json::array();
    for (std::size_t c = 0; c < s.grid_size; ++c) {
      const double* cell = s.grid.data() + (r * s.grid_size + c) * s.feat_dim;
      row.push_back(std::vector<double>(cell, cell + s.feat_dim));
    }
    grid.push_back(std::move(row));
  }
  Json proposals = Json::array();
  for (const auto& p : s.proposals) {
    Json jp = {{"box", box_to_json(p.box)}, {"feat", p.feature}};
    if (!p.tag.empty()) jp["kind"] = p.tag;
    proposals.push_back(std::move(jp));
  }
  Json refs = Json::array();
  for (const auto& r : s.refs) {
    Json aligns = Json::array();
    for (const auto& a : r.alignments) aligns.push_back({{"pos", a.position}, {"box", box_to_json(a.box)}});
    refs.push_back({{"tokens", r.tokens}, {"alignments", std::move(aligns)}});
  }
  return {{"id", s.id}, {"grid", std::move(grid)}, {"proposals", std::move(proposals)}, {"refs", std::move(refs)}};
}

inline Sample sample_from_json(const Json& j, const std::string& where) {
  try {
    Sample s;
    s.id = j.at("id").get<std::string>();
    const Json& grid = j.at("grid");
    s.grid_size = grid.size();
    if (s.grid_size == 0) throw FormatError(where + ": empty grid");
    for (const auto& row : grid) {
      if (row.size() != s.grid_size) throw FormatError(where + ": grid must be G x G");
      for (const auto& cell : row) {
        const auto values = cell.get<std::vector<double>>();
        if (s.feat_dim == 0) s.feat_dim = values.size();
        if (values.size() != s.feat_dim || s.feat_dim == 0) throw FormatError(where + ": ragged grid cell");
        s.grid.insert(s.grid.end(), values.begin(), values.end());
      }
    }
    for (const auto& jp : j.at("proposals")) {
      Proposal p;
      p.box = box_from_json(jp.at("box"), where);
      p.feature = jp.at("feat").get<std::vector<double>>();
      if (jp.contains("kind")) p.tag = jp["kind"].get<std::string>();
      s.proposals.push_back(std::move(p));
    }
    for (const auto& jr : j.at("refs")) {
      Reference r;
      r.tokens = jr.at("tokens").get<std::vector<std::string>>();
      for (const auto& ja : jr.at("alignments")) {
        r.alignments.push_back({ja.at("pos").get<std::size_t>(), box_from_json(ja.at("box"), where)});
      }
      s.refs.push_back(std::move(r));
    }
    return s;
  } catch (const Json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

inline std::string dataset_to_jsonl(std::span<const Sample> samples) {
  std::string out;
  for (const auto& s : samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

/// Calls `fn(line_json, where)` for every non-empty line.
template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    fn(parse_json(line, where), where);
  }
}

inline std::vector<Sample> read_dataset(const std::string& path) {
  std::vector<Sample> out;
  for_each_jsonl(path, [&](const Json& j, const std::string& where) { out.push_back(sample_from_json(j, where)); });
  return out;
}

inline void write_dataset(const std::string& path, std::span<const Sample> samples) {
  write_file(path, dataset_to_jsonl(samples));
}

// ---- vocabulary ------------------------------------------------------------

/// {"words": [...], "nouns": [...]}; the special tokens are implicit.
inline std::string vocab_to_json(const Vocabulary& v) {
  return Json{{"words", v.words()}, {"nouns", v.nouns()}}.dump(2) + "\n";
}

inline Vocabulary vocab_from_json(const Json& j, const std::string& where) {
  try {
    return Vocabulary(j.at("words").get<std::vector<std::string>>(), j.at("nouns").get<std::vector<std::string>>());
  } catch (const Json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

inline Vocabulary read_vocab(const std::string& path) { return vocab_from_json(parse_json(read_file(path), path), path); }

inline std::set<std::string> noun_set(const Vocabulary& v) {
  const auto nouns = v.nouns();
  return {nouns.begin(), nouns.end()};
}

// ---- predictions -----------------------------------------------------------

inline Json caption_to_json(const std::string& id, const GroundedCaption& cap, const Vocabulary& vocab,
                            bool dump_attention) {
  Json tokens = Json::array();
  for (std::size_t t : cap.tokens) tokens.push_back(vocab.token(t));
  Json groundings = Json::array();
  for (const auto& g : cap.groundings) {
    Json jg = {{"pos", g.position}, {"token", vocab.token(g.token)}, {"box", box_to_json(g.box)}, {"voters", g.voters}};
    if (dump_attention) {
      Json branches = Json::array();
      for (const auto& b : g.branches) {
        branches.push_back({{"branch", b.branch},
                            {"eligible", b.eligible},
                            {"weights", b.weights},
                            {"selected", b.selected},
                            {"word", vocab.token(b.word)}});
      }
      jg["attention"] = std::move(branches);
    }
    groundings.push_back(std::move(jg));
  }
  return {{"id", id}, {"tokens", std::move(tokens)}, {"groundings", std::move(groundings)}, {"terminated", cap.terminated}};
}

inline Prediction prediction_from_json(const Json& j, const std::string& where) {
  try {
    Prediction p;
    p.id = j.at("id").get<std::string>();
    p.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& jg : j.at("groundings")) {
      PredictedGrounding g;
      g.position = jg.at("pos").get<std::size_t>();
      g.token = jg.at("token").get<std::string>();
      g.box = box_from_json(jg.at("box"), where);
      if (g.position >= p.tokens.size() || p.tokens[g.position] != g.token) {
        throw FormatError(where + ": grounding position does not point at its token");
      }
      p.groundings.push_back(std::move(g));
    }
    return p;
  } catch (const Json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

inline std::vector<Prediction> read_predictions(const std::string& path) {
  std::vector<Prediction> out;
  for_each_jsonl(path, [&](const Json& j, const std::string& where) { out.push_back(prediction_from_json(j, where)); });
  return out;
}

// ---- reports ---------------------------------------------------------------

inline Json ablation_row_to_json(const AblationRow& r) {
  return {{"k", r.branches}, {"elimination", r.elimination}, {"bleu1", r.bleu1},    {"bleu4", r.bleu4},
          {"f1_all", r.f1_all}, {"f1_loc", r.f1_loc},       {"part_grd", r.part_grd}};
}

inline Json report_to_json(const EvalReport& r) {
  Json counts, ratios;
  for (std::size_t c = 0; c < kCategoryNames.size(); ++c) {
    counts[kCategoryNames[c]] = r.taxonomy.counts[c];
    ratios[kCategoryNames[c]] = r.taxonomy.ratios[c];
  }
  Json ablation = Json::array();
  for (const auto& row : r.ablation) ablation.push_back(ablation_row_to_json(row));
  return {{"num_samples", r.num_samples},
          {"captioning", {{"bleu1", r.bleu1}, {"bleu4", r.bleu4}}},
          {"grounding", {{"f1_all", r.f1_all}, {"f1_loc", r.f1_loc}, {"f1_loc_undefined", r.f1_loc_undefined}}},
          {"taxonomy", {{"counts", counts}, {"ratios", ratios}}},
          {"ablation", std::move(ablation)}};
}

inline EvalReport report_from_json(const Json& j, const std::string& where = "report") {
  try {
    EvalReport r;
    r.num_samples = j.at("num_samples").get<std::size_t>();
    r.bleu1 = j.at("captioning").at("bleu1").get<double>();
    r.bleu4 = j.at("captioning").at("bleu4").get<double>();
    r.f1_all = j.at("grounding").at("f1_all").get<double>();
    r.f1_loc = j.at("grounding").at("f1_loc").get<double>();
    r.f1_loc_undefined = j.at("grounding").at("f1_loc_undefined").get<bool>();
    for (std::size_t c = 0; c < kCategoryNames.size(); ++c) {
      r.taxonomy.counts[c] = j.at("taxonomy").at("counts").at(kCategoryNames[c]).get<std::size_t>();
      r.taxonomy.ratios[c] = j.at("taxonomy").at("ratios").at(kCategoryNames[c]).get<double>();
    }
    for (const auto& jr : j.at("ablation")) {
      AblationRow row;
      row.branches = jr.at("k").get<std::size_t>();
      row.elimination = jr.at("elimination").get<bool>();
      row.bleu1 = jr.at("bleu1").get<double>();
      row.bleu4 = jr.at("bleu4").get<double>();
      row.f1_all = jr.at("f1_all").get<double>();
      row.f1_loc = jr.at("f1_loc").get<double>();
      row.part_grd = jr.at("part_grd").get<double>();
      r.ablation.push_back(row);
    }
    return r;
  } catch (const Json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

inline std::string report_csv_header() {
  std::string h = "num_samples,bleu1,bleu4,f1_all,f1_loc";
  for (const char* name : kCategoryNames) h += std::string(",") + name;
  return h + "\n";
}

inline std::string report_csv_row(const EvalReport& r) {
  std::string row = std::to_string(r.num_samples) + "," + format_double(r.bleu1) + "," + format_double(r.bleu4) + "," +
                    format_double(r.f1_all) + "," + format_double(r.f1_loc);
  for (double v : r.taxonomy.ratios) row += "," + format_double(v);
  return row + "\n";
}

inline std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "k,elimination,bleu1,bleu4,f1_all,f1_loc,part_grd\n";
  for (const auto& r : rows) {
    out += std::to_string(r.branches) + "," + (r.elimination ? "on" : "off") + "," + format_double(r.bleu1) + "," +
           format_double(r.bleu4) + "," + format_double(r.f1_all) + "," + format_double(r.f1_loc) + "," +
           format_double(r.part_grd) + "\n";
  }
  return out;
}

// ---- loss log --------------------------------------------------------------

inline std::string loss_csv_header() { return "epoch,lr,k_active,loss,loss_per_branch\n"; }

inline std::string loss_csv_row(const EpochLog& l) {
  return std::to_string(l.epoch) + "," + format_double(l.lr) + "," + std::to_string(l.active_branches) + "," +
         format_double(l.loss) + "," + format_double(l.loss_per_branch) + "\n";
}

}  // namespace gcap
