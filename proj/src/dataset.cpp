#include "sparsephase/dataset.hpp"

#include "sparsephase/io.hpp"

#include <json.hpp>

#include <set>
#include <stdexcept>

namespace sparsephase {

using nlohmann::json;

const char* to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<const Video*> Dataset::select(Split s) const {
  std::vector<const Video*> out;
  for (const auto& v : videos) {
    if (v.split == s) out.push_back(&v);
  }
  return out;
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& v : videos) {
    if (!ids.insert(v.id).second) throw std::invalid_argument("Dataset: duplicate video id " + v.id);
    if (v.features.length() != v.labels.length()) {
      throw std::invalid_argument("Dataset: video " + v.id + " has mismatched feature/label lengths");
    }
    if (v.labels.num_phases() != num_phases) {
      throw std::invalid_argument("Dataset: video " + v.id + " has the wrong phase count");
    }
  }
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  ds.validate();
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["name"] = ds.name;
  manifest["num_phases"] = ds.num_phases;
  manifest["videos"] = json::array();
  for (const auto& v : ds.videos) {
    io::write_features(dir / (v.id + ".pseq"), v.features);
    io::write_labels(dir / (v.id + ".labels.csv"), v.labels);
    manifest["videos"].push_back(
        {{"id", v.id}, {"split", to_string(v.split)}, {"fps", v.features.fps()}});
  }
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = json::parse(io::read_file(dir / "manifest.json"));
  Dataset ds;
  ds.name = manifest.value("name", dir.filename().string());
  ds.num_phases = manifest.at("num_phases").get<int>();
  for (const auto& entry : manifest.at("videos")) {
    Video v;
    v.id = entry.at("id").get<std::string>();
    v.split = split_from_string(entry.value("split", std::string("train")));
    v.features = io::read_features(dir / (v.id + ".pseq"), v.id, entry.value("fps", 1.0));
    v.labels = io::read_labels(dir / (v.id + ".labels.csv"), ds.num_phases);
    ds.videos.push_back(std::move(v));
  }
  ds.validate();
  return ds;
}

}  // namespace sparsephase
