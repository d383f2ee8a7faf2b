// phonmap/corpus.cpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "phonmap/corpus.hpp"

#include <fstream>

#include "phonmap/checkpoint.hpp"

namespace phonmap {

namespace fs = std::filesystem;

std::int64_t Corpus::total_frames() const {
  std::int64_t n = 0;
  for (const Utterance& u : utts) n += u.features.rows();
  return n;
}

void save_corpus(const Corpus& corpus, const fs::path& dir,
                 const nlohmann::json& extra_meta) {
  fs::create_directories(dir / "feats");

  {
    std::ofstream inv(dir / "inventory.txt", std::ios::trunc);
    if (!inv) {
      throw IoError("corpus: cannot write " + (dir / "inventory.txt").string());
    }
    for (const std::string& s : corpus.inventory.symbols()) {
      inv << s << '\n';
    }
  }

  nlohmann::json utts = nlohmann::json::array();
  for (const Utterance& u : corpus.utts) {
    utts.push_back({{"id", u.id},
                    {"frames", u.features.rows()},
                    {"labels", u.labels.ids}});

    Checkpoint feat;
    feat.kind = "features";
    feat.meta = {{"utterance_id", u.id}};
    feat.add("features", {u.features.rows(), u.features.cols()}, u.features);
    save_checkpoint(feat, dir / "feats" / (u.id + ".tensor"));
  }

  nlohmann::json manifest = extra_meta;
  manifest["inventory_sha256"] = corpus.inventory.digest();
  manifest["n_utterances"] = corpus.utts.size();
  manifest["total_frames"] = corpus.total_frames();
  manifest["synthetic_minutes"] = frames_to_minutes(corpus.total_frames());
  manifest["utterances"] = std::move(utts);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) {
    throw IoError("corpus: cannot write " + (dir / "manifest.json").string());
  }
  out << manifest.dump(2) << '\n';
}

nlohmann::json load_corpus_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw IoError("corpus: cannot open " + (dir / "manifest.json").string());
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("corpus: malformed manifest in " + dir.string() + ": " + e.what());
  }
}

Corpus load_corpus(const fs::path& dir) {
  Corpus corpus;
  {
    std::ifstream inv(dir / "inventory.txt");
    if (!inv) {
      throw IoError("corpus: cannot open " + (dir / "inventory.txt").string());
    }
    std::vector<std::string> symbols;
    std::string line;
    while (std::getline(inv, line)) {
      if (!line.empty()) symbols.push_back(line);
    }
    corpus.inventory = SymbolInventory(std::move(symbols));
  }

  const nlohmann::json manifest = load_corpus_manifest(dir);
  try {
    for (const nlohmann::json& row : manifest.at("utterances")) {
      Utterance u;
      u.id = row.at("id").get<std::string>();
      u.labels.ids = row.at("labels").get<std::vector<std::int32_t>>();
      const Checkpoint feat = load_checkpoint(dir / "feats" / (u.id + ".tensor"));
      expect_kind(feat, "features");
      u.features = feat.at("features").data;
      if (u.features.rows() != row.at("frames").get<Index>()) {
        throw IntegrityError("corpus: utterance '" + u.id +
                             "' frame count disagrees with manifest");
      }
      corpus.utts.push_back(std::move(u));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("corpus: manifest field error in " + dir.string() + ": " +
                         e.what());
  }
  const std::string recorded =
      manifest.value("inventory_sha256", corpus.inventory.digest());
  if (recorded != corpus.inventory.digest()) {
    throw IntegrityError("corpus: inventory digest mismatch in " + dir.string());
  }
  return corpus;
}

}  // namespace phonmap
