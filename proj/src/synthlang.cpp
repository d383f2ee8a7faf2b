// phonmap/synthlang.cpp
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

#include "phonmap/synthlang.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "phonmap/digest.hpp"

namespace phonmap {

namespace {

// Attempts per mean before giving up on the separability constraint.
constexpr int kMaxDrawAttempts = 10000;

void check_config(const SynthConfig& c) {
  if (c.feature_dim < 1) throw InvalidArgumentError("synth config: feature_dim must be >= 1");
  if (c.n_src < 1 || c.n_tgt < 1) {
    throw InvalidArgumentError("synth config: inventory sizes must be >= 1");
  }
  if (c.overlap_fraction < 0.0 || c.overlap_fraction > 1.0) {
    throw InvalidArgumentError("synth config: overlap_fraction must lie in [0, 1]");
  }
  if (c.sigma < 0.0) throw InvalidArgumentError("synth config: sigma must be >= 0");
  if (c.duration_min < 1 || c.duration_max < c.duration_min) {
    throw InvalidArgumentError("synth config: need 1 <= duration_min <= duration_max");
  }
  if (!(c.mean_box > 0.0)) throw InvalidArgumentError("synth config: mean_box must be > 0");
}

std::string padded_name(const std::string& prefix, Index i, Index count) {
  std::size_t width = std::max<std::size_t>(2, std::to_string(count - 1).size());
  std::string digits = std::to_string(i);
  return prefix + std::string(width - std::min(width, digits.size()), '0') + digits;
}

std::vector<std::string> make_names(const std::string& prefix, Index count) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) names.push_back(padded_name(prefix, i, count));
  return names;
}

// Draws `count` mean vectors in [-box, box]^D, each at least 4*sigma from
// every previously accepted one.
Matrix draw_separated_means(Rng& rng, Index count, Index dim, double box, double sigma) {
  Matrix means(count, dim);
  const double min_dist = 4.0 * sigma;
  for (Index i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxDrawAttempts && !placed; ++attempt) {
      RowVector candidate(dim);
      for (Index d = 0; d < dim; ++d) candidate(d) = rng.uniform(-box, box);
      placed = true;
      for (Index j = 0; j < i; ++j) {
        if ((means.row(j) - candidate).norm() < min_dist) {
          placed = false;
          break;
        }
      }
      if (placed) means.row(i) = candidate;
    }
    if (!placed) {
      throw GenerationError(
          "language pair: could not place " + std::to_string(count) +
          " emission means at pairwise distance >= 4*sigma after " +
          std::to_string(kMaxDrawAttempts) +
          " attempts; increase feature_dim or mean_box, or decrease sigma");
    }
  }
  return means;
}

std::vector<Index> permutation(Rng& rng, Index count) {
  std::vector<Index> perm(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  return perm;
}

}  // namespace

bool GroundTruthMapping::contains(Index src, Index tgt) const {
  for (const auto& [s, t] : pairs) {
    if (s == src && t == tgt) return true;
  }
  return false;
}

LanguagePair generate_language_pair(const SynthConfig& config) {
  check_config(config);
  Rng rng(derive_seed(config.seed, "langpair"));
  const Index n_shared = static_cast<Index>(
      config.overlap_fraction * static_cast<double>(std::min(config.n_src, config.n_tgt)));
  const Index n_distinct = config.n_src + config.n_tgt - n_shared;

  // One pooled draw keeps every distinct sound separable across both
  // languages, not just within each.
  Matrix means =
      draw_separated_means(rng, n_distinct, config.feature_dim, config.mean_box, config.sigma);

  // Shared sounds land at permuted index positions on both sides so the
  // ground truth is not the identity map.
  std::vector<Index> src_slots = permutation(rng, config.n_src);
  std::vector<Index> tgt_slots = permutation(rng, config.n_tgt);

  LanguagePair pair;
  pair.source.inventory = SymbolInventory(make_names("s", config.n_src));
  pair.target.inventory = SymbolInventory(make_names("t", config.n_tgt));
  pair.source.emission_means = Matrix::Zero(config.n_src, config.feature_dim);
  pair.target.emission_means = Matrix::Zero(config.n_tgt, config.feature_dim);
  for (LanguageSpec* lang : {&pair.source, &pair.target}) {
    lang->sigma = config.sigma;
    lang->duration_min = config.duration_min;
    lang->duration_max = config.duration_max;
  }

  Index next_mean = 0;
  for (Index k = 0; k < n_shared; ++k, ++next_mean) {
    Index si = src_slots[static_cast<std::size_t>(k)];
    Index ti = tgt_slots[static_cast<std::size_t>(k)];
    pair.source.emission_means.row(si) = means.row(next_mean);
    pair.target.emission_means.row(ti) = means.row(next_mean);
    pair.truth.pairs.emplace_back(si, ti);
  }
  for (Index k = n_shared; k < config.n_src; ++k, ++next_mean) {
    pair.source.emission_means.row(src_slots[static_cast<std::size_t>(k)]) =
        means.row(next_mean);
  }
  for (Index k = n_shared; k < config.n_tgt; ++k, ++next_mean) {
    pair.target.emission_means.row(tgt_slots[static_cast<std::size_t>(k)]) =
        means.row(next_mean);
  }
  std::sort(pair.truth.pairs.begin(), pair.truth.pairs.end());
  return pair;
}

Matrix synthesize_utterance(const LanguageSpec& lang, const LabelSequence& symbols, Rng& rng) {
  if (symbols.ids.empty()) {
    throw InvalidArgumentError("synthesize: empty symbol sequence");
  }
  for (std::int32_t id : symbols.ids) {
    if (id < 0 || id >= lang.inventory.size()) {
      throw InvalidArgumentError("synthesize: symbol id " + std::to_string(id) +
                                 " outside inventory of size " +
                                 std::to_string(lang.inventory.size()));
    }
  }
  std::vector<Index> durations;
  durations.reserve(symbols.ids.size());
  Index total = 0;
  for (std::size_t i = 0; i < symbols.ids.size(); ++i) {
    Index d = rng.uniform_int(lang.duration_min, lang.duration_max);
    durations.push_back(d);
    total += d;
  }
  const Index dim = lang.emission_means.cols();
  Matrix features(total, dim);
  Index row = 0;
  for (std::size_t i = 0; i < symbols.ids.size(); ++i) {
    const auto mean = lang.emission_means.row(symbols.ids[i]);
    for (Index f = 0; f < durations[i]; ++f, ++row) {
      for (Index d = 0; d < dim; ++d) {
        features(row, d) = mean(d) + lang.sigma * rng.normal();
      }
    }
  }
  return features;
}

Corpus generate_corpus(const LanguageSpec& lang, Index n_utts, Index len_min, Index len_max,
                       const std::string& id_prefix, Rng& rng) {
  if (n_utts < 1) throw InvalidArgumentError("generate_corpus: n_utts must be >= 1");
  if (len_min < 1 || len_max < len_min) {
    throw InvalidArgumentError("generate_corpus: need 1 <= len_min <= len_max");
  }
  Corpus corpus;
  corpus.inventory = lang.inventory;
  corpus.utts.reserve(static_cast<std::size_t>(n_utts));
  for (Index u = 0; u < n_utts; ++u) {
    Index length = rng.uniform_int(len_min, len_max);
    LabelSequence labels;
    labels.ids.reserve(static_cast<std::size_t>(length));
    for (Index i = 0; i < length; ++i) {
      labels.ids.push_back(static_cast<std::int32_t>(rng.uniform_int(0, lang.inventory.size() - 1)));
    }
    Utterance utt;
    utt.id = padded_name(id_prefix, u, std::max<Index>(n_utts, 10000));
    utt.labels = labels;
    utt.features = synthesize_utterance(lang, labels, rng);
    corpus.utts.push_back(std::move(utt));
  }
  return corpus;
}

void save_ground_truth(const GroundTruthMapping& truth, const LanguageSpec& source,
                       const LanguageSpec& target, const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::string>>& extra_headers) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) {
    throw IoError("ground truth: cannot open for writing: " + path.string());
  }
  out << "# ground-truth symbol correspondence\n";
  out << "# source_inventory_sha256: " << source.inventory.digest() << "\n";
  out << "# target_inventory_sha256: " << target.inventory.digest() << "\n";
  for (const auto& [key, value] : extra_headers) {
    if (key.find('\n') != std::string::npos || value.find('\n') != std::string::npos) {
      throw InvalidArgumentError("save_ground_truth: header '" + key + "' contains a newline");
    }
    out << "# " << key << ": " << value << "\n";
  }
  for (const auto& [s, t] : truth.pairs) {
    out << source.inventory.symbol(s) << "\t" << target.inventory.symbol(t) << "\n";
  }
  if (!out.good()) throw IoError("ground truth: write failed: " + path.string());
}

LoadedGroundTruth load_ground_truth(const std::filesystem::path& path,
                                    const SymbolInventory& source,
                                    const SymbolInventory& target) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("ground truth: cannot open: " + path.string());
  LoadedGroundTruth loaded;
  std::set<Index> seen_src, seen_tgt;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string src_tag = "# source_inventory_sha256: ";
      const std::string tgt_tag = "# target_inventory_sha256: ";
      if (line.rfind(src_tag, 0) == 0) loaded.source_digest = line.substr(src_tag.size());
      if (line.rfind(tgt_tag, 0) == 0) loaded.target_digest = line.substr(tgt_tag.size());
      continue;
    }
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IntegrityError("ground truth: malformed line " + std::to_string(line_no) + " in " +
                           path.string());
    }
    std::string src_name = line.substr(0, tab);
    std::string tgt_name = line.substr(tab + 1);
    auto si = source.find(src_name);
    if (!si) {
      throw IntegrityError("ground truth: unknown source symbol '" + src_name + "' at line " +
                           std::to_string(line_no));
    }
    auto ti = target.find(tgt_name);
    if (!ti) {
      throw IntegrityError("ground truth: unknown target symbol '" + tgt_name + "' at line " +
                           std::to_string(line_no));
    }
    if (!seen_src.insert(*si).second || !seen_tgt.insert(*ti).second) {
      throw IntegrityError("ground truth: duplicate symbol at line " + std::to_string(line_no) +
                           " (pairs must be injective)");
    }
    loaded.truth.pairs.emplace_back(*si, *ti);
  }
  if (!loaded.source_digest.empty() && loaded.source_digest != source.digest()) {
    throw IntegrityError("ground truth: source inventory digest mismatch in " + path.string());
  }
  if (!loaded.target_digest.empty() && loaded.target_digest != target.digest()) {
    throw IntegrityError("ground truth: target inventory digest mismatch in " + path.string());
  }
  return loaded;
}

}  // namespace phonmap
