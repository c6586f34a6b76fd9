#include "nextpoi/vector_store.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

namespace nextpoi {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'N', 'P', 'V', 'I', 'D', 'X', '0', '1'};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Seeded standard-normal vector (Box-Muller over a splitmix64 stream).
void add_gaussian(std::vector<double>& acc, std::uint64_t seed, double weight) {
  std::uint64_t state = seed;
  std::vector<double> g(acc.size());
  for (std::size_t i = 0; i < acc.size(); i += 2) {
    state = splitmix64(state);
    const double u1 = std::max(unit_interval(state), 0x1.0p-53);
    state = splitmix64(state);
    const double u2 = unit_interval(state);
    const double r = std::sqrt(-2.0 * std::log(u1));
    g[i] = r * std::cos(2.0 * std::numbers::pi * u2);
    if (i + 1 < g.size()) g[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
  }
  double norm = 0.0;
  for (double v : g) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) return;
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weight * g[i] / norm;
}

std::string normalise_text(std::string_view text) {
  std::string out;
  bool space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<float> normalised(const std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(norm > 0 ? v[i] / norm : 0.0);
  return out;
}

bool better(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

}  // namespace

std::string poi_to_text(const PoiRecord& poi) {
  return fmt::format("POI {} is located at coordinates ({:.6f}, {:.6f}), category: {}", poi.id, poi.lat, poi.lon,
                     poi.category.empty() ? std::string("unknown") : poi.category);
}

HashEmbedder::HashEmbedder(std::size_t dimension, std::uint64_t seed) : HashEmbedder(dimension, seed, Weights{}) {}

HashEmbedder::HashEmbedder(std::size_t dimension, std::uint64_t seed, Weights weights)
    : dimension_(dimension), seed_(seed), weights_(weights) {
  if (dimension_ == 0) throw ConfigError("embedding dimension must be >= 1");
}

std::string HashEmbedder::id() const { return fmt::format("hash-v1:dim={}:seed={}", dimension_, seed_); }

std::vector<float> HashEmbedder::embed(const std::string& text) const {
  const std::string norm = normalise_text(text);
  std::vector<double> acc(dimension_, 0.0);
  add_gaussian(acc, derive_seed(seed_, fnv1a(norm), 1), weights_.text);

  if (const auto cat_pos = norm.rfind("category:"); cat_pos != std::string::npos) {
    const auto tokens = word_tokens(std::string_view(norm).substr(cat_pos + 9));
    for (const auto& t : tokens)
      add_gaussian(acc, derive_seed(seed_, fnv1a("cat:" + t), 2),
                   weights_.category / std::sqrt(static_cast<double>(tokens.size())));
  }
  if (const auto open = norm.find("coordinates ("); open != std::string::npos) {
    const auto close = norm.find(')', open);
    double lat = 0, lon = 0;
    if (close != std::string::npos &&
        std::sscanf(norm.substr(open + 13, close - open - 13).c_str(), "%lf, %lf", &lat, &lon) == 2) {
      // Two resolutions (~5.5 km and ~1.1 km) so cell borders matter less.
      for (const double cell : {0.05, 0.01}) {
        const auto key = fmt::format("geo:{}:{}:{}", cell, static_cast<long long>(std::floor(lat / cell)),
                                     static_cast<long long>(std::floor(lon / cell)));
        add_gaussian(acc, derive_seed(seed_, fnv1a(key), 3), weights_.geo / std::numbers::sqrt2);
      }
    }
  }
  return normalised(acc);
}

std::vector<std::vector<float>> HashEmbedder::embed_batch(std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

RemoteEmbedder::RemoteEmbedder(std::shared_ptr<RetryingClient> client, RemoteEmbedderConfig config)
    : client_(std::move(client)), config_(std::move(config)) {
  if (!client_) throw ConfigError("remote embedder needs a client");
  if (config_.base_url.empty() || config_.model.empty()) throw ConfigError("remote embedder needs base_url and model");
  if (config_.dimension == 0) throw ConfigError("remote embedder needs the expected dimension");
}

std::string RemoteEmbedder::id() const { return fmt::format("remote:{}:dim={}", config_.model, config_.dimension); }

std::vector<std::vector<float>> RemoteEmbedder::embed_batch(std::span<const std::string> texts) {
  HttpRequest req;
  req.url = config_.base_url + "/embeddings";
  req.timeout = config_.timeout;
  req.body = json{{"model", config_.model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}}.dump();
  if (!config_.api_key.empty()) req.headers["Authorization"] = "Bearer " + config_.api_key;
  const auto resp = client_->post(req);
  std::vector<std::vector<float>> out(texts.size());
  try {
    const auto j = json::parse(resp.body);
    for (const auto& item : j.at("data")) {
      const auto idx = item.value("index", std::size_t{0});
      if (idx >= out.size()) throw BackendError("embedding index out of range");
      std::vector<double> v = item.at("embedding").get<std::vector<double>>();
      if (v.size() != config_.dimension)
        throw BackendError(fmt::format("embedding dimension {} != configured {}", v.size(), config_.dimension));
      out[idx] = normalised(v);
    }
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed embeddings response: ") + e.what());
  }
  for (const auto& v : out)
    if (v.empty()) throw BackendError("embeddings response is missing entries");
  return out;
}

VectorIndex VectorIndex::build(std::span<const PoiRecord> pois, Embedder& embedder, std::size_t batch_size) {
  const std::size_t dim = embedder.dimension();
  std::vector<PoiId> ids;
  std::vector<float> block;
  ids.reserve(pois.size());
  block.reserve(pois.size() * dim);
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < pois.size(); start += batch_size) {
    const std::size_t end = std::min(pois.size(), start + batch_size);
    std::vector<std::string> texts;
    for (std::size_t i = start; i < end; ++i) texts.push_back(poi_to_text(pois[i]));
    std::vector<std::vector<float>> vecs;
    try {
      vecs = embedder.embed_batch(texts);
    } catch (const BackendError& e) {
      throw BackendError(fmt::format("embedding failed for POIs {}..{}: {}", pois[start].id, pois[end - 1].id, e.what()));
    }
    if (vecs.size() != texts.size()) throw BackendError("embedder returned the wrong number of vectors");
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      if (vecs[i].size() != dim) throw BackendError("embedder returned a vector of unexpected dimension");
      ids.push_back(pois[start + i].id);
      block.insert(block.end(), vecs[i].begin(), vecs[i].end());
    }
  }
  return from_vectors(std::move(ids), std::move(block), dim, embedder.id());
}

VectorIndex VectorIndex::from_vectors(std::vector<PoiId> ids, std::vector<float> block, std::size_t dimension,
                                      std::string embedder_id) {
  if (dimension == 0) throw ConfigError("index dimension must be >= 1");
  if (block.size() != ids.size() * dimension) throw DataError("vector block size does not match ids x dimension");
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  VectorIndex index;
  index.ids_.reserve(ids.size());
  index.data_.reserve(block.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t r = order[k];
    if (k > 0 && ids[r] == index.ids_.back()) throw DataError(fmt::format("duplicate POI id {} in index", ids[r]));
    index.ids_.push_back(ids[r]);
    std::vector<double> v(block.begin() + static_cast<std::ptrdiff_t>(r * dimension),
                          block.begin() + static_cast<std::ptrdiff_t>((r + 1) * dimension));
    const auto unit = normalised(v);
    index.data_.insert(index.data_.end(), unit.begin(), unit.end());
  }
  index.manifest_ = IndexManifest{std::move(embedder_id), dimension, index.ids_.size(), true};
  return index;
}

std::span<const float> VectorIndex::row(std::size_t r) const {
  return std::span<const float>(data_).subspan(r * dimension(), dimension());
}

std::optional<std::size_t> VectorIndex::row_of(PoiId id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

double cosine_to_row(const VectorIndex& index, std::span<const float> query, std::size_t row) {
  double qnorm = 0.0;
  for (float q : query) qnorm += double{q} * double{q};
  qnorm = std::sqrt(qnorm);
  if (qnorm == 0.0) return 0.0;
  const auto v = index.row(row);
  double dot = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) dot += double{query[i]} * double{v[i]};
  return std::clamp(dot / qnorm, -1.0, 1.0);
}

std::vector<Neighbor> VectorIndex::top_k(std::span<const float> query, std::size_t k) const {
  if (empty()) throw DataError("cannot query an empty index");
  if (k == 0) throw ConfigError("top-k needs k >= 1");
  if (query.size() != dimension())
    throw DataError(fmt::format("query dimension {} does not match index dimension {}", query.size(), dimension()));

  double qnorm = 0.0;
  for (float q : query) qnorm += double{q} * double{q};
  qnorm = std::sqrt(qnorm);

  std::vector<Neighbor> scored(size());
  const std::size_t dim = dimension();
  for (std::size_t r = 0; r < size(); ++r) {
    double sim = 0.0;
    if (qnorm > 0.0) {
      const float* v = data_.data() + r * dim;
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += double{query[i]} * double{v[i]};
      sim = std::clamp(dot / qnorm, -1.0, 1.0);
    }
    scored[r] = Neighbor{ids_[r], sim};
  }
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
  scored.resize(n);
  return scored;
}

void VectorIndex::save(const std::string& path) const {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  const std::uint32_t version = 1;
  const auto dim = static_cast<std::uint32_t>(dimension());
  const auto count = static_cast<std::uint64_t>(size());
  const std::uint8_t normalized = manifest_.normalized ? 1 : 0;
  const auto id_len = static_cast<std::uint32_t>(manifest_.embedder_id.size());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(&normalized), sizeof(normalized));
  out.write(reinterpret_cast<const char*>(&id_len), sizeof(id_len));
  out.write(manifest_.embedder_id.data(), id_len);
  out.write(reinterpret_cast<const char*>(data_.data()), static_cast<std::streamsize>(data_.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(ids_.data()), static_cast<std::streamsize>(ids_.size() * sizeof(PoiId)));
  if (!out) throw IoError("write failed: " + path);

  const json sidecar = {{"format", "nextpoi.index"},
                        {"version", version},
                        {"file", p.filename().string()},
                        {"embedder", manifest_.embedder_id},
                        {"dimension", dimension()},
                        {"count", size()},
                        {"normalized", manifest_.normalized}};
  write_text_file(path + ".json", sidecar.dump(2) + "\n");
}

VectorIndex VectorIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open index: " + path);
  char magic[8];
  std::uint32_t version = 0, dim = 0, id_len = 0;
  std::uint64_t count = 0;
  std::uint8_t normalized = 0;
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("not an index file: " + path);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  in.read(reinterpret_cast<char*>(&normalized), sizeof(normalized));
  in.read(reinterpret_cast<char*>(&id_len), sizeof(id_len));
  if (!in || version != 1) throw DataError("unsupported index header: " + path);
  if (dim == 0 || id_len > 4096 || count > (1ULL << 32)) throw DataError("corrupt index header: " + path);
  VectorIndex index;
  index.manifest_.embedder_id.resize(id_len);
  in.read(index.manifest_.embedder_id.data(), id_len);
  index.data_.resize(count * dim);
  in.read(reinterpret_cast<char*>(index.data_.data()), static_cast<std::streamsize>(index.data_.size() * sizeof(float)));
  index.ids_.resize(count);
  in.read(reinterpret_cast<char*>(index.ids_.data()), static_cast<std::streamsize>(index.ids_.size() * sizeof(PoiId)));
  if (!in) throw DataError("truncated index file: " + path);
  if (!std::is_sorted(index.ids_.begin(), index.ids_.end())) throw DataError("index id table is not sorted: " + path);
  index.manifest_.dimension = dim;
  index.manifest_.count = count;
  index.manifest_.normalized = normalized != 0;
  return index;
}

std::vector<ScoredCandidate> initial_candidates_scored(const VectorIndex& index, std::span<const CheckIn> trajectory,
                                                       std::size_t per_query_k, std::size_t pool_cap) {
  if (trajectory.empty()) return {};
  std::unordered_map<PoiId, double> best;
  std::vector<PoiId> queried;
  for (const auto& c : trajectory) {
    if (std::find(queried.begin(), queried.end(), c.poi) != queried.end()) continue;
    queried.push_back(c.poi);
    const auto row = index.row_of(c.poi);
    if (!row) throw DataError(fmt::format("trajectory POI {} is not in the index", c.poi));
    for (const auto& n : index.top_k(index.row(*row), per_query_k)) {
      auto [it, inserted] = best.try_emplace(n.id, n.similarity);
      if (!inserted) it->second = std::max(it->second, n.similarity);
    }
  }
  std::vector<ScoredCandidate> out;
  out.reserve(best.size());
  for (const auto& [id, sim] : best) out.push_back({id, sim});
  std::sort(out.begin(), out.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.best_similarity != b.best_similarity) return a.best_similarity > b.best_similarity;
    return a.id < b.id;
  });
  if (pool_cap > 0 && out.size() > pool_cap) out.resize(pool_cap);
  return out;
}

std::vector<PoiId> initial_candidates(const VectorIndex& index, std::span<const CheckIn> trajectory,
                                      std::size_t per_query_k, std::size_t pool_cap) {
  std::vector<PoiId> ids;
  for (const auto& c : initial_candidates_scored(index, trajectory, per_query_k, pool_cap)) ids.push_back(c.id);
  return ids;
}

}  // namespace nextpoi
