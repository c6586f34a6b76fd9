#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nextpoi/dataset.hpp"
#include "nextpoi/transport.hpp"

namespace nextpoi {

/// "POI 5 is located at coordinates (40.700000, -74.000000), category: Park"
std::string poi_to_text(const PoiRecord& poi);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) = 0;
};

/// Deterministic offline embedder. Each normalised text gets a seeded Gaussian
/// direction; POI texts additionally receive shared components for their
/// category tokens and for the coarse geographic cells they fall in, so POIs
/// of the same category or neighbourhood score measurably closer.
class HashEmbedder final : public Embedder {
 public:
  struct Weights {
    double text = 1.0;
    double category = 0.6;
    double geo = 0.5;
  };

  explicit HashEmbedder(std::size_t dimension, std::uint64_t seed = 0);
  HashEmbedder(std::size_t dimension, std::uint64_t seed, Weights weights);

  std::string id() const override;
  std::size_t dimension() const override { return dimension_; }
  std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) override;
  std::vector<float> embed(const std::string& text) const;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
  Weights weights_;
};

struct RemoteEmbedderConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key;
  std::size_t dimension = 0;
  std::chrono::milliseconds timeout{60000};
};

/// OpenAI-compatible /embeddings client.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(std::shared_ptr<RetryingClient> client, RemoteEmbedderConfig config);

  std::string id() const override;
  std::size_t dimension() const override { return config_.dimension; }
  std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) override;

 private:
  std::shared_ptr<RetryingClient> client_;
  RemoteEmbedderConfig config_;
};

struct IndexManifest {
  std::string embedder_id;
  std::size_t dimension = 0;
  std::size_t count = 0;
  bool normalized = true;
};

struct Neighbor {
  PoiId id = 0;
  double similarity = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Exact cosine-similarity index over unit vectors. Immutable after build.
class VectorIndex {
 public:
  VectorIndex() = default;

  static VectorIndex build(std::span<const PoiRecord> pois, Embedder& embedder, std::size_t batch_size = 64);
  /// Rows are re-ordered by id and L2-normalised.
  static VectorIndex from_vectors(std::vector<PoiId> ids, std::vector<float> block, std::size_t dimension,
                                  std::string embedder_id);

  std::size_t dimension() const { return manifest_.dimension; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const IndexManifest& manifest() const { return manifest_; }
  std::span<const PoiId> ids() const { return ids_; }
  std::span<const float> row(std::size_t r) const;
  std::optional<std::size_t> row_of(PoiId id) const;

  /// min(k, size()) neighbours by similarity desc, ties by id asc.
  std::vector<Neighbor> top_k(std::span<const float> query, std::size_t k) const;

  void save(const std::string& path) const;  // binary file + "<path>.json" manifest sidecar
  static VectorIndex load(const std::string& path);

 private:
  IndexManifest manifest_;
  std::vector<PoiId> ids_;   // ascending
  std::vector<float> data_;  // size() * dimension(), row-major
};

/// Cosine similarity of a (not necessarily normalised) query against an index row.
double cosine_to_row(const VectorIndex& index, std::span<const float> query, std::size_t row);

struct ScoredCandidate {
  PoiId id = 0;
  double best_similarity = 0.0;
};

/// Union of per-check-in top-k retrievals over the trajectory, ordered by best
/// similarity desc then id asc, truncated to `pool_cap` (0 = no cap).
std::vector<ScoredCandidate> initial_candidates_scored(const VectorIndex& index, std::span<const CheckIn> trajectory,
                                                       std::size_t per_query_k, std::size_t pool_cap);
std::vector<PoiId> initial_candidates(const VectorIndex& index, std::span<const CheckIn> trajectory,
                                      std::size_t per_query_k, std::size_t pool_cap);

}  // namespace nextpoi
