#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "hscl/trainer.hpp"
#include "hscl/types.hpp"

namespace hscl {

struct ScoredSample {
  std::int64_t id = 0;
  double score = 0.0;  // max cosine to the prototypes; higher = more normal
  bool is_abnormal_truth = false;
};

// Eval-mode embeddings of raw samples: no augmentation, single forward pass.
EmbeddingMatrix embed_samples(TrainState& state,
                              const std::vector<LabeledSample>& samples);

// Normality score s(x) = max_k f(x) . V_k.
std::vector<ScoredSample> normality_score(
    TrainState& state, const std::vector<LabeledSample>& samples,
    const std::vector<bool>& is_abnormal_truth);

// Substitute scorer for runs trained without prototype learning: mean cosine
// to the k nearest labeled-normal training embeddings.
std::vector<ScoredSample> knn_normality_score(
    const EmbeddingMatrix& reference, const EmbeddingMatrix& queries,
    const std::vector<std::int64_t>& query_ids,
    const std::vector<bool>& is_abnormal_truth, int k = 5);

// Probability that a random normal sample outscores a random abnormal one,
// ties at half credit (midranks); computed by sorted rank sum in O(n log n).
double auroc(const std::vector<ScoredSample>& scored);

std::string scores_csv(const std::vector<ScoredSample>& scored);

enum class Reducer { None, Tsne };

struct EmbeddingExport {
  std::vector<std::int64_t> ids;
  std::vector<bool> is_abnormal_truth;
  Eigen::MatrixXd coords;  // [dim x N]; dim = 2 after t-SNE
};

EmbeddingExport export_embeddings(TrainState& state,
                                  const std::vector<LabeledSample>& samples,
                                  const std::vector<bool>& is_abnormal_truth,
                                  Reducer reducer, std::uint64_t seed = 0);

std::string embedding_csv(const EmbeddingExport& table);

// Minimal SVG scatter of a 2-D export, normal vs abnormal coloring.
std::string embedding_scatter_svg(const EmbeddingExport& table);

}  // namespace hscl
