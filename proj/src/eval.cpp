#include "hscl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hscl/text.hpp"
#include "hscl/tsne.hpp"

namespace hscl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

EmbeddingMatrix embed_samples(TrainState& state,
                              const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw ConfigError("embed_samples: no samples");
  if (!state.encoder) throw ConfigError("embed_samples: untrained state");
  if (!state.encoder->parameters().allFinite()) {
    throw NumericalError("untrained or non-finite encoder parameters");
  }
  MatrixXd views(samples.front().datum().size(),
                 static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    views.col(static_cast<Eigen::Index>(i)) = samples[i].datum();
  }
  return state.encoder->encode(views, /*train_mode=*/false);
}

std::vector<ScoredSample> normality_score(
    TrainState& state, const std::vector<LabeledSample>& samples,
    const std::vector<bool>& is_abnormal_truth) {
  if (samples.size() != is_abnormal_truth.size()) {
    throw ConfigError("normality_score: truth flag count mismatch");
  }
  if (!state.prototypes.basis.allFinite()) {
    throw NumericalError("untrained or non-finite prototypes");
  }
  const EmbeddingMatrix z = embed_samples(state, samples);
  const MatrixXd sims = state.prototypes.basis.transpose() * z;  // [K x N]

  std::vector<ScoredSample> scored(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    scored[i].id = samples[i].id();
    scored[i].score = sims.col(static_cast<Eigen::Index>(i)).maxCoeff();
    scored[i].is_abnormal_truth = is_abnormal_truth[i];
  }
  return scored;
}

std::vector<ScoredSample> knn_normality_score(
    const EmbeddingMatrix& reference, const EmbeddingMatrix& queries,
    const std::vector<std::int64_t>& query_ids,
    const std::vector<bool>& is_abnormal_truth, int k) {
  if (reference.cols() == 0) {
    throw ConfigError("knn_normality_score: empty reference set");
  }
  if (queries.cols() != static_cast<Eigen::Index>(query_ids.size()) ||
      query_ids.size() != is_abnormal_truth.size()) {
    throw ConfigError("knn_normality_score: size mismatch");
  }
  const int kk = std::min<int>(k, static_cast<int>(reference.cols()));
  std::vector<ScoredSample> scored(query_ids.size());
  std::vector<double> sims(static_cast<std::size_t>(reference.cols()));
  for (Eigen::Index i = 0; i < queries.cols(); ++i) {
    const VectorXd s = reference.transpose() * queries.col(i);
    for (Eigen::Index j = 0; j < s.size(); ++j) sims[static_cast<std::size_t>(j)] = s[j];
    std::partial_sort(sims.begin(), sims.begin() + kk, sims.end(),
                      std::greater<double>());
    const double mean_top =
        std::accumulate(sims.begin(), sims.begin() + kk, 0.0) / kk;
    scored[static_cast<std::size_t>(i)] = {query_ids[static_cast<std::size_t>(i)], mean_top,
                                           is_abnormal_truth[static_cast<std::size_t>(i)]};
  }
  return scored;
}

double auroc(const std::vector<ScoredSample>& scored) {
  std::size_t n_normal = 0, n_abnormal = 0;
  for (const auto& s : scored) (s.is_abnormal_truth ? n_abnormal : n_normal)++;
  if (n_normal == 0 || n_abnormal == 0) {
    throw ConfigError("auroc: need at least one normal and one abnormal");
  }

  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].score < scored[b].score;
  });

  // Midrank sum of the normal (positive) class.
  double normal_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           scored[order[j + 1]].score == scored[order[i]].score) {
      ++j;
    }
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (!scored[order[t]].is_abnormal_truth) normal_rank_sum += midrank;
    }
    i = j + 1;
  }
  const double n_n = static_cast<double>(n_normal);
  const double n_a = static_cast<double>(n_abnormal);
  return (normal_rank_sum - n_n * (n_n + 1) / 2.0) / (n_n * n_a);
}

std::string scores_csv(const std::vector<ScoredSample>& scored) {
  std::string out = "id,score,truth\n";
  for (const auto& s : scored) {
    out += std::to_string(s.id);
    out += ',' + fmt_double(s.score);
    out += ',';
    out += s.is_abnormal_truth ? "abnormal" : "normal";
    out += '\n';
  }
  return out;
}

EmbeddingExport export_embeddings(TrainState& state,
                                  const std::vector<LabeledSample>& samples,
                                  const std::vector<bool>& is_abnormal_truth,
                                  Reducer reducer, std::uint64_t seed) {
  if (samples.size() != is_abnormal_truth.size()) {
    throw ConfigError("export_embeddings: truth flag count mismatch");
  }
  EmbeddingExport table;
  table.coords = embed_samples(state, samples);
  for (const auto& s : samples) table.ids.push_back(s.id());
  table.is_abnormal_truth = is_abnormal_truth;
  if (reducer == Reducer::Tsne) {
    if (samples.size() < 5) {
      throw ConfigError("export_embeddings: t-SNE needs at least 5 samples");
    }
    table.coords = tsne_2d(table.coords, seed);
  }
  return table;
}

std::string embedding_csv(const EmbeddingExport& table) {
  std::string out = "id,truth";
  for (Eigen::Index d = 0; d < table.coords.rows(); ++d) {
    out += ",c" + std::to_string(d);
  }
  out += '\n';
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    out += std::to_string(table.ids[i]);
    out += ',';
    out += table.is_abnormal_truth[i] ? "abnormal" : "normal";
    for (Eigen::Index d = 0; d < table.coords.rows(); ++d) {
      out += ',' + fmt_double(table.coords(d, static_cast<Eigen::Index>(i)));
    }
    out += '\n';
  }
  return out;
}

std::string embedding_scatter_svg(const EmbeddingExport& table) {
  if (table.coords.rows() != 2) {
    throw ConfigError("embedding_scatter_svg: expected 2-D coordinates");
  }
  const double min_x = table.coords.row(0).minCoeff();
  const double max_x = table.coords.row(0).maxCoeff();
  const double min_y = table.coords.row(1).minCoeff();
  const double max_y = table.coords.row(1).maxCoeff();
  const double span_x = std::max(max_x - min_x, 1e-9);
  const double span_y = std::max(max_y - min_y, 1e-9);
  const int size = 640, margin = 20;

  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
      std::to_string(size) + "\" height=\"" + std::to_string(size) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    const double x = margin + (table.coords(0, static_cast<Eigen::Index>(i)) - min_x) /
                                  span_x * (size - 2 * margin);
    const double y = margin + (table.coords(1, static_cast<Eigen::Index>(i)) - min_y) /
                                  span_y * (size - 2 * margin);
    svg += "<circle cx=\"" + fmt_double(x) + "\" cy=\"" + fmt_double(y) +
           "\" r=\"3\" fill=\"" +
           (table.is_abnormal_truth[i] ? std::string("#d62728")
                                       : std::string("#1f77b4")) +
           "\" fill-opacity=\"0.6\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace hscl
