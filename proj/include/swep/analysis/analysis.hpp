#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "swep/common.hpp"
#include "swep/core/rng.hpp"
#include "swep/core/tape.hpp"
#include "swep/data/example.hpp"
#include "swep/data/vocab.hpp"
#include "swep/model/qa_model.hpp"
#include "swep/noise/generator.hpp"
#include "swep/train/trainer.hpp"

namespace swep::analysis {

using ad::Matrix;

// Argmax_j of W_e^T v over all vocabulary rows, ties broken by the smallest
// index. `table` holds one token embedding per row.
template <class Real>
int back_project(const Matrix<Real>& table,
                 const Eigen::Matrix<Real, 1, Eigen::Dynamic>& v) {
  if (table.cols() != v.cols())
    throw ShapeError("back_project: width mismatch");
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < table.rows(); ++j) {
    const double score = static_cast<double>(table.row(j).dot(v));
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(j);
    }
  }
  return best;
}

struct ChangeRatio {
  double raw = 0.0;        // back_project(e_tilde) != original token id
  double corrected = 0.0;  // back_project(e_tilde) != back_project(e)
  int n_tokens = 0;
};

// Fraction of unpadded positions whose perturbed embedding projects back to
// a different token. The corrected ratio compares against the projection of
// the unperturbed embedding, which absorbs tokens that do not self-project.
template <class Real>
ChangeRatio word_change_ratio(const Matrix<Real>& table,
                              const std::vector<int>& original_ids,
                              const Matrix<Real>& perturbed,
                              const std::vector<std::uint8_t>& padding_mask) {
  if (static_cast<Eigen::Index>(original_ids.size()) != perturbed.rows() ||
      original_ids.size() != padding_mask.size())
    throw ShapeError("word_change_ratio: shape mismatch");
  ChangeRatio out;
  int raw_changed = 0, corrected_changed = 0;
  for (std::size_t t = 0; t < original_ids.size(); ++t) {
    if (!padding_mask[t]) continue;
    ++out.n_tokens;
    Eigen::Matrix<Real, 1, Eigen::Dynamic> row =
        perturbed.row(static_cast<Eigen::Index>(t));
    const int projected = back_project(table, row);
    raw_changed += (projected != original_ids[t]);
    Eigen::Matrix<Real, 1, Eigen::Dynamic> orig_row =
        table.row(original_ids[t]);
    const int baseline = back_project(table, orig_row);
    corrected_changed += (projected != baseline);
  }
  if (out.n_tokens > 0) {
    out.raw = raw_changed / static_cast<double>(out.n_tokens);
    out.corrected = corrected_changed / static_cast<double>(out.n_tokens);
  }
  return out;
}

struct IntensityRecord {
  int position = 0;
  int token_id = 0;
  std::string token;
  double l2 = 0.0;
};

// Per-token L2 distance between original and perturbed embeddings, in token
// order (heat-map friendly).
template <class Real>
std::vector<IntensityRecord> perturbation_intensity(
    const Matrix<Real>& original, const Matrix<Real>& perturbed,
    const std::vector<int>& token_ids, const data::Vocabulary& vocab,
    const std::vector<std::uint8_t>& padding_mask) {
  if (original.rows() != perturbed.rows() ||
      original.cols() != perturbed.cols() ||
      static_cast<Eigen::Index>(token_ids.size()) != original.rows() ||
      token_ids.size() != padding_mask.size())
    throw ShapeError("perturbation_intensity: shape mismatch");
  std::vector<IntensityRecord> out;
  for (std::size_t t = 0; t < token_ids.size(); ++t) {
    if (!padding_mask[t]) continue;
    IntensityRecord rec;
    rec.position = static_cast<int>(t);
    rec.token_id = token_ids[t];
    rec.token = vocab.token(token_ids[t]);
    rec.l2 = static_cast<double>(
        (original.row(static_cast<Eigen::Index>(t)) -
         perturbed.row(static_cast<Eigen::Index>(t)))
            .norm());
    out.push_back(std::move(rec));
  }
  return out;
}

struct BucketStat {
  int rank_lo = 0;  // 1-based frequency ranks, inclusive
  int rank_hi = 0;
  int n_tokens = 0;
  double knn_l2 = 0.0;
  // Absent when the bucket's tokens never occur in the analyzed sample.
  std::optional<double> pre_post_l2;
  std::optional<double> mean_mu;
  long long n_occurrences = 0;
};

inline std::vector<std::pair<int, int>> frequency_bucket_edges() {
  return {{1, 100}, {101, 500}, {501, 5000}, {5001, 10000}};
}

// Frequency-rank bucket statistics: per bucket, (a) the mean L2 distance of
// member embeddings to their k nearest neighbors, (b) the mean pre/post
// perturbation L2 distance over occurrences in `sample`, and (c) the mean of
// the per-dimension average of mu. Buckets beyond the ranked vocabulary are
// absent from the result.
template <class Real>
std::vector<BucketStat> frequency_bucket_stats(
    model::QaModel<Real>& model, noise::NoiseGenerator<Real>& gen,
    const data::Vocabulary& vocab,
    const std::vector<data::TokenizedExample>& sample, int k, Rng& rng) {
  if (k < 1) throw ConfigError("frequency_bucket_stats: k must be >= 1");
  const auto ranked = vocab.ids_by_frequency_rank();
  const int n_ranked = static_cast<int>(ranked.size());
  std::vector<int> rank_of(vocab.size(), -1);  // 1-based; -1 for reserved
  for (int r = 0; r < n_ranked; ++r) rank_of[ranked[r]] = r + 1;

  const auto& table = model.token_embedding().value;
  const int d = model.config().d;

  // Exhaustive k-NN over the ranked (non-reserved) tokens.
  auto knn_mean_dist = [&](int id) {
    std::vector<double> dists;
    dists.reserve(ranked.size());
    for (int other : ranked) {
      if (other == id) continue;
      dists.push_back(static_cast<double>(
          (table.row(id) - table.row(other)).norm()));
    }
    const int kk = std::min<int>(k, static_cast<int>(dists.size()));
    if (kk == 0) return 0.0;
    std::partial_sort(dists.begin(), dists.begin() + kk, dists.end());
    double s = 0.0;
    for (int i = 0; i < kk; ++i) s += dists[i];
    return s / kk;
  };

  // One pass over the sample: accumulate per-token-id perturbation
  // distances and mean-mu values.
  std::vector<double> sum_dist(vocab.size(), 0.0), sum_mu(vocab.size(), 0.0);
  std::vector<long long> occurrences(vocab.size(), 0);
  for (const auto& ex : sample) {
    std::vector<std::uint8_t> mask(ex.token_ids.size(), 1);
    ad::Tape<Real> tape;
    model::LeafCache<Real> leaf(tape);
    auto e = model.embed(leaf, ex.token_ids);
    auto enc = model.encode(leaf, e, mask);
    auto np = gen.infer(leaf, enc.hidden, true);
    auto eps = noise::standard_normal<Real>(ex.length(), d, rng);
    auto z = noise::sample_noise(np, eps);
    auto e_tilde = noise::apply_noise(e, z, mask);
    for (int t = 0; t < ex.length(); ++t) {
      const int id = ex.token_ids[t];
      if (rank_of[id] < 0) continue;  // reserved symbols are unranked
      ++occurrences[id];
      sum_dist[id] += static_cast<double>(
          (e.value().row(t) - e_tilde.value().row(t)).norm());
      sum_mu[id] += static_cast<double>(np.mu.value().row(t).mean());
    }
  }

  std::vector<BucketStat> out;
  for (auto [lo, hi] : frequency_bucket_edges()) {
    if (lo > n_ranked) continue;  // bucket entirely beyond the vocabulary
    BucketStat b;
    b.rank_lo = lo;
    b.rank_hi = std::min(hi, n_ranked);
    double knn_sum = 0.0, dist_sum = 0.0, mu_sum = 0.0;
    long long occ = 0;
    for (int r = lo; r <= b.rank_hi; ++r) {
      const int id = ranked[r - 1];
      ++b.n_tokens;
      knn_sum += knn_mean_dist(id);
      dist_sum += sum_dist[id];
      mu_sum += sum_mu[id];
      occ += occurrences[id];
    }
    b.knn_l2 = b.n_tokens ? knn_sum / b.n_tokens : 0.0;
    b.n_occurrences = occ;
    if (occ > 0) {
      b.pre_post_l2 = dist_sum / static_cast<double>(occ);
      b.mean_mu = mu_sum / static_cast<double>(occ);
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---- report -----------------------------------------------------------------

struct RatioRecord {
  long long step = 0;
  double raw = 0.0;
  double corrected = 0.0;
};

struct ExampleIntensity {
  std::string example_id;
  std::vector<IntensityRecord> records;
};

struct AnalysisReport {
  int schema_version = 1;
  std::string method = "full";
  std::vector<RatioRecord> word_change_series;
  std::vector<ExampleIntensity> intensities;
  std::vector<BucketStat> buckets;
};

// Accumulates word-change ratios during training via the trainer hook.
template <class Real>
class WordChangeTracker {
 public:
  explicit WordChangeTracker(model::QaModel<Real>* model) : model_(model) {}

  train::TrainHooks<Real> hooks() {
    train::TrainHooks<Real> h;
    h.on_perturbed = [this](long long step,
                            const std::vector<train::PerturbedExample<Real>>&
                                batch) { record(step, batch); };
    return h;
  }

  void record(long long step,
              const std::vector<train::PerturbedExample<Real>>& batch) {
    const auto& table = model_->token_embedding().value;
    double raw = 0.0, corrected = 0.0;
    long long n = 0;
    for (const auto& ex : batch) {
      auto r = word_change_ratio<Real>(table, *ex.token_ids, ex.perturbed,
                                       *ex.padding_mask);
      raw += r.raw * r.n_tokens;
      corrected += r.corrected * r.n_tokens;
      n += r.n_tokens;
    }
    if (n == 0) return;
    series_.push_back({step, raw / n, corrected / n});
  }

  const std::vector<RatioRecord>& series() const { return series_; }

 private:
  model::QaModel<Real>* model_;
  std::vector<RatioRecord> series_;
};

inline nlohmann::ordered_json report_to_json(const AnalysisReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = r.schema_version;
  j["method"] = r.method;
  j["word_change_series"] = nlohmann::ordered_json::array();
  for (const auto& s : r.word_change_series)
    j["word_change_series"].push_back(
        {{"step", s.step}, {"raw", s.raw}, {"corrected", s.corrected}});
  j["intensities"] = nlohmann::ordered_json::array();
  for (const auto& ex : r.intensities) {
    nlohmann::ordered_json e;
    e["example_id"] = ex.example_id;
    e["records"] = nlohmann::ordered_json::array();
    for (const auto& rec : ex.records)
      e["records"].push_back({{"position", rec.position},
                              {"token_id", rec.token_id},
                              {"token", rec.token},
                              {"l2", rec.l2}});
    j["intensities"].push_back(std::move(e));
  }
  j["buckets"] = nlohmann::ordered_json::array();
  for (const auto& b : r.buckets) {
    nlohmann::ordered_json e;
    e["rank_lo"] = b.rank_lo;
    e["rank_hi"] = b.rank_hi;
    e["n_tokens"] = b.n_tokens;
    e["knn_l2"] = b.knn_l2;
    e["n_occurrences"] = b.n_occurrences;
    if (b.pre_post_l2)
      e["pre_post_l2"] = *b.pre_post_l2;
    else
      e["pre_post_l2"] = nullptr;
    if (b.mean_mu)
      e["mean_mu"] = *b.mean_mu;
    else
      e["mean_mu"] = nullptr;
    j["buckets"].push_back(std::move(e));
  }
  return j;
}

inline AnalysisReport report_from_json(const nlohmann::json& j) {
  AnalysisReport r;
  r.schema_version = j.at("schema_version").get<int>();
  r.method = j.at("method").get<std::string>();
  for (const auto& s : j.at("word_change_series"))
    r.word_change_series.push_back({s.at("step").get<long long>(),
                                    s.at("raw").get<double>(),
                                    s.at("corrected").get<double>()});
  for (const auto& e : j.at("intensities")) {
    ExampleIntensity ex;
    ex.example_id = e.at("example_id").get<std::string>();
    for (const auto& rec : e.at("records"))
      ex.records.push_back({rec.at("position").get<int>(),
                            rec.at("token_id").get<int>(),
                            rec.at("token").get<std::string>(),
                            rec.at("l2").get<double>()});
    r.intensities.push_back(std::move(ex));
  }
  for (const auto& e : j.at("buckets")) {
    BucketStat b;
    b.rank_lo = e.at("rank_lo").get<int>();
    b.rank_hi = e.at("rank_hi").get<int>();
    b.n_tokens = e.at("n_tokens").get<int>();
    b.knn_l2 = e.at("knn_l2").get<double>();
    b.n_occurrences = e.at("n_occurrences").get<long long>();
    if (!e.at("pre_post_l2").is_null())
      b.pre_post_l2 = e.at("pre_post_l2").get<double>();
    if (!e.at("mean_mu").is_null()) b.mean_mu = e.at("mean_mu").get<double>();
    r.buckets.push_back(std::move(b));
  }
  return r;
}

AnalysisReport inline parse_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open report: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return report_from_json(j);
}

namespace detail {

inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline void write_ratios_svg(const AnalysisReport& r, const std::string& path) {
  const int w = 640, h = 360, margin = 40;
  std::ofstream out(path, std::ios::binary);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const auto& s = r.word_change_series;
  if (s.size() >= 2) {
    long long max_step = s.back().step;
    auto x_of = [&](long long step) {
      return margin + (w - 2 * margin) * static_cast<double>(step) /
                          static_cast<double>(std::max<long long>(1, max_step));
    };
    auto y_of = [&](double ratio) { return h - margin - (h - 2 * margin) * ratio; };
    for (int series = 0; series < 2; ++series) {
      out << "<polyline fill=\"none\" stroke=\""
          << (series == 0 ? "#c0392b" : "#2980b9") << "\" points=\"";
      for (const auto& p : s)
        out << x_of(p.step) << "," << y_of(series == 0 ? p.raw : p.corrected)
            << " ";
      out << "\"/>\n";
    }
  }
  out << "<text x=\"" << margin << "\" y=\"20\">word-change ratio "
      << "(red: raw, blue: corrected)</text>\n";
  out << "</svg>\n";
}

}  // namespace detail

// Writes report.json plus the three CSV views; optionally an SVG plot of the
// ratio series. Returns the paths written.
inline std::vector<std::string> emit_report(const AnalysisReport& report,
                                            const std::string& out_dir,
                                            bool plots = false) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw ParseError("emit_report: cannot create directory " + out_dir);

  std::vector<std::string> written;
  const std::string json_path = out_dir + "/report.json";
  {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw ParseError("emit_report: cannot write " + json_path);
    out << report_to_json(report).dump(2) << "\n";
  }
  written.push_back(json_path);

  const std::string ratios_path = out_dir + "/ratios.csv";
  {
    std::ofstream out(ratios_path, std::ios::binary);
    out << "step,raw_ratio,corrected_ratio,method\n";
    for (const auto& s : report.word_change_series)
      out << s.step << "," << detail::csv_double(s.raw) << ","
          << detail::csv_double(s.corrected) << "," << report.method << "\n";
  }
  written.push_back(ratios_path);

  const std::string intensity_path = out_dir + "/intensity.csv";
  {
    std::ofstream out(intensity_path, std::ios::binary);
    out << "example_id,position,token,l2\n";
    for (const auto& ex : report.intensities)
      for (const auto& rec : ex.records)
        out << ex.example_id << "," << rec.position << "," << rec.token << ","
            << detail::csv_double(rec.l2) << "\n";
  }
  written.push_back(intensity_path);

  const std::string buckets_path = out_dir + "/buckets.csv";
  {
    std::ofstream out(buckets_path, std::ios::binary);
    out << "rank_lo,rank_hi,n_tokens,knn_l2,pre_post_l2,mean_mu,n_occurrences\n";
    for (const auto& b : report.buckets) {
      out << b.rank_lo << "," << b.rank_hi << "," << b.n_tokens << ","
          << detail::csv_double(b.knn_l2) << ",";
      if (b.pre_post_l2) out << detail::csv_double(*b.pre_post_l2);
      out << ",";
      if (b.mean_mu) out << detail::csv_double(*b.mean_mu);
      out << "," << b.n_occurrences << "\n";
    }
  }
  written.push_back(buckets_path);

  if (plots) {
    const std::string svg_path = out_dir + "/ratios.svg";
    detail::write_ratios_svg(report, svg_path);
    written.push_back(svg_path);
  }
  return written;
}

}  // namespace swep::analysis
