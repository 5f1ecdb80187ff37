#ifndef LFHN_EVAL_HPP
#define LFHN_EVAL_HPP

#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "train.hpp"

namespace lfhn {

/// One scored probe: true labels plus the predicted identity.
struct Prediction {
  std::size_t identity = 0;
  std::size_t pose_id = 0;
  std::size_t light_id = 0;
  std::size_t predicted = 0;
};

struct PoseBin {
  std::size_t pose_id = 0;
  double yaw_deg = 0.0;
  std::size_t samples = 0;
  std::size_t correct = 0;

  bool present() const { return samples > 0; }
  double rate() const { return present() ? 100.0 * static_cast<double>(correct) / static_cast<double>(samples) : 0.0; }
};

/// Rank-1 identification rates per pose bin, in roster order.
struct RankTable {
  std::vector<PoseBin> bins;
  std::optional<double> mean;  // unweighted average over present bins
  /// rate per (pose bin, light id); empty optional where no samples landed
  std::vector<std::vector<std::optional<double>>> by_light;
  std::vector<std::string> warnings;
};

/// Bins predictions by pose. `yaw_by_pose` fixes the bin roster and order;
/// roster bins without samples are reported absent and excluded from the mean.
inline RankTable tabulate(std::span<const Prediction> predictions, const std::map<std::size_t, double>& yaw_by_pose,
                          std::size_t light_count = 0) {
  RankTable t;
  std::map<std::size_t, std::size_t> bin_of;
  // Table columns run in yaw order, as in the published tables.
  std::vector<std::pair<double, std::size_t>> order;
  for (const auto& [pose, yaw] : yaw_by_pose) order.emplace_back(yaw, pose);
  std::sort(order.begin(), order.end());
  for (const auto& [yaw, pose] : order) {
    bin_of[pose] = t.bins.size();
    t.bins.push_back({pose, yaw, 0, 0});
  }
  for (const Prediction& p : predictions) light_count = std::max(light_count, p.light_id + 1);

  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> cell(
      t.bins.size(), std::vector<std::pair<std::size_t, std::size_t>>(light_count));
  for (const Prediction& p : predictions) {
    auto it = bin_of.find(p.pose_id);
    if (it == bin_of.end()) detail::raise<data_error>("evaluate: pose id ", p.pose_id, " not in the yaw roster");
    PoseBin& bin = t.bins[it->second];
    const bool hit = p.predicted == p.identity;
    ++bin.samples;
    bin.correct += hit;
    ++cell[it->second][p.light_id].first;
    cell[it->second][p.light_id].second += hit;
  }

  double sum = 0.0;
  std::size_t present = 0;
  for (const PoseBin& b : t.bins) {
    if (!b.present()) {
      t.warnings.push_back("evaluate: pose bin " + std::to_string(b.pose_id) + " (yaw " +
                           detail::format_double(b.yaw_deg) + ") has no samples; excluded from the mean");
      continue;
    }
    sum += b.rate();
    ++present;
  }
  if (present) t.mean = sum / static_cast<double>(present);

  for (const auto& row : cell) {
    std::vector<std::optional<double>> rates;
    for (const auto& [n, hits] : row)
      rates.push_back(n ? std::optional<double>(100.0 * static_cast<double>(hits) / static_cast<double>(n))
                        : std::nullopt);
    t.by_light.push_back(std::move(rates));
  }
  return t;
}

/// Predicted identity (argmax of the logits) for every selected sample,
/// evaluated on center crops. Does not modify the network.
inline std::vector<Prediction> predict(const NetworkGraph& net, const std::vector<LabeledSample>& samples,
                                       std::span<const std::size_t> indices, std::size_t batch_size = 64) {
  const Shape& in = net.input_shape();
  const std::size_t classes = net.node(net.output()).out_shape.at(0);
  std::vector<Prediction> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, indices.size() - start);
    const auto chunk = indices.subspan(start, n);
    const Tensor logits = forward(net, make_eval_batch(samples, chunk, in[0], in[1])).logits;
    for (std::size_t b = 0; b < n; ++b) {
      const LabeledSample& s = samples[chunk[b]];
      out.push_back({s.identity, s.pose_id, s.light_id,
                     argmax(std::span<const double>(logits.raw() + b * classes, classes))});
    }
  }
  return out;
}

inline RankTable evaluate(const NetworkGraph& net, const std::vector<LabeledSample>& samples,
                          std::span<const std::size_t> indices, const std::map<std::size_t, double>& yaw_by_pose) {
  if (indices.empty()) detail::raise<data_error>("evaluate: empty test set");
  const std::size_t classes = net.node(net.output()).out_shape.at(0);
  for (std::size_t i : indices)
    if (samples.at(i).identity >= classes)
      detail::raise<shape_error>("evaluate: label ", samples[i].identity, " needs at least ", samples[i].identity + 1,
                                 " classes but the model has ", classes);
  const std::vector<Prediction> preds = predict(net, samples, indices);
  return tabulate(preds, yaw_by_pose);
}

enum class TableStyle { csv, paper };

inline TableStyle parse_table_style(std::string_view s) {
  if (s == "csv") return TableStyle::csv;
  if (s == "paper") return TableStyle::paper;
  detail::raise<config_error>("unknown table style '", s, "' (expected csv or paper)");
}

namespace detail {

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace detail

/// csv:   pose_id,yaw_deg,n_samples,rank1_pct rows, then mean,,,{value}
/// paper: aligned rows of yaw headers and rates (2 decimals) with a Mean column
inline std::string format_table(const RankTable& t, TableStyle style) {
  std::string out;
  if (style == TableStyle::csv) {
    out = "pose_id,yaw_deg,n_samples,rank1_pct\n";
    for (const PoseBin& b : t.bins) {
      out += std::to_string(b.pose_id) + "," + detail::format_double(b.yaw_deg) + "," + std::to_string(b.samples) +
             "," + (b.present() ? detail::format_double(b.rate()) : std::string()) + "\n";
    }
    if (t.mean) out += "mean,,," + detail::format_double(*t.mean) + "\n";
    return out;
  }

  if (t.bins.empty()) return "Yaw | Mean\n";
  std::vector<std::string> yaw_row{"Yaw"}, id_row{"PoseID"}, rate_row{"Rank-1"};
  for (const PoseBin& b : t.bins) {
    id_row.push_back(std::to_string(b.pose_id));
    yaw_row.push_back(detail::format_double(b.yaw_deg));
    rate_row.push_back(b.present() ? detail::fixed2(b.rate()) : "-");
  }
  id_row.push_back("");
  yaw_row.push_back("Mean");
  rate_row.push_back(t.mean ? detail::fixed2(*t.mean) : "-");
  std::vector<std::size_t> widths(yaw_row.size(), 0);
  for (const auto* row : {&id_row, &yaw_row, &rate_row})
    for (std::size_t i = 0; i < row->size(); ++i) widths[i] = std::max(widths[i], (*row)[i].size());
  auto emit = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += " | ";
      line += i == 0 ? detail::pad_right(row[i], widths[i]) : detail::pad_left(row[i], widths[i]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  };
  emit(id_row);
  emit(yaw_row);
  emit(rate_row);
  return out;
}

}  // namespace lfhn

#endif  // LFHN_EVAL_HPP
