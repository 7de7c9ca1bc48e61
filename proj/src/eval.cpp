#include "dslu/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace dslu {

double intent_accuracy(const std::vector<std::string>& predicted,
                       const std::vector<std::string>& gold) {
  if (predicted.empty()) throw std::invalid_argument("intent_accuracy: no predictions");
  if (predicted.size() != gold.size())
    throw std::invalid_argument("intent_accuracy: " + std::to_string(predicted.size()) +
                                " predictions for " + std::to_string(gold.size()) + " labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].empty())
      throw std::invalid_argument("intent_accuracy: missing gold label at " + std::to_string(i));
    correct += predicted[i] == gold[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(gold.size());
}

double intent_accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
  if (predicted.empty()) throw std::invalid_argument("intent_accuracy: no predictions");
  if (predicted.size() != gold.size())
    throw std::invalid_argument("intent_accuracy: length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0)
      throw std::invalid_argument("intent_accuracy: missing gold label at " + std::to_string(i));
    correct += predicted[i] == gold[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(gold.size());
}

std::size_t BucketTable::total_support() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.support;
  return n;
}

namespace {

void require_both(const PredictionRecord& r) {
  if (!r.both_passes)
    throw std::invalid_argument("record " + r.utt_id + " lacks both-pass predictions");
}

struct Tally {
  std::size_t n = 0, first = 0, second = 0;
  void add(const PredictionRecord& r) {
    ++n;
    first += r.intent_pass1 == r.intent_true;
    second += r.intent_pass2 == r.intent_true;
  }
  BucketRow row(std::string label) const {
    BucketRow b{std::move(label), n, 0.0, 0.0};
    if (n > 0) {
      b.first_accuracy = 100.0 * static_cast<double>(first) / static_cast<double>(n);
      b.second_accuracy = 100.0 * static_cast<double>(second) / static_cast<double>(n);
    }
    return b;
  }
};

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

}  // namespace

BucketTable bucket_by_confidence(const std::vector<PredictionRecord>& records, double threshold) {
  Tally hi, lo;
  for (const auto& r : records) {
    require_both(r);
    (r.confidence >= threshold ? hi : lo).add(r);
  }
  BucketTable t;
  t.rows.push_back(hi.row(">=" + fmt(threshold)));
  t.rows.push_back(lo.row("<" + fmt(threshold)));
  return t;
}

double routed_accuracy(const BucketTable& table) {
  double num = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    num += static_cast<double>(r.support) * (i == 0 ? r.first_accuracy : r.second_accuracy);
    n += r.support;
  }
  if (n == 0) throw std::invalid_argument("routed_accuracy: table has zero support");
  return num / static_cast<double>(n);
}

BucketTable bucket_by_wer(const std::vector<PredictionRecord>& records,
                          const std::vector<double>& edges) {
  if (edges.size() < 2) throw std::invalid_argument("bucket_by_wer: need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1]))
      throw std::invalid_argument("bucket_by_wer: edges must strictly increase");
  std::vector<Tally> tallies(edges.size() - 1);
  std::size_t below5 = 0;
  for (const auto& r : records) {
    require_both(r);
    const double w = 100.0 * r.wer_pass1;
    below5 += w < 5.0;
    if (w < edges.front()) continue;
    std::size_t b = tallies.size() - 1;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
      if (w < edges[i + 1]) {
        b = i;
        break;
      }
    tallies[b].add(r);
  }
  BucketTable t;
  for (std::size_t i = 0; i < tallies.size(); ++i) {
    const bool last = i + 1 == tallies.size();
    t.rows.push_back(tallies[i].row("[" + fmt(edges[i]) + "," + fmt(edges[i + 1]) +
                                    (last ? "]" : ")")));
  }
  if (!records.empty())
    t.low_wer_fraction = static_cast<double>(below5) / static_cast<double>(records.size());
  return t;
}

std::string BucketTable::to_csv() const {
  std::ostringstream s;
  s << "bucket,support,first_pass_accuracy,second_pass_accuracy\n";
  for (const auto& r : rows)
    s << r.label << ',' << r.support << ',' << fmt(r.first_accuracy) << ','
      << fmt(r.second_accuracy) << '\n';
  return s.str();
}

PrefixCurve prefix_sweep(const TwoPassModel& model, const std::vector<const Utterance*>& utts,
                         const std::vector<double>& prefixes, const DecodeOptions& options,
                         int workers) {
  if (utts.empty()) throw std::invalid_argument("prefix_sweep: empty evaluation set");
  for (std::size_t i = 1; i < prefixes.size(); ++i)
    if (!(prefixes[i] > prefixes[i - 1]))
      throw std::invalid_argument("prefix_sweep: prefixes must strictly increase");
  PrefixCurve curve;
  for (double p : prefixes) {
    std::optional<double> prefix;
    if (!std::isinf(p)) prefix = p;
    const auto results = parallel_map<PassResult>(utts.size(), workers, [&](std::size_t i) {
      return infer_first_pass(model, *utts[i], prefix, options);
    });
    std::vector<int> pred, gold;
    double wall = 0.0, audio = 0.0;
    for (std::size_t i = 0; i < utts.size(); ++i) {
      pred.push_back(results[i].intent);
      gold.push_back(utts[i]->intent);
      wall += results[i].elapsed;
      audio += std::min(p, utts[i]->duration_seconds());
    }
    PrefixPoint pt;
    pt.prefix_seconds = p;
    pt.accuracy = intent_accuracy(pred, gold);
    pt.mean_wall = wall / static_cast<double>(utts.size());
    pt.real_time_factor = wall > 0.0 ? audio / wall : 0.0;
    curve.points.push_back(pt);
  }
  return curve;
}

std::string PrefixCurve::to_csv() const {
  std::ostringstream s;
  s << "prefix_seconds,accuracy,mean_wall_seconds,real_time_factor\n";
  for (const auto& p : points)
    s << (std::isinf(p.prefix_seconds) ? std::string("full") : fmt(p.prefix_seconds)) << ','
      << fmt(p.accuracy) << ',' << fmt(p.mean_wall) << ',' << fmt(p.real_time_factor) << '\n';
  return s.str();
}

PrefixCurve PrefixCurve::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("prefix_seconds,", 0) != 0)
    throw std::invalid_argument("prefix curve CSV: missing header");
  PrefixCurve c;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2)
      throw std::invalid_argument("prefix curve CSV line " + std::to_string(lineno) +
                                  ": expected at least 2 columns");
    PrefixPoint p;
    try {
      p.prefix_seconds = cells[0] == "full" ? std::numeric_limits<double>::infinity()
                                            : std::stod(cells[0]);
      p.accuracy = std::stod(cells[1]);
      if (cells.size() > 2) p.mean_wall = std::stod(cells[2]);
      if (cells.size() > 3) p.real_time_factor = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw std::invalid_argument("prefix curve CSV line " + std::to_string(lineno) +
                                  ": bad number");
    }
    if (!c.points.empty() && !(p.prefix_seconds > c.points.back().prefix_seconds))
      throw std::invalid_argument("prefix curve CSV line " + std::to_string(lineno) +
                                  ": prefixes must increase");
    c.points.push_back(p);
  }
  return c;
}

std::vector<HeatmapMatrix> export_heatmaps(const TwoPassModel& model, const Utterance& utt,
                                           const std::vector<int>& transcript) {
  const auto c_aco = encode_acoustic(model, frames_tensor(utt));
  const auto sem_tokens = semantic_input(model.vocab, transcript);
  const auto c_sem = encode_semantic(model, sem_tokens);
  std::vector<nn::AttentionMap> maps;
  const auto c_del = deliberate(model, c_aco, c_sem, {}, &maps);
  std::vector<std::string> labels;
  const std::size_t t_aco = c_del.acoustic_length;
  for (std::size_t p = 0; p < t_aco; ++p)
    labels.push_back("frame" + std::to_string(p * model.config.subsample));
  for (int id : sem_tokens) labels.push_back(model.vocab.token(id));
  std::vector<HeatmapMatrix> out;
  for (const auto& m : maps) {
    if (m.layer != 0) continue;
    HeatmapMatrix h;
    h.layer = m.layer;
    h.head = m.head;
    h.query_labels = labels;
    h.key_labels = labels;
    h.boundary = t_aco;
    h.rows = m.queries;
    h.cols = m.keys;
    h.weights = m.weights;
    for (std::size_t r = 0; r < h.rows; ++r) {
      double a = 0.0, s = 0.0;
      for (std::size_t c = 0; c < h.cols; ++c) (c < t_aco ? a : s) += h.at(r, c);
      h.acoustic_mass.push_back(a);
      h.semantic_mass.push_back(s);
    }
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace dslu
