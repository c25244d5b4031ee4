#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ftlab/model.hpp"
#include "ftlab/rng.hpp"

namespace ftlab::data {

// Reserved token ids; content tokens start at kFirstContent.
inline constexpr int kPad = 0;
inline constexpr int kCls = 1;
inline constexpr int kSep = 2;
inline constexpr int kMask = 3;
inline constexpr int kOov = 4;
inline constexpr int kFirstContent = 5;

enum class TaskKind { Classification, Regression };
enum class MetricKind { Accuracy, F1, Mcc, Scc };

MetricKind metric_from_string(const std::string& s);
std::string metric_to_string(MetricKind m);

struct Example {
  std::vector<int> tokens_a;
  std::vector<int> tokens_b;  // empty for single-sentence tasks
  double label = 0.0;         // class index or regression target
};

struct Dataset {
  std::vector<Example> examples;
  TaskKind task_kind = TaskKind::Classification;
  MetricKind metric = MetricKind::Accuracy;
  std::size_t num_classes = 2;

  std::size_t size() const { return examples.size(); }
  void validate() const;
};

// A task with its three splits, plus the vocabulary actually used.
struct TaskData {
  Dataset train, val, test;
  std::size_t vocab_size = 0;
};

// Synthetic few-sample task. Content tokens are partitioned into one pool
// per class plus a neutral pool; each example places `signal_tokens` tokens
// from class pools (the generated label's class holding a strict plurality)
// among neutral filler, then flips the label with probability label_noise.
// For regression the target is the fraction of signal tokens drawn from the
// class-1 pool.
struct SyntheticTaskSpec {
  std::size_t vocab_size = 64;
  std::size_t seq_len = 8;
  std::size_t num_classes = 2;
  std::size_t train_size = 1000;
  std::size_t val_size = 256;
  std::size_t test_size = 256;
  double label_noise = 0.1;
  std::size_t signal_tokens = 6;
  TaskKind task_kind = TaskKind::Classification;
  std::uint64_t seed = 13;

  void validate() const;
};

TaskData generate_synthetic(const SyntheticTaskSpec& spec);

// The noiseless labeling rule: the class whose pool holds a strict plurality
// of this example's signal tokens (classification), or the class-1 fraction
// of signal tokens (regression). Generated examples satisfy it exactly when
// label_noise is 0.
double rule_label(const SyntheticTaskSpec& spec, const Example& ex);

// Column names for TSV ingestion; first row must be a header.
struct TsvColumns {
  std::string text_a;
  std::string text_b;  // empty: single-sentence task
  std::string label;
};

struct TsvTaskSpec {
  std::string train_path, val_path, test_path;
  TsvColumns columns;
  TaskKind task_kind = TaskKind::Classification;
  MetricKind metric = MetricKind::Accuracy;
};

// Whitespace tokenization with a vocabulary built from the training split;
// out-of-vocabulary tokens map to the reserved id.
struct Vocab {
  std::map<std::string, int> word_to_id;
  std::size_t size() const;  // includes the reserved ids
  int lookup(const std::string& w) const;
};

Vocab build_vocab(const std::string& train_path, const TsvColumns& columns);
Dataset load_tsv(const std::string& path, const TsvColumns& columns, const Vocab& vocab,
                 TaskKind kind, MetricKind metric,
                 const std::map<std::string, int>* label_map);
TaskData load_tsv_task(const TsvTaskSpec& spec);

// Writes a dataset back out in the same TSV layout (token ids as words).
void export_tsv(const Dataset& d, const std::string& path, const TsvColumns& columns);

// Uniform sample of k examples without replacement, deterministic in seed.
Dataset downsample(const Dataset& d, std::size_t k, std::uint64_t seed);

// Encodes one example: [CLS] a for single sentences, [CLS] a [SEP] b [SEP]
// for pairs.
std::vector<int> encode_tokens(const Example& ex);

// One epoch of batches under a fresh shuffle drawn from the data-order
// stream. The final short batch is kept.
std::vector<model::Batch> batch_iter(const Dataset& d, std::size_t batch_size, Rng& order_rng);

// Batches in dataset order without consuming any rng (evaluation).
std::vector<model::Batch> batch_sequential(const Dataset& d, std::size_t batch_size);

double metric(const std::vector<double>& preds, const std::vector<double>& golds, MetricKind kind);

// The metric a constant majority-class predictor achieves on `golds`
// (0 for MCC and SCC by definition).
double majority_baseline(const std::vector<double>& golds, MetricKind kind);

}  // namespace ftlab::data
