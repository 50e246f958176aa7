#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "reftfl/linalg.hpp"

namespace reftfl {

enum class Design {
    DistinctTask,  // each client owns one task for train and test
    MixedTask,     // clients train on a task mixture, test on a single task
};

/**
 * A seed-generated binary labeling rule over bag-of-token statistics: the
 * label is 1 when the mean per-token weight of a sequence exceeds the
 * threshold. Tasks with different ids carry different weight vectors.
 * Generation skips sequences whose statistic falls inside the margin band
 * around the threshold, so the emitted examples are separable with a gap;
 * the rule itself stays a total labeler for use as a relabeling oracle.
 */
struct TaskSpec {
    int id = 0;
    std::vector<int> vocab_subset;  // sorted token ids this task draws from
    Vector token_weights;           // one weight per vocabulary token
    double threshold = 0.0;
    double margin = 0.0;
    int classes = 2;

    double statistic(const std::vector<int>& tokens) const;
    int label_of(const std::vector<int>& tokens) const;
};

struct Example {
    std::vector<int> tokens;
    int label = 0;
    int task = 0;
};

struct ClientData {
    std::vector<Example> train;
    std::vector<Example> val;
    std::vector<Example> test;
};

struct FederatedDataset {
    Design design = Design::DistinctTask;
    int seq_len = 0;
    int vocab = 0;
    std::vector<TaskSpec> tasks;
    std::vector<ClientData> clients;
};

/**
 * Deterministic federated dataset: `examples_per_client` examples split
 * 60/20/20 into train/val/test, class-balanced within each split, with no
 * sequence repeated across one client's splits.
 *
 * DistinctTask requires num_tasks == num_clients; MixedTask requires
 * num_tasks >= 2 and mixes tasks into train/val with the given proportions
 * (uniform when empty) while each client's test split stays single-task.
 */
FederatedDataset generate(Design design, int num_clients, int num_tasks, int examples_per_client,
                          int seq_len, int vocab, std::uint64_t seed,
                          const std::vector<double>& mix_proportions = {});

// Line-based dump: a header line, one line per task rule, then one line per
// example: "<client> <split> <task> <label> <tok0> ... <tokN-1>".
void dump_dataset(const FederatedDataset& dataset, std::ostream& out);
FederatedDataset load_dataset(std::istream& in);

}  // namespace reftfl
