#include "reftfl/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include "reftfl/errors.hpp"
#include "reftfl/rng.hpp"

namespace reftfl {

namespace {

constexpr int kRuleAttempts = 8;
constexpr int kSampleAttempts = 20000;
constexpr int kProbeSize = 512;

std::vector<int> sample_subset(int vocab, int subset_size, Rng& rng) {
    std::vector<int> ids(static_cast<std::size_t>(vocab));
    for (int i = 0; i < vocab; ++i) ids[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < subset_size; ++i) {
        const auto j = static_cast<std::size_t>(i) +
                       rng.uniform_below(static_cast<std::uint64_t>(vocab - i));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
    }
    ids.resize(static_cast<std::size_t>(subset_size));
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<int> sample_sequence(const std::vector<int>& subset, int seq_len, Rng& rng) {
    std::vector<int> tokens(static_cast<std::size_t>(seq_len));
    for (int p = 0; p < seq_len; ++p) {
        tokens[static_cast<std::size_t>(p)] =
            subset[rng.uniform_below(static_cast<std::uint64_t>(subset.size()))];
    }
    return tokens;
}

// Thresholds the rule at the probe median and bans a band around it so the
// emitted examples have a separation gap.
bool calibrate_rule(TaskSpec& task, int seq_len, Rng& rng) {
    std::vector<double> stats(kProbeSize);
    for (int k = 0; k < kProbeSize; ++k) {
        stats[static_cast<std::size_t>(k)] = task.statistic(sample_sequence(task.vocab_subset, seq_len, rng));
    }
    std::sort(stats.begin(), stats.end());
    const double median = 0.5 * (stats[kProbeSize / 2 - 1] + stats[kProbeSize / 2]);
    const double q35 = stats[static_cast<std::size_t>(kProbeSize * 35 / 100)];
    const double q65 = stats[static_cast<std::size_t>(kProbeSize * 65 / 100)];
    const double margin = std::min(median - q35, q65 - median);
    if (!(margin > 1e-9)) {
        return false;
    }
    task.threshold = median;
    task.margin = margin;
    return true;
}

Example sample_example(const TaskSpec& task, int seq_len, int target_label, Rng& rng,
                       std::set<std::vector<int>>& seen) {
    for (int attempt = 0; attempt < kSampleAttempts; ++attempt) {
        std::vector<int> tokens = sample_sequence(task.vocab_subset, seq_len, rng);
        const double stat = task.statistic(tokens);
        if (std::abs(stat - task.threshold) < task.margin) continue;
        const int label = stat > task.threshold ? 1 : 0;
        if (label != target_label) continue;
        if (!seen.insert(tokens).second) continue;
        return Example{std::move(tokens), label, task.id};
    }
    throw GenerationError("synthdata: could not satisfy class balance for task " +
                          std::to_string(task.id));
}

// Deterministic proportional task order: the k-th example goes to the task
// with the largest outstanding share.
int next_task(const std::vector<double>& proportions, std::vector<int>& used, int k) {
    int best = 0;
    double best_score = -1.0;
    for (std::size_t t = 0; t < proportions.size(); ++t) {
        const double score =
            proportions[t] * static_cast<double>(k + 1) - static_cast<double>(used[t]);
        if (score > best_score + 1e-12) {
            best_score = score;
            best = static_cast<int>(t);
        }
    }
    ++used[static_cast<std::size_t>(best)];
    return best;
}

void fill_split(std::vector<Example>& split, int count, const std::vector<TaskSpec>& tasks,
                const std::vector<int>& task_of_example, int seq_len, Rng& rng,
                std::set<std::vector<int>>& seen) {
    for (int k = 0; k < count; ++k) {
        const TaskSpec& task = tasks[static_cast<std::size_t>(task_of_example[static_cast<std::size_t>(k)])];
        split.push_back(sample_example(task, seq_len, k % 2, rng, seen));
    }
}

}  // namespace

double TaskSpec::statistic(const std::vector<int>& tokens) const {
    double acc = 0.0;
    for (int t : tokens) {
        acc += token_weights[static_cast<std::size_t>(t)];
    }
    return acc / static_cast<double>(tokens.size());
}

int TaskSpec::label_of(const std::vector<int>& tokens) const {
    return statistic(tokens) > threshold ? 1 : 0;
}

FederatedDataset generate(Design design, int num_clients, int num_tasks, int examples_per_client,
                          int seq_len, int vocab, std::uint64_t seed,
                          const std::vector<double>& mix_proportions) {
    if (num_clients < 1) throw ConfigError("synthdata: num_clients must be >= 1");
    if (seq_len < 1) throw ConfigError("synthdata: seq_len must be >= 1");
    if (vocab < 2) throw ConfigError("synthdata: vocab must be >= 2");
    if (examples_per_client < 10) throw ConfigError("synthdata: examples_per_client must be >= 10");
    if (design == Design::DistinctTask && num_tasks != num_clients) {
        throw ConfigError("synthdata: distinct-task design requires num_tasks == num_clients");
    }
    if (design == Design::MixedTask && num_tasks < 2) {
        throw ConfigError("synthdata: mixed-task design requires num_tasks >= 2");
    }
    if (num_tasks > vocab) {
        throw ConfigError("synthdata: num_tasks must not exceed vocab");
    }
    std::vector<double> proportions = mix_proportions;
    if (proportions.empty()) {
        proportions.assign(static_cast<std::size_t>(num_tasks), 1.0 / static_cast<double>(num_tasks));
    } else {
        if (proportions.size() != static_cast<std::size_t>(num_tasks)) {
            throw ConfigError("synthdata: mix_proportions size must equal num_tasks");
        }
        double total = 0.0;
        for (double p : proportions) {
            if (p < 0.0) throw ConfigError("synthdata: mix_proportions must be non-negative");
            total += p;
        }
        if (!(total > 0.0)) throw ConfigError("synthdata: mix_proportions must sum to > 0");
        for (double& p : proportions) p /= total;
    }

    FederatedDataset dataset;
    dataset.design = design;
    dataset.seq_len = seq_len;
    dataset.vocab = vocab;

    // Task rule directions are rows of one orthonormal matrix, so distinct
    // tasks disagree by construction.
    Rng dir_rng(derive_seed(seed, 1));
    const Matrix directions =
        random_orthonormal(static_cast<std::size_t>(num_tasks), static_cast<std::size_t>(vocab), dir_rng);
    const int subset_size = std::max(2, (3 * vocab) / 4);
    for (int t = 0; t < num_tasks; ++t) {
        TaskSpec task;
        task.id = t;
        task.token_weights.assign(directions.row(static_cast<std::size_t>(t)),
                                  directions.row(static_cast<std::size_t>(t)) + vocab);
        bool ok = false;
        for (int attempt = 0; attempt < kRuleAttempts && !ok; ++attempt) {
            Rng rule_rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(t) * 16 +
                                               static_cast<std::uint64_t>(attempt)));
            task.vocab_subset = sample_subset(vocab, subset_size, rule_rng);
            ok = calibrate_rule(task, seq_len, rule_rng);
        }
        if (!ok) {
            throw GenerationError("synthdata: no usable rule for task " + std::to_string(t));
        }
        dataset.tasks.push_back(std::move(task));
    }

    const int train_count = (examples_per_client * 6) / 10;
    const int val_count = (examples_per_client * 2) / 10;
    const int test_count = examples_per_client - train_count - val_count;

    for (int i = 0; i < num_clients; ++i) {
        Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(i)));
        ClientData client;
        std::set<std::vector<int>> seen;
        const int own_task = i % num_tasks;

        std::vector<int> train_tasks(static_cast<std::size_t>(train_count), own_task);
        std::vector<int> val_tasks(static_cast<std::size_t>(val_count), own_task);
        std::vector<int> test_tasks(static_cast<std::size_t>(test_count), own_task);
        if (design == Design::MixedTask) {
            std::vector<int> used(static_cast<std::size_t>(num_tasks), 0);
            for (int k = 0; k < train_count; ++k) {
                train_tasks[static_cast<std::size_t>(k)] = next_task(proportions, used, k);
            }
            std::vector<int> used_val(static_cast<std::size_t>(num_tasks), 0);
            for (int k = 0; k < val_count; ++k) {
                val_tasks[static_cast<std::size_t>(k)] = next_task(proportions, used_val, k);
            }
        }
        fill_split(client.train, train_count, dataset.tasks, train_tasks, seq_len, rng, seen);
        fill_split(client.val, val_count, dataset.tasks, val_tasks, seq_len, rng, seen);
        fill_split(client.test, test_count, dataset.tasks, test_tasks, seq_len, rng, seen);
        dataset.clients.push_back(std::move(client));
    }

    // Rule self-check: relabeling every emitted example with its task's rule
    // must reproduce the stored labels.
    for (const ClientData& client : dataset.clients) {
        for (const auto* split : {&client.train, &client.val, &client.test}) {
            int correct = 0;
            for (const Example& ex : *split) {
                if (dataset.tasks[static_cast<std::size_t>(ex.task)].label_of(ex.tokens) == ex.label) {
                    ++correct;
                }
            }
            if (!split->empty() &&
                static_cast<double>(correct) < 0.9 * static_cast<double>(split->size())) {
                throw GenerationError("synthdata: rule probe below 90% accuracy");
            }
        }
    }
    return dataset;
}

namespace {

void write_double(std::ostream& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    out.write(buf, ptr - buf);
}

double parse_double(const std::string& text, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ParseError("dataset: bad number '" + text + "'", line);
    }
    return v;
}

const char* split_name(int s) {
    return s == 0 ? "train" : (s == 1 ? "val" : "test");
}

}  // namespace

void dump_dataset(const FederatedDataset& dataset, std::ostream& out) {
    out << "reftfl-dataset v1 design=" << (dataset.design == Design::DistinctTask ? "DT" : "MT")
        << " clients=" << dataset.clients.size() << " tasks=" << dataset.tasks.size()
        << " seq_len=" << dataset.seq_len << " vocab=" << dataset.vocab << '\n';
    for (const TaskSpec& task : dataset.tasks) {
        out << "task id=" << task.id << " threshold=";
        write_double(out, task.threshold);
        out << " margin=";
        write_double(out, task.margin);
        out << " subset=";
        for (std::size_t i = 0; i < task.vocab_subset.size(); ++i) {
            if (i) out << ',';
            out << task.vocab_subset[i];
        }
        out << " weights=";
        for (std::size_t i = 0; i < task.token_weights.size(); ++i) {
            if (i) out << ' ';
            write_double(out, task.token_weights[i]);
        }
        out << '\n';
    }
    for (std::size_t c = 0; c < dataset.clients.size(); ++c) {
        const ClientData& client = dataset.clients[c];
        const std::vector<Example>* splits[3] = {&client.train, &client.val, &client.test};
        for (int s = 0; s < 3; ++s) {
            for (const Example& ex : *splits[s]) {
                out << "example " << c << ' ' << split_name(s) << ' ' << ex.task << ' ' << ex.label;
                for (int t : ex.tokens) out << ' ' << t;
                out << '\n';
            }
        }
    }
}

FederatedDataset load_dataset(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) {
        throw ParseError("dataset: empty input", line_no);
    }
    FederatedDataset dataset;
    std::size_t num_clients = 0;
    std::size_t num_tasks = 0;
    {
        std::stringstream ss(line);
        std::string head, version, field;
        ss >> head >> version;
        if (head != "reftfl-dataset" || version != "v1") {
            throw ParseError("dataset: unknown header", line_no);
        }
        while (ss >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) throw ParseError("dataset: bad header field", line_no);
            const std::string key = field.substr(0, eq);
            const std::string value = field.substr(eq + 1);
            if (key == "design") {
                if (value == "DT") {
                    dataset.design = Design::DistinctTask;
                } else if (value == "MT") {
                    dataset.design = Design::MixedTask;
                } else {
                    throw ParseError("dataset: unknown design '" + value + "'", line_no);
                }
            } else if (key == "clients") {
                num_clients = static_cast<std::size_t>(parse_double(value, line_no));
            } else if (key == "tasks") {
                num_tasks = static_cast<std::size_t>(parse_double(value, line_no));
            } else if (key == "seq_len") {
                dataset.seq_len = static_cast<int>(parse_double(value, line_no));
            } else if (key == "vocab") {
                dataset.vocab = static_cast<int>(parse_double(value, line_no));
            }
        }
    }
    dataset.clients.resize(num_clients);
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "task") {
            TaskSpec task;
            std::string field;
            while (ss >> field) {
                const auto eq = field.find('=');
                if (eq == std::string::npos) throw ParseError("dataset: bad task field", line_no);
                const std::string key = field.substr(0, eq);
                std::string value = field.substr(eq + 1);
                if (key == "id") {
                    task.id = static_cast<int>(parse_double(value, line_no));
                } else if (key == "threshold") {
                    task.threshold = parse_double(value, line_no);
                } else if (key == "margin") {
                    task.margin = parse_double(value, line_no);
                } else if (key == "subset") {
                    std::stringstream sub(value);
                    std::string item;
                    while (std::getline(sub, item, ',')) {
                        task.vocab_subset.push_back(static_cast<int>(parse_double(item, line_no)));
                    }
                } else if (key == "weights") {
                    task.token_weights.push_back(parse_double(value, line_no));
                    std::string rest;
                    while (ss >> rest) {
                        task.token_weights.push_back(parse_double(rest, line_no));
                    }
                }
            }
            dataset.tasks.push_back(std::move(task));
        } else if (kind == "example") {
            std::size_t client = 0;
            std::string split;
            Example ex;
            if (!(ss >> client >> split >> ex.task >> ex.label)) {
                throw ParseError("dataset: bad example record", line_no);
            }
            if (client >= dataset.clients.size()) {
                throw ParseError("dataset: client index out of range", line_no);
            }
            int tok = 0;
            while (ss >> tok) ex.tokens.push_back(tok);
            if (static_cast<int>(ex.tokens.size()) != dataset.seq_len) {
                throw ParseError("dataset: token count does not match seq_len", line_no);
            }
            if (split == "train") {
                dataset.clients[client].train.push_back(std::move(ex));
            } else if (split == "val") {
                dataset.clients[client].val.push_back(std::move(ex));
            } else if (split == "test") {
                dataset.clients[client].test.push_back(std::move(ex));
            } else {
                throw ParseError("dataset: unknown split '" + split + "'", line_no);
            }
        } else {
            throw ParseError("dataset: unknown record '" + kind + "'", line_no);
        }
    }
    if (dataset.tasks.size() != num_tasks) {
        throw ParseError("dataset: task count does not match header", line_no);
    }
    return dataset;
}

}  // namespace reftfl
