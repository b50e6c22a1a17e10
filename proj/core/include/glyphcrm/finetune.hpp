#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glyphcrm/metrics.hpp"
#include "glyphcrm/model.hpp"
#include "glyphcrm/pretrain.hpp"

namespace glyphcrm {

enum class TaskKind { SingleCls, PairCls, Tagging };

const char* task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);

struct TaskSpec {
    TaskKind kind = TaskKind::SingleCls;
    std::vector<std::string> labels;
    double lr = 2e-5;
    std::int64_t epochs = 3;
    std::int64_t max_len = 128;
    std::int64_t batch = 8;
    std::uint64_t seed = 42;

    void validate() const;
    std::int64_t label_id(const std::string& label, int line) const;  // DataError if unknown
};

// label<TAB>text, pair tasks label<TAB>textA<TAB>textB.
struct ClsExample {
    std::int64_t label = 0;
    std::vector<char32_t> a, b;
};
std::vector<ClsExample> load_cls_tsv(const std::filesystem::path& path, const TaskSpec& spec);

// char<SPACE>label per line, blank line between sentences.
struct TagExample {
    std::vector<char32_t> chars;
    std::vector<std::int64_t> labels;
};
std::vector<TagExample> load_tag_file(const std::filesystem::path& path, const TaskSpec& spec);

// Softmax distribution over the label set from the [CLS] state.
std::vector<double> classify(const Tensor& h_cls, const LinearParam& head);

// Argmax with ties resolved to the lowest label id.
std::int64_t argmax_label(const std::vector<double>& dist);

// Per-position argmax over rows of hidden.
std::vector<std::int64_t> tag(const Tensor& hidden, const LinearParam& head);

struct FinetuneOptions {
    TaskSpec spec;
    std::filesystem::path checkpoint;
    std::filesystem::path train_file, dev_file, test_file;
    std::filesystem::path out_dir;
};

struct FinetuneResult {
    EvalReport test_report;
    std::filesystem::path checkpoint;  // fine-tuned model + task head
    std::vector<double> dev_history;   // selection metric per epoch
    std::int64_t best_epoch = 0;       // 1-based
};

// Full-model fine-tuning (no frozen layers) at a constant task learning
// rate; the epoch with the best dev metric (accuracy, or span F1 for
// tagging) supplies the exported parameters. Vocabulary-free: inputs reach
// the encoder purely as glyphs, so unseen characters are fine.
FinetuneResult finetune_run(const FinetuneOptions& opt, const FontAtlas& atlas);

struct FinetunedModel {
    Model model;
    LinearParam head;
    TaskSpec spec;
};

FinetunedModel load_finetuned(const std::filesystem::path& path);

EvalReport evaluate_file(const FinetunedModel& m, const std::filesystem::path& data,
                         const FontAtlas& atlas);

}  // namespace glyphcrm
