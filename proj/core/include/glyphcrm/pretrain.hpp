#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glyphcrm/checkpoint.hpp"
#include "glyphcrm/model.hpp"
#include "glyphcrm/schedule.hpp"
#include "glyphcrm/vocab.hpp"

namespace glyphcrm {

// Label value marking positions excluded from a loss.
inline constexpr std::int64_t kIgnoreLabel = -1;

enum class NspLabel : std::int64_t { IsNext = 0, NotNext = 1 };

struct SentencePair {
    std::vector<char32_t> a, b;
    NspLabel label = NspLabel::IsNext;
};

// Drops codepoints from the tail of the currently longer side (ties trim b)
// until |a| + |b| + 3 <= max_len.
void truncate_pair(std::vector<char32_t>& a, std::vector<char32_t>& b, std::int64_t max_len);

// For each adjacent sentence pair: one uniform01() draw decides IsNext
// (< 0.5) vs NotNext; NotNext draws uniform_int over the sentences of all
// other documents. Throws Error when the corpus has fewer than 2 documents.
std::vector<SentencePair> make_nsp_pairs(const Corpus& corpus, Rng& rng, std::int64_t max_len);

struct MaskedIds {
    std::vector<std::int64_t> ids;     // corrupted input view
    std::vector<std::int64_t> labels;  // original id where selected, else kIgnoreLabel
};

// Per eligible (non-reserved) position, in order: one uniform01() selection
// draw at 0.15; if selected a second draw picks [MASK] (0.8) / random
// non-reserved id (0.1, one more uniform_int draw) / unchanged (0.1).
MaskedIds apply_mlm_mask(std::span<const std::int64_t> ids, const Vocabulary& vocab, Rng& rng);

struct PretrainExample {
    std::vector<std::int64_t> token_ids;  // masked view
    std::vector<std::int64_t> segments;
    std::vector<std::uint8_t> attention;
    std::vector<std::int64_t> mlm_labels;
    NspLabel nsp_label = NspLabel::IsNext;
    std::vector<TokenRender> render;  // glyph source per position
};

// [CLS] A [SEP] B [SEP] with segments 0/1, masking applied. A masked
// position renders the [MASK] glyph; a replaced position renders the
// replacement character; an out-of-vocabulary character keeps its own glyph
// while its id is [UNK].
PretrainExample build_example(const SentencePair& pair, const Vocabulary& vocab, Rng& rng);

struct PretrainBatch {
    std::int64_t size = 0;
    std::int64_t len = 0;  // padded length
    std::vector<TokenRender> render;
    std::vector<std::int64_t> segments;
    std::vector<std::uint8_t> attention;
    std::vector<std::int64_t> mlm_labels;
    std::vector<std::int64_t> nsp_labels;
};

PretrainBatch make_batch(std::span<const PretrainExample> examples);

// Cross entropy over positions with non-ignore labels, logits = H * proj.
template <typename T>
VarT<T> mlm_loss(GraphT<T>& g, VarT<T> hidden, const std::vector<std::int64_t>& labels,
                 const BoundLinear<T>& output_proj);

// 2-way cross entropy on [CLS] states.
template <typename T>
VarT<T> nsp_loss(GraphT<T>& g, VarT<T> h_cls, const std::vector<std::int64_t>& labels,
                 const BoundLinear<T>& head);

struct TrainConfig {
    std::int64_t batch = 256;
    double lr = 1e-4;
    std::int64_t warmup = 10000;
    std::int64_t total_steps = 100000;
    double weight_decay = 0.01;
    std::uint64_t seed = 42;
    std::int64_t min_freq = 2;
    std::int64_t save_every = 1000;
    std::int64_t log_every = 1;
    std::int64_t eval_every = 0;  // 0 disables eval passes
    std::int64_t eval_examples = 32;
    // Both > 0 enables stopping once an eval pass clears the two bars.
    double target_mlm_acc = 0.0;
    double target_nsp_acc = 0.0;
    std::int64_t min_steps = 0;
};

struct StepMetrics {
    std::int64_t step = 0;
    double lr = 0, mlm_loss = 0, nsp_loss = 0, mlm_acc = 0;
    double wallclock = 0;
};

struct EvalMetrics {
    double mlm_acc = 0, nsp_acc = 0;
    std::int64_t masked_positions = 0;
};

struct PretrainResult {
    std::int64_t steps = 0;
    std::filesystem::path final_checkpoint;
    std::vector<StepMetrics> history;
    EvalMetrics final_eval;
    bool reached_targets = false;
    std::string abort_reason;  // non-empty when a non-finite loss stopped the run
};

// MLM + NSP pretraining with Adam under a linear warmup/decay schedule.
// Deterministic for a fixed seed: the pair schedule and every mask derive
// from (seed, epoch, index), so resuming from a checkpoint reproduces an
// uninterrupted run bitwise. Writes metrics.jsonl plus periodic and final
// checkpoints into out_dir.
PretrainResult pretrain_run(const Corpus& corpus, const FontAtlas& atlas, ModelConfig config,
                            const TrainConfig& train, const std::filesystem::path& out_dir,
                            const std::filesystem::path& resume_from = {});

}  // namespace glyphcrm
