#pragma once

// Two-phase training: loss assembly over both branches, the epoch loop with
// per-epoch K-means refreshes in phase 2, CSV loss logging, and binary
// checkpoints carrying parameters, optimizer state, memory pool, clusters,
// config and RNG state.

#include <string>
#include <vector>

#include "cavad/data.hpp"
#include "cavad/model.hpp"

namespace cavad {

struct LossTerms {
    Var total;
    real l_total = 0.0;
    real l_c = 0.0;
    real l_compact = 0.0;
    real l_separate = 0.0;
    real l_cluster = 0.0;
    real l_cs = 0.0;
    real l_cm = 0.0;
    real l_kl = 0.0;
    real l_t = 0.0;
};

// Assembles the batch loss on a tape the caller has already bound params to:
//   L = L_c + w_mem (L_compact + L_separate)
//     + w_cluster L_cluster              (phase 2, clustering on and fitted)
//     + w_sdl (L_cs + L_cm + L_KL + L_t) (when SdL is active)
// Disabled ablation flags zero their terms exactly. The scene branch and
// classifiers run only when SdL is active. scene_labels are consulted only in
// that case and must then match the batch size.
LossTerms total_loss(Model& model, Tape& tape, const Tensor& clips,
                     const std::vector<int>& scene_labels, int phase, bool write_memory);

struct Checkpoint {
    TrainConfig cfg;
    int n_scenes = 1;
    long epoch = 0;  // completed epochs
    long adam_steps = 0;
    std::string rng_state;
    std::vector<std::string> param_names;  // insertion order
    std::vector<Tensor> values, adam_m, adam_v;
    Tensor pool;  // C x N
    int pool_top_k = 0;
    ClusterModel clusters;
};

Checkpoint snapshot(const Model& model, long epoch);

// Overwrites parameters, optimizer state, pool, clusters and RNG. The model
// must have been constructed from the checkpoint's config and scene count;
// throws when the parameter sets do not line up.
void restore(Model& model, const Checkpoint& ckpt);

// Binary little-endian format: magic + version header, config text, scalar
// state, parameter tensors in insertion order, pool, clusters, crc32 trailer.
// save -> load -> save is byte-identical.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct EpochStats {
    long epoch = 0;  // 1-based, as logged
    int phase = 1;
    real l_total = 0.0, l_c = 0.0, l_compact = 0.0, l_separate = 0.0, l_cluster = 0.0;
    real l_cs = 0.0, l_cm = 0.0, l_kl = 0.0, l_t = 0.0;
};

struct TrainOptions {
    std::string out_dir;              // receives train_log.csv and final.ckpt
    std::string resume_from;          // checkpoint path; empty starts fresh
    int max_epochs_this_call = -1;    // stop early after this many epochs; -1 = run out
};

struct TrainResult {
    std::vector<EpochStats> epochs;  // epochs executed in this call
    real first_batch_total = 0.0;
    real last_batch_total = 0.0;
    long epochs_completed = 0;  // cumulative, counting resumed-from epochs
    std::string ckpt_path;      // out_dir/final.ckpt, rewritten every epoch
};

// Runs (or resumes) the two-phase loop on the train split: phase 1 for
// phase1_epochs without clustering, then phase 2 where each epoch refits
// K-means on the shared-branch representations (collected in deterministic
// dataset order) before its gradient steps. Deterministic given cfg.seed.
// Resuming requires the caller config to equal the checkpoint's.
TrainResult train(const TrainConfig& cfg, const DatasetManifest& data, FrameStore& store,
                  const TrainOptions& options);

}  // namespace cavad
