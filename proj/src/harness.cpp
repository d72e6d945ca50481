#include "cavad/harness.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <stdexcept>

namespace fs = std::filesystem;

namespace cavad {

LossTerms total_loss(Model& model, Tape& tape, const Tensor& clips,
                     const std::vector<int>& scene_labels, int phase, bool write_memory) {
    if (phase != 1 && phase != 2) throw std::runtime_error("total_loss: phase must be 1 or 2");
    const TrainConfig& cfg = model.cfg;

    Var x = tape.leaf(clips, false);
    BranchOutput mb = model.motion_branch(x, write_memory);

    Var l_c = correlation_loss(mb.triple, cfg.lambda, cfg.c1_term, cfg.c2_term, cfg.c3_term);
    Var l_compact = model.pool.compact_loss(mb.queries);
    Var l_separate = model.pool.separate_loss(mb.queries, cfg.margin_m);
    Var total = add(l_c, mul_scalar(add(l_compact, l_separate), cfg.w_mem));

    LossTerms t;
    t.l_c = l_c.val()[0];
    t.l_compact = l_compact.val()[0];
    t.l_separate = l_separate.val()[0];

    if (phase == 2 && cfg.clustering && model.clusters.fitted) {
        Var l_cluster = cluster_loss(mb.r_shared, model.clusters);
        total = add(total, mul_scalar(l_cluster, cfg.w_cluster));
        t.l_cluster = l_cluster.val()[0];
    }

    if (model.sdl_active) {
        if (static_cast<int>(scene_labels.size()) != clips.dim(0))
            throw std::runtime_error("total_loss: scene labels do not match batch size");
        BranchOutput sb = model.scene_branch(x);
        Var p_s = model.cls_scene(sb.features);
        Var p_m = model.cls_motion(mb.features);
        Var l_cs = scene_ce_loss(p_s, scene_labels);
        Var l_cm = scene_ce_loss(p_m, scene_labels);
        Var l_kl = kl_mutual_loss(p_s, p_m);
        // triplet distances reuse the correlation metric under the same term switches
        Var d_scene =
            correlation_loss(sb.triple, cfg.lambda, cfg.c1_term, cfg.c2_term, cfg.c3_term);
        Var l_t = triplet_consistency_loss(l_c, d_scene, cfg.margin_alpha_m);
        Var sdl_sum = add(add(l_cs, l_cm), add(l_kl, l_t));
        total = add(total, mul_scalar(sdl_sum, cfg.w_sdl));
        t.l_cs = l_cs.val()[0];
        t.l_cm = l_cm.val()[0];
        t.l_kl = l_kl.val()[0];
        t.l_t = l_t.val()[0];
    }

    t.total = total;
    t.l_total = total.val()[0];
    return t;
}

// ---- checkpoint serialization ----------------------------------------------
// Layout (all integers and doubles little-endian, as on every supported host):
//   "CAVADCK1" | u32 version | str config_text | i64 n_scenes | i64 epoch |
//   i64 adam_steps | str rng_state | u64 n_params |
//   { str name | tensor value | tensor m | tensor v }* |
//   tensor pool | i64 pool_top_k | u8 fitted [| tensor centers] | u32 crc32
// where str = u64 length + bytes and tensor = u32 ndim + i64 dims + f64 data.

namespace {

constexpr char kMagic[8] = {'C', 'A', 'V', 'A', 'D', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

void put_u32(std::string& out, uint32_t v) { put_bytes(out, &v, sizeof v); }
void put_i64(std::string& out, int64_t v) { put_bytes(out, &v, sizeof v); }
void put_u8(std::string& out, uint8_t v) { put_bytes(out, &v, sizeof v); }

void put_str(std::string& out, const std::string& s) {
    uint64_t n = s.size();
    put_bytes(out, &n, sizeof n);
    out.append(s);
}

void put_tensor(std::string& out, const Tensor& t) {
    put_u32(out, static_cast<uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) put_i64(out, t.dim(i));
    put_bytes(out, t.data(), static_cast<size_t>(t.numel()) * sizeof(real));
}

struct Reader {
    const char* p;
    const char* end;

    void need(size_t n) const {
        if (static_cast<size_t>(end - p) < n) throw std::runtime_error("checkpoint: truncated");
    }
    void get_bytes(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, p, n);
        p += n;
    }
    uint32_t get_u32() {
        uint32_t v;
        get_bytes(&v, sizeof v);
        return v;
    }
    int64_t get_i64() {
        int64_t v;
        get_bytes(&v, sizeof v);
        return v;
    }
    uint8_t get_u8() {
        uint8_t v;
        get_bytes(&v, sizeof v);
        return v;
    }
    std::string get_str() {
        uint64_t n;
        get_bytes(&n, sizeof n);
        need(n);
        std::string s(p, n);
        p += n;
        return s;
    }
    Tensor get_tensor() {
        const uint32_t ndim = get_u32();
        if (ndim > 5) throw std::runtime_error("checkpoint: bad tensor rank");
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(get_i64());
        Tensor t(shape);
        get_bytes(t.data(), static_cast<size_t>(t.numel()) * sizeof(real));
        return t;
    }
};

std::string encode_checkpoint(const Checkpoint& c) {
    std::string out;
    put_bytes(out, kMagic, sizeof kMagic);
    put_u32(out, kVersion);
    put_str(out, dump_config(c.cfg));
    put_i64(out, c.n_scenes);
    put_i64(out, c.epoch);
    put_i64(out, c.adam_steps);
    put_str(out, c.rng_state);
    uint64_t n = c.param_names.size();
    put_bytes(out, &n, sizeof n);
    for (size_t i = 0; i < c.param_names.size(); ++i) {
        put_str(out, c.param_names[i]);
        put_tensor(out, c.values[i]);
        put_tensor(out, c.adam_m[i]);
        put_tensor(out, c.adam_v[i]);
    }
    put_tensor(out, c.pool);
    put_i64(out, c.pool_top_k);
    put_u8(out, c.clusters.fitted ? 1 : 0);
    if (c.clusters.fitted) put_tensor(out, c.clusters.centers);
    return out;
}

}  // namespace

Checkpoint snapshot(const Model& model, long epoch) {
    Checkpoint c;
    c.cfg = model.cfg;
    c.n_scenes = model.n_scenes;
    c.epoch = epoch;
    c.adam_steps = model.opt.step_count;
    c.rng_state = model.rng.save_state();
    for (size_t i = 0; i < model.params.size(); ++i) {
        const Param& p = model.params.at(i);
        c.param_names.push_back(p.name);
        c.values.push_back(p.value);
        c.adam_m.push_back(p.m);
        c.adam_v.push_back(p.v);
    }
    c.pool = model.pool.m;
    c.pool_top_k = model.pool.top_k;
    c.clusters = model.clusters;
    return c;
}

void restore(Model& model, const Checkpoint& c) {
    if (model.params.size() != c.param_names.size())
        throw std::runtime_error("checkpoint: parameter set mismatch");
    for (size_t i = 0; i < c.param_names.size(); ++i) {
        Param& p = model.params.at(i);
        if (p.name != c.param_names[i] || !p.value.same_shape(c.values[i]))
            throw std::runtime_error("checkpoint: parameter set mismatch at " + p.name);
        p.value = c.values[i];
        p.m = c.adam_m[i];
        p.v = c.adam_v[i];
    }
    if (!model.pool.m.same_shape(c.pool))
        throw std::runtime_error("checkpoint: memory pool shape mismatch");
    model.pool.m = c.pool;
    // top_k stays config-derived so test-time filtering overrides take effect
    model.clusters = c.clusters;
    model.opt.step_count = c.adam_steps;
    model.rng.load_state(c.rng_state);
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::string payload = encode_checkpoint(c);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), payload.size()));
    put_u32(payload, crc);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    const size_t n = std::fwrite(payload.data(), 1, payload.size(), f);
    std::fclose(f);
    if (n != payload.size()) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string bytes;
    char buf[1 << 16];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.append(buf, n);
    std::fclose(f);

    if (bytes.size() < sizeof kMagic + sizeof(uint32_t) * 2)
        throw std::runtime_error("checkpoint: truncated");
    const size_t payload_len = bytes.size() - sizeof(uint32_t);
    uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + payload_len, sizeof stored_crc);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), payload_len));
    if (crc != stored_crc)
        throw std::runtime_error("checkpoint: checksum mismatch (corrupt or truncated file)");

    Reader r{bytes.data(), bytes.data() + payload_len};
    char magic[8];
    r.get_bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("checkpoint: bad magic (not a checkpoint file)");
    const uint32_t version = r.get_u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint c;
    // the dump lists every key explicitly, so replaying assignments (without
    // re-triggering the dataset preset) reconstructs the config exactly
    const std::string cfg_text = r.get_str();
    size_t pos = 0;
    while (pos < cfg_text.size()) {
        size_t nl = cfg_text.find('\n', pos);
        if (nl == std::string::npos) nl = cfg_text.size();
        const std::string line = cfg_text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("checkpoint: malformed config line: " + line);
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            return s;
        };
        set_train_key(c.cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    validate(c.cfg);
    c.n_scenes = static_cast<int>(r.get_i64());
    c.epoch = r.get_i64();
    c.adam_steps = r.get_i64();
    c.rng_state = r.get_str();
    uint64_t n_params;
    r.get_bytes(&n_params, sizeof n_params);
    for (uint64_t i = 0; i < n_params; ++i) {
        c.param_names.push_back(r.get_str());
        c.values.push_back(r.get_tensor());
        c.adam_m.push_back(r.get_tensor());
        c.adam_v.push_back(r.get_tensor());
    }
    c.pool = r.get_tensor();
    c.pool_top_k = static_cast<int>(r.get_i64());
    c.clusters.fitted = r.get_u8() != 0;
    if (c.clusters.fitted) c.clusters.centers = r.get_tensor();
    if (r.p != r.end) throw std::runtime_error("checkpoint: trailing bytes");
    return c;
}

// ---- training loop ----------------------------------------------------------

namespace {

// Shared-branch representations of every full batch, dataset order, no
// memory writes; feeds the phase-2 K-means refresh.
Tensor collect_shared_reps(Model& model, const DatasetManifest& data, FrameStore& store) {
    auto batches = epoch_batches(data, model.cfg.b, false, model.rng);
    if (batches.empty())
        throw std::runtime_error("train: dataset yields no full batch of " +
                                 std::to_string(model.cfg.b) + " clips");
    Tensor reps({static_cast<int>(batches.size()) * model.cfg.b, model.cfg.n});
    int row = 0;
    for (const auto& batch : batches) {
        Tape tape;
        model.params.bind(tape);
        BranchOutput mb =
            model.motion_branch(tape.leaf(store.batch_tensor(batch), false), false);
        for (int i = 0; i < model.cfg.b; ++i, ++row)
            for (int j = 0; j < model.cfg.n; ++j) reps.at(row, j) = mb.r_shared.val().at(i, j);
    }
    return reps;
}

void log_line(std::FILE* f, const EpochStats& s) {
    std::fprintf(f, "%ld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.epoch, s.phase,
                 s.l_total, s.l_c, s.l_compact, s.l_separate, s.l_cluster, s.l_cs, s.l_cm,
                 s.l_kl, s.l_t);
    std::fflush(f);
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const DatasetManifest& data, FrameStore& store,
                  const TrainOptions& options) {
    TrainConfig cfg = cfg_in;
    long start_epoch = 0;
    std::unique_ptr<Model> model;
    if (!options.resume_from.empty()) {
        Checkpoint ckpt = load_checkpoint(options.resume_from);
        if (dump_config(ckpt.cfg) != dump_config(cfg_in))
            throw std::runtime_error("train: config does not match the resume checkpoint");
        if (ckpt.n_scenes != data.n_scenes)
            throw std::runtime_error("train: dataset scene count does not match checkpoint");
        model = std::make_unique<Model>(ckpt.cfg, ckpt.n_scenes);
        restore(*model, ckpt);
        start_epoch = ckpt.epoch;
    } else {
        model = std::make_unique<Model>(cfg, data.n_scenes);
    }

    fs::create_directories(options.out_dir);
    const std::string log_path = (fs::path(options.out_dir) / "train_log.csv").string();
    std::FILE* log = nullptr;
    if (start_epoch > 0 && fs::exists(log_path)) {
        log = std::fopen(log_path.c_str(), "a");
    } else {
        log = std::fopen(log_path.c_str(), "w");
        if (log) std::fprintf(log, "epoch,phase,L_total,L_c,L_compact,L_separate,L_cluster,L_cs,L_cm,L_KL,L_t\n");
    }
    if (!log) throw std::runtime_error("train: cannot write " + log_path);

    TrainResult res;
    res.ckpt_path = (fs::path(options.out_dir) / "final.ckpt").string();
    const long total_epochs = cfg.phase1_epochs + cfg.phase2_epochs;
    bool first_batch_seen = false;
    int ran = 0;

    for (long epoch = start_epoch; epoch < total_epochs; ++epoch) {
        if (options.max_epochs_this_call >= 0 && ran >= options.max_epochs_this_call) break;
        const int phase = epoch < cfg.phase1_epochs ? 1 : 2;

        if (phase == 2 && cfg.clustering) {
            Tensor reps = collect_shared_reps(*model, data, store);
            model->clusters = update_clusters(reps, cfg.K_clusters, model->rng);
        }

        auto batches = epoch_batches(data, cfg.b, true, model->rng);
        if (batches.empty())
            throw std::runtime_error("train: dataset yields no full batch of " +
                                     std::to_string(cfg.b) + " clips");

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.phase = phase;
        for (const auto& batch : batches) {
            std::vector<int> labels(batch.size());
            for (size_t i = 0; i < batch.size(); ++i) labels[i] = clip_scene(data, batch[i]);
            Tape tape;
            model->params.bind(tape);
            LossTerms lt =
                total_loss(*model, tape, store.batch_tensor(batch), labels, phase, true);
            tape.backward(lt.total);
            model->opt.step(model->params);

            stats.l_total += lt.l_total;
            stats.l_c += lt.l_c;
            stats.l_compact += lt.l_compact;
            stats.l_separate += lt.l_separate;
            stats.l_cluster += lt.l_cluster;
            stats.l_cs += lt.l_cs;
            stats.l_cm += lt.l_cm;
            stats.l_kl += lt.l_kl;
            stats.l_t += lt.l_t;
            if (!first_batch_seen) {
                res.first_batch_total = lt.l_total;
                first_batch_seen = true;
            }
            res.last_batch_total = lt.l_total;
        }
        const real nb = static_cast<real>(batches.size());
        stats.l_total /= nb;
        stats.l_c /= nb;
        stats.l_compact /= nb;
        stats.l_separate /= nb;
        stats.l_cluster /= nb;
        stats.l_cs /= nb;
        stats.l_cm /= nb;
        stats.l_kl /= nb;
        stats.l_t /= nb;
        log_line(log, stats);
        save_checkpoint(snapshot(*model, epoch + 1), res.ckpt_path);
        res.epochs.push_back(stats);
        ++ran;
    }
    std::fclose(log);
    res.epochs_completed = start_epoch + ran;
    return res;
}

}  // namespace cavad
