#include "stemsep/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

namespace stemsep {

void TrainConfig::validate() const {
    if (lr <= 0.0f) throw ConfigError("train: lr must be > 0");
    if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f)
        throw ConfigError("train: betas must be in [0, 1)");
    if (batch_size < 1 || epochs < 1 || batches_per_epoch < 1)
        throw ConfigError("train: bad schedule");
    if (ema_decays.empty()) throw ConfigError("train: need at least one EMA decay");
    if (excerpt_seconds <= 0.0) throw ConfigError("train: bad excerpt length");
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) throw DimensionError("l1_loss: shape mismatch");
    return mean(abs(sub(pred, target)));
}

AdamState AdamState::init(const ParamRegistry& reg) {
    AdamState s;
    s.m.reserve(reg.items.size());
    s.v.reserve(reg.items.size());
    for (const auto& [name, t] : reg.items) {
        s.m.emplace_back(t.numel(), 0.0f);
        s.v.emplace_back(t.numel(), 0.0f);
    }
    return s;
}

float adam_step(ParamRegistry& reg, AdamState& state, const TrainConfig& cfg) {
    if (state.m.size() != reg.items.size())
        throw ContractError("adam_step: state does not match registry");

    // Global L2 norm over every gradient.
    float sq_total = 0.0f;
    for (auto& [name, t] : reg.items) {
        if (!t.has_grad()) continue;
        const auto& g = t.grad_vec();
        std::vector<float> sq(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) sq[i] = g[i] * g[i];
        sq_total += reduce_sum(sq.data(), sq.size());
    }
    const float norm = std::sqrt(sq_total);
    float clip_scale = 1.0f;
    if (cfg.grad_clip_l2 > 0.0f && norm > cfg.grad_clip_l2) clip_scale = cfg.grad_clip_l2 / norm;

    state.step += 1;
    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(state.step));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(state.step));

    for (std::size_t p = 0; p < reg.items.size(); ++p) {
        Tensor& t = reg.items[p].second;
        float* theta = t.data();
        auto& m = state.m[p];
        auto& v = state.v[p];
        const float* g = t.has_grad() ? t.grad_vec().data() : nullptr;
        const std::size_t n = t.numel();
        for (std::size_t i = 0; i < n; ++i) {
            const float gi = g ? g[i] * clip_scale : 0.0f;
            m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * gi * gi;
            const float mhat = m[i] / bc1;
            const float vhat = v[i] / bc2;
            theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            if (cfg.weight_decay > 0.0f) theta[i] -= cfg.lr * cfg.weight_decay * theta[i];
        }
    }
    return norm;
}

void save_optimizer_state(const AdamState& state, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << "STEMSEPO 1\n" << state.step << " " << state.m.size() << "\n";
    for (std::size_t p = 0; p < state.m.size(); ++p) {
        const std::uint64_t n = state.m[p].size();
        f.write(reinterpret_cast<const char*>(&n), sizeof(n));
        f.write(reinterpret_cast<const char*>(state.m[p].data()), static_cast<std::streamsize>(n * 4));
        f.write(reinterpret_cast<const char*>(state.v[p].data()), static_cast<std::streamsize>(n * 4));
    }
    if (!f) throw IoError("short write to " + path);
}

AdamState load_optimizer_state(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string magic;
    std::getline(f, magic);
    if (magic != "STEMSEPO 1") throw FormatError("not an optimizer sidecar: " + path);
    AdamState s;
    std::size_t n_params = 0;
    f >> s.step >> n_params;
    f.get();  // newline
    for (std::size_t p = 0; p < n_params; ++p) {
        std::uint64_t n = 0;
        f.read(reinterpret_cast<char*>(&n), sizeof(n));
        std::vector<float> m(n), v(n);
        f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(n * 4));
        f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
        if (!f) throw IoError("truncated optimizer sidecar: " + path);
        s.m.push_back(std::move(m));
        s.v.push_back(std::move(v));
    }
    return s;
}

EmaState EmaState::init(const ParamRegistry& reg, float decay) {
    EmaState e;
    e.decay = decay;
    e.shadow = snapshot_params(reg);
    return e;
}

void ema_update(EmaState& ema, const ParamRegistry& reg) {
    if (ema.shadow.size() != reg.items.size())
        throw ContractError("ema_update: shadow does not match registry");
    for (std::size_t p = 0; p < reg.items.size(); ++p) {
        const float* theta = reg.items[p].second.data();
        auto& s = ema.shadow[p];
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = ema.decay * s[i] + (1.0f - ema.decay) * theta[i];
    }
}

std::vector<std::vector<float>> snapshot_params(const ParamRegistry& reg) {
    std::vector<std::vector<float>> out;
    out.reserve(reg.items.size());
    for (const auto& [name, t] : reg.items) out.emplace_back(t.vec());
    return out;
}

void load_param_values(ParamRegistry& reg, const std::vector<std::vector<float>>& values) {
    if (values.size() != reg.items.size())
        throw ContractError("load_param_values: size mismatch");
    for (std::size_t p = 0; p < values.size(); ++p) {
        Tensor& t = reg.items[p].second;
        if (values[p].size() != t.numel()) throw ContractError("load_param_values: extent mismatch");
        std::memcpy(t.data(), values[p].data(), values[p].size() * sizeof(float));
    }
}

RemixResult remix_batch(const Tensor& stems, std::uint64_t seed) {
    if (stems.ndim() != 4) throw DimensionError("remix_batch: expects [B, S, C, T]");
    const int B = stems.dim(0), S = stems.dim(1), C = stems.dim(2), T = stems.dim(3);
    RemixResult res;
    res.targets = Tensor::zeros({B, S, C, T});
    res.mixtures = Tensor::zeros({B, C, T});
    if (B < 2) std::cerr << "remix_batch: batch < 2, passing stems through\n";

    const std::size_t item = static_cast<std::size_t>(C) * T;
    const float* ps = stems.data();
    float* pt = res.targets.data();
    float* pm = res.mixtures.data();
    for (int s = 0; s < S; ++s) {
        std::vector<int> perm(static_cast<std::size_t>(B));
        std::iota(perm.begin(), perm.end(), 0);
        if (B >= 2) {
            Rng rng(derive_seed(seed, "remix", static_cast<std::uint64_t>(s)));
            rng.shuffle(perm);
        }
        for (int b = 0; b < B; ++b) {
            const float* src = ps + (static_cast<std::size_t>(perm[static_cast<std::size_t>(b)]) * S + s) * item;
            float* dst = pt + (static_cast<std::size_t>(b) * S + s) * item;
            std::memcpy(dst, src, item * sizeof(float));
            float* mix = pm + static_cast<std::size_t>(b) * item;
            for (std::size_t i = 0; i < item; ++i) mix[i] += src[i];
        }
    }
    return res;
}

namespace {

// One fixed-length excerpt [S, C, n] copied from a song.
Tensor song_excerpt(const SongStems& song, int offset, int n) {
    const int S = static_cast<int>(song.stems.size());
    const int C = song.stems.front().channels();
    const int T = song.stems.front().frames();
    Tensor out = Tensor::zeros({S, C, n});
    for (int s = 0; s < S; ++s)
        for (int c = 0; c < C; ++c)
            std::copy_n(song.stems[static_cast<std::size_t>(s)].samples.data() +
                            static_cast<std::size_t>(c) * T + offset,
                        n, out.data() + (static_cast<std::size_t>(s) * C + c) * static_cast<std::size_t>(n));
    return out;
}

float eval_valid_loss(const Model& model, const std::vector<Tensor>& valid_items, int sample_rate,
                      int target_source) {
    NoGradGuard ng;
    if (valid_items.empty()) return 0.0f;
    float total = 0.0f;
    for (const auto& item : valid_items) {
        const int S = item.dim(0), C = item.dim(1), n = item.dim(2);
        Tensor mix = Tensor::zeros({C, n});
        const float* pi = item.data();
        float* pm = mix.data();
        for (int s = 0; s < S; ++s)
            for (std::size_t i = 0; i < static_cast<std::size_t>(C) * n; ++i)
                pm[i] += pi[static_cast<std::size_t>(s) * C * n + i];
        Tensor pred = model_forward(model, AudioClip(std::move(mix), sample_rate));
        Tensor target = item;
        if (target_source >= 0) {
            pred = slice(pred, 0, target_source, 1);
            target = slice(target, 0, target_source, 1);
        }
        total += l1_loss(pred, target).item();
    }
    return total / static_cast<float>(valid_items.size());
}

}  // namespace

TrainResult train(Model& model, const std::vector<SongStems>& train_songs,
                  const std::vector<SongStems>& valid_songs, const TrainConfig& cfg,
                  std::ostream* metrics) {
    cfg.validate();
    if (train_songs.empty()) throw ContractError("train: empty training set");
    const int rate = model.cfg.sample_rate;
    const int excerpt = static_cast<int>(cfg.excerpt_seconds * rate);
    if (excerpt < model.cfg.n_fft) throw ConfigError("train: excerpt shorter than one stft window");
    for (const auto& song : train_songs)
        if (song.stems.front().frames() < excerpt)
            throw ContractError("train: song shorter than the excerpt length");
    if (cfg.target_source >= model.cfg.n_sources())
        throw ConfigError("train: target_source out of range");

    ParamRegistry reg = collect_params(model);
    AdamState adam = AdamState::init(reg);
    std::vector<EmaState> emas;
    for (float d : cfg.ema_decays) emas.push_back(EmaState::init(reg, d));

    // Fixed validation excerpts: one per song, taken from the front.
    std::vector<Tensor> valid_items;
    for (const auto& song : valid_songs) {
        const int n = std::min(excerpt, song.stems.front().frames());
        if (n >= model.cfg.n_fft) valid_items.push_back(song_excerpt(song, 0, n));
    }

    TrainResult result;
    result.baseline_valid_l1 =
        eval_valid_loss(model, valid_items, rate, cfg.target_source);
    result.best_valid_l1 = result.baseline_valid_l1;
    std::vector<std::vector<float>> best_shadow = emas.front().shadow;

    Rng data_rng(derive_seed(cfg.seed, "data"));
    const int S = model.cfg.n_sources();
    long global_step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        float epoch_loss = 0.0f;
        float last_norm = 0.0f;
        for (int step = 0; step < cfg.batches_per_epoch; ++step) {
            const int B = cfg.batch_size;
            Tensor batch = Tensor::zeros({B, S, 2, excerpt});
            for (int b = 0; b < B; ++b) {
                const int song_idx = data_rng.below(static_cast<int>(train_songs.size()));
                const SongStems& song = train_songs[static_cast<std::size_t>(song_idx)];
                const int max_off = song.stems.front().frames() - excerpt;
                const int offset = max_off > 0 ? data_rng.below(max_off + 1) : 0;
                Tensor item = song_excerpt(song, offset, excerpt);
                std::copy_n(item.data(), item.numel(),
                            batch.data() + static_cast<std::size_t>(b) * item.numel());
            }
            if (cfg.rescale) {
                float* pb = batch.data();
                const std::size_t stem_n = static_cast<std::size_t>(2) * excerpt;
                for (int b = 0; b < B; ++b)
                    for (int s = 0; s < S; ++s) {
                        const float gain = data_rng.uniform(0.25f, 1.25f);
                        float* stem = pb + (static_cast<std::size_t>(b) * S + s) * stem_n;
                        for (std::size_t i = 0; i < stem_n; ++i) stem[i] *= gain;
                    }
            }
            Tensor mixtures, targets;
            if (cfg.remix && B >= 2) {
                RemixResult rr = remix_batch(batch, derive_seed(cfg.seed, "remix_step",
                                                                static_cast<std::uint64_t>(global_step)));
                mixtures = std::move(rr.mixtures);
                targets = std::move(rr.targets);
            } else {
                targets = batch;
                mixtures = Tensor::zeros({B, 2, excerpt});
                const float* pt = targets.data();
                float* pm = mixtures.data();
                const std::size_t item = static_cast<std::size_t>(2) * excerpt;
                for (int b = 0; b < B; ++b)
                    for (int s = 0; s < S; ++s)
                        for (std::size_t i = 0; i < item; ++i)
                            pm[static_cast<std::size_t>(b) * item + i] +=
                                pt[(static_cast<std::size_t>(b) * S + s) * item + i];
            }

            for (auto& [name, t] : reg.items) t.zero_grad();
            float batch_loss = 0.0f;
            for (int b = 0; b < B; ++b) {
                Tensor mix = slice(mixtures, 0, b, 1).detach();
                mix = reshape(mix, {2, excerpt});
                Tensor pred = model_forward(model, AudioClip(mix, rate),
                                            derive_seed(cfg.seed, "lsh", static_cast<std::uint64_t>(global_step)));
                Tensor target = reshape(slice(targets, 0, b, 1).detach(), {S, 2, excerpt});
                if (cfg.target_source >= 0) {
                    pred = slice(pred, 0, cfg.target_source, 1);
                    target = slice(target, 0, cfg.target_source, 1);
                }
                Tensor loss = l1_loss(pred, target);
                const float lv = loss.item();
                if (!std::isfinite(lv))
                    throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                       " step " + std::to_string(step) + " item " + std::to_string(b));
                batch_loss += lv / static_cast<float>(B);
                backward(scale(loss, 1.0f / static_cast<float>(B)));
            }
            last_norm = adam_step(reg, adam, cfg);
            for (auto& ema : emas) ema_update(ema, reg);
            epoch_loss += batch_loss;
            ++global_step;
        }
        epoch_loss /= static_cast<float>(cfg.batches_per_epoch);

        // Validate with the first EMA shadow.
        const auto raw = snapshot_params(reg);
        load_param_values(reg, emas.front().shadow);
        const float valid = eval_valid_loss(model, valid_items, rate, cfg.target_source);
        if (valid < result.best_valid_l1) {
            result.best_valid_l1 = valid;
            best_shadow = emas.front().shadow;
        }
        load_param_values(reg, raw);

        EpochStats st;
        st.epoch = epoch;
        st.step = global_step;
        st.train_l1 = epoch_loss;
        st.valid_l1 = valid;
        st.lr = cfg.lr;
        st.grad_norm = last_norm;
        result.history.push_back(st);
        if (metrics) {
            (*metrics) << "{\"epoch\":" << epoch << ",\"step\":" << global_step
                       << ",\"train_l1\":" << epoch_loss << ",\"valid_l1\":" << valid
                       << ",\"lr\":" << cfg.lr << ",\"grad_norm\":" << last_norm << "}\n";
            metrics->flush();
        }
    }

    // The model ends at the best-valid EMA snapshot.
    load_param_values(reg, best_shadow);
    return result;
}

TrainResult finetune(Model& model, const std::vector<SongStems>& train_songs,
                     const std::vector<SongStems>& valid_songs, const FinetuneConfig& cfg,
                     std::ostream* metrics) {
    int target = -1;
    for (int s = 0; s < model.cfg.n_sources(); ++s)
        if (model.cfg.sources[static_cast<std::size_t>(s)] == cfg.target_source) target = s;
    if (target < 0) throw ConfigError("finetune: unknown target source " + cfg.target_source);

    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.epochs = cfg.epochs;
    tc.grad_clip_l2 = cfg.grad_clip_l2;
    tc.weight_decay = cfg.weight_decay;
    tc.batch_size = cfg.batch_size;
    tc.batches_per_epoch = cfg.batches_per_epoch;
    tc.excerpt_seconds = cfg.excerpt_seconds;
    tc.seed = cfg.seed;
    tc.remix = false;
    tc.rescale = false;
    tc.target_source = target;
    return train(model, train_songs, valid_songs, tc, metrics);
}

std::vector<SongStems> load_stem_dataset(const std::string& dir,
                                         const std::vector<std::string>& sources) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    std::vector<SongStems> songs;
    for (const auto& n : names) songs.push_back(read_song(dir + "/" + n, sources));
    if (songs.empty()) throw IoError("no songs found under " + dir);
    return songs;
}

}  // namespace stemsep
