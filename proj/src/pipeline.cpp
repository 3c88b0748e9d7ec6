#include "patchseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "patchseg/errors.hpp"
#include "patchseg/nn/loss.hpp"
#include "patchseg/parallel.hpp"
#include "patchseg/rng.hpp"

namespace patchseg {

namespace {

// ------------------------------------------------------------ config text --

std::string bool_str(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config: invalid boolean for " + key + ": " + v);
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

std::string serialize_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    const auto& n = cfg.net;
    os << "num_classes = " << n.num_classes << "\n";
    os << "landmarks_per_axis = " << n.landmarks_per_axis << "\n";
    os << "use_3d = " << bool_str(n.use_3d) << "\n";
    os << "use_dist = " << bool_str(n.use_dist) << "\n";
    os << "use_prob = " << bool_str(n.use_prob) << "\n";
    os << "use_aux = " << bool_str(n.use_aux) << "\n";
    os << "dist_mode = " << (n.dist_mode == DistMode::conv2d ? "conv2d" : "vector_fc") << "\n";
    os << "use_rbf = " << bool_str(n.use_rbf) << "\n";
    os << "alpha = " << n.alpha << "\n";
    os << "aux_w_base = " << n.aux_w_base << "\n";
    os << "aux_w_dist = " << n.aux_w_dist << "\n";
    os << "dropout = " << n.dropout_p << "\n";
    os << "weight_decay = " << n.weight_decay << "\n";
    os << "conv1_ch = " << n.conv1_ch << "\n";
    os << "conv2_ch = " << n.conv2_ch << "\n";
    os << "mix_ch = " << n.mix_ch << "\n";
    os << "fc1_units = " << n.fc1_units << "\n";
    os << "fc2_units = " << n.fc2_units << "\n";
    os << "dist_conv_ch = " << n.dist_conv_ch << "\n";
    os << "dist_fc_units = " << n.dist_fc_units << "\n";
    os << "c3d_ch1 = " << n.c3d_ch1 << "\n";
    os << "c3d_ch2 = " << n.c3d_ch2 << "\n";
    os << "c3d_ch3 = " << n.c3d_ch3 << "\n";
    os << "c3d_ch4 = " << n.c3d_ch4 << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "batches_per_epoch = " << cfg.batches_per_epoch << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "sampling = " << (cfg.sampling == SamplingMode::natural ? "natural" : "class_uniform")
       << "\n";
    os << "augment = " << bool_str(cfg.augment) << "\n";
    os << "weighted_loss = " << bool_str(cfg.weighted_loss) << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "plane = "
       << (cfg.plane == Plane::axial ? "axial"
                                     : (cfg.plane == Plane::coronal ? "coronal" : "sagittal"))
       << "\n";
    os << "lr0 = " << cfg.lr0 << "\n";
    os << "momentum = " << cfg.momentum << "\n";
    os << "poly_power = " << cfg.poly_power << "\n";
    os << "atlas_epsilon = " << cfg.atlas_epsilon << "\n";
    os << "val_samples = " << cfg.val_samples << "\n";
    os << "out_dir = " << cfg.out_dir << "\n";
    os << "train_images = " << join(cfg.train_images) << "\n";
    os << "train_labels = " << join(cfg.train_labels) << "\n";
    os << "val_images = " << join(cfg.val_images) << "\n";
    os << "val_labels = " << join(cfg.val_labels) << "\n";
    return os.str();
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto& n = cfg.net;
        if (key == "num_classes") n.num_classes = std::stoi(val);
        else if (key == "landmarks_per_axis") n.landmarks_per_axis = std::stoi(val);
        else if (key == "use_3d") n.use_3d = parse_bool(val, key);
        else if (key == "use_dist") n.use_dist = parse_bool(val, key);
        else if (key == "use_prob") n.use_prob = parse_bool(val, key);
        else if (key == "use_aux") n.use_aux = parse_bool(val, key);
        else if (key == "dist_mode") {
            if (val == "conv2d") n.dist_mode = DistMode::conv2d;
            else if (val == "vector_fc") n.dist_mode = DistMode::vector_fc;
            else throw ValidationError("config: unknown dist_mode: " + val);
        } else if (key == "use_rbf") n.use_rbf = parse_bool(val, key);
        else if (key == "alpha") n.alpha = std::stod(val);
        else if (key == "aux_w_base") n.aux_w_base = std::stod(val);
        else if (key == "aux_w_dist") n.aux_w_dist = std::stod(val);
        else if (key == "dropout") n.dropout_p = std::stod(val);
        else if (key == "weight_decay") n.weight_decay = std::stod(val);
        else if (key == "conv1_ch") n.conv1_ch = std::stoi(val);
        else if (key == "conv2_ch") n.conv2_ch = std::stoi(val);
        else if (key == "mix_ch") n.mix_ch = std::stoi(val);
        else if (key == "fc1_units") n.fc1_units = std::stoi(val);
        else if (key == "fc2_units") n.fc2_units = std::stoi(val);
        else if (key == "dist_conv_ch") n.dist_conv_ch = std::stoi(val);
        else if (key == "dist_fc_units") n.dist_fc_units = std::stoi(val);
        else if (key == "c3d_ch1") n.c3d_ch1 = std::stoi(val);
        else if (key == "c3d_ch2") n.c3d_ch2 = std::stoi(val);
        else if (key == "c3d_ch3") n.c3d_ch3 = std::stoi(val);
        else if (key == "c3d_ch4") n.c3d_ch4 = std::stoi(val);
        else if (key == "epochs") cfg.epochs = std::stoull(val);
        else if (key == "batches_per_epoch") cfg.batches_per_epoch = std::stoull(val);
        else if (key == "batch_size") cfg.batch_size = std::stoull(val);
        else if (key == "sampling") {
            if (val == "natural") cfg.sampling = SamplingMode::natural;
            else if (val == "class_uniform") cfg.sampling = SamplingMode::class_uniform;
            else throw ValidationError("config: unknown sampling mode: " + val);
        } else if (key == "augment") cfg.augment = parse_bool(val, key);
        else if (key == "weighted_loss") cfg.weighted_loss = parse_bool(val, key);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "plane") {
            if (val == "axial") cfg.plane = Plane::axial;
            else if (val == "coronal") cfg.plane = Plane::coronal;
            else if (val == "sagittal") cfg.plane = Plane::sagittal;
            else throw ValidationError("config: unknown plane: " + val);
        } else if (key == "lr0") cfg.lr0 = std::stod(val);
        else if (key == "momentum") cfg.momentum = std::stod(val);
        else if (key == "poly_power") cfg.poly_power = std::stod(val);
        else if (key == "atlas_epsilon") cfg.atlas_epsilon = std::stod(val);
        else if (key == "val_samples") cfg.val_samples = std::stoull(val);
        else if (key == "out_dir") cfg.out_dir = val;
        else if (key == "train_images") cfg.train_images = split_list(val);
        else if (key == "train_labels") cfg.train_labels = split_list(val);
        else if (key == "val_images") cfg.val_images = split_list(val);
        else if (key == "val_labels") cfg.val_labels = split_list(val);
        else throw ValidationError("config: unknown key: " + key);
    }
    return cfg;
}

TrainConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), {});
    return parse_config_text(text);
}

// ------------------------------------------------------------- checkpoint --

namespace {

constexpr char kCkptMagic[9] = "PSCKPT01";

std::uint32_t crc32(const std::string& bytes) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (unsigned char b : bytes) c = table[(c ^ b) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class ByteReader {
public:
    ByteReader(std::string bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    template <typename T>
    T take() {
        if (pos_ + sizeof(T) > bytes_.size()) throw IoError("truncated checkpoint: " + path_);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string take_str(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw IoError("truncated checkpoint: " + path_);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void take_raw(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw IoError("truncated checkpoint: " + path_);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }
    const std::string& bytes() const { return bytes_; }
    const std::string& path() const { return path_; }

private:
    std::string bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

void write_tensor_list(std::string& out, const std::vector<NamedTensor>& list) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(list.size()));
    for (const auto& t : list) {
        put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out += t.name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) put<std::uint32_t>(out, d);
        out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
    }
}

std::vector<NamedTensor> read_tensor_list(ByteReader& r) {
    const auto count = r.take<std::uint32_t>();
    std::vector<NamedTensor> list(count);
    for (auto& t : list) {
        const auto nlen = r.take<std::uint16_t>();
        t.name = r.take_str(nlen);
        const auto rank = r.take<std::uint8_t>();
        if (rank > 5) throw IoError("checkpoint tensor rank out of range: " + r.path());
        t.dims.resize(rank);
        std::size_t total = 1;
        for (auto& d : t.dims) {
            d = r.take<std::uint32_t>();
            total *= d;
        }
        t.data.resize(total);
        r.take_raw(t.data.data(), total * sizeof(float));
    }
    return list;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::string out;
    out.append(kCkptMagic, 8);
    const std::string cfg = serialize_config(ckpt.config);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    write_tensor_list(out, ckpt.params);
    write_tensor_list(out, ckpt.velocities);
    put<std::uint32_t>(out, ckpt.epoch);
    put<double>(out, ckpt.norm.mean);
    put<double>(out, ckpt.norm.stddev);
    put<std::uint32_t>(out, crc32(out));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failure: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), {});
    if (bytes.size() < 12) throw IoError("truncated checkpoint: " + path.string());
    if (bytes.compare(0, 6, "PSCKPT") != 0) throw IoError("bad magic: " + path.string());
    if (bytes.compare(6, 2, "01") != 0) throw IoError("unsupported version: " + path.string());

    const std::string body = bytes.substr(0, bytes.size() - 4);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (crc32(body) != stored)
        throw IoError("checkpoint corrupt (crc mismatch): " + path.string());

    ByteReader r(body, path.string());
    r.take_str(8); // magic
    Checkpoint ckpt;
    const auto cfg_len = r.take<std::uint32_t>();
    ckpt.config = parse_config_text(r.take_str(cfg_len));
    ckpt.params = read_tensor_list(r);
    ckpt.velocities = read_tensor_list(r);
    ckpt.epoch = r.take<std::uint32_t>();
    ckpt.norm.mean = r.take<double>();
    ckpt.norm.stddev = r.take<double>();
    return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
    Model<float> model = build_model<float>(ckpt.config.net, ckpt.config.seed);
    auto params = model.graph.params();
    if (params.size() != ckpt.params.size())
        throw IoError("checkpoint tensor-count mismatch: model has " +
                      std::to_string(params.size()) + ", file has " +
                      std::to_string(ckpt.params.size()));
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : ckpt.params) by_name[t.name] = &t;
    for (auto& p : params) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) throw IoError("checkpoint missing tensor: " + p.name);
        if (it->second->data.size() != p.tensor->size())
            throw IoError("checkpoint tensor length mismatch: " + p.name);
        std::copy(it->second->data.begin(), it->second->data.end(), p.tensor->v.begin());
    }
    return model;
}

// -------------------------------------------------------------- training --

namespace {

std::uint64_t batch_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch) {
    return Prng::mix(seed ^ Prng::mix((epoch << 32) ^ batch));
}

std::vector<float> inverse_frequency_weights(const std::vector<LabelMap>& maps, int num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    std::size_t total = 0;
    for (const auto& m : maps) {
        for (auto l : m.labels) ++counts[l];
        total += m.voxels();
    }
    std::vector<float> w(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        if (counts[c] == 0)
            throw ValidationError("weighted loss: class " + std::to_string(c) +
                                  " absent from the training label maps");
        w[c] = static_cast<float>(static_cast<double>(total) /
                                  (static_cast<double>(num_classes) * counts[c]));
    }
    return w;
}

int argmax_lowest(const float* v, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// Mean per-class dice over a fixed voxel subsample (classes 1.. present in
// prediction or truth).
double subsample_dice(const std::vector<std::uint16_t>& pred,
                      const std::vector<std::uint16_t>& truth, int num_classes) {
    std::vector<std::size_t> np(num_classes, 0), nt(num_classes, 0), inter(num_classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++np[pred[i]];
        ++nt[truth[i]];
        if (pred[i] == truth[i]) ++inter[pred[i]];
    }
    double sum = 0.0;
    int valid = 0;
    for (int c = 1; c < num_classes; ++c) {
        if (np[c] + nt[c] == 0) continue;
        sum += 2.0 * static_cast<double>(inter[c]) / static_cast<double>(np[c] + nt[c]);
        ++valid;
    }
    return valid ? sum / valid : 0.0;
}

} // namespace

TrainResult train_on_data(const TrainConfig& cfg, const std::vector<Volume>& train_images,
                          const std::vector<LabelMap>& train_labels,
                          const std::vector<Volume>& val_images,
                          const std::vector<LabelMap>& val_labels) {
    if (cfg.epochs < 1) throw ValidationError("train: epochs must be at least 1");
    if (cfg.batch_size < 1) throw ValidationError("train: batch size must be at least 1");
    if (train_images.empty() || train_images.size() != train_labels.size())
        throw ValidationError("train: training volumes and label maps must pair up");
    if (val_images.size() != val_labels.size())
        throw ValidationError("train: validation volumes and label maps must pair up");
    const Dims dims = train_images.front().dims;
    for (const auto& v : train_images)
        if (v.dims != dims)
            throw ValidationError("train: all training volumes must share one grid size");
    for (const auto& m : train_labels)
        if (m.dims != dims) throw ValidationError("train: label map dimension mismatch");

    // Normalization statistics come from the training set only.
    const NormStats norm = compute_norm_stats(train_images);
    std::vector<Volume> train_norm, val_norm;
    train_norm.reserve(train_images.size());
    for (const auto& v : train_images) train_norm.push_back(normalize(v, norm));
    val_norm.reserve(val_images.size());
    for (const auto& v : val_images) val_norm.push_back(normalize(v, norm));

    // Spatial inputs are likewise built from training data only.
    LandmarkGrid grid;
    if (cfg.net.use_dist) grid = build_grid(dims, cfg.net.landmarks_per_axis);
    ProbAtlas atlas;
    if (cfg.net.use_prob) atlas = build_atlas(train_labels, cfg.atlas_epsilon);

    std::vector<float> class_weights;
    if (cfg.weighted_loss)
        class_weights = inverse_frequency_weights(train_labels, cfg.net.num_classes);
    const std::vector<float>* weights_ptr = cfg.weighted_loss ? &class_weights : nullptr;

    Model<float> model = build_model<float>(cfg.net, cfg.seed);
    auto params = model.graph.params();
    nn::OptimConfig optim_cfg{cfg.lr0, cfg.momentum, cfg.net.weight_decay, cfg.poly_power,
                              cfg.epochs};
    nn::SgdOptimizer<float> optimizer(optim_cfg, params);

    SampleOptions opt;
    opt.plane = cfg.plane;
    opt.with_3d = cfg.net.use_3d;
    opt.with_dist = cfg.net.use_dist;
    opt.with_atlas = cfg.net.use_prob;

    // A fixed validation subsample keeps epochs fast; full-volume evaluation
    // is reserved for the final test pass.
    std::vector<SampledCenter> val_centers;
    if (!val_images.empty() && cfg.val_samples > 0)
        val_centers = sample_centers(val_labels, cfg.val_samples, SamplingMode::natural,
                                     Prng::mix(cfg.seed ^ 0x5A17));

    TrainResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = nn::poly_lr(epoch, optim_cfg);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
            const std::uint64_t bseed = batch_stream(cfg.seed, epoch, b);
            SampleOptions batch_opt = opt;
            batch_opt.augmented = cfg.augment;
            const auto batch =
                sample_batch(train_norm, train_labels, cfg.batch_size, cfg.sampling, bseed,
                             batch_opt, cfg.net.use_dist ? &grid : nullptr,
                             cfg.net.use_prob ? &atlas : nullptr);
            std::vector<std::uint16_t> targets(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) targets[i] = batch[i].target;

            try {
                forward_batch(model, std::span<const PatchSample>(batch), nn::Mode::train, bseed);
                optimizer.zero_grads(params);
                double loss = nn::softmax_cross_entropy_batch(model.graph.tensor(model.logits),
                                                              targets, weights_ptr, 1.0);
                std::vector<int> seeded{model.logits};
                if (model.aux_base_logits >= 0 && cfg.net.aux_w_base > 0.0) {
                    loss += cfg.net.aux_w_base *
                            nn::softmax_cross_entropy_batch(
                                model.graph.tensor(model.aux_base_logits), targets, weights_ptr,
                                cfg.net.aux_w_base);
                    seeded.push_back(model.aux_base_logits);
                }
                if (model.aux_dist_logits >= 0 && cfg.net.aux_w_dist > 0.0) {
                    loss += cfg.net.aux_w_dist *
                            nn::softmax_cross_entropy_batch(
                                model.graph.tensor(model.aux_dist_logits), targets, weights_ptr,
                                cfg.net.aux_w_dist);
                    seeded.push_back(model.aux_dist_logits);
                }
                if (!std::isfinite(loss)) throw ValidationError("non-finite training loss");
                model.graph.backward(seeded, nn::Mode::train, bseed);
                optimizer.step(params, lr);
                epoch_loss += loss;
            } catch (const ValidationError& e) {
                throw ValidationError("training aborted at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(b) + ": " + e.what());
            }
        }

        double val_dice = 0.0;
        if (!val_centers.empty()) {
            std::vector<std::uint16_t> pred(val_centers.size()), truth(val_centers.size());
            const std::size_t chunk = 512;
            std::vector<PatchSample> samples;
            for (std::size_t lo = 0; lo < val_centers.size(); lo += chunk) {
                const std::size_t hi = std::min(val_centers.size(), lo + chunk);
                samples.assign(hi - lo, PatchSample{});
                for (std::size_t i = lo; i < hi; ++i) {
                    const auto& c = val_centers[i];
                    samples[i - lo] = build_sample(val_norm[c.volume_index], c.center, c.target,
                                                   opt, cfg.net.use_dist ? &grid : nullptr,
                                                   cfg.net.use_prob ? &atlas : nullptr, nullptr);
                }
                forward_batch(model, std::span<const PatchSample>(samples), nn::Mode::eval, 0);
                const auto& probs = model.graph.tensor(model.probs);
                const int ell = cfg.net.num_classes;
                for (std::size_t i = lo; i < hi; ++i) {
                    pred[i] = static_cast<std::uint16_t>(
                        argmax_lowest(probs.v.data() + (i - lo) * ell, ell));
                    truth[i] = val_centers[i].target;
                }
            }
            val_dice = subsample_dice(pred, truth, cfg.net.num_classes);
        }

        const double mean_loss =
            cfg.batches_per_epoch ? epoch_loss / static_cast<double>(cfg.batches_per_epoch) : 0.0;
        result.log.push_back({epoch, lr, mean_loss, val_dice});
    }

    auto& ckpt = result.checkpoint;
    ckpt.config = cfg;
    ckpt.epoch = static_cast<std::uint32_t>(cfg.epochs);
    ckpt.norm = norm;
    const auto& velocities = optimizer.velocities();
    for (std::size_t i = 0; i < params.size(); ++i) {
        NamedTensor pt;
        pt.name = params[i].name;
        for (auto d : params[i].tensor->shape) pt.dims.push_back(static_cast<std::uint32_t>(d));
        pt.data = params[i].tensor->v;
        ckpt.params.push_back(std::move(pt));

        NamedTensor vt;
        vt.name = params[i].name;
        vt.dims = ckpt.params.back().dims;
        vt.data = velocities[i];
        ckpt.velocities.push_back(std::move(vt));
    }
    return result;
}

TrainResult train_model(const TrainConfig& cfg) {
    auto load_all = [](const std::vector<std::string>& paths, auto loader) {
        std::vector<decltype(loader(std::filesystem::path{}))> out;
        out.reserve(paths.size());
        for (const auto& p : paths) out.push_back(loader(p));
        return out;
    };
    const auto train_images =
        load_all(cfg.train_images, [](const std::filesystem::path& p) { return load_volume(p); });
    const auto train_labels = load_all(
        cfg.train_labels, [](const std::filesystem::path& p) { return load_labelmap(p); });
    const auto val_images =
        load_all(cfg.val_images, [](const std::filesystem::path& p) { return load_volume(p); });
    const auto val_labels =
        load_all(cfg.val_labels, [](const std::filesystem::path& p) { return load_labelmap(p); });

    TrainResult result = train_on_data(cfg, train_images, train_labels, val_images, val_labels);
    const std::filesystem::path out_dir(cfg.out_dir);
    std::filesystem::create_directories(out_dir);
    save_checkpoint(out_dir / "checkpoint.ckpt", result.checkpoint);
    write_train_log_csv(out_dir / "train_log.csv", result.log);
    return result;
}

void write_train_log_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path.string());
    f << "epoch,lr,train_loss,val_dice\n";
    for (const auto& r : log)
        f << r.epoch << ',' << fmt_double(r.lr) << ',' << fmt_double(r.train_loss) << ','
          << fmt_double(r.val_dice) << '\n';
    if (!f) throw IoError("write failure: " + path.string());
}

// -------------------------------------------------------------- inference --

LabelMap predict_with_model(Model<float>& model, const NormStats& norm, const Volume& raw,
                            const ProbAtlas* atlas, const LandmarkGrid* grid, Plane plane,
                            bool masked) {
    const auto& cfg = model.cfg;
    if (cfg.use_prob) {
        if (!atlas) throw ValidationError("predict: the probability branch requires an atlas");
        if (atlas->dims != raw.dims)
            throw ValidationError("predict: atlas dimensions do not match the volume");
    }
    if (cfg.use_dist) {
        if (!grid) throw ValidationError("predict: the distance branch requires a landmark grid");
        if (grid->dims != raw.dims)
            throw ValidationError("predict: landmark grid dimensions do not match the volume");
    }

    const Volume vol = normalize(raw, norm);
    LabelMap out;
    out.dims = raw.dims;
    out.spacing = raw.spacing;
    out.num_classes = static_cast<std::uint16_t>(cfg.num_classes);
    out.labels.assign(out.voxels(), 0);

    std::vector<std::size_t> voxels;
    voxels.reserve(out.voxels());
    for (std::size_t i = 0; i < out.voxels(); ++i)
        if (!masked || raw.data[i] != 0.0f) voxels.push_back(i);

    SampleOptions opt;
    opt.plane = plane;
    opt.with_3d = cfg.use_3d;
    opt.with_dist = cfg.use_dist;
    opt.with_atlas = cfg.use_prob;

    const std::size_t chunk = 512;
    const std::uint32_t nx = raw.dims[0], ny = raw.dims[1];
    std::vector<PatchSample> samples;
    for (std::size_t lo = 0; lo < voxels.size(); lo += chunk) {
        const std::size_t hi = std::min(voxels.size(), lo + chunk);
        samples.assign(hi - lo, PatchSample{});
        parallel_for(hi - lo, [&](std::size_t a, std::size_t b) {
            for (std::size_t t = a; t < b; ++t) {
                const std::size_t lin = voxels[lo + t];
                const std::array<std::uint32_t, 3> center{
                    static_cast<std::uint32_t>(lin % nx),
                    static_cast<std::uint32_t>((lin / nx) % ny),
                    static_cast<std::uint32_t>(lin / nx / ny)};
                samples[t] = build_sample(vol, center, 0, opt, grid, atlas, nullptr);
            }
        });
        forward_batch(model, std::span<const PatchSample>(samples), nn::Mode::eval, 0);
        const auto& probs = model.graph.tensor(model.probs);
        for (std::size_t t = 0; t < hi - lo; ++t)
            out.labels[voxels[lo + t]] = static_cast<std::uint16_t>(
                argmax_lowest(probs.v.data() + t * cfg.num_classes, cfg.num_classes));
    }
    return out;
}

LabelMap predict_volume(const Checkpoint& ckpt, const Volume& raw, const ProbAtlas* atlas,
                        const LandmarkGrid* grid, bool masked) {
    Model<float> model = model_from_checkpoint(ckpt);
    return predict_with_model(model, ckpt.norm, raw, atlas, grid, ckpt.config.plane, masked);
}

} // namespace patchseg
