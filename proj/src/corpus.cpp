#include "fffvdi/corpus.hpp"

#include "fffvdi/archive.hpp"
#include "fffvdi/image_io.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace fffvdi::corpus {
namespace {

namespace fs = std::filesystem;

std::string numbered(const char* stem, int64_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04lld.png", stem, static_cast<long long>(i));
    return buf;
}

torch::Tensor read_numbered(const fs::path& dir, const char* stem) {
    std::vector<torch::Tensor> items;
    for (int64_t i = 0; fs::exists(dir / numbered(stem, i)); ++i) {
        items.push_back(io::read_png(dir / numbered(stem, i)));
    }
    require(!items.empty(), ErrorKind::Data, "no " + std::string(stem) + "_*.png files in " + dir.string());
    return torch::stack(items);
}

std::string kind_name(MaskKind k) { return k == MaskKind::Stationary ? "stationary" : "object"; }
std::string family_name(datagen::StrokeFamily f) { return f == datagen::StrokeFamily::Rectangle ? "rectangle" : "brush"; }

}  // namespace

config::Json Manifest::to_json() const {
    config::Json list = config::Json::array();
    for (const auto& c : clips) {
        list.push_back({{"id", c.id},
                        {"seed", c.seed},
                        {"mask_seed", c.mask_seed},
                        {"mask_kind", kind_name(c.mask_kind)},
                        {"mask_family", family_name(c.family)}});
    }
    return {{"data_config", data_config},
            {"corpus_hash", corpus_hash},
            {"config_hash", config_hash},
            {"seed", seed},
            {"clips", list}};
}

Manifest Manifest::from_json(const config::Json& j) {
    try {
        Manifest m;
        m.data_config = j.at("data_config");
        m.corpus_hash = j.at("corpus_hash");
        m.config_hash = j.at("config_hash");
        m.seed = j.at("seed");
        for (const auto& c : j.at("clips")) {
            ClipEntry e;
            e.id = c.at("id");
            e.seed = c.at("seed");
            e.mask_seed = c.at("mask_seed");
            e.mask_kind = c.at("mask_kind") == "object" ? MaskKind::Object : MaskKind::Stationary;
            e.family = c.at("mask_family") == "brush" ? datagen::StrokeFamily::Brush : datagen::StrokeFamily::Rectangle;
            m.clips.push_back(e);
        }
        return m;
    } catch (const config::Json::exception& e) {
        throw data_error(std::string("corpus manifest: ") + e.what());
    }
}

config::Json data_section(const config::RunConfig& rc) {
    return {{"corpus", rc.document["corpus"]}, {"masks", rc.document["masks"]}, {"factor", rc.corpus.latent_factor}};
}

std::vector<ClipEntry> plan(int clips, uint64_t seed) {
    std::vector<ClipEntry> out;
    for (int i = 0; i < clips; ++i) {
        ClipEntry e;
        char id[32];
        std::snprintf(id, sizeof id, "clip_%04d", i);
        e.id = id;
        e.seed = seed + static_cast<uint64_t>(i);
        e.mask_seed = (seed + static_cast<uint64_t>(i)) * 2654435761ull + 17;
        e.mask_kind = i % 2 == 0 ? MaskKind::Stationary : MaskKind::Object;
        e.family = (i / 2) % 2 == 0 ? datagen::StrokeFamily::Rectangle : datagen::StrokeFamily::Brush;
        out.push_back(e);
    }
    return out;
}

MaskSequence make_mask(const ClipEntry& entry, const datagen::CorpusConfig& cfg, const datagen::MaskConfig& masks) {
    auto mc = masks;
    mc.family = entry.family;
    if (entry.mask_kind == MaskKind::Stationary) {
        return datagen::gen_stationary_mask(entry.mask_seed, cfg.frames, cfg.height, cfg.width, mc);
    }
    return datagen::gen_object_mask(entry.mask_seed, cfg.frames, cfg.height, cfg.width, mc);
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) {
                            failure = std::current_exception();
                        }
                        next = n;
                    }
                }
            });
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

void write_frames(const fs::path& dir, const torch::Tensor& frames) {
    fs::create_directories(dir);
    for (int64_t i = 0; i < frames.size(0); ++i) {
        io::write_rgb_png(dir / numbered("frame", i), frames[i]);
    }
}

void write_masks(const fs::path& dir, const torch::Tensor& masks) {
    fs::create_directories(dir);
    for (int64_t i = 0; i < masks.size(0); ++i) {
        io::write_mask_png(dir / numbered("mask", i), masks[i]);
    }
}

torch::Tensor read_frames(const fs::path& dir) { return read_numbered(dir, "frame"); }

torch::Tensor read_masks(const fs::path& dir) {
    auto m = read_numbered(dir, "mask");
    require(m.size(1) == 1, ErrorKind::Data, "masks in " + dir.string() + " must be grayscale");
    return (m > 0.5).to(torch::kFloat32);
}

void write_ground_truth(const fs::path& file, const datagen::GroundTruth& gt) {
    archive::Archive a;
    a.arrays["flows"] = gt.flows.permute({0, 2, 3, 1}).contiguous();
    a.arrays["flows_backward"] = gt.flows_backward.permute({0, 2, 3, 1}).contiguous();
    a.arrays["visibility"] = gt.visibility.squeeze(1).contiguous();
    a.arrays["background"] = gt.background.permute({0, 2, 3, 1}).contiguous();
    archive::save(file, a);
}

datagen::GroundTruth read_ground_truth(const fs::path& file) {
    auto a = archive::load(file);
    auto get = [&](const std::string& name) {
        auto it = a.arrays.find(name);
        require(it != a.arrays.end(), ErrorKind::Data, file.string() + ": missing array '" + name + "'");
        return it->second.to(torch::kFloat32);
    };
    datagen::GroundTruth gt;
    gt.flows = get("flows").permute({0, 3, 1, 2}).contiguous();
    gt.flows_backward = get("flows_backward").permute({0, 3, 1, 2}).contiguous();
    gt.visibility = get("visibility").unsqueeze(1).contiguous();
    gt.background = get("background").permute({0, 3, 1, 2}).contiguous();
    return gt;
}

Manifest generate(const fs::path& out, const config::RunConfig& rc, int clips, uint64_t seed, bool force,
                  int workers) {
    require(clips >= 1, ErrorKind::Config, "gen-data: --clips must be >= 1");
    if (fs::exists(out) && !fs::is_empty(out)) {
        require(force, ErrorKind::Config, "gen-data: " + out.string() + " is not empty (use --force)");
        for (const auto& entry : fs::directory_iterator(out)) {
            auto name = entry.path().filename().string();
            if (name == "corpus.json" || name.rfind("clip_", 0) == 0) {
                fs::remove_all(entry.path());
            }
        }
    }
    fs::create_directories(out);

    Manifest m;
    m.data_config = data_section(rc);
    m.config_hash = rc.hash;
    m.seed = seed;
    m.clips = plan(clips, seed);
    m.corpus_hash = config::hash({{"data", m.data_config}, {"seed", seed}, {"clips", clips}});
    parallel_for(clips, workers, [&](int i) {
        const auto& e = m.clips[i];
        auto [clip, gt] = datagen::gen_clip(e.seed, rc.corpus);
        auto masks = make_mask(e, rc.corpus, rc.masks);
        auto dir = out / e.id;
        write_frames(dir, clip.frames);
        write_masks(dir, masks.masks);
        write_ground_truth(dir / "gt.npz", gt);
    });

    auto tmp = out / "corpus.json.tmp";
    {
        std::ofstream f(tmp);
        f << m.to_json().dump(2) << "\n";
        require(f.good(), ErrorKind::Data, "cannot write " + tmp.string());
    }
    fs::rename(tmp, out / "corpus.json");
    return m;
}

Manifest read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "corpus.json");
    require(in.good(), ErrorKind::Data, "no corpus.json in " + dir.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return Manifest::from_json(config::Json::parse(ss.str()));
    } catch (const config::Json::parse_error& e) {
        throw data_error(dir.string() + "/corpus.json: " + e.what());
    }
}

ClipData load_clip(const fs::path& dir, const std::string& id) {
    ClipData d;
    d.id = id;
    d.clip.frames = read_frames(dir);
    require(d.clip.frames.size(1) == 3, ErrorKind::Data, "frames in " + dir.string() + " must be RGB");
    d.masks.masks = read_masks(dir);
    require(d.masks.masks.size(0) == d.clip.frames.size(0), ErrorKind::Data,
            dir.string() + ": mask/frame count mismatch");
    d.gt = read_ground_truth(dir / "gt.npz");
    return d;
}

std::vector<ClipData> load(const fs::path& dir) {
    auto m = read_manifest(dir);
    std::vector<ClipData> out;
    for (const auto& e : m.clips) {
        out.push_back(load_clip(dir / e.id, e.id));
    }
    return out;
}

}  // namespace fffvdi::corpus
