#include "fffvdi/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fffvdi::config {
namespace {

const char kSchema[] =
#include "schema.inc"
    ;

bool has_type(const Json& v, const std::string& type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "boolean") return v.is_boolean();
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    if (type == "null") return v.is_null();
    throw config_error("schema: unsupported type '" + type + "'");
}

std::filesystem::path under(const std::filesystem::path& root, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : root / path;
}

}  // namespace

const std::string& schema_text() {
    static const std::string text(kSchema);
    return text;
}

void validate(const Json& doc, const Json& schema, const std::string& path) {
    if (schema.contains("type")) {
        const auto& t = schema["type"];
        bool ok = false;
        if (t.is_array()) {
            for (const auto& one : t) {
                ok = ok || has_type(doc, one.get<std::string>());
            }
        } else {
            ok = has_type(doc, t.get<std::string>());
        }
        require(ok, ErrorKind::Config, path + ": expected " + t.dump() + ", got " + doc.dump());
    }
    if (schema.contains("enum")) {
        bool found = false;
        for (const auto& option : schema["enum"]) {
            found = found || option == doc;
        }
        require(found, ErrorKind::Config, path + ": " + doc.dump() + " is not one of " + schema["enum"].dump());
    }
    if (doc.is_number()) {
        double v = doc.get<double>();
        if (schema.contains("minimum")) {
            require(v >= schema["minimum"].get<double>(), ErrorKind::Config,
                    path + ": " + doc.dump() + " < minimum " + schema["minimum"].dump());
        }
        if (schema.contains("maximum")) {
            require(v <= schema["maximum"].get<double>(), ErrorKind::Config,
                    path + ": " + doc.dump() + " > maximum " + schema["maximum"].dump());
        }
        if (schema.contains("exclusiveMinimum")) {
            require(v > schema["exclusiveMinimum"].get<double>(), ErrorKind::Config,
                    path + ": " + doc.dump() + " must exceed " + schema["exclusiveMinimum"].dump());
        }
        if (schema.contains("exclusiveMaximum")) {
            require(v < schema["exclusiveMaximum"].get<double>(), ErrorKind::Config,
                    path + ": " + doc.dump() + " must be below " + schema["exclusiveMaximum"].dump());
        }
    }
    if (doc.is_object()) {
        const Json empty = Json::object();
        const auto& props = schema.contains("properties") ? schema["properties"] : empty;
        bool closed = schema.contains("additionalProperties") && schema["additionalProperties"] == false;
        for (const auto& [key, value] : doc.items()) {
            if (props.contains(key)) {
                validate(value, props[key], path + "." + key);
            } else {
                require(!closed, ErrorKind::Config, path + ": unknown key '" + key + "'");
            }
        }
    }
    if (doc.is_array() && schema.contains("items")) {
        for (size_t i = 0; i < doc.size(); ++i) {
            validate(doc[i], schema["items"], path + "[" + std::to_string(i) + "]");
        }
    }
}

Json with_defaults(const Json& doc, const Json& schema) {
    Json out = doc;
    if (!out.is_object() || !schema.contains("properties")) {
        return out;
    }
    for (const auto& [key, sub] : schema["properties"].items()) {
        if (!out.contains(key) && sub.contains("default")) {
            out[key] = sub["default"];
        }
        if (out.contains(key) && out[key].is_object()) {
            out[key] = with_defaults(out[key], sub);
        }
    }
    return out;
}

std::string hash(const Json& doc) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : doc.dump()) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig from_json(const Json& input) {
    static const Json schema = Json::parse(schema_text());
    validate(input, schema);
    Json doc = with_defaults(input, schema);
    validate(doc, schema);

    RunConfig rc;
    rc.document = doc;
    rc.hash = hash(doc);
    rc.seed = doc["seed"].get<uint64_t>();
    rc.workers = doc["workers"].get<int>();
    if (const char* w = std::getenv("FFFVDI_WORKERS")) {
        try {
            rc.workers = std::stoi(w);
        } catch (const std::exception&) {
            throw config_error(std::string("FFFVDI_WORKERS is not an integer: ") + w);
        }
        require(rc.workers >= 1, ErrorKind::Config, "FFFVDI_WORKERS must be >= 1");
    }
    const auto& paths = doc["paths"];
    rc.output_root = paths["output_root"].get<std::string>();
    if (const char* root = std::getenv("FFFVDI_OUTPUT_ROOT"); root && *root) {
        rc.output_root = root;
    }
    rc.corpus_dir = under(rc.output_root, paths["corpus"].get<std::string>());
    rc.eval_dir = under(rc.output_root, paths["eval_corpus"].get<std::string>());
    rc.run_name = paths["run"].get<std::string>();

    const auto& c = doc["corpus"];
    const auto& ae = doc["autoencoder"];
    rc.corpus.frames = c["frames"];
    rc.corpus.height = c["height"];
    rc.corpus.width = c["width"];
    rc.corpus.latent_factor = ae["factor"];
    rc.corpus.shapes = c["shapes"];
    rc.corpus.max_shape_speed = c["max_shape_speed"];
    rc.corpus.background_speed = c["background_speed"];
    rc.corpus.texture_components = c["texture_components"];
    rc.corpus.texture_max_cycles = c["texture_max_cycles"];
    rc.corpus.texture_amplitude = c["texture_amplitude"];
    rc.corpus.fps = c["fps"];
    rc.corpus.validate();
    rc.train_clips = c["train_clips"];
    rc.eval_clips = c["eval_clips"];
    rc.train_seed = c["train_seed"];
    rc.eval_seed = c["eval_seed"];

    const auto& m = doc["masks"];
    rc.masks.min_coverage = m["min_coverage"];
    rc.masks.max_coverage = m["max_coverage"];
    rc.masks.max_step = m["max_step"];
    rc.masks.deform = m["deform"];
    rc.masks.validate();

    rc.autoencoder.latent_channels = ae["latent_channels"];
    rc.autoencoder.factor = ae["factor"];
    rc.autoencoder.widths = ae["widths"].get<std::vector<int>>();
    rc.autoencoder.kl_weight = ae["kl_weight"];
    rc.autoencoder.validate();
    rc.autoencoder_train.steps = ae["steps"];
    rc.autoencoder_train.batch = ae["batch"];
    rc.autoencoder_train.lr = ae["lr"];
    rc.autoencoder_train.seed = rc.seed;

    const auto& d = doc["denoiser"];
    rc.denoiser.latent_channels = rc.autoencoder.latent_channels;
    rc.denoiser.widths = d["widths"].get<std::vector<int>>();
    rc.denoiser.temporal_levels = d["temporal_levels"].get<std::vector<int>>();
    rc.denoiser.heads = d["heads"];
    rc.denoiser.time_dim = d["time_dim"];
    rc.denoiser.groups = d["groups"];
    rc.denoiser.max_frames = d["max_frames"];
    rc.denoiser.validate();
    require(rc.corpus.frames <= rc.denoiser.max_frames, ErrorKind::Config,
            "corpus.frames exceeds denoiser.max_frames");

    rc.dna.channels = rc.autoencoder.latent_channels;
    rc.dna.kernel = doc["dna"]["kernel"];
    rc.dna.max_offset = doc["dna"]["max_offset"];
    rc.dna.hidden = doc["dna"]["hidden"];
    rc.dna.validate();

    rc.schedule.steps = doc["schedule"]["steps"];
    rc.schedule.beta_start = doc["schedule"]["beta_start"];
    rc.schedule.beta_end = doc["schedule"]["beta_end"];
    diffusion::NoiseSchedule check(rc.schedule);

    auto phase = [](const Json& p) {
        PhaseConfig out;
        out.steps = p["steps"];
        out.batch = p["batch"];
        out.lr = p["lr"];
        out.freeze = unet::parse_freeze_policy(p["freeze_policy"].get<std::string>());
        return out;
    };
    rc.pretrain = phase(doc["pretrain"]);
    rc.finetune = phase(doc["finetune"]);
    rc.finetune_variant = doc["finetune"]["variant"];
    rc.ddim_steps = doc["inference"]["ddim_steps"];
    rc.inference_seed = doc["inference"]["seed"];
    return rc;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Config, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    Json doc;
    try {
        doc = Json::parse(ss.str());
    } catch (const Json::parse_error& e) {
        throw config_error(path.string() + ": " + e.what());
    }
    return from_json(doc);
}

}  // namespace fffvdi::config
