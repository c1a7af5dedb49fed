#include "scopeformer/config.hpp"

#include <fstream>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "scopeformer/checkpoint.hpp"

namespace scopeformer {

namespace {

using json = nlohmann::json;

/// Typed, path-aware access to one JSON object.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!allowed.count(k)) throw ConfigError(child(k), "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  Reader object(const char* key) const { return Reader(j_.at(key), child(key)); }

  void read(const char* key, std::size_t& out) const {
    if (!has(key)) return;
    out = as_size(j_.at(key), child(key));
  }
  void read(const char* key, std::uint64_t& out, int) const {
    if (!has(key)) return;
    out = as_size(j_.at(key), child(key));
  }
  void read(const char* key, double& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(child(key), "expected a number");
    out = v.get<double>();
  }
  void read(const char* key, bool& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(child(key), "expected true or false");
    out = v.get<bool>();
  }
  void read(const char* key, std::string& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(child(key), "expected a string");
    out = v.get<std::string>();
  }

  static std::uint64_t as_size(const json& v, const std::string& path) {
    if (!v.is_number_unsigned()) throw ConfigError(path, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

 private:
  const json& j_;
  std::string path_;
};

template <class F>
auto parse_enum(const std::string& path, const std::string& value, F parse) {
  try {
    return parse(value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

std::vector<StageSpec> read_stages(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of stages");
  std::vector<StageSpec> stages;
  for (std::size_t i = 0; i < j.size(); ++i) {
    Reader r(j[i], path + "[" + std::to_string(i) + "]");
    r.allow({"out_channels", "stride", "blocks"});
    StageSpec s;
    if (!r.has("out_channels")) throw ConfigError(r.child("out_channels"), "required");
    r.read("out_channels", s.out_channels);
    r.read("stride", s.stride);
    r.read("blocks", s.blocks);
    stages.push_back(s);
  }
  return stages;
}

json write_stages(const std::vector<StageSpec>& stages) {
  json out = json::array();
  for (const auto& s : stages) {
    out.push_back({{"out_channels", s.out_channels}, {"stride", s.stride}, {"blocks", s.blocks}});
  }
  return out;
}

BackboneConfig read_backbone(const Reader& r) {
  BackboneConfig b;
  r.allow({"kernel_size", "stages", "seed", "pretraining_tag", "trainable"});
  r.read("kernel_size", b.kernel_size);
  if (!r.has("stages")) throw ConfigError(r.child("stages"), "required");
  b.stages = read_stages(r.raw("stages"), r.child("stages"));
  r.read("seed", b.seed, 0);
  r.read("pretraining_tag", b.pretraining_tag);
  r.read("trainable", b.trainable);
  return b;
}

ScopeformerConfig read_model(const Reader& r) {
  ScopeformerConfig c;
  r.allow({"mode", "image_size", "image_channels", "patch_size", "n_backbones", "backbone",
           "backbones", "backbone_seeds", "pretraining_tags", "trainable", "reduce_channels", "vit"});
  if (r.has("mode")) {
    std::string m;
    r.read("mode", m);
    c.mode = parse_enum(r.child("mode"), m, parse_mode);
  }
  r.read("image_size", c.image_size);
  r.read("image_channels", c.image_channels);
  r.read("patch_size", c.patch_size);
  r.read("reduce_channels", c.ensemble.reduce_channels);

  if (r.has("backbones") && (r.has("backbone") || r.has("n_backbones"))) {
    throw ConfigError(r.child("backbones"), "use either 'backbones' or 'n_backbones' + 'backbone'");
  }
  if (r.has("backbones")) {
    const auto& list = r.raw("backbones");
    if (!list.is_array()) throw ConfigError(r.child("backbones"), "expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      auto b = read_backbone(Reader(list[i], r.child("backbones") + "[" + std::to_string(i) + "]"));
      b.input_channels = c.image_channels;
      c.ensemble.backbones.push_back(std::move(b));
    }
    for (const char* k : {"backbone_seeds", "pretraining_tags", "trainable"}) {
      if (r.has(k)) throw ConfigError(r.child(k), "set per entry of 'backbones' instead");
    }
  } else {
    std::size_t n = 0;
    r.read("n_backbones", n);
    if (n > 0 && !r.has("backbone")) throw ConfigError(r.child("backbone"), "required when n_backbones > 0");
    BackboneConfig tmpl;
    if (r.has("backbone")) {
      const Reader br = r.object("backbone");
      br.allow({"kernel_size", "stages"});
      br.read("kernel_size", tmpl.kernel_size);
      if (!br.has("stages")) throw ConfigError(br.child("stages"), "required");
      tmpl.stages = read_stages(br.raw("stages"), br.child("stages"));
    }
    tmpl.input_channels = c.image_channels;
    if (n > 0) tmpl.validate(r.child("backbone"));
    for (std::size_t i = 0; i < n; ++i) {
      BackboneConfig b = tmpl;
      b.seed = i + 1;
      c.ensemble.backbones.push_back(std::move(b));
    }
    if (r.has("backbone_seeds")) {
      const auto& seeds = r.raw("backbone_seeds");
      if (!seeds.is_array() || seeds.size() != n) {
        throw ConfigError(r.child("backbone_seeds"), "expected an array of n_backbones integers");
      }
      for (std::size_t i = 0; i < n; ++i) {
        c.ensemble.backbones[i].seed =
            Reader::as_size(seeds[i], r.child("backbone_seeds") + "[" + std::to_string(i) + "]");
      }
    }
    if (r.has("pretraining_tags")) {
      const auto& tags = r.raw("pretraining_tags");
      if (!tags.is_array() || tags.size() != n) {
        throw ConfigError(r.child("pretraining_tags"), "expected an array of n_backbones strings");
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (!tags[i].is_string()) {
          throw ConfigError(r.child("pretraining_tags") + "[" + std::to_string(i) + "]", "expected a string");
        }
        c.ensemble.backbones[i].pretraining_tag = tags[i].get<std::string>();
      }
    }
    if (r.has("trainable")) {
      const auto& t = r.raw("trainable");
      if (t.is_boolean()) {
        for (auto& b : c.ensemble.backbones) b.trainable = t.get<bool>();
      } else if (t.is_array() && t.size() == n) {
        for (std::size_t i = 0; i < n; ++i) {
          if (!t[i].is_boolean()) {
            throw ConfigError(r.child("trainable") + "[" + std::to_string(i) + "]", "expected true or false");
          }
          c.ensemble.backbones[i].trainable = t[i].get<bool>();
        }
      } else {
        throw ConfigError(r.child("trainable"), "expected a bool or an array of n_backbones bools");
      }
    }
  }

  if (r.has("vit")) {
    const Reader v = r.object("vit");
    v.allow({"depth", "dim", "heads", "mlp_ratio", "dropout", "num_labels", "use_class_token", "seed"});
    v.read("depth", c.vit.depth);
    v.read("dim", c.vit.latent_dim);
    v.read("heads", c.vit.heads);
    v.read("mlp_ratio", c.vit.mlp_ratio);
    v.read("dropout", c.vit.dropout);
    v.read("num_labels", c.vit.num_labels);
    v.read("use_class_token", c.vit.use_class_token);
    v.read("seed", c.vit_seed, 0);
  }
  c.validate("model");
  return c;
}

bool homogeneous(const EnsembleConfig& e) {
  for (const auto& b : e.backbones) {
    if (b.stages != e.backbones.front().stages || b.kernel_size != e.backbones.front().kernel_size) return false;
  }
  return true;
}

json write_model(const ScopeformerConfig& c) {
  json j;
  j["mode"] = mode_name(c.mode);
  j["image_size"] = c.image_size;
  j["image_channels"] = c.image_channels;
  j["patch_size"] = c.patch_size;
  j["reduce_channels"] = c.ensemble.reduce_channels;
  const auto& bbs = c.ensemble.backbones;
  if (homogeneous(c.ensemble)) {
    j["n_backbones"] = bbs.size();
    if (!bbs.empty()) {
      j["backbone"] = {{"kernel_size", bbs.front().kernel_size}, {"stages", write_stages(bbs.front().stages)}};
      json seeds = json::array(), tags = json::array(), trainable = json::array();
      for (const auto& b : bbs) {
        seeds.push_back(b.seed);
        tags.push_back(b.pretraining_tag);
        trainable.push_back(b.trainable);
      }
      j["backbone_seeds"] = seeds;
      j["pretraining_tags"] = tags;
      j["trainable"] = trainable;
    }
  } else {
    json list = json::array();
    for (const auto& b : bbs) {
      list.push_back({{"kernel_size", b.kernel_size},
                      {"stages", write_stages(b.stages)},
                      {"seed", b.seed},
                      {"pretraining_tag", b.pretraining_tag},
                      {"trainable", b.trainable}});
    }
    j["backbones"] = list;
  }
  j["vit"] = {{"depth", c.vit.depth},
              {"dim", c.vit.latent_dim},
              {"heads", c.vit.heads},
              {"mlp_ratio", c.vit.mlp_ratio},
              {"dropout", c.vit.dropout},
              {"num_labels", c.vit.num_labels},
              {"use_class_token", c.vit.use_class_token},
              {"seed", c.vit_seed}};
  return j;
}

json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

ScopeformerConfig parse_model_config(const std::string& json_text) {
  return read_model(Reader(parse_text(json_text), "model"));
}

std::string model_config_to_json(const ScopeformerConfig& config) { return write_model(config).dump(); }

std::uint64_t config_digest(const ScopeformerConfig& config) {
  const std::string text = model_config_to_json(config);
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

RunConfig parse_run_config(const std::string& json_text) {
  const json root = parse_text(json_text);
  const Reader r(root, "");
  r.allow({"model", "train", "data", "loss"});
  RunConfig c;
  if (!r.has("model")) throw ConfigError("model", "required");
  c.model = read_model(r.object("model"));

  if (r.has("train")) {
    const Reader t = r.object("train");
    t.allow({"optimizer", "lr", "beta1", "beta2", "eps", "momentum", "grad_clip", "batch_size", "steps",
             "seed", "eval_every", "ckpt_every", "ckpt_dir", "history_csv", "accuracy"});
    auto& tc = c.train;
    if (t.has("optimizer")) {
      std::string name;
      t.read("optimizer", name);
      tc.optimizer.kind = parse_enum(t.child("optimizer"), name, parse_optimizer);
    }
    t.read("lr", tc.optimizer.lr);
    t.read("beta1", tc.optimizer.beta1);
    t.read("beta2", tc.optimizer.beta2);
    t.read("eps", tc.optimizer.eps);
    t.read("momentum", tc.optimizer.momentum);
    t.read("grad_clip", tc.optimizer.grad_clip);
    t.read("batch_size", tc.batch_size);
    t.read("steps", tc.steps);
    t.read("seed", tc.seed, 0);
    t.read("eval_every", tc.eval_every);
    t.read("ckpt_every", tc.ckpt_every);
    t.read("ckpt_dir", tc.ckpt_dir);
    t.read("history_csv", tc.history_csv);
    if (t.has("accuracy")) {
      std::string name;
      t.read("accuracy", name);
      tc.accuracy_mode = parse_enum(t.child("accuracy"), name, parse_accuracy_mode);
    }
    if (tc.batch_size == 0) throw ConfigError(t.child("batch_size"), "must be >= 1");
    if (!(tc.optimizer.lr >= 0.0)) throw ConfigError(t.child("lr"), "must be >= 0");
    if (tc.optimizer.grad_clip < 0.0) throw ConfigError(t.child("grad_clip"), "must be >= 0");
  }

  if (r.has("loss")) {
    const Reader l = r.object("loss");
    l.allow({"weights", "eps"});
    if (l.has("weights")) {
      const auto& w = l.raw("weights");
      if (!w.is_array()) throw ConfigError(l.child("weights"), "expected an array of numbers");
      c.train.loss_weights.clear();
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (!w[i].is_number() || w[i].get<double>() < 0.0) {
          throw ConfigError(l.child("weights") + "[" + std::to_string(i) + "]", "expected a number >= 0");
        }
        c.train.loss_weights.push_back(w[i].get<double>());
      }
    }
    l.read("eps", c.train.loss_eps);
    if (!(c.train.loss_eps > 0.0 && c.train.loss_eps < 0.5)) throw ConfigError(l.child("eps"), "must be in (0, 0.5)");
  }
  if (c.train.loss_weights.size() != c.model.vit.num_labels) {
    throw ConfigError("loss.weights", "expected " + std::to_string(c.model.vit.num_labels) + " entries, got " +
                                          std::to_string(c.train.loss_weights.size()));
  }

  if (r.has("data")) {
    const Reader d = r.object("data");
    d.allow({"manifest", "val_manifest", "synth"});
    d.read("manifest", c.data.manifest);
    d.read("val_manifest", c.data.val_manifest);
    if (d.has("synth")) {
      const Reader s = d.object("synth");
      s.allow({"dir", "count", "val_count", "size", "seed", "positive_rate", "format"});
      SynthConfig sc;
      s.read("dir", sc.dir);
      s.read("count", sc.count);
      s.read("val_count", sc.val_count);
      s.read("size", sc.size);
      s.read("seed", sc.seed, 0);
      s.read("positive_rate", sc.positive_rate);
      if (s.has("format")) {
        std::string f;
        s.read("format", f);
        if (f == "sfi") sc.format = SampleFormat::Sfi;
        else if (f == "dicom") sc.format = SampleFormat::Dicom;
        else throw ConfigError(s.child("format"), "expected \"sfi\" or \"dicom\", got \"" + f + "\"");
      }
      if (sc.dir.empty()) throw ConfigError(s.child("dir"), "required");
      if (sc.count == 0) throw ConfigError(s.child("count"), "must be >= 1");
      c.data.synth = sc;
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.path(), std::string(e.what()).substr(e.path().size() + 2));
  }
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["model"] = write_model(c.model);
  const auto& t = c.train;
  j["train"] = {{"optimizer", optimizer_name(t.optimizer.kind)},
                {"lr", t.optimizer.lr},
                {"beta1", t.optimizer.beta1},
                {"beta2", t.optimizer.beta2},
                {"eps", t.optimizer.eps},
                {"momentum", t.optimizer.momentum},
                {"grad_clip", t.optimizer.grad_clip},
                {"batch_size", t.batch_size},
                {"steps", t.steps},
                {"seed", t.seed},
                {"eval_every", t.eval_every},
                {"ckpt_every", t.ckpt_every},
                {"ckpt_dir", t.ckpt_dir},
                {"history_csv", t.history_csv},
                {"accuracy", accuracy_mode_name(t.accuracy_mode)}};
  j["loss"] = {{"weights", t.loss_weights}, {"eps", t.loss_eps}};
  json d = {{"manifest", c.data.manifest}, {"val_manifest", c.data.val_manifest}};
  if (c.data.synth) {
    const auto& s = *c.data.synth;
    d["synth"] = {{"dir", s.dir},
                  {"count", s.count},
                  {"val_count", s.val_count},
                  {"size", s.size},
                  {"seed", s.seed},
                  {"positive_rate", s.positive_rate},
                  {"format", s.format == SampleFormat::Dicom ? "dicom" : "sfi"}};
  }
  j["data"] = d;
  return j.dump(2) + "\n";
}

}  // namespace scopeformer
