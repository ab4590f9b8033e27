#include "adapterseg/config.hpp"

#include <fstream>
#include <sstream>

namespace adapterseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::int64_t> to_int_list(const std::string& key, const std::string& v) {
  std::vector<std::int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_int(key, item));
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a list");
  return out;
}

}  // namespace

void RunConfig::validate() const {
  model.encoder.validate();
  train.validate();
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "task")
    cfg.train.task = task_from_string(value);
  else if (key == "lr0")
    cfg.train.lr0 = to_double(key, value);
  else if (key == "batch_size")
    cfg.train.batch_size = to_int(key, value);
  else if (key == "epochs")
    cfg.train.epochs = to_int(key, value);
  else if (key == "weight_decay")
    cfg.train.weight_decay = to_double(key, value);
  else if (key == "seed")
    cfg.train.seed = static_cast<std::uint64_t>(to_int(key, value));
  else if (key == "resolution")
    cfg.model.encoder.input_resolution = to_int(key, value);
  else if (key == "tau") {
    cfg.train.hfc_ratio = to_double(key, value);
    cfg.model.hfc_ratio = cfg.train.hfc_ratio;
  } else if (key == "bottleneck_dim")
    cfg.model.bottleneck_dim = to_int(key, value);
  else if (key == "prompt_dim")
    cfg.model.prompt_dim = to_int(key, value);
  else if (key == "decoder_fuse_dim")
    cfg.model.decoder_fuse_dim = to_int(key, value);
  else if (key == "checkpoint_interval")
    cfg.train.checkpoint_interval = to_int(key, value);
  else if (key == "grad_clip")
    cfg.train.grad_clip = to_double(key, value);
  else if (key == "precision") {
    if (value == "f64")
      cfg.train.f64_checkpoints = true;
    else if (value == "f32")
      cfg.train.f64_checkpoints = false;
    else
      throw ConfigError("config: precision must be f32 or f64, got '" + value + "'");
  } else if (key == "max_steps")
    cfg.train.max_steps = to_int(key, value);
  else if (key == "num_stages")
    cfg.model.encoder.num_stages = to_int(key, value);
  else if (key == "blocks_per_stage")
    cfg.model.encoder.blocks_per_stage = to_int_list(key, value);
  else if (key == "stage_widths")
    cfg.model.encoder.stage_widths = to_int_list(key, value);
  else if (key == "patch_size")
    cfg.model.encoder.patch_size = to_int(key, value);
  else if (key == "num_heads")
    cfg.model.encoder.num_heads = to_int(key, value);
  else if (key == "mlp_ratio")
    cfg.model.encoder.mlp_ratio = to_int(key, value);
  else if (key == "preset") {
    if (value == "toy")
      cfg.model.encoder = EncoderConfig::toy();
    else if (value == "full")
      cfg.model.encoder = EncoderConfig::full();
    else
      throw ConfigError("config: preset must be toy or full, got '" + value + "'");
  } else if (key == "train_guidance_weights")
    cfg.model.train_guidance_weights = to_bool(key, value);
  else if (key == "checkpoint_dir")
    cfg.train.checkpoint_dir = value;
  else
    throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " is not 'key = value': " + line);
    apply_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_run_config_text(buf.str());
}

std::string run_config_to_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << "task = " << task_to_string(cfg.train.task) << "\n";
  os << "lr0 = " << cfg.train.lr0 << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "weight_decay = " << cfg.train.weight_decay << "\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "resolution = " << cfg.model.encoder.input_resolution << "\n";
  os << "tau = " << cfg.train.hfc_ratio << "\n";
  os << "bottleneck_dim = " << cfg.model.bottleneck_dim << "\n";
  os << "prompt_dim = " << cfg.model.prompt_dim << "\n";
  os << "decoder_fuse_dim = " << cfg.model.decoder_fuse_dim << "\n";
  os << "checkpoint_interval = " << cfg.train.checkpoint_interval << "\n";
  os << "grad_clip = " << cfg.train.grad_clip << "\n";
  os << "precision = " << (cfg.train.f64_checkpoints ? "f64" : "f32") << "\n";
  auto list = [&os](const char* key, const std::vector<std::int64_t>& v) {
    os << key << " = ";
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    os << "\n";
  };
  os << "num_stages = " << cfg.model.encoder.num_stages << "\n";
  list("blocks_per_stage", cfg.model.encoder.blocks_per_stage);
  list("stage_widths", cfg.model.encoder.stage_widths);
  os << "patch_size = " << cfg.model.encoder.patch_size << "\n";
  os << "num_heads = " << cfg.model.encoder.num_heads << "\n";
  os << "mlp_ratio = " << cfg.model.encoder.mlp_ratio << "\n";
  return os.str();
}

}  // namespace adapterseg
