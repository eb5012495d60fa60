#include "mscc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mscc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T v{};
  if (!(in >> v) || !(in >> std::ws).eof()) throw ConfigError("config: bad value '" + value + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config: bad boolean '" + value + "' for " + key);
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

Config Config::paper_scale() {
  Config c;
  c.image_size = 256;
  c.width_scale = 1.0;
  c.crf = crf::CrfParams{};
  return c;
}

crf::CrfParams Config::desk_crf() {
  crf::CrfParams p;
  p.w1 = 0.02;
  p.w2 = 1.0;
  p.sigma_alpha = 10.0;
  p.sigma_beta = 0.05;
  p.sigma_gamma = 1.0;
  p.num_iterations = 5;
  return p;
}

void Config::set(const std::string& key, const std::string& value) {
  if (key == "image_size") image_size = parse_number<int>(key, value);
  else if (key == "patch_size") patch_size = parse_number<int>(key, value);
  else if (key == "arch") arch = value;
  else if (key == "width_scale") width_scale = parse_number<double>(key, value);
  else if (key == "pixel_lr") pixel_lr = parse_number<double>(key, value);
  else if (key == "pixel_epochs") pixel_epochs = parse_number<int>(key, value);
  else if (key == "pixel_batch") pixel_batch = parse_number<int>(key, value);
  else if (key == "patch_lr") patch_lr = parse_number<double>(key, value);
  else if (key == "patch_epochs") patch_epochs = parse_number<int>(key, value);
  else if (key == "patch_batch") patch_batch = parse_number<int>(key, value);
  else if (key == "patch_criterion") patch_criterion = parse_number<double>(key, value);
  else if (key == "threshold") threshold = parse_number<double>(key, value);
  else if (key == "crf_w1") crf.w1 = parse_number<double>(key, value);
  else if (key == "crf_w2") crf.w2 = parse_number<double>(key, value);
  else if (key == "crf_sigma_alpha") crf.sigma_alpha = parse_number<double>(key, value);
  else if (key == "crf_sigma_beta") crf.sigma_beta = parse_number<double>(key, value);
  else if (key == "crf_sigma_gamma") crf.sigma_gamma = parse_number<double>(key, value);
  else if (key == "crf_iterations") crf.num_iterations = parse_number<int>(key, value);
  else if (key == "crf_truncated") crf.truncated = parse_bool(key, value);
  else if (key == "crf_confidence") crf_confidence = parse_number<double>(key, value);
  else if (key == "crf_soft") crf_soft = parse_bool(key, value);
  else if (key == "buffer_radius") buffer_radius = parse_number<int>(key, value);
  else if (key == "select_radius") select_radius = parse_bool(key, value);
  else if (key == "sweep_radii") {
    std::vector<int> radii;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) radii.push_back(parse_number<int>(key, trim(item)));
    if (radii.empty()) throw ConfigError("config: sweep_radii is empty");
    sweep_radii = std::move(radii);
  } else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

void Config::validate() const {
  if (image_size <= 0 || image_size % 16 != 0) {
    throw ConfigError("config: image_size " + std::to_string(image_size) + " must be a positive multiple of 16");
  }
  if (patch_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("config: image_size must be divisible by patch_size " + std::to_string(patch_size));
  }
  if (arch != "unet" && arch != "b1" && arch != "b2" && arch != "b3") {
    throw ConfigError("config: arch must be one of unet, b1, b2, b3 (got '" + arch + "')");
  }
  if (!(width_scale > 0.0)) throw ConfigError("config: width_scale must be positive");
  if (!(pixel_lr > 0.0) || !(patch_lr > 0.0)) throw ConfigError("config: learning rates must be positive");
  if (pixel_epochs < 0 || patch_epochs < 0) throw ConfigError("config: epochs must be nonnegative");
  if (pixel_batch <= 0 || patch_batch <= 0) throw ConfigError("config: batch sizes must be positive");
  if (!(patch_criterion > 0.0 && patch_criterion < 1.0)) throw ConfigError("config: patch_criterion must lie in (0, 1)");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("config: threshold must lie in (0, 1)");
  if (!(crf_confidence > 0.5 && crf_confidence < 1.0)) throw ConfigError("config: crf_confidence must lie in (0.5, 1)");
  if (buffer_radius < 0) throw ConfigError("config: buffer_radius must be nonnegative");
  for (int r : sweep_radii)
    if (r < 0) throw ConfigError("config: sweep radii must be nonnegative");
  try {
    crf.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string Config::to_text() const {
  std::ostringstream out;
  out << "image_size = " << image_size << "\n"
      << "patch_size = " << patch_size << "\n"
      << "arch = " << arch << "\n"
      << "width_scale = " << fmt(width_scale) << "\n"
      << "pixel_lr = " << fmt(pixel_lr) << "\n"
      << "pixel_epochs = " << pixel_epochs << "\n"
      << "pixel_batch = " << pixel_batch << "\n"
      << "patch_lr = " << fmt(patch_lr) << "\n"
      << "patch_epochs = " << patch_epochs << "\n"
      << "patch_batch = " << patch_batch << "\n"
      << "patch_criterion = " << fmt(patch_criterion) << "\n"
      << "threshold = " << fmt(threshold) << "\n"
      << "crf_w1 = " << fmt(crf.w1) << "\n"
      << "crf_w2 = " << fmt(crf.w2) << "\n"
      << "crf_sigma_alpha = " << fmt(crf.sigma_alpha) << "\n"
      << "crf_sigma_beta = " << fmt(crf.sigma_beta) << "\n"
      << "crf_sigma_gamma = " << fmt(crf.sigma_gamma) << "\n"
      << "crf_iterations = " << crf.num_iterations << "\n"
      << "crf_truncated = " << (crf.truncated ? "true" : "false") << "\n"
      << "crf_confidence = " << fmt(crf_confidence) << "\n"
      << "crf_soft = " << (crf_soft ? "true" : "false") << "\n"
      << "buffer_radius = " << buffer_radius << "\n"
      << "select_radius = " << (select_radius ? "true" : "false") << "\n"
      << "sweep_radii = ";
  for (std::size_t i = 0; i < sweep_radii.size(); ++i) out << (i ? "," : "") << sweep_radii[i];
  out << "\nseed = " << seed << "\n";
  return out.str();
}

Config parse_config(const std::string& text, Config base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

Config load_config(const std::filesystem::path& path, Config base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("MSCC_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    return parse_number<std::uint64_t>("MSCC_SEED", v);
  } catch (const ConfigError&) {
    return std::nullopt;
  }
}

}  // namespace mscc
