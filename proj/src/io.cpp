#include "unetmer/io.hpp"

#include <map>
#include <sstream>

namespace unetmer {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::CT: return "CT";
    case Modality::MR: return "MR";
    case Modality::US: return "US";
    case Modality::ENDO: return "ENDO";
    case Modality::SYNTH: return "SYNTH";
  }
  return "SYNTH";
}

Modality modality_from_string(const std::string& s) {
  if (s == "CT") return Modality::CT;
  if (s == "MR") return Modality::MR;
  if (s == "US") return Modality::US;
  if (s == "ENDO") return Modality::ENDO;
  if (s == "SYNTH") return Modality::SYNTH;
  throw ValidationError("unknown modality: " + s);
}

std::size_t DatasetManifest::count_split(const std::string& split) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += (e.split == split);
  return n;
}

namespace {

// Splits "key=value key=value ..." into a map, preserving duplicates as errors.
std::map<std::string, std::string> parse_kv_line(const std::string& line, int lineno) {
  std::map<std::string, std::string> kv;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw ValidationError("manifest line " + std::to_string(lineno) +
                            ": expected key=value, got '" + tok + "'");
    std::string key = tok.substr(0, eq);
    if (kv.count(key))
      throw ValidationError("manifest line " + std::to_string(lineno) + ": duplicate key '" +
                            key + "'");
    kv[key] = tok.substr(eq + 1);
  }
  return kv;
}

std::string require_key(const std::map<std::string, std::string>& kv, const std::string& key,
                        int lineno) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw ValidationError("manifest line " + std::to_string(lineno) + ": missing key '" + key +
                          "'");
  return it->second;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  check_io(bool(is), "cannot open manifest: " + path.string());

  DatasetManifest manifest;
  manifest.root = path.parent_path();

  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto kv = parse_kv_line(line, lineno);
    if (!have_header) {
      if (require_key(kv, "version", lineno) != "1")
        throw ValidationError("manifest line " + std::to_string(lineno) +
                              ": unsupported version");
      manifest.modality = modality_from_string(require_key(kv, "modality", lineno));
      try {
        manifest.num_classes = std::stoi(require_key(kv, "num_classes", lineno));
      } catch (const std::exception&) {
        throw ValidationError("manifest line " + std::to_string(lineno) +
                              ": num_classes is not an integer");
      }
      check(manifest.num_classes >= 2, "num_classes must be >= 2");
      have_header = true;
      continue;
    }
    ManifestEntry e;
    e.image = require_key(kv, "image", lineno);
    e.mask = require_key(kv, "mask", lineno);
    e.split = require_key(kv, "split", lineno);
    if (e.split != "train" && e.split != "test")
      throw ValidationError("manifest line " + std::to_string(lineno) + ": bad split '" +
                            e.split + "'");
    std::string volume = require_key(kv, "volume", lineno);
    e.volume_key = (volume == "-") ? "" : volume;
    std::string slice = require_key(kv, "slice", lineno);
    if (slice == "-") {
      e.slice_index = -1;
    } else {
      try {
        e.slice_index = std::stoi(slice);
      } catch (const std::exception&) {
        throw ValidationError("manifest line " + std::to_string(lineno) +
                              ": slice is not an integer");
      }
    }
    manifest.entries.push_back(std::move(e));
  }
  check(have_header, "empty manifest");
  check(!manifest.entries.empty(), "empty manifest");

  for (const auto& e : manifest.entries) {
    const auto img = manifest.root / e.image;
    const auto msk = manifest.root / e.mask;
    check(std::filesystem::exists(img), "manifest references missing image: " + img.string());
    check(std::filesystem::exists(msk), "manifest references missing mask: " + msk.string());
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream os(path);
  check_io(bool(os), "cannot write manifest: " + path.string());
  os << "version=1 modality=" << to_string(manifest.modality)
     << " num_classes=" << manifest.num_classes << "\n";
  for (const auto& e : manifest.entries) {
    os << "image=" << e.image << " mask=" << e.mask << " split=" << e.split << " volume="
       << (e.volume_key.empty() ? "-" : e.volume_key) << " slice="
       << (e.slice_index < 0 ? std::string("-") : std::to_string(e.slice_index)) << "\n";
  }
  check_io(bool(os), "failed writing manifest: " + path.string());
}

}  // namespace unetmer
