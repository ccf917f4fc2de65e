#pragma once

// YOLO-format labels, image manifests, the seeded train/val/test split and
// per-class box statistics.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fracdet/error.hpp"
#include "fracdet/geometry.hpp"

namespace fracdet {

/// Default vocabulary: the eight object classes reported for the wrist
/// dataset plus one unnamed slot, in dataset id order.
inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names{"boneanomaly", "bonelesion",   "reserved",
                                              "fracture",    "metal",        "periostealreaction",
                                              "pronatorsign", "softtissue", "text"};
  return names;
}

struct LabelRecord {
  int class_id = 0;
  NormBox box;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

struct ImageEntry {
  std::string path;
  int width = 0;   // 0 when not probed
  int height = 0;  // 0 when not probed
  std::vector<LabelRecord> labels;
  std::optional<std::string> patient_id;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_commas(std::string_view s) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = s.find(',');
    const auto part = trim(s.substr(0, comma));
    if (!part.empty()) out.emplace_back(part);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = text.substr(0, nl);
    fn(++line_no, line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingFileError(p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Parse one YOLO label file: "class cx cy w h" per non-empty line.
/// `num_classes` of 0 disables the class-range check.
inline std::vector<LabelRecord> parse_label_file(std::string_view text, std::size_t num_classes = 0) {
  std::vector<LabelRecord> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto fields = detail::split_ws(line);
    if (fields.empty()) return;
    if (fields.size() != 5)
      throw ParseError("expected 5 fields \"class cx cy w h\", got " + std::to_string(fields.size()), line_no);
    const auto cls = detail::parse_int(fields[0]);
    if (!cls) throw ParseError("class: not an integer", line_no);
    if (*cls < 0 || (num_classes && static_cast<std::size_t>(*cls) >= num_classes))
      throw ParseError("class: value " + std::to_string(*cls) + " out of range", line_no);
    static constexpr const char* kNames[] = {"cx", "cy", "w", "h"};
    double v[4];
    for (int k = 0; k < 4; ++k) {
      const auto d = detail::parse_double(fields[static_cast<std::size_t>(k) + 1]);
      if (!d) throw ParseError(std::string(kNames[k]) + ": not a number", line_no);
      if (*d < 0.0 || *d > 1.0) throw ParseError(std::string(kNames[k]) + ": value outside [0, 1]", line_no);
      v[k] = *d;
    }
    out.push_back({static_cast<int>(*cls), {v[0], v[1], v[2], v[3]}});
  });
  return out;
}

/// Canonical text form: one record per line, shortest round-trip decimals.
inline std::string format_label_file(const std::vector<LabelRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += std::to_string(r.class_id);
    for (double v : {r.box.cx, r.box.cy, r.box.w, r.box.h}) out += ' ' + detail::format_double(v);
    out += '\n';
  }
  return out;
}

/// One class name per non-empty line; '#' starts a comment.
inline std::vector<std::string> parse_class_names(std::string_view text) {
  std::vector<std::string> names;
  detail::for_each_line(text, [&](std::size_t, std::string_view line) {
    line = detail::trim(line.substr(0, line.find('#')));
    if (!line.empty()) names.emplace_back(line);
  });
  if (names.empty()) throw ParseError("class list is empty");
  return names;
}

inline std::vector<std::string> load_class_names(const std::filesystem::path& path) {
  return parse_class_names(detail::read_file(path));
}

/// Dataset file stems start with the patient id ("0001_..." -> "0001").
inline std::optional<std::string> patient_from_stem(std::string_view stem) {
  const auto us = stem.find('_');
  if (us == 0 || us == std::string_view::npos) return std::nullopt;
  return std::string(stem.substr(0, us));
}

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Collect images under `images_dir` (non-recursive, sorted by name) with
/// their label files from `labels_dir`. A missing label file means no boxes.
inline std::vector<ImageEntry> scan_dataset(const std::filesystem::path& images_dir,
                                            const std::filesystem::path& labels_dir, std::size_t num_classes = 0) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(images_dir)) throw MissingFileError(images_dir.string());
  if (!fs::is_directory(labels_dir)) throw MissingFileError(labels_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images_dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<ImageEntry> entries;
  entries.reserve(files.size());
  for (const auto& f : files) {
    ImageEntry e;
    e.path = f.filename().string();
    const auto label = labels_dir / (f.stem().string() + ".txt");
    if (fs::exists(label)) {
      try {
        e.labels = parse_label_file(detail::read_file(label), num_classes);
      } catch (const ParseError& err) {
        throw ParseError(label.string() + ": " + err.what());
      }
    }
    e.patient_id = patient_from_stem(f.stem().string());
    entries.push_back(std::move(e));
  }
  return entries;
}

struct SplitRatios {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

enum class SplitMode { image, patient };

struct SplitManifest {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  SplitMode mode = SplitMode::image;
  std::vector<std::string> classes;
  std::vector<std::string> train, val, test;

  std::size_t total() const noexcept { return train.size() + val.size() + test.size(); }
};

inline void validate_ratios(const SplitRatios& r) {
  if (!(r.train > 0) || !(r.val > 0) || !(r.test > 0)) throw InvalidArgument("split ratios must be positive");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw InvalidArgument("split ratios must sum to 1");
}

/// Fold sizes for `n` items: floor each share, then hand the leftover items
/// to the folds with the largest fractional parts (ties: train, val, test).
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  validate_ratios(r);
  const std::array<double, 3> share{r.train * n, r.val * n, r.test * n};
  std::array<std::size_t, 3> size{};
  std::size_t used = 0;
  for (int k = 0; k < 3; ++k) used += size[k] = static_cast<std::size_t>(std::floor(share[k]));
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return share[a] - std::floor(share[a]) > share[b] - std::floor(share[b]);
  });
  for (std::size_t i = 0; used < n; ++i, ++used) ++size[order[i % 3]];
  return size;
}

namespace detail {

// Fisher-Yates driven by raw mt19937_64 output so the permutation is
// identical on every standard library.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do x = rng();
    while (x >= limit);
    std::swap(v[i - 1], v[static_cast<std::size_t>(x % bound)]);
  }
}

}  // namespace detail

/// Seeded shuffle followed by a contiguous partition. In patient mode whole
/// patient groups are shuffled and assigned, so each patient lands in one fold.
inline SplitManifest split(const std::vector<ImageEntry>& entries, const SplitRatios& ratios, std::uint64_t seed,
                           SplitMode mode = SplitMode::image) {
  validate_ratios(ratios);
  if (entries.empty()) throw InvalidArgument("cannot split an empty entry list");
  {
    std::set<std::string_view> seen;
    for (const auto& e : entries)
      if (!seen.insert(e.path).second) throw InvalidArgument("duplicate image path in manifest: " + e.path);
  }

  SplitManifest m;
  m.seed = seed;
  m.ratios = ratios;
  m.mode = mode;
  const auto sizes = split_sizes(entries.size(), ratios);

  if (mode == SplitMode::image) {
    std::vector<std::string> paths;
    paths.reserve(entries.size());
    for (const auto& e : entries) paths.push_back(e.path);
    detail::seeded_shuffle(paths, seed);
    m.train.assign(paths.begin(), paths.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
    m.val.assign(paths.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                 paths.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
    m.test.assign(paths.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), paths.end());
    return m;
  }

  // Groups keep first-seen order before shuffling; entries without a patient
  // id form singleton groups.
  std::vector<std::vector<std::string>> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& e : entries) {
    if (e.patient_id) {
      auto [it, inserted] = index.try_emplace(*e.patient_id, groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].push_back(e.path);
    } else {
      groups.push_back({e.path});
    }
  }
  detail::seeded_shuffle(groups, seed);
  for (auto& g : groups) {
    auto& fold = m.train.size() < sizes[0] ? m.train : (m.val.size() < sizes[1] ? m.val : m.test);
    fold.insert(fold.end(), g.begin(), g.end());
  }
  return m;
}

/// Line-oriented manifest: a '#' header of key: value pairs, then one
/// "[train]" / "[val]" / "[test]" section of relative paths each.
inline std::string format_manifest(const SplitManifest& m) {
  std::string out = "# fracdet split manifest v1\n";
  out += "# seed: " + std::to_string(m.seed) + "\n";
  out += "# ratios: " + detail::format_double(m.ratios.train) + "," + detail::format_double(m.ratios.val) + "," +
         detail::format_double(m.ratios.test) + "\n";
  out += std::string("# mode: ") + (m.mode == SplitMode::image ? "image" : "patient") + "\n";
  out += "# classes: ";
  for (std::size_t i = 0; i < m.classes.size(); ++i) out += (i ? "," : "") + m.classes[i];
  out += "\n";
  for (const auto& [name, list] : {std::pair{"train", &m.train}, {"val", &m.val}, {"test", &m.test}}) {
    out += std::string("[") + name + "]\n";
    for (const auto& p : *list) out += p + "\n";
  }
  return out;
}

inline SplitManifest parse_manifest(std::string_view text) {
  SplitManifest m;
  std::vector<std::string>* section = nullptr;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    if (line.front() == '#') {
      const auto body = detail::trim(line.substr(1));
      const auto colon = body.find(':');
      if (colon == std::string_view::npos) return;
      const auto key = detail::trim(body.substr(0, colon));
      const auto value = detail::trim(body.substr(colon + 1));
      if (key == "seed") {
        const auto v = detail::parse_int(value);
        if (!v) throw ParseError("seed: not an integer", line_no);
        m.seed = static_cast<std::uint64_t>(*v);
      } else if (key == "ratios") {
        std::array<double, 3> r{};
        std::size_t k = 0;
        std::string_view rest = value;
        while (k < 3) {
          const auto comma = rest.find(',');
          const auto d = detail::parse_double(detail::trim(rest.substr(0, comma)));
          if (!d) throw ParseError("ratios: not a number", line_no);
          r[k++] = *d;
          if (comma == std::string_view::npos) break;
          rest.remove_prefix(comma + 1);
        }
        if (k != 3) throw ParseError("ratios: expected three values", line_no);
        m.ratios = {r[0], r[1], r[2]};
      } else if (key == "mode") {
        m.mode = value == "patient" ? SplitMode::patient : SplitMode::image;
      } else if (key == "classes") {
        std::string_view rest = value;
        while (!rest.empty()) {
          const auto comma = rest.find(',');
          m.classes.emplace_back(detail::trim(rest.substr(0, comma)));
          if (comma == std::string_view::npos) break;
          rest.remove_prefix(comma + 1);
        }
      }
      return;
    }
    if (line == "[train]") section = &m.train;
    else if (line == "[val]") section = &m.val;
    else if (line == "[test]") section = &m.test;
    else if (!section) throw ParseError("path outside of a section", line_no);
    else section->emplace_back(line);
  });
  return m;
}

struct ClassHistogram {
  std::vector<std::size_t> per_class;
  std::size_t total = 0;
};

/// Box counts per class id. With `subset`, only entries whose path is listed count.
inline ClassHistogram class_histogram(const std::vector<ImageEntry>& entries, std::size_t num_classes,
                                      const std::vector<std::string>* subset = nullptr) {
  std::set<std::string_view> keep;
  if (subset)
    for (const auto& p : *subset) keep.insert(p);
  ClassHistogram h;
  h.per_class.assign(num_classes, 0);
  for (const auto& e : entries) {
    if (subset && !keep.count(e.path)) continue;
    for (const auto& l : e.labels) {
      if (l.class_id < 0 || static_cast<std::size_t>(l.class_id) >= num_classes)
        throw InvalidArgument("label class " + std::to_string(l.class_id) + " outside configured classes");
      ++h.per_class[static_cast<std::size_t>(l.class_id)];
      ++h.total;
    }
  }
  return h;
}

}  // namespace fracdet
