#include "fpx/cli/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace fpx::cli {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in, const std::string& name) {
  std::string tok;
  while (true) {
    const int c = in.get();
    if (c == EOF) throw DataError(name + ": truncated PGM header");
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      if (!tok.empty()) return tok;
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
}

std::size_t pgm_number(std::istream& in, const std::string& name, const char* what) {
  const std::string tok = pgm_token(in, name);
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size() || v == 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(name + ": bad PGM " + what + " '" + tok + "'");
  }
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(name + ": cannot open");
  if (pgm_token(in, name) != "P5") throw DataError(name + ": not a binary PGM (P5) file");
  const std::size_t w = pgm_number(in, name, "width");
  const std::size_t h = pgm_number(in, name, "height");
  const std::size_t maxval = pgm_number(in, name, "maxval");
  if (maxval > 65535) throw DataError(name + ": maxval above 65535");
  const std::size_t bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(w * h * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError(name + ": truncated pixel data");
  std::vector<double> px(w * h);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const unsigned v = bytes == 1 ? raw[i] : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
    if (v > maxval) throw DataError(name + ": pixel above maxval");
    px[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return Tensor({1, h, w}, std::move(px));
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw DimensionError("write_pgm expects a 1 x H x W image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot write");
  out << "P5\n" << image.dim(2) << " " << image.dim(1) << "\n255\n";
  for (double v : image.data()) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(b));
  }
  if (!out) throw DataError(path.string() + ": write failed");
}

std::vector<std::filesystem::path> list_pgm(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

struct RawSample {
  std::vector<std::size_t> labels;
  std::vector<std::size_t> features;
  int line = 0;
};

std::size_t parse_index(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError(where + ": bad index '" + s + "'");
  }
}

int detect_base(const std::vector<RawSample>& rows, bool labels, std::size_t dim) {
  bool any_zero = false;
  std::size_t largest = 0;
  for (const auto& r : rows)
    for (std::size_t v : labels ? r.labels : r.features) {
      any_zero = any_zero || v == 0;
      largest = std::max(largest, v);
    }
  return !any_zero && largest == dim ? 1 : 0;
}

}  // namespace

SparseDataset load_sparse_dataset(const std::filesystem::path& path, const SparseFormat& format) {
  const std::string name = path.string();
  std::ifstream in(path);
  if (!in) throw DataError(name + ": cannot open");
  SparseDataset ds;
  std::vector<RawSample> rows;
  std::string line;
  int number = 0;
  long long header_n = -1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(number);
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    for (std::string t; ss >> t;) tokens.push_back(t);

    // "N F L" header: three plain integers on the first content line.
    if (rows.empty() && header_n < 0 && tokens.size() == 3 &&
        std::none_of(tokens.begin(), tokens.end(), [](const std::string& t) {
          return t.find_first_not_of("0123456789") != std::string::npos;
        })) {
      header_n = std::stoll(tokens[0]);
      if (static_cast<std::size_t>(std::stoll(tokens[1])) != format.n_features ||
          static_cast<std::size_t>(std::stoll(tokens[2])) != format.n_labels) {
        throw DataError(where + ": header declares " + tokens[1] + " features and " + tokens[2] +
                        " labels, expected " + std::to_string(format.n_features) + " and " +
                        std::to_string(format.n_labels));
      }
      continue;
    }

    RawSample r;
    r.line = number;
    std::size_t first = 0;
    if (!tokens.empty() && tokens[0].find(':') == std::string::npos) {
      std::stringstream ls(tokens[0]);
      for (std::string l; std::getline(ls, l, ',');)
        if (!l.empty()) r.labels.push_back(parse_index(l, where));
      first = 1;
    }
    for (std::size_t i = first; i < tokens.size(); ++i) {
      const auto colon = tokens[i].find(':');
      if (colon == std::string::npos) throw DataError(where + ": expected index:value, got '" + tokens[i] + "'");
      const std::string val = tokens[i].substr(colon + 1);
      double v = 0.0;
      try {
        v = std::stod(val);
      } catch (const std::exception&) {
        throw DataError(where + ": bad feature value '" + val + "'");
      }
      if (v != 0.0) r.features.push_back(parse_index(tokens[i].substr(0, colon), where));
    }
    if (r.features.empty()) ds.warnings.push_back(where + ": sample has no features");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError(name + ": no samples");
  if (header_n >= 0 && static_cast<std::size_t>(header_n) != rows.size()) {
    throw DataError(name + ": header declares " + std::to_string(header_n) + " samples, found " +
                    std::to_string(rows.size()));
  }
  if (format.expect_samples >= 0 && static_cast<std::size_t>(format.expect_samples) != rows.size()) {
    throw DataError(name + ": expected " + std::to_string(format.expect_samples) + " samples, found " +
                    std::to_string(rows.size()));
  }

  ds.feature_base = detect_base(rows, false, format.n_features);
  ds.label_base = detect_base(rows, true, format.n_labels);
  const std::size_t n = rows.size();
  std::vector<double> feats(n * format.n_features, 0.0), labs(n * format.n_labels, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rows[i];
    const std::string where = name + ":" + std::to_string(r.line);
    auto fill = [&](const std::vector<std::size_t>& idx, int base, std::size_t dim, std::vector<double>& dst,
                    const char* kind) {
      for (std::size_t raw : idx) {
        if (raw < static_cast<std::size_t>(base) || raw - static_cast<std::size_t>(base) >= dim) {
          throw DataError(where + ": " + kind + " index " + std::to_string(raw) + " out of range for " +
                          std::to_string(dim) + " (" + std::to_string(base) + "-based)");
        }
        double& cell = dst[i * dim + raw - static_cast<std::size_t>(base)];
        if (cell != 0.0) ds.warnings.push_back(where + ": duplicate " + kind + " index " + std::to_string(raw));
        cell = 1.0;
      }
    };
    fill(r.features, ds.feature_base, format.n_features, feats, "feature");
    fill(r.labels, ds.label_base, format.n_labels, labs, "label");
    if (r.labels.empty()) ++ds.empty_label_rows;
  }
  ds.features = Tensor({n, format.n_features}, std::move(feats));
  ds.labels = Tensor({n, format.n_labels}, std::move(labs));
  return ds;
}

std::string format_metrics(std::vector<MetricRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.run_id, a.epoch, a.metric, a.split) < std::tie(b.run_id, b.epoch, b.metric, b.split);
  });
  std::string out = "run_id,epoch,split,metric,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    out += r.run_id + "," + std::to_string(r.epoch) + "," + r.split + "," + r.metric + "," + buf + "\n";
  }
  return out;
}

void emit_metrics(const std::filesystem::path& path, std::vector<MetricRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot write metrics");
  out << format_metrics(std::move(rows));
  if (!out) throw DataError(path.string() + ": write failed");
}

}  // namespace fpx::cli
