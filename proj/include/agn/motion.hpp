#pragma once

#include <charconv>
#include <cmath>
#include <complex>
#include <cstdio>
#include <string>
#include <vector>

#include "agn/bytes.hpp"
#include "agn/tensor.hpp"

namespace agn {

// One recording: frame-major 3-d joint positions in millimeters.
struct MotionSequence {
  std::int64_t n_joints = 0;
  std::int64_t n_frames = 0;
  double fps = 25.0;
  std::vector<float> coords;  // (frame, joint, coordinate)
  std::string action;

  float& at(std::int64_t frame, std::int64_t joint, std::int64_t coord) {
    return coords[(frame * n_joints + joint) * 3 + coord];
  }
  float at(std::int64_t frame, std::int64_t joint, std::int64_t coord) const {
    return coords[(frame * n_joints + joint) * 3 + coord];
  }

  void validate() const {
    if (n_joints <= 0 || n_frames <= 0) throw InputError("motion sequence is empty");
    if (fps <= 0) throw InputError("motion sequence fps must be positive");
    if (coords.size() != static_cast<std::size_t>(n_frames * n_joints * 3)) {
      throw InputError("motion sequence coordinate count mismatch");
    }
    for (float v : coords) {
      if (!std::isfinite(v)) throw InputError("motion sequence contains non-finite values");
    }
  }
};

enum class MotionFormat { Motb, Csv };

// ---- MOTB ----
// "MOTB" | u32 version=1 | u32 n_joints | u32 n_frames | u32 fps*1000 |
// f32 coords frame-major | u32 CRC32 over every preceding byte.

inline void save_motb(const MotionSequence& seq, const std::string& path) {
  seq.validate();
  std::string buf;
  buf += "MOTB";
  detail::put_u32(buf, 1);
  detail::put_u32(buf, static_cast<std::uint32_t>(seq.n_joints));
  detail::put_u32(buf, static_cast<std::uint32_t>(seq.n_frames));
  detail::put_u32(buf, static_cast<std::uint32_t>(std::llround(seq.fps * 1000.0)));
  for (float v : seq.coords) detail::put_f32(buf, v);
  detail::put_u32(buf, crc32(buf.data(), buf.size()));
  detail::write_file(path, buf, "motb");
}

inline MotionSequence load_motb(const std::string& path) {
  const std::string data = detail::read_file(path, "motb");
  if (data.size() < 20 + 4) throw ParseError("motb: file too short");
  detail::ByteReaderT<ParseError> r(data, "motb");
  if (r.bytes(4) != "MOTB") throw ParseError("motb: bad magic");
  const std::uint32_t version = r.u32();
  if (version != 1) throw ParseError("motb: unsupported version " + std::to_string(version));
  detail::check_trailing_crc<ParseError>(data, "motb");
  MotionSequence seq;
  seq.n_joints = r.u32();
  seq.n_frames = r.u32();
  seq.fps = r.u32() / 1000.0;
  const std::int64_t count = seq.n_frames * seq.n_joints * 3;
  if (r.remaining() != static_cast<std::size_t>(count) * 4 + 4) {
    throw ParseError("motb: payload size does not match header");
  }
  seq.coords.resize(count);
  for (auto& v : seq.coords) v = r.f32();
  seq.validate();
  return seq;
}

// ---- CSV ----
// Optional header "# joints=N fps=F", then one frame per line with
// n_joints*3 comma-separated decimals.

inline void save_csv(const MotionSequence& seq, const std::string& path) {
  seq.validate();
  std::string buf;
  char num[64];
  std::snprintf(num, sizeof num, "# joints=%lld fps=%g\n",
                static_cast<long long>(seq.n_joints), seq.fps);
  buf += num;
  for (std::int64_t f = 0; f < seq.n_frames; ++f) {
    for (std::int64_t i = 0; i < seq.n_joints * 3; ++i) {
      if (i) buf += ',';
      std::snprintf(num, sizeof num, "%.9g", seq.coords[f * seq.n_joints * 3 + i]);
      buf += num;
    }
    buf += '\n';
  }
  detail::write_file(path, buf, "csv");
}

inline MotionSequence load_csv(const std::string& path) {
  const std::string data = detail::read_file(path, "csv");
  MotionSequence seq;
  seq.fps = 25.0;
  std::int64_t cols = -1;
  std::size_t pos = 0;
  std::int64_t line_no = 0;
  while (pos < data.size()) {
    std::size_t eol = data.find('\n', pos);
    if (eol == std::string::npos) eol = data.size();
    std::string_view line(data.data() + pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
      line.remove_suffix(1);
    }
    if (line.empty()) continue;
    if (line.front() == '#') {
      long long joints = 0;
      double fps = 0;
      if (std::sscanf(std::string(line).c_str(), "# joints=%lld fps=%lf", &joints, &fps) == 2) {
        if (joints <= 0 || fps <= 0) {
          throw ParseError("csv: invalid header on line " + std::to_string(line_no));
        }
        seq.n_joints = joints;
        seq.fps = fps;
        cols = joints * 3;
      }
      continue;
    }
    std::vector<float> row;
    std::size_t field_start = 0;
    const std::string text(line);
    while (field_start <= text.size()) {
      std::size_t comma = text.find(',', field_start);
      if (comma == std::string::npos) comma = text.size();
      const char* b = text.data() + field_start;
      const char* e = text.data() + comma;
      while (b < e && (*b == ' ' || *b == '\t')) ++b;
      float v = 0;
      auto [ptr, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || ptr != e) {
        throw ParseError("csv: bad number on line " + std::to_string(line_no) +
                         " at column " + std::to_string(row.size() + 1));
      }
      if (!std::isfinite(v)) {
        throw ParseError("csv: non-finite value on line " + std::to_string(line_no) +
                         " at column " + std::to_string(row.size() + 1));
      }
      row.push_back(v);
      field_start = comma + 1;
      if (comma == text.size()) break;
    }
    if (cols < 0) {
      if (row.empty() || row.size() % 3 != 0) {
        throw ParseError("csv: line " + std::to_string(line_no) +
                         " has " + std::to_string(row.size()) +
                         " fields, expected a multiple of 3");
      }
      cols = static_cast<std::int64_t>(row.size());
      seq.n_joints = cols / 3;
    }
    if (static_cast<std::int64_t>(row.size()) != cols) {
      throw ParseError("csv: line " + std::to_string(line_no) + " has " +
                       std::to_string(row.size()) + " fields, expected " +
                       std::to_string(cols));
    }
    seq.coords.insert(seq.coords.end(), row.begin(), row.end());
    ++seq.n_frames;
  }
  if (seq.n_frames == 0) throw ParseError("csv: no data rows in " + path);
  seq.validate();
  return seq;
}

inline MotionSequence load(const std::string& path, MotionFormat format) {
  return format == MotionFormat::Motb ? load_motb(path) : load_csv(path);
}

inline void save(const MotionSequence& seq, const std::string& path, MotionFormat format) {
  if (format == MotionFormat::Motb) {
    save_motb(seq, path);
  } else {
    save_csv(seq, path);
  }
}

// ---- windows ----

template <typename S>
struct WindowPair {
  TensorT<S> input;   // [N x t_in x 3]
  TensorT<S> target;  // [N x t_out x 3], starts where input ends
  std::int64_t start = 0;
};

// Extract [start, start+len) as a [N x len x 3] tensor.
template <typename S>
TensorT<S> window_tensor(const MotionSequence& seq, std::int64_t start, std::int64_t len) {
  if (start < 0 || start + len > seq.n_frames) {
    throw InputError("window out of range");
  }
  std::vector<S> out(static_cast<std::size_t>(seq.n_joints * len * 3));
  for (std::int64_t j = 0; j < seq.n_joints; ++j) {
    for (std::int64_t t = 0; t < len; ++t) {
      for (std::int64_t d = 0; d < 3; ++d) {
        out[(j * len + t) * 3 + d] = static_cast<S>(seq.at(start + t, j, d));
      }
    }
  }
  return TensorT<S>::from_data({seq.n_joints, len, 3}, std::move(out));
}

// Sliding input/target pairs; a sequence too short yields an empty list.
template <typename S>
std::vector<WindowPair<S>> windows(const MotionSequence& seq, std::int64_t t_in,
                                   std::int64_t t_out, std::int64_t stride) {
  if (t_in < 1 || t_out < 1) throw InputError("window lengths must be positive");
  if (stride < 1) throw InputError("stride must be >= 1");
  std::vector<WindowPair<S>> result;
  const std::int64_t span = t_in + t_out;
  if (seq.n_frames < span) return result;
  for (std::int64_t start = 0; start + span <= seq.n_frames; start += stride) {
    WindowPair<S> w;
    w.start = start;
    w.input = window_tensor<S>(seq, start, t_in);
    w.target = window_tensor<S>(seq, start + t_in, t_out);
    result.push_back(std::move(w));
  }
  return result;
}

// ---- synthetic articulated chain ----

struct ChainSpec {
  std::vector<double> bone_lengths_mm;  // from the root outward
};

// Planar forward kinematics of a sinusoidally actuated chain. Joint j is the
// endpoint of bone j (the static root is not emitted); relative joint angles
// are theta_j(t) = A_j * sin(2*pi*f_j*t + phase_j) with seeded phases. The
// third coordinate is carried as 0 so shapes match 3-d pose data. Gaussian
// noise, when requested, perturbs x and y only.
inline MotionSequence synthesize(const ChainSpec& chain, std::int64_t n_frames, double fps,
                                 std::vector<double> frequencies,
                                 std::vector<double> amplitudes, double noise_sd,
                                 std::uint64_t seed) {
  const std::int64_t joints = static_cast<std::int64_t>(chain.bone_lengths_mm.size());
  if (joints < 1) throw ConfigError("chain needs at least one bone");
  for (double len : chain.bone_lengths_mm) {
    if (len <= 0) throw ConfigError("bone lengths must be positive");
  }
  if (n_frames < 1) throw ConfigError("n_frames must be positive");
  if (fps <= 0) throw ConfigError("fps must be positive");
  if (noise_sd < 0) throw ConfigError("noise_sd must be non-negative");
  auto broadcast = [&](std::vector<double>& v, const char* name) {
    if (v.size() == 1) v.assign(joints, v[0]);
    if (static_cast<std::int64_t>(v.size()) != joints) {
      throw ConfigError(std::string(name) + " must have one entry or one per joint");
    }
  };
  broadcast(frequencies, "frequencies");
  broadcast(amplitudes, "amplitudes");

  Rng rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * 3.14159265358979323846);
  std::vector<double> phases(joints);
  for (auto& p : phases) p = phase_dist(rng);
  std::normal_distribution<double> noise(0.0, noise_sd);

  MotionSequence seq;
  seq.n_joints = joints;
  seq.n_frames = n_frames;
  seq.fps = fps;
  seq.coords.resize(n_frames * joints * 3);
  for (std::int64_t f = 0; f < n_frames; ++f) {
    const double t = static_cast<double>(f) / fps;
    double angle = 0, x = 0, y = 0;
    for (std::int64_t j = 0; j < joints; ++j) {
      angle += amplitudes[j] *
               std::sin(2.0 * 3.14159265358979323846 * frequencies[j] * t + phases[j]);
      x += chain.bone_lengths_mm[j] * std::cos(angle);
      y += chain.bone_lengths_mm[j] * std::sin(angle);
      double px = x, py = y;
      if (noise_sd > 0) {
        px += noise(rng);
        py += noise(rng);
      }
      seq.at(f, j, 0) = static_cast<float>(px);
      seq.at(f, j, 1) = static_cast<float>(py);
      seq.at(f, j, 2) = 0.0f;
    }
  }
  return seq;
}

// ---- exporters ----

// Write a prediction as the same CSV layout load_csv reads.
template <typename S>
void export_csv(const TensorT<S>& pred, double fps, const std::string& path) {
  if (pred.rank() != 3 || pred.shape()[2] != 3) {
    throw ShapeError("export expects [N x F x 3], got " + shape_str(pred.shape()));
  }
  MotionSequence seq;
  seq.n_joints = pred.shape()[0];
  seq.n_frames = pred.shape()[1];
  seq.fps = fps;
  seq.coords.resize(seq.n_frames * seq.n_joints * 3);
  for (std::int64_t j = 0; j < seq.n_joints; ++j) {
    for (std::int64_t t = 0; t < seq.n_frames; ++t) {
      for (std::int64_t d = 0; d < 3; ++d) {
        seq.at(t, j, d) = static_cast<float>(pred.at({j, t, d}));
      }
    }
  }
  save_csv(seq, path);
}

struct SvgLayout {
  double cell_w = 120.0;
  double cell_h = 160.0;
  double pad = 12.0;
};

// World (x, y) of frame column `col` to pixel coordinates; y points up in
// world space and down in SVG space.
inline std::pair<double, double> svg_map_point(double x, double y, std::int64_t col,
                                               double min_x, double min_y, double scale,
                                               const SvgLayout& layout) {
  const double px = layout.pad + (x - min_x) * scale + static_cast<double>(col) * layout.cell_w;
  const double py = layout.cell_h - layout.pad - (y - min_y) * scale;
  return {px, py};
}

// Per-frame stick figures, one column per predicted frame, truth overlaid in
// a lighter stroke when given. Bones come from the edge list; consecutive
// joints are chained when it is empty.
template <typename S>
void export_svg(const TensorT<S>& pred, const TensorT<S>* truth,
                std::vector<std::pair<std::int64_t, std::int64_t>> edges,
                const std::string& path, const SvgLayout& layout = {}) {
  if (pred.rank() != 3 || pred.shape()[2] != 3) {
    throw ShapeError("export expects [N x F x 3], got " + shape_str(pred.shape()));
  }
  if (truth && truth->shape() != pred.shape()) {
    throw ShapeError("truth shape " + shape_str(truth->shape()) +
                     " does not match prediction " + shape_str(pred.shape()));
  }
  const std::int64_t N = pred.shape()[0], F = pred.shape()[1];
  if (edges.empty()) {
    for (std::int64_t j = 0; j + 1 < N; ++j) edges.push_back({j, j + 1});
  }
  for (auto [a, b] : edges) {
    if (a < 0 || a >= N || b < 0 || b >= N) {
      throw InputError("unknown edge index " + std::to_string(a < 0 || a >= N ? a : b) +
                       " for " + std::to_string(N) + " joints");
    }
  }
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  auto scan = [&](const TensorT<S>& t) {
    for (std::int64_t j = 0; j < N; ++j) {
      for (std::int64_t f = 0; f < F; ++f) {
        min_x = std::min(min_x, static_cast<double>(t.at({j, f, 0})));
        max_x = std::max(max_x, static_cast<double>(t.at({j, f, 0})));
        min_y = std::min(min_y, static_cast<double>(t.at({j, f, 1})));
        max_y = std::max(max_y, static_cast<double>(t.at({j, f, 1})));
      }
    }
  };
  scan(pred);
  if (truth) scan(*truth);
  const double range_x = max_x - min_x, range_y = max_y - min_y;
  double scale = 1.0;
  if (range_x > 1e-9 || range_y > 1e-9) {
    scale = std::min((layout.cell_w - 2 * layout.pad) / std::max(range_x, 1e-9),
                     (layout.cell_h - 2 * layout.pad) / std::max(range_y, 1e-9));
  }

  std::string buf;
  char tmp[256];
  std::snprintf(tmp, sizeof tmp,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\">\n",
                layout.cell_w * static_cast<double>(F), layout.cell_h);
  buf += tmp;
  auto draw = [&](const TensorT<S>& t, const char* stroke) {
    for (std::int64_t f = 0; f < F; ++f) {
      for (auto [a, b] : edges) {
        auto [x1, y1] = svg_map_point(t.at({a, f, 0}), t.at({a, f, 1}), f, min_x, min_y,
                                      scale, layout);
        auto [x2, y2] = svg_map_point(t.at({b, f, 0}), t.at({b, f, 1}), f, min_x, min_y,
                                      scale, layout);
        std::snprintf(tmp, sizeof tmp,
                      "  <line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                      "stroke=\"%s\" stroke-width=\"1.5\"/>\n",
                      x1, y1, x2, y2, stroke);
        buf += tmp;
      }
      for (std::int64_t j = 0; j < N; ++j) {
        auto [cx, cy] = svg_map_point(t.at({j, f, 0}), t.at({j, f, 1}), f, min_x, min_y,
                                      scale, layout);
        std::snprintf(tmp, sizeof tmp,
                      "  <circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\"/>\n", cx, cy,
                      stroke);
        buf += tmp;
      }
    }
  };
  if (truth) draw(*truth, "#9aa0a6");
  draw(pred, "#d93025");
  buf += "</svg>\n";
  detail::write_file(path, buf, "svg");
}

}  // namespace agn
