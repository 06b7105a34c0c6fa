#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlc/image.hpp"
#include "mlc/rng.hpp"
#include "mlc/tensor.hpp"

// Dataset plumbing: label vocabularies, the manifest CSV format, the
// synthetic glyph corpus, and training-time augmentation.
//
// Manifest CSV: header line `path,split,labels`, then one row per image.
// The labels field holds semicolon-separated label names and may be quoted.
// Image paths are resolved relative to the data directory. A path may appear
// in only one split.

namespace mlc {

class LabelVocabulary {
public:
    LabelVocabulary() = default;

    static LabelVocabulary from_names(const std::vector<std::string>& names) {
        LabelVocabulary v;
        for (const auto& n : names) v.add(n);
        return v;
    }

    static LabelVocabulary from_text(const std::string& text) {
        LabelVocabulary v;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            v.add(line);
        }
        return v;
    }

    static LabelVocabulary load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw DataError("cannot open vocabulary: " + path);
        std::stringstream ss;
        ss << is.rdbuf();
        return from_text(ss.str());
    }

    void add(const std::string& name) {
        if (name.empty()) throw InvalidSpec("vocabulary: empty label name");
        if (index_.count(name)) throw InvalidSpec("vocabulary: duplicate label " + name);
        index_[name] = names_.size();
        names_.push_back(name);
    }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw UnknownLabel("label not in vocabulary: " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }

    std::string to_text() const {
        std::string out;
        for (const auto& n : names_) {
            out += n;
            out += '\n';
        }
        return out;
    }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct LabeledExample {
    Tensor<float> image;               // (H, W, 3), empty in labels-only mode
    std::vector<std::uint8_t> target;  // multi-hot, length = vocabulary size
    std::string source_id;
};

// ---------------------------------------------------------------------------
// manifest CSV
// ---------------------------------------------------------------------------

struct ManifestRow {
    std::string path;
    std::string split;
    std::vector<std::string> labels;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (quoted)
        throw InvalidSpec("manifest line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(cur);
    return fields;
}

inline std::vector<std::string> split_labels(const std::string& field) {
    std::vector<std::string> labels;
    std::string cur;
    for (char ch : field) {
        if (ch == ';') {
            if (!cur.empty()) labels.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) labels.push_back(cur);
    return labels;
}

}  // namespace detail

inline std::vector<ManifestRow> parse_manifest(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidSpec("manifest: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "path,split,labels")
        throw InvalidSpec("manifest: first line must be 'path,split,labels', got '" + line +
                          "'");
    std::vector<ManifestRow> rows;
    std::unordered_map<std::string, std::string> seen;  // path -> split
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line, line_no);
        if (fields.size() != 3)
            throw InvalidSpec("manifest line " + std::to_string(line_no) + ": expected 3 " +
                              "fields, got " + std::to_string(fields.size()));
        ManifestRow row;
        row.path = fields[0];
        row.split = fields[1];
        row.labels = detail::split_labels(fields[2]);
        if (row.path.empty())
            throw InvalidSpec("manifest line " + std::to_string(line_no) + ": empty path");
        if (row.split != "train" && row.split != "test")
            throw InvalidSpec("manifest line " + std::to_string(line_no) + ": split '" +
                              row.split + "' is not train or test");
        auto it = seen.find(row.path);
        if (it != seen.end()) {
            if (it->second != row.split)
                throw DuplicateAcrossSplits("manifest: " + row.path + " appears in both '" +
                                            it->second + "' and '" + row.split + "'");
            throw InvalidSpec("manifest: duplicate row for " + row.path);
        }
        seen[row.path] = row.split;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<ManifestRow> parse_manifest_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path);
    return parse_manifest(is);
}

namespace detail {

inline std::vector<std::uint8_t> targets_for(const std::vector<std::string>& labels,
                                             const LabelVocabulary& vocab) {
    std::vector<std::uint8_t> t(vocab.size(), 0);
    for (const auto& name : labels) t[vocab.index_of(name)] = 1;
    return t;
}

}  // namespace detail

/// Loads one split with decoded images, resized to resize_to when nonzero.
inline std::vector<LabeledExample> load_manifest(const std::string& manifest_path,
                                                 const std::string& data_dir,
                                                 const LabelVocabulary& vocab,
                                                 const std::string& split,
                                                 std::size_t resize_to = 0) {
    auto rows = parse_manifest_file(manifest_path);
    std::vector<LabeledExample> out;
    for (const auto& row : rows) {
        if (row.split != split) continue;
        LabeledExample ex;
        ex.source_id = row.path;
        ex.target = detail::targets_for(row.labels, vocab);
        const std::string full =
            (std::filesystem::path(data_dir) / row.path).string();
        ex.image = read_png(full);
        if (resize_to != 0) ex.image = bilinear_resize(ex.image, resize_to, resize_to);
        out.push_back(std::move(ex));
    }
    if (out.empty())
        throw EmptyDataset("manifest " + manifest_path + " has no rows for split '" + split +
                           "'");
    return out;
}

/// Loads one split without touching image files (external-feature mode).
inline std::vector<LabeledExample> load_manifest_labels_only(const std::string& manifest_path,
                                                             const LabelVocabulary& vocab,
                                                             const std::string& split) {
    auto rows = parse_manifest_file(manifest_path);
    std::vector<LabeledExample> out;
    for (const auto& row : rows) {
        if (row.split != split) continue;
        LabeledExample ex;
        ex.source_id = row.path;
        ex.target = detail::targets_for(row.labels, vocab);
        out.push_back(std::move(ex));
    }
    if (out.empty())
        throw EmptyDataset("manifest " + manifest_path + " has no rows for split '" + split +
                           "'");
    return out;
}

// ---------------------------------------------------------------------------
// synthetic glyph corpus
// ---------------------------------------------------------------------------

enum class GlyphShape { disk, square, triangle, ring };

inline const char* glyph_shape_name(GlyphShape s) {
    switch (s) {
        case GlyphShape::disk: return "disk";
        case GlyphShape::square: return "square";
        case GlyphShape::triangle: return "triangle";
        case GlyphShape::ring: return "ring";
    }
    return "unknown";
}

struct GlyphSpec {
    GlyphShape shape;
    std::array<float, 3> color;  // exact byte/255 values
    std::string label;
};

namespace detail {

inline std::array<float, 3> hsv_bytes(double h, double s, double v) {
    const double hp = h * 6.0;
    const int sector = static_cast<int>(hp) % 6;
    const double f = hp - std::floor(hp);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    double r = 0, g = 0, b = 0;
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = q; b = p; break;
    }
    auto byte = [](double x) {
        return static_cast<float>(std::lround(x * 255.0)) / 255.0f;
    };
    return {byte(r), byte(g), byte(b)};
}

}  // namespace detail

/// K glyph classes cycling the four shapes, each with a distinct color.
inline std::vector<GlyphSpec> default_glyph_table(std::size_t num_labels) {
    if (num_labels == 0) throw InvalidSpec("glyph table: need at least one label");
    static const GlyphShape shapes[4] = {GlyphShape::disk, GlyphShape::square,
                                         GlyphShape::triangle, GlyphShape::ring};
    std::vector<GlyphSpec> table;
    std::vector<std::array<float, 3>> used;
    for (std::size_t k = 0; k < num_labels; ++k) {
        GlyphSpec g;
        g.shape = shapes[k % 4];
        g.label = std::string(glyph_shape_name(g.shape)) + "_" + std::to_string(k);
        const double h = static_cast<double>(k) / static_cast<double>(num_labels);
        double v = 1.0;
        g.color = detail::hsv_bytes(h, 1.0, v);
        while (std::find(used.begin(), used.end(), g.color) != used.end()) {
            v *= 0.8;  // nudge brightness until the quantized color is unique
            g.color = detail::hsv_bytes(h, 1.0, v);
        }
        used.push_back(g.color);
        table.push_back(std::move(g));
    }
    return table;
}

struct SyntheticSpec {
    std::size_t num_labels = 8;
    std::size_t train_count = 64;
    std::size_t test_count = 32;
    std::size_t image_size = 64;
    std::size_t min_glyphs = 1;
    std::size_t max_glyphs = 3;
    std::uint64_t seed = 42;

    void validate() const {
        if (num_labels == 0) throw InvalidSpec("synthetic: num_labels must be >= 1");
        if (image_size < 16) throw InvalidSpec("synthetic: image_size must be >= 16");
        if (min_glyphs == 0 || min_glyphs > max_glyphs)
            throw InvalidSpec("synthetic: need 1 <= min_glyphs <= max_glyphs");
        if (max_glyphs > num_labels)
            throw InvalidSpec("synthetic: max_glyphs exceeds num_labels");
        if (train_count == 0 || test_count == 0)
            throw InvalidSpec("synthetic: train_count and test_count must be >= 1");
    }
};

struct SyntheticDataset {
    LabelVocabulary vocab;
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;
};

namespace detail {

struct PlacedGlyph {
    std::size_t label_index;
    double cy, cx, r;
};

inline void draw_glyph(std::vector<float>& canvas, std::size_t size, const GlyphSpec& spec,
                       const PlacedGlyph& g) {
    const double cy = g.cy, cx = g.cx, r = g.r;
    const std::ptrdiff_t y_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(cy - r) - 1);
    const std::ptrdiff_t y_hi =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(size) - 1,
                                 static_cast<std::ptrdiff_t>(cy + r) + 1);
    const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(cx - r) - 1);
    const std::ptrdiff_t x_hi =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(size) - 1,
                                 static_cast<std::ptrdiff_t>(cx + r) + 1);
    for (std::ptrdiff_t y = y_lo; y <= y_hi; ++y)
        for (std::ptrdiff_t x = x_lo; x <= x_hi; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            bool inside = false;
            switch (spec.shape) {
                case GlyphShape::disk:
                    inside = dy * dy + dx * dx <= r * r;
                    break;
                case GlyphShape::square:
                    inside = std::abs(dy) <= 0.85 * r && std::abs(dx) <= 0.85 * r;
                    break;
                case GlyphShape::triangle: {
                    const double half_width = (dy + r) * 0.5;
                    inside = dy >= -r && dy <= r && std::abs(dx) <= half_width;
                    break;
                }
                case GlyphShape::ring: {
                    const double d2 = dy * dy + dx * dx;
                    inside = d2 <= r * r && d2 >= 0.36 * r * r;
                    break;
                }
            }
            if (inside) {
                float* px = &canvas[(static_cast<std::size_t>(y) * size +
                                     static_cast<std::size_t>(x)) *
                                    3];
                px[0] = spec.color[0];
                px[1] = spec.color[1];
                px[2] = spec.color[2];
            }
        }
}

inline std::size_t count_exact_color(const std::vector<float>& canvas,
                                     const std::array<float, 3>& color) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 2 < canvas.size(); i += 3)
        if (canvas[i] == color[0] && canvas[i + 1] == color[1] && canvas[i + 2] == color[2])
            ++n;
    return n;
}

inline LabeledExample synth_example(const SyntheticSpec& spec,
                                    const std::vector<GlyphSpec>& table,
                                    std::uint64_t split_tag, std::size_t index) {
    const std::size_t S = spec.image_size;
    const double dS = static_cast<double>(S);
    constexpr std::size_t kMinVisiblePixels = 8;

    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(mix_seed(mix_seed(spec.seed, split_tag, index), attempt));
        const std::size_t n = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(spec.min_glyphs),
                            static_cast<std::int64_t>(spec.max_glyphs)));
        std::vector<std::size_t> labels(spec.num_labels);
        std::iota(labels.begin(), labels.end(), 0);
        rng.shuffle(labels);
        labels.resize(n);

        // Place with pairwise spacing >= 0.75 * (ri + rj) so no glyph can be
        // fully covered by a later one.
        std::vector<PlacedGlyph> placed;
        bool ok = true;
        for (std::size_t gi = 0; gi < n && ok; ++gi) {
            PlacedGlyph g;
            g.label_index = labels[gi];
            bool found = false;
            for (int tries = 0; tries < 200; ++tries) {
                g.r = rng.uniform(0.10, 0.16) * dS;
                g.cy = rng.uniform(g.r + 1.0, dS - g.r - 2.0);
                g.cx = rng.uniform(g.r + 1.0, dS - g.r - 2.0);
                bool clash = false;
                for (const auto& other : placed) {
                    const double dy = g.cy - other.cy, dx = g.cx - other.cx;
                    const double min_dist = 0.75 * (g.r + other.r);
                    if (dy * dy + dx * dx < min_dist * min_dist) {
                        clash = true;
                        break;
                    }
                }
                if (!clash) {
                    found = true;
                    break;
                }
            }
            if (!found) ok = false;
            if (found) placed.push_back(g);
        }
        if (!ok) continue;  // resample the whole example deterministically

        std::vector<float> canvas(S * S * 3, 0.0f);
        for (const auto& g : placed) draw_glyph(canvas, S, table[g.label_index], g);

        // Every glyph's exact color must survive occlusion by later glyphs.
        bool visible = true;
        for (const auto& g : placed)
            if (count_exact_color(canvas, table[g.label_index].color) < kMinVisiblePixels) {
                visible = false;
                break;
            }
        if (!visible) continue;

        LabeledExample ex;
        ex.image = Tensor<float>::from_data({S, S, 3}, std::move(canvas));
        ex.target.assign(spec.num_labels, 0);
        for (const auto& g : placed) ex.target[g.label_index] = 1;
        ex.source_id = (split_tag == 1 ? "train/img_" : "test/img_") + std::to_string(index);
        return ex;
    }
}

}  // namespace detail

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const auto table = default_glyph_table(spec.num_labels);
    SyntheticDataset ds;
    for (const auto& g : table) ds.vocab.add(g.label);
    ds.train.reserve(spec.train_count);
    for (std::size_t i = 0; i < spec.train_count; ++i)
        ds.train.push_back(detail::synth_example(spec, table, 1, i));
    ds.test.reserve(spec.test_count);
    for (std::size_t i = 0; i < spec.test_count; ++i)
        ds.test.push_back(detail::synth_example(spec, table, 2, i));
    return ds;
}

/// Writes PNGs, manifest.csv, and vocab.txt under out_dir.
inline SyntheticDataset write_synthetic_dataset(const SyntheticSpec& spec,
                                                const std::string& out_dir) {
    SyntheticDataset ds = generate_synthetic(spec);
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "train");
    fs::create_directories(fs::path(out_dir) / "test");

    std::ofstream manifest(fs::path(out_dir) / "manifest.csv");
    if (!manifest) throw DataError("cannot write manifest under " + out_dir);
    manifest << "path,split,labels\n";
    auto emit = [&](const std::vector<LabeledExample>& split, const char* name) {
        for (std::size_t i = 0; i < split.size(); ++i) {
            const std::string rel =
                std::string(name) + "/img_" + std::to_string(i) + ".png";
            write_png((fs::path(out_dir) / rel).string(), split[i].image);
            std::string labels;
            for (std::size_t k = 0; k < split[i].target.size(); ++k)
                if (split[i].target[k]) {
                    if (!labels.empty()) labels += ';';
                    labels += ds.vocab.name(k);
                }
            manifest << rel << ',' << name << ",\"" << labels << "\"\n";
        }
    };
    emit(ds.train, "train");
    emit(ds.test, "test");
    manifest.close();

    std::ofstream vocab(fs::path(out_dir) / "vocab.txt");
    if (!vocab) throw DataError("cannot write vocab under " + out_dir);
    vocab << ds.vocab.to_text();
    return ds;
}

// ---------------------------------------------------------------------------
// augmentation and batching
// ---------------------------------------------------------------------------

/// Training-time augmentation, applied in order: horizontal flip (p = 0.5),
/// vertical flip (p = 0.5), translation up to +-10% with zero fill, then a
/// crop keeping 87.5% of each side at a random offset, zeroing the border.
inline Tensor<float> augment(const Tensor<float>& img, Rng& rng) {
    if (img.rank() != 3) throw ShapeMismatch("augment: expects (H,W,C)");
    const std::size_t h = img.shape()[0], w = img.shape()[1];
    Tensor<float> out = img;
    if (rng.bernoulli(0.5)) out = hflip(out);
    if (rng.bernoulli(0.5)) out = vflip(out);
    const std::int64_t amp_y = std::llround(0.10 * static_cast<double>(h));
    const std::int64_t amp_x = std::llround(0.10 * static_cast<double>(w));
    const std::ptrdiff_t dy = rng.uniform_int(-amp_y, amp_y);
    const std::ptrdiff_t dx = rng.uniform_int(-amp_x, amp_x);
    if (dy != 0 || dx != 0) out = translate(out, dy, dx);
    const std::size_t crop_h =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.875 * h)));
    const std::size_t crop_w =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.875 * w)));
    const std::size_t y0 = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(h - crop_h)));
    const std::size_t x0 = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(w - crop_w)));
    if (crop_h != h || crop_w != w) out = crop_zero_pad(out, y0, x0, crop_h, crop_w);
    return out;
}

/// Stacks the chosen examples into a (B, H, W, 3) batch plus flat targets.
inline std::pair<Tensor<float>, std::vector<std::uint8_t>> make_batch(
    const std::vector<LabeledExample>& examples, const std::vector<std::size_t>& indices,
    Rng* augment_rng = nullptr) {
    if (indices.empty()) throw EmptyInput("make_batch: no indices");
    const auto& first = examples.at(indices[0]).image;
    if (!first.valid() || first.rank() != 3)
        throw ShapeMismatch("make_batch: examples carry no image data");
    const std::size_t h = first.shape()[0], w = first.shape()[1], c = first.shape()[2];
    const std::size_t k = examples.at(indices[0]).target.size();
    std::vector<float> data;
    data.reserve(indices.size() * h * w * c);
    std::vector<std::uint8_t> targets;
    targets.reserve(indices.size() * k);
    for (std::size_t idx : indices) {
        const auto& ex = examples.at(idx);
        if (ex.image.shape() != first.shape())
            throw ShapeMismatch("make_batch: mixed image shapes in one batch");
        if (ex.target.size() != k)
            throw ShapeMismatch("make_batch: mixed target sizes in one batch");
        Tensor<float> img = augment_rng ? augment(ex.image, *augment_rng) : ex.image;
        const auto& v = img.data();
        data.insert(data.end(), v.begin(), v.end());
        targets.insert(targets.end(), ex.target.begin(), ex.target.end());
    }
    return {Tensor<float>::from_data({indices.size(), h, w, c}, std::move(data)),
            std::move(targets)};
}

}  // namespace mlc
