#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/vocab.hpp"

namespace cxmx {

// Row-major grayscale image with pixels in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline double mean_squared_error(const Image& a, const Image& b) {
  require(a.height == b.height && a.width == b.width, "image shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

// Flat list of equally sized patch vectors.
struct PatchSet {
  int dim = 0;
  std::vector<double> values;

  std::size_t size() const { return dim == 0 ? 0 : values.size() / static_cast<std::size_t>(dim); }
  std::span<const double> operator[](std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  void push(std::span<const double> p) {
    if (dim == 0) dim = static_cast<int>(p.size());
    require(static_cast<int>(p.size()) == dim, "inconsistent patch length");
    values.insert(values.end(), p.begin(), p.end());
  }
};

// Non-overlapping patches in row-major patch order, each flattened row-major.
inline PatchSet extract_patches(const Image& image, int patch_side) {
  require(patch_side > 0 && image.height % patch_side == 0 && image.width % patch_side == 0,
          "image dimensions not divisible by patch side");
  PatchSet out;
  out.dim = patch_side * patch_side;
  out.values.reserve(image.pixels.size());
  for (int pr = 0; pr < image.height / patch_side; ++pr) {
    for (int pc = 0; pc < image.width / patch_side; ++pc) {
      for (int r = 0; r < patch_side; ++r) {
        for (int c = 0; c < patch_side; ++c) {
          out.values.push_back(image.at(pr * patch_side + r, pc * patch_side + c));
        }
      }
    }
  }
  return out;
}

struct VqCodebook {
  int patch_side = 4;
  int code_count = 0;
  std::vector<double> codes;  // code_count x patch_side^2
  // Mean per-pixel squared error over the training patches.
  double distortion = 0.0;
  // Largest per-pixel squared error of any single training patch; bounds the
  // reconstruction MSE of every image whose patches were in the training set.
  double peak_distortion = 0.0;
  int iterations = 0;

  int dim() const { return patch_side * patch_side; }
  std::span<const double> code(int i) const {
    return {codes.data() + static_cast<std::size_t>(i) * dim(), static_cast<std::size_t>(dim())};
  }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

struct NearestCode {
  int index = 0;
  double distance = 0.0;
};

// Exhaustive nearest code; ties go to the lowest index.
inline NearestCode nearest_code(std::span<const double> patch, const VqCodebook& book) {
  NearestCode best{0, std::numeric_limits<double>::infinity()};
  for (int c = 0; c < book.code_count; ++c) {
    const double d = squared_distance(patch, book.code(c));
    if (d < best.distance) best = {c, d};
  }
  return best;
}

struct KMeansOptions {
  int max_iterations = 50;
  double tolerance = 1e-6;  // relative distortion improvement
};

// k-means with k-means++ seeding.
//
// Seeding consumes the engine seeded with `seed` as follows: the first centre
// is patch uniform_index(n); each later centre draws u = uniform01() and takes
// the first patch whose cumulative squared distance to the chosen centres
// exceeds u * total. If every distance is zero the farthest (ties: lowest
// index) patch not yet chosen is used instead, falling back to index 0.
// Lloyd iterations then alternate assignment and mean update; a cluster that
// ends up empty is re-seeded from the patch with the largest current error.
inline VqCodebook fit_codebook(const PatchSet& patches, int code_count, std::uint64_t seed,
                               int patch_side = 4, KMeansOptions opts = {}) {
  require(patches.size() > 0, "fit_codebook: empty patch list");
  require(patches.dim == patch_side * patch_side, "fit_codebook: patch length != patch_side^2");
  require(patches.values.size() % static_cast<std::size_t>(patches.dim) == 0,
          "fit_codebook: inconsistent patch lengths");
  require(code_count >= 1, "fit_codebook: code_count must be >= 1");

  const std::size_t n = patches.size();
  const int dim = patches.dim;
  VqCodebook book;
  book.patch_side = patch_side;
  book.code_count = code_count;
  book.codes.assign(static_cast<std::size_t>(code_count) * dim, 0.0);

  auto set_code = [&](int c, std::size_t p) {
    auto src = patches[p];
    std::copy(src.begin(), src.end(), book.codes.begin() + static_cast<std::ptrdiff_t>(c) * dim);
  };

  Rng rng = make_rng(seed);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);
  std::size_t first = uniform_index(rng, n);
  set_code(0, first);
  chosen[first] = 1;
  for (int c = 1; c < code_count; ++c) {
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      d2[p] = std::min(d2[p], squared_distance(patches[p], book.code(c - 1)));
      total += d2[p];
    }
    std::size_t pick = 0;
    const double u = uniform01(rng);
    if (total > 0.0) {
      const double target = u * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t p = 0; p < n; ++p) {
        acc += d2[p];
        if (acc > target) {
          pick = p;
          break;
        }
      }
    } else {
      for (std::size_t p = 0; p < n; ++p) {
        if (!chosen[p]) {
          pick = p;
          break;
        }
      }
    }
    set_code(c, pick);
    chosen[pick] = 1;
  }

  std::vector<int> assign(n, 0);
  std::vector<double> err(n, 0.0);
  auto assign_all = [&]() {
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const auto best = nearest_code(patches[p], book);
      assign[p] = best.index;
      err[p] = best.distance;
      total += best.distance;
    }
    return total / static_cast<double>(n * static_cast<std::size_t>(dim));
  };

  double previous = assign_all();
  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    std::vector<double> sums(static_cast<std::size_t>(code_count) * dim, 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(code_count), 0);
    for (std::size_t p = 0; p < n; ++p) {
      auto patch = patches[p];
      const auto base = static_cast<std::size_t>(assign[p]) * dim;
      for (int d = 0; d < dim; ++d) sums[base + d] += patch[d];
      ++counts[static_cast<std::size_t>(assign[p])];
    }
    std::vector<char> reused(n, 0);
    for (int c = 0; c < code_count; ++c) {
      const auto base = static_cast<std::size_t>(c) * dim;
      if (counts[static_cast<std::size_t>(c)] > 0) {
        const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        for (int d = 0; d < dim; ++d) {
          book.codes[base + d] = sums[base + d] * inv;
        }
      } else {
        std::size_t far = 0;
        double far_err = -1.0;
        for (std::size_t p = 0; p < n; ++p) {
          if (!reused[p] && err[p] > far_err) {
            far_err = err[p];
            far = p;
          }
        }
        reused[far] = 1;
        err[far] = 0.0;
        set_code(c, far);
      }
    }
    const double current = assign_all();
    const double improvement = previous - current;
    previous = current;
    if (previous == 0.0 || improvement < opts.tolerance * (previous + improvement)) {
      ++iter;
      break;
    }
  }
  book.iterations = iter;
  book.distortion = previous;
  book.peak_distortion = *std::max_element(err.begin(), err.end()) / dim;
  return book;
}

inline std::vector<TokenId> encode_image(const Image& image, const VqCodebook& book,
                                         const VocabLayout& vocab) {
  require(image.height % book.patch_side == 0 && image.width % book.patch_side == 0,
          "encode_image: dimensions not divisible by patch side");
  require(book.code_count == vocab.image_size, "codebook size does not match the image block");
  const PatchSet patches = extract_patches(image, book.patch_side);
  std::vector<TokenId> ids(patches.size());
  for (std::size_t p = 0; p < patches.size(); ++p) {
    ids[p] = vocab.image_token(nearest_code(patches[p], book).index);
  }
  return ids;
}

// Paints each code into its patch slot; MASK paints zeros.
inline Image decode_tokens(std::span<const TokenId> tokens, const VqCodebook& book,
                           const VocabLayout& vocab, int grid_rows, int grid_cols) {
  require(static_cast<std::size_t>(grid_rows) * grid_cols == tokens.size(),
          "decode_tokens: token count does not match grid");
  const int side = book.patch_side;
  Image out(grid_rows * side, grid_cols * side, 0.0);
  for (int pr = 0; pr < grid_rows; ++pr) {
    for (int pc = 0; pc < grid_cols; ++pc) {
      const TokenId id = tokens[static_cast<std::size_t>(pr) * grid_cols + pc];
      if (id == vocab.mask()) continue;
      require(vocab.is_image(id), "decode_tokens: id " + std::to_string(id) +
                                      " is neither an image token nor MASK");
      const auto code = book.code(vocab.code_of(id));
      for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
          out.at(pr * side + r, pc * side + c) = code[static_cast<std::size_t>(r) * side + c];
        }
      }
    }
  }
  return out;
}

inline Image decode_tokens(std::span<const TokenId> tokens, const VqCodebook& book,
                           const VocabLayout& vocab) {
  const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens.size()))));
  require(static_cast<std::size_t>(side) * side == tokens.size(),
          "decode_tokens: non-square grid needs explicit dimensions");
  return decode_tokens(tokens, book, vocab, side, side);
}

}  // namespace cxmx
