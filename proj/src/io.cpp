#include "qlvm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace qlvm {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    if (res.ec != std::errc()) throw std::runtime_error("format_double: buffer too small");
    return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_out(const std::string& path, std::ios_base::openmode mode) {
    std::ofstream out(path, mode);
    if (!out) throw std::invalid_argument("cannot open file for writing: " + path);
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Matrix& rows) {
    if (static_cast<int>(header.size()) != rows.cols)
        throw std::invalid_argument("write_csv: header width does not match the data");
    auto out = open_out(path, std::ios::binary);
    for (std::size_t c = 0; c < header.size(); ++c)
        out << (c ? "," : "") << header[c];
    out << '\n';
    for (int r = 0; r < rows.rows; ++r) {
        for (int c = 0; c < rows.cols; ++c)
            out << (c ? "," : "") << format_double(rows(r, c));
        out << '\n';
    }
    finish(out, path);
}

void write_point_set_csv(const std::string& path, const PointSet& points) {
    std::vector<std::string> header;
    for (int k = 0; k < points.dimension; ++k) header.push_back("z" + std::to_string(k));
    write_csv(path, header, points.points);
}

void write_trace_csv(const std::string& path, const std::vector<double>& objective) {
    Matrix rows(static_cast<int>(objective.size()), 2);
    for (std::size_t e = 0; e < objective.size(); ++e) {
        rows(static_cast<int>(e), 0) = static_cast<double>(e);
        rows(static_cast<int>(e), 1) = objective[e];
    }
    write_csv(path, {"epoch", "objective"}, rows);
}

Matrix bin_to_grid(const Matrix& points, const std::vector<double>& values, int resolution) {
    if (points.cols != 2) throw std::invalid_argument("bin_to_grid: points must be 2D");
    if (points.rows == 0) throw std::invalid_argument("bin_to_grid: empty point set");
    if (static_cast<int>(values.size()) != points.rows)
        throw std::invalid_argument("bin_to_grid: one value per point required");
    if (resolution <= 0) throw std::invalid_argument("bin_to_grid: resolution must be positive");

    const int m = points.rows;
    // Bucket grid so each pixel only scans nearby points. Ring r of buckets
    // cannot hold anything closer than (r - 1) bucket widths.
    const int g = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(m)))));
    std::vector<std::vector<int>> buckets(static_cast<std::size_t>(g) * g);
    auto bucket_of = [&](double a, double b) {
        int ba = std::min(g - 1, static_cast<int>(a * g));
        int bb = std::min(g - 1, static_cast<int>(b * g));
        return ba * g + bb;
    };
    for (int j = 0; j < m; ++j) buckets[bucket_of(points(j, 0), points(j, 1))].push_back(j);

    auto wrap_abs = [](double d) {
        d = std::fabs(d);
        d -= std::floor(d);
        return std::min(d, 1.0 - d);
    };
    Matrix grid(resolution, resolution);
    const int max_ring = g / 2 + 1;
    for (int r = 0; r < resolution; ++r) {
        const double p0 = (r + 0.5) / resolution;
        for (int c = 0; c < resolution; ++c) {
            const double p1 = (c + 0.5) / resolution;
            const int b0 = std::min(g - 1, static_cast<int>(p0 * g));
            const int b1 = std::min(g - 1, static_cast<int>(p1 * g));
            double best = 2.0;
            int best_j = -1;
            for (int ring = 0; ring <= max_ring; ++ring) {
                const double reach = static_cast<double>(ring - 1) / g;
                if (best_j >= 0 && best <= reach * reach) break;
                for (int da = -ring; da <= ring; ++da) {
                    for (int db = -ring; db <= ring; ++db) {
                        if (std::max(std::abs(da), std::abs(db)) != ring) continue;
                        const int ba = ((b0 + da) % g + g) % g;
                        const int bb = ((b1 + db) % g + g) % g;
                        for (int j : buckets[static_cast<std::size_t>(ba) * g + bb]) {
                            const double d0 = wrap_abs(points(j, 0) - p0);
                            const double d1 = wrap_abs(points(j, 1) - p1);
                            const double d2 = d0 * d0 + d1 * d1;
                            if (d2 < best || (d2 == best && j < best_j)) {
                                best = d2;
                                best_j = j;
                            }
                        }
                    }
                }
            }
            grid(r, c) = values[static_cast<std::size_t>(best_j)];
        }
    }
    return grid;
}

void write_pgm(const std::string& path, const Matrix& grid) {
    if (grid.rows == 0 || grid.cols == 0) throw std::invalid_argument("write_pgm: empty grid");
    double lo = grid(0, 0), hi = grid(0, 0);
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const double v = grid(r, c);
            if (!std::isfinite(v))
                throw std::invalid_argument("write_pgm: non-finite grid values");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = hi - lo;
    auto out = open_out(path, std::ios::binary);
    out << "P5\n" << grid.cols << ' ' << grid.rows << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(grid.cols));
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            const double v = span > 0.0 ? (grid(r, c) - lo) / span : 0.0;
            row[static_cast<std::size_t>(c)] =
                static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    finish(out, path);
    write_text_file(path + ".scale.txt",
                    "min=" + format_double(lo) + "\nmax=" + format_double(hi) + "\n");
}

Matrix image_strip(const Matrix& frames, int height, int width) {
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("image_strip: frame size must be positive");
    if (frames.rows == 0) throw std::invalid_argument("image_strip: no frames");
    if (frames.cols != height * width)
        throw std::invalid_argument("image_strip: frame size does not match the data width");
    Matrix strip(height, frames.rows * width);
    for (int f = 0; f < frames.rows; ++f)
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                strip(r, f * width + c) = frames(f, r * width + c);
    return strip;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    auto out = open_out(path, std::ios::binary);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    finish(out, path);
}

DirectoryLock::DirectoryLock(const std::string& directory) : path_(directory + "/.lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
        throw std::invalid_argument("output directory is locked by another run: " + directory);
    std::fclose(f);
}

DirectoryLock::~DirectoryLock() { std::remove(path_.c_str()); }

}  // namespace qlvm
