#pragma once

#include <string>
#include <vector>

#include "qlvm/lattice.hpp"
#include "qlvm/matrix.hpp"

namespace qlvm {

// Shortest-exact decimal text of v ('.' decimal point, no locale), as if by
// printf("%.17g") in the C locale.
std::string format_double(double v);

// CSV with one header line, ',' separators, '\n' line ends. Every cell is
// formatted with format_double, so integral values print without a decimal
// point.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Matrix& rows);

// One point per row, coordinates in column order.
void write_point_set_csv(const std::string& path, const PointSet& points);

// Loss trace rows (epoch, mean objective), epochs numbered from zero.
void write_trace_csv(const std::string& path, const std::vector<double>& objective);

// Nearest-neighbor binning of values sampled at 2D toroidal points onto a
// square raster. Pixel (r, c) sits at ((r + 0.5)/res, (c + 0.5)/res) in
// (row, column) = (coordinate 0, coordinate 1) order and takes the value of
// the toroidally nearest point.
Matrix bin_to_grid(const Matrix& points, const std::vector<double>& values, int resolution);

// 8-bit binary PGM (P5), min-max scaled per file; the scale is recorded in a
// sidecar text file at path + ".scale.txt". A constant grid maps to zero.
void write_pgm(const std::string& path, const Matrix& grid);

// Lays n frames of height x width pixels side by side into one
// height x (n * width) raster. Row r of a frame is the slice
// frames(f, r*width .. r*width+width-1).
Matrix image_strip(const Matrix& frames, int height, int width);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// Exclusive lock file (<directory>/.lock) held for a run's duration.
// Creation is atomic; the constructor throws std::invalid_argument when the
// lock is already held, the destructor releases it.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::string& directory);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::string path_;
};

}  // namespace qlvm
