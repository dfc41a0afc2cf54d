#pragma once

#include "gtalk/io/image.hpp"
#include "gtalk/model/deform.hpp"
#include "gtalk/scene/camera.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gtalk::data {

// Pixel rectangle [x0, x1) x [y0, y1).
struct LipBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct FrameRecord {
    std::size_t index = 0;
    bool test = false;
    std::string image;       // relative to the manifest directory
    std::string background;  // relative to the manifest directory
    Eigen::Matrix4d extrinsic = Eigen::Matrix4d::Identity();
    std::vector<double> audio;
    double eye = 0.0;
    LipBox lip;
};

// Text manifest, one record per line:
//   gtalk-dataset 1
//   scenario <name>
//   seed <n>
//   size <width> <height>
//   intrinsics <fx> <fy> <cx> <cy>
//   audio_dim <D>
//   points <path>
//   mouth_ids <k> <id>...
//   eye_ids <k> <id>...
//   frames <count>
//   frame <i> <train|test> image <path> background <path> eye <e> lip <x0> <y0> <x1> <y1>
//         extrinsic <12 values, rows of the 3x4 block> audio <D values>
struct DatasetManifest {
    std::filesystem::path root;  // directory holding the manifest (not serialized)
    std::string scenario;
    std::uint64_t seed = 0;
    int width = 0, height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    std::size_t audio_dim = 0;
    std::string points;
    std::vector<std::uint32_t> mouth_ids;
    std::vector<std::uint32_t> eye_ids;
    std::vector<FrameRecord> frames;

    Camera camera(std::size_t frame) const;
    std::filesystem::path points_path() const { return root / points; }
};

inline constexpr const char* kManifestName = "manifest.txt";

// Frames with index % 11 == 10 are held out: a 10:1 train/test ratio.
inline bool is_test_index(std::size_t index) { return index % 11 == 10; }

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
// Throws DataError naming the line (and frame index when known) on malformed input.
DatasetManifest read_manifest(const std::filesystem::path& path);

enum class Split { train, test, all };

struct Frame {
    std::size_t index = 0;
    Image8 image;
    Image8 background;
    model::ConditionFrame condition;
    LipBox lip;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Frame> frames;  // index order within the split
};

// Loads every frame of the split. Missing or unreadable files throw DataError
// naming the frame.
Dataset load_dataset(const std::filesystem::path& manifest_path, Split split = Split::all);

} // namespace gtalk::data
