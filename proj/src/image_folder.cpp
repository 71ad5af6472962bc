#include <algorithm>
#include <filesystem>
#include <iostream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fscil/common.hpp"
#include "fscil/data.hpp"

namespace fs = std::filesystem;

namespace fscil {

namespace {

bool looks_like_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm" ||
         ext == ".pgm" || ext == ".tif" || ext == ".tiff";
}

std::vector<float> decode_image(const fs::path& file, int resize_h, int resize_w, int& h, int& w) {
  cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("image_folder: cannot decode " + file.string());
  if (resize_h > 0 && resize_w > 0 && (img.rows != resize_h || img.cols != resize_w))
    cv::resize(img, img, cv::Size(resize_w, resize_h), 0, 0, cv::INTER_AREA);
  h = img.rows;
  w = img.cols;
  // BGR uint8 -> RGB float planes in [0,1]
  std::vector<float> px(static_cast<size_t>(3) * h * w);
  for (int y = 0; y < h; ++y) {
    const auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      px[0 * h * w + y * w + x] = row[x][2] / 255.0f;
      px[1 * h * w + y * w + x] = row[x][1] / 255.0f;
      px[2 * h * w + y * w + x] = row[x][0] / 255.0f;
    }
  }
  return px;
}

}  // namespace

FolderSplit load_image_folder(const std::string& root,
                              const std::optional<std::vector<std::string>>& manifest,
                              int resize_h, int resize_w) {
  if (!fs::is_directory(root)) throw DataError("image_folder: " + root + " is not a directory");

  std::vector<std::string> on_disk;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) on_disk.push_back(entry.path().filename().string());
  std::sort(on_disk.begin(), on_disk.end());

  std::vector<std::string> order;
  if (manifest) {
    for (const auto& name : on_disk)
      if (std::find(manifest->begin(), manifest->end(), name) == manifest->end())
        throw DataError("image_folder: folder '" + name + "' is absent from the manifest");
    for (const auto& name : *manifest) {
      if (std::find(on_disk.begin(), on_disk.end(), name) == on_disk.end())
        throw DataError("image_folder: manifest class '" + name + "' has no folder under " +
                        root);
      order.push_back(name);
    }
  } else {
    order = on_disk;
  }

  FolderSplit split;
  for (const auto& cls_name : order) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / cls_name))
      if (entry.is_regular_file() && looks_like_image(entry.path())) files.push_back(entry.path());
    if (files.empty()) {
      std::cerr << "[fscil] warning: class folder '" << cls_name
                << "' has no images, excluding it\n";
      continue;
    }
    std::sort(files.begin(), files.end());
    int cls_id = static_cast<int>(split.class_names.size());
    split.class_names.push_back(cls_name);
    for (const auto& file : files) {
      int h = 0, w = 0;
      split.images.push_back(decode_image(file, resize_h, resize_w, h, w));
      if (split.height == 0) {
        split.height = h;
        split.width = w;
      } else if (h != split.height || w != split.width) {
        throw DataError("image_folder: " + file.string() + " has size " + std::to_string(w) + "x" +
                        std::to_string(h) + ", expected " + std::to_string(split.width) + "x" +
                        std::to_string(split.height) + " (set resize in the dataset config)");
      }
      split.labels.push_back(cls_id);
    }
  }
  return split;
}

DatasetPtr load_image_folder_dataset(const std::string& root,
                                     const std::optional<std::vector<std::string>>& manifest,
                                     int resize_h, int resize_w) {
  auto train = load_image_folder((fs::path(root) / "train").string(), manifest, resize_h, resize_w);
  auto test = load_image_folder((fs::path(root) / "test").string(), manifest, resize_h, resize_w);
  if (train.class_names != test.class_names)
    throw DataError("image_folder: train/ and test/ class folders disagree under " + root);
  if (train.height != test.height || train.width != test.width)
    throw DataError("image_folder: train/ and test/ image sizes disagree under " + root);

  auto ds = std::make_shared<Dataset>();
  ds->name = "image_folder";
  ds->augment = true;
  ds->reserve(static_cast<int>(train.images.size() + test.images.size()), 3, train.height,
              train.width);
  for (size_t i = 0; i < train.images.size(); ++i)
    ds->add_example(train.images[i].data(), train.labels[i], false);
  for (size_t i = 0; i < test.images.size(); ++i)
    ds->add_example(test.images[i].data(), test.labels[i], true);
  ds->num_classes = static_cast<int>(train.class_names.size());
  ds->finalize();
  return ds;
}

}  // namespace fscil
