#include <set>
#include <stdexcept>

#include "wsod/dataset.hpp"

namespace wsod {

std::map<DatasetManifest::CountKey, std::size_t> DatasetManifest::counts()
    const {
  std::map<CountKey, std::size_t> out;
  for (const auto& r : records) {
    const Supervision sup =
        r.is_strong() ? Supervision::kStrong : Supervision::kWeak;
    ++out[{r.split, sup, r.label()}];
  }
  return out;
}

std::size_t DatasetManifest::count(Split split, Supervision sup) const {
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.split == split && r.is_strong() == (sup == Supervision::kStrong)) {
      ++n;
    }
  }
  return n;
}

std::vector<ImageRecord> DatasetManifest::select(Split split,
                                                 Supervision sup) const {
  std::vector<ImageRecord> out;
  for (const auto& r : records) {
    if (r.split == split && r.is_strong() == (sup == Supervision::kStrong)) {
      out.push_back(r);
    }
  }
  return out;
}

void validate_manifest(const DatasetManifest& m) {
  std::set<std::string> train_groups, test_groups, ids;
  for (const auto& r : m.records) {
    if (!ids.insert(r.id).second) {
      throw std::invalid_argument("duplicate record id '" + r.id + "'");
    }
    (r.split == Split::kTrain ? train_groups : test_groups).insert(r.group);
    if (r.is_strong()) {
      validate_strong(r.strong(), r.image.width, r.image.height, r.id);
    }
  }
  for (const auto& g : train_groups) {
    if (test_groups.count(g)) {
      throw std::invalid_argument("patient group '" + g +
                                  "' appears in both train and test splits");
    }
  }
}

}  // namespace wsod
