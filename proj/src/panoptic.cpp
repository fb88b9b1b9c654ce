#include "lips/panoptic.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "lips/kernels.hpp"

namespace lips {
namespace {

[[noreturn]] void parse_error(const std::string& source, int line, const std::string& msg) {
  throw InvalidInputError(source + ":" + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

CategoryTable::CategoryTable(std::vector<Category> categories) : categories_(std::move(categories)) {
  std::sort(categories_.begin(), categories_.end(),
            [](const Category& a, const Category& b) { return a.id < b.id; });
  for (size_t i = 0; i < categories_.size(); ++i) {
    require_config(categories_[i].id > 0, "category ids must be positive");
    require_config(i == 0 || categories_[i].id != categories_[i - 1].id,
                   "duplicate category id " + std::to_string(categories_[i].id));
  }
}

CategoryTable CategoryTable::synthetic(int n) {
  std::vector<Category> cats;
  for (int i = 1; i <= n; ++i) cats.push_back({i, "class" + std::to_string(i), i % 2 == 1});
  return CategoryTable(std::move(cats));
}

CategoryTable CategoryTable::read_csv(std::istream& in, const std::string& source) {
  std::vector<Category> cats;
  std::set<int> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("id,", 0) == 0) continue;
    std::istringstream ls(line);
    std::string id_s, name, thing_s;
    if (!std::getline(ls, id_s, ',') || !std::getline(ls, name, ',') ||
        !std::getline(ls, thing_s)) {
      parse_error(source, line_no, "expected 'id,name,is_thing'");
    }
    Category c;
    try {
      size_t used = 0;
      c.id = std::stoi(trim(id_s), &used);
      if (used != trim(id_s).size()) throw std::invalid_argument("id");
    } catch (const std::exception&) {
      parse_error(source, line_no, "invalid category id '" + id_s + "'");
    }
    thing_s = trim(thing_s);
    if (thing_s != "0" && thing_s != "1") parse_error(source, line_no, "is_thing must be 0 or 1");
    if (c.id <= 0) parse_error(source, line_no, "category id must be positive");
    if (!seen.insert(c.id).second) parse_error(source, line_no, "duplicate category id");
    c.name = trim(name);
    c.is_thing = thing_s == "1";
    cats.push_back(std::move(c));
  }
  if (cats.empty()) throw InvalidInputError(source + ": no categories");
  return CategoryTable(std::move(cats));
}

void CategoryTable::write_csv(std::ostream& out) const {
  out << "id,name,is_thing\n";
  for (const auto& c : categories_) out << c.id << ',' << c.name << ',' << (c.is_thing ? 1 : 0) << '\n';
}

const Category* CategoryTable::find(int id) const {
  auto it = std::lower_bound(categories_.begin(), categories_.end(), id,
                             [](const Category& c, int v) { return c.id < v; });
  return it != categories_.end() && it->id == id ? &*it : nullptr;
}

const SegmentInfo* PanopticSegmentation::find(int id) const {
  for (const auto& s : segments) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

std::optional<std::string> check_invariants(const PanopticSegmentation& seg) {
  if (seg.height <= 0 || seg.width <= 0) return "non-positive extents";
  if (static_cast<int64_t>(seg.id_map.size()) != seg.height * seg.width) {
    return "id map size does not match extents";
  }
  std::set<int> ids;
  for (const auto& s : seg.segments) {
    if (s.id <= 0) return "segment id " + std::to_string(s.id) + " is not positive";
    if (!ids.insert(s.id).second) return "duplicate segment id " + std::to_string(s.id);
  }
  for (int32_t v : seg.id_map) {
    if (v < 0) return "negative id in map";
    if (v != 0 && !ids.count(v)) return "id " + std::to_string(v) + " has no segment record";
  }
  return std::nullopt;
}

PanopticSegmentation read_lseg(std::istream& in, const std::string& source) {
  PanopticSegmentation seg;
  std::string line;
  int line_no = 0;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) parse_error(source, line_no + 1, std::string("missing ") + what);
    ++line_no;
  };

  next_line("header");
  {
    std::istringstream ls(line);
    std::string extra;
    if (!(ls >> seg.height >> seg.width) || (ls >> extra) || seg.height <= 0 || seg.width <= 0) {
      parse_error(source, line_no, "header must be 'H W' with positive extents");
    }
  }
  next_line("segment count");
  int64_t count = -1;
  {
    std::istringstream ls(line);
    std::string extra;
    if (!(ls >> count) || (ls >> extra) || count < 0) {
      parse_error(source, line_no, "segment count must be a non-negative integer");
    }
  }
  std::set<int> ids;
  for (int64_t i = 0; i < count; ++i) {
    next_line("segment record");
    std::istringstream ls(line);
    SegmentInfo s;
    int thing = -1;
    std::string extra;
    if (!(ls >> s.id >> s.category_id >> thing) || (ls >> extra) || (thing != 0 && thing != 1)) {
      parse_error(source, line_no, "segment record must be 'id category_id is_thing(0|1)'");
    }
    if (s.id <= 0) parse_error(source, line_no, "segment id must be positive");
    if (!ids.insert(s.id).second) parse_error(source, line_no, "duplicate segment id");
    s.is_thing = thing == 1;
    seg.segments.push_back(s);
  }
  seg.id_map.reserve(static_cast<size_t>(seg.height * seg.width));
  for (int64_t y = 0; y < seg.height; ++y) {
    next_line("id row");
    std::istringstream ls(line);
    for (int64_t x = 0; x < seg.width; ++x) {
      int32_t v = 0;
      if (!(ls >> v)) parse_error(source, line_no, "expected " + std::to_string(seg.width) + " ids");
      if (v != 0 && !ids.count(v)) {
        parse_error(source, line_no, "id " + std::to_string(v) + " has no segment record");
      }
      seg.id_map.push_back(v);
    }
    std::string extra;
    if (ls >> extra) parse_error(source, line_no, "too many ids in row");
  }
  return seg;
}

void write_lseg(std::ostream& out, const PanopticSegmentation& seg) {
  out << seg.height << ' ' << seg.width << '\n' << seg.segments.size() << '\n';
  for (const auto& s : seg.segments) {
    out << s.id << ' ' << s.category_id << ' ' << (s.is_thing ? 1 : 0) << '\n';
  }
  for (int64_t y = 0; y < seg.height; ++y) {
    for (int64_t x = 0; x < seg.width; ++x) {
      if (x) out << ' ';
      out << seg.id_map[static_cast<size_t>(y * seg.width + x)];
    }
    out << '\n';
  }
}

PanopticSegmentation panoptic_inference(const DecoderOutput& output,
                                        const CategoryTable& categories, int64_t target_h,
                                        int64_t target_w, const PanopticOptions& options) {
  const Tensor& cls = output.class_logits;
  require_shape(cls.rank() == 2 && output.mask_logits.rank() == 3 &&
                    cls.dim(0) == output.mask_logits.dim(0),
                "decoder output shapes are inconsistent");
  const int64_t q = cls.dim(0);
  const int num_classes = static_cast<int>(cls.dim(1)) - 1;
  require_config(num_classes == categories.size(),
                 "decoder predicts " + std::to_string(num_classes) + " classes but the table has " +
                     std::to_string(categories.size()));

  const Tensor masks = bilinear_resize(output.mask_logits, target_h, target_w);
  const int64_t hw = target_h * target_w;

  struct Candidate {
    int64_t query;
    int label;
    double score;
    std::vector<uint8_t> mask;
    int64_t area;
  };
  std::vector<Candidate> kept;
  for (int64_t i = 0; i < q; ++i) {
    std::vector<float> probs(cls.data().begin() + i * cls.dim(1),
                             cls.data().begin() + (i + 1) * cls.dim(1));
    softmax_inplace(probs);
    const auto best_all = std::max_element(probs.begin(), probs.end()) - probs.begin();
    if (best_all == num_classes) continue;  // no-object
    const int label = static_cast<int>(
        std::max_element(probs.begin(), probs.begin() + num_classes) - probs.begin());

    Candidate c{i, label, 0.0, std::vector<uint8_t>(static_cast<size_t>(hw), 0), 0};
    double prob_sum = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
      const float pr = sigmoid(masks[i * hw + p]);
      if (pr >= options.mask_threshold) {
        c.mask[static_cast<size_t>(p)] = 1;
        prob_sum += pr;
        ++c.area;
      }
    }
    if (c.area == 0) continue;
    c.score = probs[static_cast<size_t>(label)] * (prob_sum / static_cast<double>(c.area));
    if (c.score < options.object_score_threshold) continue;
    kept.push_back(std::move(c));
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

  PanopticSegmentation seg;
  seg.height = target_h;
  seg.width = target_w;
  seg.id_map.assign(static_cast<size_t>(hw), 0);
  std::map<int, int> stuff_segment;
  int next_id = 1;
  for (const Candidate& c : kept) {
    int64_t surviving = 0;
    for (int64_t p = 0; p < hw; ++p) {
      if (c.mask[static_cast<size_t>(p)] && seg.id_map[static_cast<size_t>(p)] == 0) ++surviving;
    }
    if (surviving == 0 ||
        static_cast<double>(surviving) / static_cast<double>(c.area) < options.overlap_keep_threshold) {
      continue;
    }
    const Category& cat = categories.at_index(c.label);
    int id = 0;
    if (!cat.is_thing) {
      auto it = stuff_segment.find(cat.id);
      if (it != stuff_segment.end()) id = it->second;
    }
    if (id == 0) {
      id = next_id++;
      seg.segments.push_back({id, cat.id, cat.is_thing});
      if (!cat.is_thing) stuff_segment[cat.id] = id;
    }
    for (int64_t p = 0; p < hw; ++p) {
      if (c.mask[static_cast<size_t>(p)] && seg.id_map[static_cast<size_t>(p)] == 0) {
        seg.id_map[static_cast<size_t>(p)] = id;
      }
    }
  }
  return seg;
}

}  // namespace lips
