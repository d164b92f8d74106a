#include "clustertab/render.hpp"

#include <cstdio>
#include <sstream>

#include "clustertab/labels.hpp"

namespace clustertab {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void rect(std::ostringstream& os, const Box& b, std::string_view stroke, double width, bool dashed,
          std::string_view cls, const std::string& title = {}) {
  os << "<rect class=\"" << cls << "\" x=\"" << num(b.x0) << "\" y=\"" << num(b.y0) << "\" width=\""
     << num(b.width()) << "\" height=\"" << num(b.height()) << "\" fill=\"none\" stroke=\"" << stroke
     << "\" stroke-width=\"" << num(width) << "\"";
  if (dashed) os << " stroke-dasharray=\"3,2\"";
  if (title.empty()) {
    os << "/>\n";
  } else {
    os << "><title>" << escape(title) << "</title></rect>\n";
  }
}

}  // namespace

std::string_view class_color(ClassId c) {
  switch (c) {
    case ClassId::Table: return "#d62728";
    case ClassId::Cell: return "#2ca02c";
    case ClassId::Row: return "#1f77b4";
    case ClassId::Column: return "#ff7f0e";
    case ClassId::Header: return "#9467bd";
  }
  return "#000000";
}

std::string render_overlay(const Page& page, const ClusterPrediction& prediction) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(page.width) << "\" height=\""
     << num(page.height) << "\" viewBox=\"0 0 " << num(page.width) << " " << num(page.height) << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << num(page.width) << "\" height=\"" << num(page.height)
     << "\" fill=\"white\"/>\n";
  os << "<g id=\"words\">\n";
  for (const auto& w : page.words) {
    rect(os, w.box, "#999999", 0.5, false, "word", w.text);
  }
  os << "</g>\n";
  for (ClassId c : kAllClasses) {
    const auto& cc = prediction[c];
    os << "<g id=\"" << to_string(c) << "\">\n";
    for (std::size_t i = 0; i < cc.size(); ++i) {
      const bool spanning = i < cc.spanning.size() && cc.spanning[i];
      rect(os, cc.boxes[i], class_color(c), 1.0, spanning, to_string(c));
      if (i < cc.extensions.size())
        for (int w : cc.extensions[i])
          if (w >= 0 && w < static_cast<int>(page.words.size()))
            rect(os, page.words[w].box, class_color(c), 0.5, true, "extension");
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

ClusterPrediction clusters_from_labels(const AnnotatedPage& page) {
  const ClusterSets sets = ground_truth_clusters(page.page.words, page.annotation);
  ClusterPrediction out;
  for (ClassId c : kAllClasses) {
    auto& cc = out[c];
    for (const auto& spec : sets[c]) {
      cc.clusters.push_back(spec.members);
      cc.extensions.push_back(spec.extensions);
      cc.confidence.push_back(1.0);
      cc.spanning.push_back(spec.spanning);
    }
    cc.boxes = clusters_to_boxes(cc.clusters, cc.extensions, page.page.words, c);
  }
  return out;
}

}  // namespace clustertab
