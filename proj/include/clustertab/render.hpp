#pragma once

#include <string>

#include "clustertab/docmodel.hpp"
#include "clustertab/postprocess.hpp"

namespace clustertab {

/// Fill-less stroke color per class.
std::string_view class_color(ClassId c);

/// SVG of the page: every word box in grey, then one rectangle per cluster
/// box in its class color. Spanning clusters and extension words are dashed.
std::string render_overlay(const Page& page, const ClusterPrediction& prediction);

/// Ground-truth clusters of an annotated page, rendered like a prediction.
ClusterPrediction clusters_from_labels(const AnnotatedPage& page);

}  // namespace clustertab
