#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "clustertab/docmodel.hpp"

namespace clustertab {

struct ConvertOptions {
  /// Warnings become per-record failures.
  bool strict = false;
  /// "fintabnet" masks the header class on every record.
  std::string dataset;
  int jobs = 1;
};

/// Outcome of converting one input record.
struct ConvertResult {
  std::optional<AnnotatedPage> page;
  std::string name;  // output file stem
  std::map<std::string, long> warnings;
  std::string error_type;  // empty on success
  std::string error_message;
};

struct ConvertSummary {
  std::string format;
  long input_records = 0;
  long emitted = 0;
  long skipped = 0;
  std::map<std::string, long> errors;
  std::map<std::string, long> warnings;
  std::vector<std::pair<std::string, std::string>> failures;  // record, message

  void add(const ConvertResult& r, const std::string& record);
};

nlohmann::json to_json(const ConvertSummary& s);

/// Word list in the PubTables-1M style: an array of {"text", "bbox": [x0,y0,x1,y1]}.
std::vector<Word> words_from_json(const nlohmann::json& j);

/// One Pascal VOC page. Rows, columns, headers and spanning cells are attached
/// to the table they overlap most; spanning-cell indices are the rows
/// (columns) covering at least half of their height (width) inside the cell.
ConvertResult convert_voc_document(const std::string& xml, const std::vector<Word>& words,
                                   const ConvertOptions& options = {});

/// One HTML-structure record: {"html": {"structure": {"tokens": [...]}, "cells": [{"tokens", "bbox"}]},
/// optional "words", "filename", "table_id", "width", "height", "dataset"}.
ConvertResult convert_html_record(const nlohmann::json& record, const ConvertOptions& options = {});

/// Converts every `*.xml` in `input` (words from `<stem>_words.json` beside it
/// or in `input/words/`), writing `<stem>.json` and `summary.json` to `output`.
ConvertSummary convert_pascal_voc(const std::filesystem::path& input, const std::filesystem::path& output,
                                  const ConvertOptions& options = {});

/// Converts every record of every `*.jsonl` (one record per line) or `*.json`
/// (one record or an array) in `input`.
ConvertSummary convert_html_cells(const std::filesystem::path& input, const std::filesystem::path& output,
                                  const ConvertOptions& options = {});

}  // namespace clustertab
