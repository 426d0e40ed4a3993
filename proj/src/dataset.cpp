#include "odml/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

namespace odml {

std::string TaskDataset::class_range() const {
  if (classes.empty()) return "";
  return std::to_string(classes.front() + 1) + "-" +
         std::to_string(classes.back() + 1);
}

Dataset gen_synthetic(const SyntheticParams& params) {
  if (params.n_classes < 2) throw Error("gen_synthetic: need at least 2 classes");
  if (params.per_class < 4) throw Error("gen_synthetic: need at least 4 samples per class");
  if (params.dim < 2) throw Error("gen_synthetic: dim must be at least 2");
  if (!(params.separation >= 0) || !(params.noise_sigma >= 0) ||
      !std::isfinite(params.separation) || !std::isfinite(params.noise_sigma)) {
    throw Error("gen_synthetic: separation and sigma must be finite and >= 0");
  }
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix centers(params.n_classes, params.dim);
  for (int c = 0; c < params.n_classes; ++c) {
    Vector dir(params.dim);
    do {
      for (int d = 0; d < params.dim; ++d) dir(d) = normal(rng);
    } while (dir.norm() < 1e-9);
    centers.row(c) = params.separation * dir.normalized().transpose();
  }

  Dataset data;
  data.num_classes = params.n_classes;
  data.features.resize(static_cast<Index>(params.n_classes) * params.per_class,
                       params.dim);
  Index row = 0;
  for (int c = 0; c < params.n_classes; ++c) {
    for (int s = 0; s < params.per_class; ++s, ++row) {
      for (int d = 0; d < params.dim; ++d) {
        data.features(row, d) = centers(c, d) + params.noise_sigma * normal(rng);
      }
      data.labels.push_back(c);
    }
  }
  return data;
}

namespace {

std::vector<std::vector<Index>> rows_by_class(const Dataset& data) {
  std::vector<std::vector<Index>> rows(data.num_classes);
  for (Index r = 0; r < data.size(); ++r) {
    const int label = data.labels[r];
    if (label < 0 || label >= data.num_classes) {
      throw Error("dataset label out of range: " + std::to_string(label));
    }
    rows[label].push_back(r);
  }
  return rows;
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

TaskDataset build_task(const Dataset& data,
                       const std::vector<std::vector<Index>>& by_class,
                       int task_id, int first_class, int last_class) {
  TaskDataset task;
  task.task_id = task_id;
  std::vector<Index> train_rows;
  std::vector<Index> test_rows;
  for (int c = first_class; c < last_class; ++c) {
    const auto& rows = by_class[c];
    const auto n = static_cast<Index>(rows.size());
    if (n < 3) {
      throw Error("class " + std::to_string(c) +
                  " needs at least 3 samples for a train/test split");
    }
    const Index n_train = std::clamp<Index>(
        static_cast<Index>(std::lround(kTrainFraction * static_cast<double>(n))), 2,
        n - 1);
    task.classes.push_back(c);
    for (Index i = 0; i < n; ++i) {
      if (i < n_train) {
        train_rows.push_back(rows[i]);
        task.train_y.push_back(c);
      } else {
        test_rows.push_back(rows[i]);
        task.test_y.push_back(c);
      }
    }
  }
  task.train_x = gather_rows(data.features, train_rows);
  task.test_x = gather_rows(data.features, test_rows);
  return task;
}

}  // namespace

std::vector<TaskDataset> split_one_task(const Dataset& data) {
  if (data.num_classes < 4) throw Error("split_one_task: need at least 4 classes");
  return split_multi_task(data, 1);
}

std::vector<TaskDataset> split_multi_task(const Dataset& data, int n_stages) {
  if (n_stages < 1) throw Error("split_multi_task: n_stages must be >= 1");
  const int first = (data.num_classes + 1) / 2;
  const int rest = data.num_classes - first;
  if (rest < n_stages) {
    throw Error("split_multi_task: " + std::to_string(rest) +
                " remaining classes cannot fill " + std::to_string(n_stages) +
                " stages");
  }
  const auto by_class = rows_by_class(data);
  std::vector<TaskDataset> tasks;
  tasks.push_back(build_task(data, by_class, 1, 0, first));
  int begin = first;
  for (int s = 0; s < n_stages; ++s) {
    const int size = rest / n_stages + (s < rest % n_stages ? 1 : 0);
    tasks.push_back(build_task(data, by_class, s + 2, begin, begin + size));
    begin += size;
  }
  return tasks;
}

TaskDataset merge_tasks(std::span<const TaskDataset> tasks, int task_id) {
  TaskDataset out;
  out.task_id = task_id;
  Index train_rows = 0;
  Index test_rows = 0;
  Index dim = 0;
  for (const auto& t : tasks) {
    train_rows += t.train_x.rows();
    test_rows += t.test_x.rows();
    dim = std::max(dim, t.train_x.cols());
  }
  out.train_x.resize(train_rows, dim);
  out.test_x.resize(test_rows, dim);
  Index tr = 0;
  Index te = 0;
  for (const auto& t : tasks) {
    out.classes.insert(out.classes.end(), t.classes.begin(), t.classes.end());
    out.train_x.middleRows(tr, t.train_x.rows()) = t.train_x;
    out.test_x.middleRows(te, t.test_x.rows()) = t.test_x;
    tr += t.train_x.rows();
    te += t.test_x.rows();
    out.train_y.insert(out.train_y.end(), t.train_y.begin(), t.train_y.end());
    out.test_y.insert(out.test_y.end(), t.test_y.begin(), t.test_y.end());
  }
  std::sort(out.classes.begin(), out.classes.end());
  return out;
}

std::vector<Index> pk_batch_indices(const TaskDataset& task, int p, int k,
                                    std::mt19937_64& rng) {
  if (p < 1 || k < 1) throw Error("pk_batch: P and K must be positive");
  std::map<int, std::vector<Index>> by_class;
  for (Index r = 0; r < static_cast<Index>(task.train_y.size()); ++r) {
    by_class[task.train_y[r]].push_back(r);
  }
  std::vector<int> eligible;
  for (const auto& [label, rows] : by_class) {
    if (static_cast<int>(rows.size()) >= k) eligible.push_back(label);
  }
  if (static_cast<int>(eligible.size()) < p) {
    throw Error("pk_batch: task " + std::to_string(task.task_id) + " has only " +
                std::to_string(eligible.size()) + " classes with >= " +
                std::to_string(k) + " train samples, need " + std::to_string(p));
  }
  // Partial Fisher-Yates over classes, then over each class's rows.
  for (int i = 0; i < p; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(p) * k);
  for (int i = 0; i < p; ++i) {
    auto rows = by_class[eligible[i]];
    for (int j = 0; j < k; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, rows.size() - 1);
      std::swap(rows[j], rows[pick(rng)]);
      out.push_back(rows[j]);
    }
  }
  return out;
}

Batch pk_batch(const TaskDataset& task, int p, int k, std::mt19937_64& rng) {
  const auto rows = pk_batch_indices(task, p, k, rng);
  Batch batch;
  batch.x = gather_rows(task.train_x, rows);
  for (Index r : rows) batch.labels.push_back(task.train_y[r]);
  return batch;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> FormatError {
    return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };

  if (!std::getline(in, line)) {
    line_no = 1;
    throw fail("empty file");
  }
  ++line_no;
  const auto header = split_fields(trim(line));
  if (header.size() < 2 || trim(header[0]) != "label") {
    throw fail("header must be label,f0,f1,...");
  }
  const std::size_t dim = header.size() - 1;

  std::vector<double> values;
  std::vector<int> labels;
  std::unordered_map<std::string, int> ids;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim(line);
    if (content.empty()) continue;
    const auto fields = split_fields(content);
    if (fields.size() != dim + 1) {
      throw fail("expected " + std::to_string(dim + 1) + " fields, got " +
                 std::to_string(fields.size()));
    }
    const std::string label(trim(fields[0]));
    if (label.empty()) throw fail("empty label");
    const auto [it, inserted] = ids.try_emplace(label, static_cast<int>(ids.size()));
    labels.push_back(it->second);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      const auto text = trim(fields[f]);
      double v = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
        throw fail("field " + std::to_string(f) + " is not a finite number: '" +
                   std::string(text) + "'");
      }
      values.push_back(v);
    }
  }
  if (labels.empty()) throw fail("no data rows");

  Dataset data;
  data.num_classes = static_cast<int>(ids.size());
  data.labels = std::move(labels);
  data.features.resize(static_cast<Index>(data.labels.size()), static_cast<Index>(dim));
  for (Index r = 0; r < data.features.rows(); ++r) {
    for (Index c = 0; c < data.features.cols(); ++c) {
      data.features(r, c) = values[static_cast<std::size_t>(r) * dim + c];
    }
  }
  return data;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "label";
  for (Index d = 0; d < data.dim(); ++d) out << ",f" << d;
  out << '\n';
  char buf[32];
  for (Index r = 0; r < data.size(); ++r) {
    out << data.labels[r];
    for (Index d = 0; d < data.dim(); ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", data.features(r, d));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace odml
