#include "odml/drift_estimation.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "odml/binary_io.hpp"

namespace odml {

namespace {

constexpr double kWeightEps = 1e-8;

}  // namespace

std::vector<Prototype> StageState::prototypes_of(int task_id) const {
  std::vector<Prototype> out;
  for (const auto& p : prototypes) {
    if (p.task_id == task_id) out.push_back(p);
  }
  std::sort(out.begin(), out.end(),
            [](const Prototype& a, const Prototype& b) { return a.class_id < b.class_id; });
  return out;
}

const DriftTable* StageState::drift_for(int task_id) const {
  for (const auto& t : drift_tables) {
    if (t.task_id == task_id) return &t;
  }
  return nullptr;
}

Index StageState::dim() const {
  return prototypes.empty() ? 0 : prototypes.front().centroid.size();
}

bool StageState::operator==(const StageState& other) const {
  if (stage != other.stage || prototypes.size() != other.prototypes.size() ||
      drift_tables.size() != other.drift_tables.size()) {
    return false;
  }
  for (std::size_t i = 0; i < prototypes.size(); ++i) {
    const auto& a = prototypes[i];
    const auto& b = other.prototypes[i];
    if (a.task_id != b.task_id || a.class_id != b.class_id ||
        a.stage_id != b.stage_id || a.centroid != b.centroid) {
      return false;
    }
  }
  for (std::size_t i = 0; i < drift_tables.size(); ++i) {
    const auto& a = drift_tables[i];
    const auto& b = other.drift_tables[i];
    if (a.task_id != b.task_id || a.source_stage != b.source_stage ||
        a.target_stage != b.target_stage || a.class_ids != b.class_ids ||
        a.drifts != b.drifts) {
      return false;
    }
  }
  return true;
}

std::vector<Prototype> compute_prototypes(const Matrix& features,
                                          std::span<const int> labels,
                                          int task_id, int stage_id) {
  if (static_cast<Index>(labels.size()) != features.rows()) {
    throw Error("compute_prototypes: label count does not match features");
  }
  if (features.rows() == 0) throw Error("compute_prototypes: no features");
  std::map<int, std::pair<Vector, int>> sums;
  for (Index r = 0; r < features.rows(); ++r) {
    auto [it, inserted] =
        sums.try_emplace(labels[r], Vector::Zero(features.cols()), 0);
    it->second.first += features.row(r).transpose();
    ++it->second.second;
  }
  std::vector<Prototype> out;
  for (const auto& [label, acc] : sums) {
    out.push_back({task_id, label, stage_id, acc.first / acc.second});
  }
  return out;
}

double drift_weight(const Vector& feature, const Vector& centroid) {
  return std::max(cosine_sim(feature, centroid), 0.0) + kWeightEps;
}

Vector prototype_drift(const Matrix& past_feats, const Matrix& current_feats,
                       const Prototype& past_proto) {
  if (past_feats.rows() == 0) throw Error("prototype_drift: no feature pairs");
  if (past_feats.rows() != current_feats.rows() ||
      past_feats.cols() != current_feats.cols() ||
      past_feats.cols() != past_proto.centroid.size()) {
    throw Error("prototype_drift: shape mismatch");
  }
  Vector weighted = Vector::Zero(past_feats.cols());
  double weight_sum = 0;
  for (Index r = 0; r < past_feats.rows(); ++r) {
    const Vector past = past_feats.row(r).transpose();
    const double w = drift_weight(past, past_proto.centroid);
    weighted += w * (current_feats.row(r).transpose() - past);
    weight_sum += w;
  }
  return weighted / weight_sum;
}

Prototype update_prototype(const Prototype& proto, const Vector& drift,
                           int new_stage) {
  if (drift.size() != proto.centroid.size()) {
    throw Error("update_prototype: dimension mismatch");
  }
  Prototype out = proto;
  out.centroid += drift;
  out.stage_id = new_stage;
  return out;
}

Vector feature_drift(const Vector& teacher_feature,
                     std::span<const Prototype> protos, const DriftTable& drifts) {
  if (protos.empty()) throw Error("feature_drift: empty prototype set");
  if (protos.size() != drifts.drifts.size() ||
      protos.size() != drifts.class_ids.size()) {
    throw Error("feature_drift: prototypes and drift table differ in size");
  }
  Vector weighted = Vector::Zero(teacher_feature.size());
  double weight_sum = 0;
  for (std::size_t k = 0; k < protos.size(); ++k) {
    if (protos[k].class_id != drifts.class_ids[k]) {
      throw Error("feature_drift: prototype/drift class order mismatch");
    }
    if (protos[k].centroid.size() != teacher_feature.size() ||
        drifts.drifts[k].size() != teacher_feature.size()) {
      throw Error("feature_drift: dimension mismatch");
    }
    const double w = drift_weight(teacher_feature, protos[k].centroid);
    weighted += w * drifts.drifts[k];
    weight_sum += w;
  }
  return -weighted / weight_sum;
}

Matrix virtual_embeddings(const Matrix& teacher_emb, const StageState& state,
                          int task_id) {
  const DriftTable* table = state.drift_for(task_id);
  if (!table) {
    throw Error("virtual_embeddings: no drift table for task " +
                std::to_string(task_id));
  }
  const auto protos = state.prototypes_of(task_id);
  Matrix out(teacher_emb.rows(), teacher_emb.cols());
  for (Index r = 0; r < teacher_emb.rows(); ++r) {
    const Vector f = teacher_emb.row(r).transpose();
    out.row(r) = virtual_feature(f, feature_drift(f, protos, *table)).transpose();
  }
  return out;
}

LossAndGrad multi_task_corr(std::span<const Matrix> targets,
                            const Matrix& current_emb, double temperature) {
  if (targets.empty()) throw Error("multi_task_corr: no past-task targets");
  const GramMatrix current = gram(current_emb);
  LossAndGrad out;
  out.grad = Matrix::Zero(current_emb.rows(), current_emb.cols());
  for (const auto& target : targets) {
    if (target.rows() != current_emb.rows()) {
      throw Error("multi_task_corr: inconsistent batch sizes");
    }
    auto term = corr_loss(gram(target), current, temperature);
    out.loss += term.loss;
    out.grad += term.grad;
  }
  return out;
}

void save_stage_state(const StageState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const Index dim = state.dim();
  io::write_magic(out, "ODST");
  io::write_u32(out, kStageStateFormatVersion);
  io::write_u32(out, static_cast<std::uint32_t>(state.stage));
  io::write_u32(out, static_cast<std::uint32_t>(dim));
  io::write_u32(out, static_cast<std::uint32_t>(state.prototypes.size()));
  const Vector zero = Vector::Zero(dim);
  for (const auto& p : state.prototypes) {
    if (p.centroid.size() != dim) throw Error("save_stage_state: ragged prototypes");
    const Vector* drift = &zero;
    if (const DriftTable* table = state.drift_for(p.task_id)) {
      const auto it = std::find(table->class_ids.begin(), table->class_ids.end(),
                                p.class_id);
      if (it == table->class_ids.end()) {
        throw Error("save_stage_state: drift table misses a class");
      }
      drift = &table->drifts[it - table->class_ids.begin()];
    }
    io::write_u32(out, static_cast<std::uint32_t>(p.task_id));
    io::write_u32(out, static_cast<std::uint32_t>(p.class_id));
    for (Index i = 0; i < dim; ++i) io::write_f64(out, p.centroid(i));
    for (Index i = 0; i < dim; ++i) io::write_f64(out, (*drift)(i));
  }
  if (!out) throw Error("write failed for " + path.string());
}

StageState load_stage_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open stage state file " + path.string());
  io::expect_magic(in, "ODST");
  const auto version = io::read_u32(in, "format version");
  if (version != kStageStateFormatVersion) {
    throw FormatError("unsupported stage state version " + std::to_string(version));
  }
  StageState state;
  state.stage = static_cast<int>(io::read_u32(in, "stage"));
  const auto dim = io::read_u32(in, "dim");
  const auto entries = io::read_u32(in, "entry count");
  if (dim == 0 || dim > (1u << 20)) throw FormatError("implausible dim");
  for (std::uint32_t e = 0; e < entries; ++e) {
    Prototype p;
    p.task_id = static_cast<int>(io::read_u32(in, "task id"));
    p.class_id = static_cast<int>(io::read_u32(in, "class id"));
    p.stage_id = state.stage;
    if (p.task_id > state.stage) {
      throw FormatError("entry for task " + std::to_string(p.task_id) +
                        " is newer than stage " + std::to_string(state.stage));
    }
    p.centroid.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) p.centroid(i) = io::read_f64(in, "centroid");
    Vector drift(dim);
    for (std::uint32_t i = 0; i < dim; ++i) drift(i) = io::read_f64(in, "drift");
    if (p.task_id < state.stage) {
      DriftTable* table = nullptr;
      for (auto& t : state.drift_tables) {
        if (t.task_id == p.task_id) table = &t;
      }
      if (!table) {
        state.drift_tables.push_back({p.task_id, p.task_id, state.stage, {}, {}});
        table = &state.drift_tables.back();
      }
      table->class_ids.push_back(p.class_id);
      table->drifts.push_back(std::move(drift));
    }
    state.prototypes.push_back(std::move(p));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after stage state entries");
  }
  return state;
}

}  // namespace odml
