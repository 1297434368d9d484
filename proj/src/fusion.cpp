#include "trajphen/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "trajphen/adam.hpp"
#include "trajphen/distill.hpp"
#include "trajphen/stats.hpp"

namespace trajphen {

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "idp_only") return FusionMode::IdpOnly;
  if (s == "traj_only") return FusionMode::TrajOnly;
  if (s == "concat") return FusionMode::Concat;
  if (s == "xattn") return FusionMode::XAttn;
  throw std::invalid_argument("unknown fusion mode '" + s + "'");
}

std::string fusion_mode_to_string(FusionMode m) {
  switch (m) {
    case FusionMode::IdpOnly: return "idp_only";
    case FusionMode::TrajOnly: return "traj_only";
    case FusionMode::Concat: return "concat";
    case FusionMode::XAttn: return "xattn";
  }
  throw std::logic_error("unreachable");
}

void FusionConfig::validate() const {
  if (n_diseases <= 0) throw std::invalid_argument("FusionConfig: n_diseases must be positive");
  if (n_heads <= 0) throw std::invalid_argument("FusionConfig: n_heads must be positive");
  if (mode != FusionMode::IdpOnly && d_traj <= 0) {
    throw std::invalid_argument("FusionConfig: mode '" + fusion_mode_to_string(mode) +
                                "' needs the trajectory embedding width");
  }
  if (lambda_mae < 0.0) throw std::invalid_argument("FusionConfig: lambda_mae must be >= 0");
}

FusionModel::FusionModel(FusionConfig cfg, const IdpEncoderConfig* enc_cfg, uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed ^ 0x5bd1e995ULL);
  int64_t rep_dim = 0;
  switch (cfg_.mode) {
    case FusionMode::IdpOnly:
    case FusionMode::XAttn:
    case FusionMode::Concat: {
      if (!enc_cfg) {
        throw std::invalid_argument("FusionModel: mode '" + fusion_mode_to_string(cfg_.mode) +
                                    "' requires an encoder config");
      }
      encoder_ = std::make_unique<IdpEncoder>(*enc_cfg, seed);
      rep_dim = enc_cfg->d;
      if (cfg_.mode == FusionMode::Concat) rep_dim += cfg_.d_traj;
      break;
    }
    case FusionMode::TrajOnly:
      rep_dim = cfg_.d_traj;
      break;
  }
  if (cfg_.mode == FusionMode::XAttn) {
    // bias-less output projection keeps zero-value-projection fusion a pure
    // residual over organ tokens
    xattn_ = std::make_unique<MultiHeadAttention>(head_params_, "fusion.xattn", encoder_->config().d,
                                                  cfg_.d_traj, cfg_.n_heads, rng, false);
  }
  risk_head_ = Linear(head_params_, "fusion.risk_head", rep_dim, cfg_.n_diseases, rng);
  time_head_ = Linear(head_params_, "fusion.time_head", rep_dim, cfg_.n_diseases, rng);
  all_params_ = encoder_ ? merged_registry({&encoder_->params(), &head_params_})
                         : merged_registry({&head_params_});
}

Tensor FusionModel::cross_attend(const Tensor& organ_tokens, const Tensor& traj_kv) const {
  if (!xattn_) throw std::invalid_argument("cross_attend: model is not in xattn mode");
  if (traj_kv.rank() != 3) {
    throw std::invalid_argument("cross_attend: trajectory kv must be [N,M,d_traj], got " +
                                shape_str(traj_kv.shape()));
  }
  Tensor attended = xattn_->forward(organ_tokens, traj_kv, nullptr);
  return mean_axis(add(organ_tokens, attended), 1);
}

FusionModel::Out FusionModel::forward(const std::vector<Tensor>* organs,
                                      const Tensor* traj_emb) const {
  const bool needs_idp = cfg_.mode != FusionMode::TrajOnly;
  const bool needs_traj = cfg_.mode != FusionMode::IdpOnly;
  if (needs_idp && !organs) {
    throw std::invalid_argument("FusionModel::forward: mode '" + fusion_mode_to_string(cfg_.mode) +
                                "' requires organ inputs");
  }
  if (needs_traj && !traj_emb) {
    throw std::invalid_argument("FusionModel::forward: mode '" + fusion_mode_to_string(cfg_.mode) +
                                "' requires trajectory embeddings");
  }

  Tensor rep;
  switch (cfg_.mode) {
    case FusionMode::IdpOnly:
      rep = encoder_->forward(*organs).cls;
      break;
    case FusionMode::TrajOnly:
      rep = *traj_emb;
      break;
    case FusionMode::Concat:
      rep = concat({encoder_->forward(*organs).cls, *traj_emb}, 1);
      break;
    case FusionMode::XAttn: {
      auto enc = encoder_->forward(*organs);
      Tensor kv = reshape(*traj_emb, {traj_emb->dim(0), 1, cfg_.d_traj});
      rep = cross_attend(enc.organ_tokens, kv);
      break;
    }
  }
  return {risk_head_.forward(rep), time_head_.forward(rep)};
}

std::vector<Tensor> FusionModel::trainable_tensors() const {
  std::vector<Tensor> out = head_params_.trainable_tensors();
  if (encoder_ && !cfg_.freeze_encoder) {
    auto enc = encoder_->params().trainable_tensors();
    out.insert(out.end(), enc.begin(), enc.end());
  }
  return out;
}

void DownstreamDataset::validate() const {
  const size_t nd = disease_ids.size();
  const size_t expected = subject_ids.size() * nd;
  if (is_case.size() != expected || prevalent.size() != expected || gap_years.size() != expected) {
    throw std::invalid_argument("DownstreamDataset: label matrices do not match subjects x diseases");
  }
  if (!records.empty() && records.size() != subject_ids.size()) {
    throw std::invalid_argument("DownstreamDataset: records not aligned with subjects");
  }
  for (size_t i = 0; i < expected; ++i) {
    if (is_case[i] && prevalent[i]) {
      throw std::invalid_argument("DownstreamDataset: a prevalent pair cannot be a case");
    }
  }
}

nlohmann::json FinetuneReport::to_json() const {
  return {{"train_loss", train_loss}, {"val_mean_auc", val_mean_auc}, {"best_epoch", best_epoch}};
}

namespace {

Tensor traj_batch(const DownstreamDataset& data, const std::vector<size_t>& idx, int64_t dim) {
  Tensor t({static_cast<int64_t>(idx.size()), dim});
  for (size_t i = 0; i < idx.size(); ++i) {
    const double* row = data.traj.row(data.subject_ids[idx[i]]);
    std::copy_n(row, dim, t.data().begin() + static_cast<int64_t>(i) * dim);
  }
  return t;
}

}  // namespace

FusionModel::Out predict_batch(const FusionModel& model, const DownstreamDataset& data,
                               const std::vector<size_t>& idx) {
  const bool needs_idp = model.config().mode != FusionMode::TrajOnly;
  const bool needs_traj = model.config().mode != FusionMode::IdpOnly;
  std::vector<Tensor> organs;
  Tensor traj;
  if (needs_idp) organs = organ_batch(data.records, idx);
  if (needs_traj) traj = traj_batch(data, idx, model.config().d_traj);
  return model.forward(needs_idp ? &organs : nullptr, needs_traj ? &traj : nullptr);
}

Tensor downstream_loss(const FusionModel& model, const FusionModel::Out& out,
                       const DownstreamDataset& data, const std::vector<size_t>& idx) {
  const int64_t n = static_cast<int64_t>(idx.size());
  const int64_t nd = data.n_diseases();
  std::vector<double> y(static_cast<size_t>(n * nd), 0.0);
  std::vector<double> valid(static_cast<size_t>(n * nd), 0.0);
  std::vector<double> case_mask(static_cast<size_t>(n * nd), 0.0);
  std::vector<double> gaps(static_cast<size_t>(n * nd), 0.0);
  std::vector<double> valid_count(static_cast<size_t>(nd), 0.0);
  std::vector<double> case_count(static_cast<size_t>(nd), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const size_t row = idx[static_cast<size_t>(i)] * static_cast<size_t>(nd);
    for (int64_t d = 0; d < nd; ++d) {
      const size_t src = row + static_cast<size_t>(d);
      const size_t dst = static_cast<size_t>(i * nd + d);
      if (!data.prevalent[src]) {
        valid[dst] = 1.0;
        valid_count[static_cast<size_t>(d)] += 1.0;
        y[dst] = data.is_case[src] ? 1.0 : 0.0;
      }
      if (data.is_case[src]) {
        case_mask[dst] = 1.0;
        case_count[static_cast<size_t>(d)] += 1.0;
        gaps[dst] = data.gap_years[src];
      }
    }
  }
  std::vector<double> inv_valid(static_cast<size_t>(nd)), inv_case(static_cast<size_t>(nd));
  for (int64_t d = 0; d < nd; ++d) {
    inv_valid[static_cast<size_t>(d)] =
        valid_count[static_cast<size_t>(d)] > 0.0 ? 1.0 / valid_count[static_cast<size_t>(d)] : 0.0;
    inv_case[static_cast<size_t>(d)] =
        case_count[static_cast<size_t>(d)] > 0.0 ? 1.0 / case_count[static_cast<size_t>(d)] : 0.0;
  }

  Tensor y_t = Tensor::from_data({n, nd}, y);
  Tensor valid_t = Tensor::from_data({n, nd}, valid);
  // stable BCE with logits: softplus(x) - x*y
  Tensor bce = sub(softplus(out.risk_logits), mul(out.risk_logits, y_t));
  Tensor bce_term =
      mul_scalar(sum_all(mul(mul(bce, valid_t), Tensor::from_data({nd}, inv_valid))),
                 1.0 / static_cast<double>(nd));

  double lambda = model.config().lambda_mae;
  if (lambda == 0.0) return bce_term;
  Tensor case_t = Tensor::from_data({n, nd}, case_mask);
  Tensor gaps_t = Tensor::from_data({n, nd}, gaps);
  Tensor ae = mul(abs(sub(out.time_years, gaps_t)), case_t);
  Tensor ae_term = mul_scalar(sum_all(mul(ae, Tensor::from_data({nd}, inv_case))),
                              1.0 / static_cast<double>(nd));
  return add(bce_term, mul_scalar(ae_term, lambda));
}

double mean_downstream_auc(FusionModel& model, const DownstreamDataset& data) {
  NoGradGuard ng;
  std::vector<size_t> idx(static_cast<size_t>(data.n()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto out = predict_batch(model, data, idx);
  const int64_t nd = data.n_diseases();
  double sum = 0.0;
  int64_t counted = 0;
  for (int64_t d = 0; d < nd; ++d) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int64_t i = 0; i < data.n(); ++i) {
      const size_t src = static_cast<size_t>(i * nd + d);
      if (data.prevalent[src]) continue;
      scores.push_back(out.risk_logits.data()[static_cast<size_t>(i * nd + d)]);
      labels.push_back(data.is_case[src] ? 1 : 0);
    }
    auto a = auc(scores, labels);
    if (a) {
      sum += *a;
      ++counted;
    }
  }
  if (counted == 0) return 0.5;
  return sum / static_cast<double>(counted);
}

FinetuneReport finetune(FusionModel& model, const DownstreamDataset& train,
                        const DownstreamDataset& val, const FinetuneConfig& cfg) {
  train.validate();
  val.validate();
  if (cfg.epochs < 0 || cfg.batch_size <= 0) {
    throw std::invalid_argument("finetune: invalid epochs or batch size");
  }
  Rng rng(cfg.seed);
  ParamRegistry all = model.all_params();
  Adam opt(model.trainable_tensors(), {.lr = cfg.lr});
  std::vector<size_t> order(static_cast<size_t>(train.n()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  FinetuneReport report;
  auto best = all.snapshot();
  double best_auc = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t n_batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<size_t> idx(order.begin() + static_cast<int64_t>(start),
                              order.begin() + static_cast<int64_t>(end));
      auto out = predict_batch(model, train, idx);
      Tensor loss = downstream_loss(model, out, train, idx);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.value();
      ++n_batches;
    }
    report.train_loss.push_back(n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0);
    double val_auc = mean_downstream_auc(model, val);
    report.val_mean_auc.push_back(val_auc);
    if (val_auc > best_auc) {
      best_auc = val_auc;
      best = all.snapshot();
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  all.restore(best);
  return report;
}

}  // namespace trajphen
