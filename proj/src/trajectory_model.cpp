#include "trajphen/trajectory_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "trajphen/adam.hpp"

namespace trajphen {

void TrajModelConfig::validate() const {
  if (vocab_size <= kFirstDiseaseToken || d_model <= 0 || n_layers <= 0 || n_heads <= 0 ||
      max_seq_len <= 1 || age_basis_dim <= 0 || mlp_hidden <= 0) {
    throw std::invalid_argument("TrajModelConfig: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("TrajModelConfig: d_model must be divisible by n_heads");
  }
  if (age_basis_dim % 2 != 0) {
    throw std::invalid_argument("TrajModelConfig: age_basis_dim must be even");
  }
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "weighted") return Pooling::Weighted;
  throw std::invalid_argument("unknown pooling mode '" + s + "'");
}

std::string pooling_to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "weighted"; }

namespace {

void validate_trajectory(const Trajectory& traj) {
  if (traj.codes.size() != traj.ages_days.size()) {
    throw std::invalid_argument("trajectory " + std::to_string(traj.subject_id) +
                                ": codes and ages differ in length");
  }
  double prev = 0.0;
  for (size_t i = 0; i < traj.codes.size(); ++i) {
    if (traj.codes[i] < kFirstDiseaseToken) {
      throw std::invalid_argument("trajectory " + std::to_string(traj.subject_id) +
                                  ": reserved token " + std::to_string(traj.codes[i]) +
                                  " in event stream");
    }
    double a = traj.ages_days[i];
    if (!(a >= 0.0) || !std::isfinite(a)) {
      throw std::invalid_argument("trajectory " + std::to_string(traj.subject_id) +
                                  ": event age must be finite and non-negative");
    }
    if (a < prev) {
      throw std::invalid_argument("trajectory " + std::to_string(traj.subject_id) +
                                  ": event ages must be non-decreasing");
    }
    prev = a;
  }
}

}  // namespace

TokenBatch make_token_batch(const std::vector<Trajectory>& trajs, int max_seq_len) {
  if (trajs.empty()) throw std::invalid_argument("make_token_batch: empty batch");
  int64_t t = 0;
  for (const Trajectory& traj : trajs) {
    validate_trajectory(traj);
    int64_t len = static_cast<int64_t>(traj.codes.size()) + 1;  // BOS prefix
    if (len > max_seq_len) {
      throw std::invalid_argument("trajectory " + std::to_string(traj.subject_id) + " has " +
                                  std::to_string(traj.codes.size()) +
                                  " events; limit with BOS is " + std::to_string(max_seq_len));
    }
    t = std::max(t, len);
  }
  TokenBatch b;
  b.batch = static_cast<int64_t>(trajs.size());
  b.t = t;
  b.tokens.assign(static_cast<size_t>(b.batch * t), kPadToken);
  b.ages.assign(static_cast<size_t>(b.batch * t), 0.0);
  for (int64_t i = 0; i < b.batch; ++i) {
    const Trajectory& traj = trajs[static_cast<size_t>(i)];
    b.tokens[i * t] = kBosToken;
    b.ages[i * t] = 0.0;
    for (size_t j = 0; j < traj.codes.size(); ++j) {
      b.tokens[i * t + 1 + static_cast<int64_t>(j)] = traj.codes[j];
      b.ages[i * t + 1 + static_cast<int64_t>(j)] = traj.ages_days[j];
    }
  }
  return b;
}

TrajectoryModel::TrajectoryModel(TrajModelConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  token_emb_ = params_.create_normal("traj.token_emb", {cfg_.vocab_size, cfg_.d_model}, 0.1, rng);
  age_proj_ = params_.create_fanin("traj.age_proj", {cfg_.age_basis_dim, cfg_.d_model}, rng);
  blocks_.reserve(static_cast<size_t>(cfg_.n_layers));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    blocks_.emplace_back(params_, "traj.block" + std::to_string(l), cfg_.d_model, cfg_.n_heads,
                         cfg_.mlp_hidden, rng);
  }
  ln_f_ = LayerNorm(params_, "traj.ln_f", cfg_.d_model);
  head_ = Linear(params_, "traj.head", cfg_.d_model, cfg_.vocab_size, rng);
  std::fill(head_.w.data().begin(), head_.w.data().end(), 0.0);
  std::fill(head_.b.data().begin(), head_.b.data().end(), cfg_.head_bias_init);
  pool_query_ = params_.create_normal("traj.pool_query", {cfg_.d_model}, 1.0, rng);
}

std::vector<double> TrajectoryModel::age_features(const std::vector<double>& ages_days) const {
  const int basis = cfg_.age_basis_dim;
  const double base = 10000.0 * 365.0;
  std::vector<double> out(ages_days.size() * static_cast<size_t>(basis));
  for (size_t p = 0; p < ages_days.size(); ++p) {
    double a = ages_days[p];
    if (!(a >= 0.0) || !std::isfinite(a)) {
      throw std::invalid_argument("age_features: negative or non-finite age " + std::to_string(a));
    }
    for (int k = 0; k < basis / 2; ++k) {
      double wavelength = std::pow(base, 2.0 * k / static_cast<double>(basis));
      out[p * basis + 2 * k] = std::sin(a / wavelength);
      out[p * basis + 2 * k + 1] = std::cos(a / wavelength);
    }
  }
  return out;
}

Tensor TrajectoryModel::input_states(const TokenBatch& batch) const {
  Tensor emb = embedding_lookup(token_emb_, batch.tokens, {batch.batch, batch.t});
  Tensor feats =
      Tensor::from_data({batch.batch, batch.t, cfg_.age_basis_dim}, age_features(batch.ages));
  return add(emb, matmul(feats, age_proj_));
}

TrajectoryModel::ForwardOut TrajectoryModel::forward(const TokenBatch& batch) const {
  if (batch.t > cfg_.max_seq_len) {
    throw std::invalid_argument("TrajectoryModel::forward: sequence length " +
                                std::to_string(batch.t) + " exceeds max_seq_len " +
                                std::to_string(cfg_.max_seq_len));
  }
  std::vector<uint8_t> is_pad(batch.tokens.size());
  for (size_t i = 0; i < batch.tokens.size(); ++i) is_pad[i] = batch.tokens[i] == kPadToken;
  AttnMask mask = AttnMask::causal_padding(is_pad, batch.batch, batch.t);

  Tensor x = input_states(batch);
  for (const TransformerBlock& block : blocks_) x = block.forward(x, &mask);
  Tensor hidden = ln_f_.forward(x);
  Tensor logits = head_.forward(hidden);
  return {logits, hidden};
}

Tensor TrajectoryModel::joint_loss(const ForwardOut& out, const TokenBatch& batch) const {
  const int64_t b = batch.batch, t = batch.t;
  if (t < 2) throw std::invalid_argument("joint_loss: no transitions in batch");
  const int64_t tm1 = t - 1;

  std::vector<int64_t> targets(static_cast<size_t>(b * tm1), 0);
  std::vector<double> valid(static_cast<size_t>(b * tm1), 0.0);
  std::vector<double> gaps(static_cast<size_t>(b * tm1), 1.0);
  int64_t n_valid = 0;
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < tm1; ++j) {
      int64_t cur = batch.tokens[i * t + j];
      int64_t nxt = batch.tokens[i * t + j + 1];
      if (cur != kPadToken && nxt >= kFirstDiseaseToken) {
        targets[i * tm1 + j] = nxt;
        valid[i * tm1 + j] = 1.0;
        double gap_years = (batch.ages[i * t + j + 1] - batch.ages[i * t + j]) / 365.0;
        gaps[i * tm1 + j] = std::max(gap_years, 1.0 / 365.0);
        ++n_valid;
      }
    }
  }
  if (n_valid == 0) throw std::invalid_argument("joint_loss: no valid transitions in batch");

  Tensor logits_in = slice_axis(out.logits, 1, 0, tm1);  // [B,T-1,V]
  Tensor ce = sub(logsumexp_lastdim(logits_in), gather_lastdim(logits_in, targets));

  Tensor per_step = ce;
  if (cfg_.lambda_time != 0.0) {
    Tensor disease_logits =
        slice_lastdim(logits_in, kFirstDiseaseToken, cfg_.vocab_size - kFirstDiseaseToken);
    Tensor log_rate = logsumexp_lastdim(disease_logits);  // [B,T-1]
    Tensor dt = Tensor::from_data({b, tm1}, gaps);
    Tensor gap_nll = sub(mul(exp(log_rate), dt), log_rate);
    per_step = add(ce, mul_scalar(gap_nll, cfg_.lambda_time));
  }
  Tensor masked = mul(per_step, Tensor::from_data({b, tm1}, valid));
  return mul_scalar(sum_all(masked), 1.0 / static_cast<double>(n_valid));
}

double TrajectoryModel::next_event_ce(const std::vector<Trajectory>& trajs, int batch_size) const {
  NoGradGuard ng;
  double total = 0.0;
  int64_t count = 0;
  for (size_t start = 0; start < trajs.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(trajs.size(), start + static_cast<size_t>(batch_size));
    std::vector<Trajectory> chunk(trajs.begin() + static_cast<int64_t>(start),
                                  trajs.begin() + static_cast<int64_t>(end));
    TokenBatch batch = make_token_batch(chunk, cfg_.max_seq_len);
    if (batch.t < 2) continue;
    ForwardOut out = forward(batch);
    const int64_t b = batch.batch, t = batch.t, v = cfg_.vocab_size;
    for (int64_t i = 0; i < b; ++i) {
      for (int64_t j = 0; j + 1 < t; ++j) {
        int64_t cur = batch.tokens[i * t + j];
        int64_t nxt = batch.tokens[i * t + j + 1];
        if (cur == kPadToken || nxt < kFirstDiseaseToken) continue;
        const double* row = out.logits.data().data() + (i * t + j) * v;
        double mx = row[0];
        for (int64_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < v; ++c) sum += std::exp(row[c] - mx);
        total += mx + std::log(sum) - row[nxt];
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("next_event_ce: no transitions");
  return total / static_cast<double>(count);
}

Trajectory TrajectoryModel::history_before(const Trajectory& traj, double cutoff_age_days) const {
  validate_trajectory(traj);
  Trajectory hist;
  hist.subject_id = traj.subject_id;
  for (size_t i = 0; i < traj.codes.size(); ++i) {
    if (traj.ages_days[i] < cutoff_age_days) {
      hist.codes.push_back(traj.codes[i]);
      hist.ages_days.push_back(traj.ages_days[i]);
    }
  }
  // keep the most recent events if the history overflows the context
  if (static_cast<int>(hist.codes.size()) > cfg_.max_seq_len - 1) {
    size_t drop = hist.codes.size() - static_cast<size_t>(cfg_.max_seq_len - 1);
    hist.codes.erase(hist.codes.begin(), hist.codes.begin() + static_cast<int64_t>(drop));
    hist.ages_days.erase(hist.ages_days.begin(), hist.ages_days.begin() + static_cast<int64_t>(drop));
  }
  return hist;
}

std::vector<double> TrajectoryModel::embed_subject(const Trajectory& traj, double cutoff_age_days,
                                                   Pooling mode) const {
  NoGradGuard ng;
  Trajectory hist = history_before(traj, cutoff_age_days);
  TokenBatch batch = make_token_batch({hist}, cfg_.max_seq_len);
  ForwardOut out = forward(batch);
  const int64_t t = batch.t, d = cfg_.d_model;
  const double* h = out.hidden.data().data();

  std::vector<double> pooled(static_cast<size_t>(d), 0.0);
  if (mode == Pooling::Mean) {
    for (int64_t j = 0; j < t; ++j) {
      for (int64_t c = 0; c < d; ++c) pooled[static_cast<size_t>(c)] += h[j * d + c];
    }
    for (double& v : pooled) v /= static_cast<double>(t);
  } else {
    const auto& q = pool_query_.data();
    std::vector<double> scores(static_cast<size_t>(t));
    double mx = -1e300;
    for (int64_t j = 0; j < t; ++j) {
      double s = 0.0;
      for (int64_t c = 0; c < d; ++c) s += h[j * d + c] * q[static_cast<size_t>(c)];
      scores[static_cast<size_t>(j)] = s;
      mx = std::max(mx, s);
    }
    double denom = 0.0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      denom += s;
    }
    for (int64_t j = 0; j < t; ++j) {
      double w = scores[static_cast<size_t>(j)] / denom;
      for (int64_t c = 0; c < d; ++c) pooled[static_cast<size_t>(c)] += w * h[j * d + c];
    }
  }
  return pooled;
}

double unigram_next_event_ce(const std::vector<Trajectory>& train,
                             const std::vector<Trajectory>& heldout, int vocab_size) {
  std::vector<double> counts(static_cast<size_t>(vocab_size), 0.0);
  double total = 0.0;
  for (const Trajectory& traj : train) {
    for (int c : traj.codes) {
      counts[static_cast<size_t>(c)] += 1.0;
      total += 1.0;
    }
  }
  const double n_classes = static_cast<double>(vocab_size - kFirstDiseaseToken);
  double ce = 0.0;
  int64_t n = 0;
  for (const Trajectory& traj : heldout) {
    for (int c : traj.codes) {
      double p = (counts[static_cast<size_t>(c)] + 1.0) / (total + n_classes);
      ce -= std::log(p);
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("unigram_next_event_ce: no held-out events");
  return ce / static_cast<double>(n);
}

TeacherTrainReport pretrain_trajectory_model(TrajectoryModel& model,
                                             const std::vector<Trajectory>& train,
                                             const std::vector<Trajectory>& val,
                                             const TeacherTrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("pretrain_trajectory_model: empty train set");
  Rng rng(cfg.seed);
  Adam opt(model.params().trainable_tensors(), {.lr = cfg.lr});
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TeacherTrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t n_batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<Trajectory> chunk;
      chunk.reserve(end - start);
      bool any_transition = false;
      for (size_t i = start; i < end; ++i) {
        chunk.push_back(train[order[i]]);
        any_transition |= !chunk.back().codes.empty();
      }
      if (!any_transition) continue;
      TokenBatch batch = make_token_batch(chunk, model.config().max_seq_len);
      auto out = model.forward(batch);
      Tensor loss = model.joint_loss(out, batch);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.value();
      ++n_batches;
    }
    report.train_loss.push_back(n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0);
    if (!val.empty()) report.val_ce.push_back(model.next_event_ce(val, cfg.batch_size));
  }
  return report;
}

}  // namespace trajphen
