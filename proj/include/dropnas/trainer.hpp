#ifndef DROPNAS_TRAINER_HPP
#define DROPNAS_TRAINER_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dropnas/core/optim.hpp"
#include "dropnas/dropsched.hpp"
#include "dropnas/geno.hpp"
#include "dropnas/io/checkpoint.hpp"
#include "dropnas/io/dataset.hpp"
#include "dropnas/supernet/supernet.hpp"

namespace dropnas {

struct WOptConfig {
  Real lr = Real(0.0375);
  Real momentum = Real(0.9);
  Real weight_decay = Real(3e-4);
  Real clip = Real(3);
};

struct AOptConfig {
  Real lr = Real(3e-4);
  Real beta1 = Real(0.5);
  Real beta2 = Real(0.999);
  Real weight_decay = Real(1e-3);
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  WOptConfig w;
  AOptConfig a;
  DropConfig drop;
  bool alpha_adjust = true;
  bool partial_decay = true;
  bool grouping = true;
  bool cosine_lr = true;
  std::uint64_t seed = 1;
};

struct StepRecord {
  long step = 0;
  Real loss = 0;
  Real accuracy = 0;
  std::uint64_t mask_digest = 0;
  std::uint64_t alpha_hash = 0;
};

// Closed-form shift x added to the kept entries after the optimizer step so
// every dropped op's softmax probability is preserved:
//   x = ln( sum_kept exp(a_old) / sum_kept exp(a_new) ).
// No-op when nothing was dropped. Requires dropped entries untouched.
inline std::vector<Real> alpha_adjust(const std::vector<Real>& alpha_old,
                                      std::vector<Real> alpha_new, const DropMask& mask) {
  if (alpha_old.size() != alpha_new.size() || mask.keep.size() != alpha_new.size())
    throw ContractError("alpha_adjust: size mismatch");
  if (mask.kept_count() == 0) throw ContractError("alpha_adjust: no kept op");
  if (mask.all_kept()) return alpha_new;
  for (size_t i = 0; i < alpha_new.size(); ++i)
    if (!mask.keep[i] && alpha_old[i] != alpha_new[i])
      throw ContractError("alpha_adjust: dropped alpha changed during the step");

  auto logsumexp_kept = [&](const std::vector<Real>& a) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (size_t i = 0; i < a.size(); ++i)
      if (mask.keep[i]) mx = std::max(mx, a[i]);
    Real s = 0;
    for (size_t i = 0; i < a.size(); ++i)
      if (mask.keep[i]) s += std::exp(a[i] - mx);
    return mx + std::log(s);
  };
  const Real x = logsumexp_kept(alpha_old) - logsumexp_kept(alpha_new);
  for (size_t i = 0; i < alpha_new.size(); ++i)
    if (mask.keep[i]) alpha_new[i] += x;
  return alpha_new;
}

inline Real batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const int N = logits.dim(0), K = logits.dim(1);
  int hits = 0;
  for (int i = 0; i < N; ++i) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (logits.v()[static_cast<long>(i) * K + k] > logits.v()[static_cast<long>(i) * K + best])
        best = k;
    if (best == labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<Real>(hits) / static_cast<Real>(N);
}

namespace detail {
inline std::uint64_t hash_bytes(const void* data, size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}
}  // namespace detail

// One-level optimization: w (SGD momentum) and alpha (Adam) are stepped on
// the same batch. Dropped ops are frozen for the step: zero gradient, no
// decay, untouched optimizer moments.
class Trainer {
 public:
  Trainer(Supernet& net, TrainConfig cfg) : net_(net), cfg_(cfg) {
    w_opt_ = Optimizer::sgd_momentum(cfg.w.lr, cfg.w.momentum, cfg.w.weight_decay);
    a_opt_ = Optimizer::adam(cfg.a.lr, cfg.a.beta1, cfg.a.beta2, cfg.a.weight_decay);
    for (const ParamInfo& e : net.params.entries) {
      if (e.is_alpha) {
        a_params_.push_back(e.t);
        a_infos_.push_back(e);
      } else {
        w_params_.push_back(e.t);
        w_infos_.push_back(e);
      }
    }
    w_mask_store_.resize(w_params_.size());
    for (size_t i = 0; i < w_params_.size(); ++i)
      w_mask_store_[i].assign(w_params_[i].v().size(), 1);
  }

  StepRecord step(const Tensor& x, const std::vector<int>& labels) {
    DropConfig dcfg = cfg_.drop;
    dcfg.grouping = cfg_.grouping;
    last_plan_ = net_.sample_plan(dcfg, cfg_.seed, static_cast<std::uint64_t>(step_));

    zero_grads(w_params_);
    zero_grads(a_params_);
    tape_.reset();

    Tensor logits, loss;
    try {
      logits = net_.forward(tape_, x, last_plan_);
      loss = cross_entropy(tape_, logits, labels);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step_) +
                         " (diagnostics: " + diagnostic_dump() + ")");
    }
    tape_.backward(loss);

    // alpha snapshot before any update, per bank/edge
    std::vector<std::vector<std::vector<Real>>> alpha_old(net_.banks.size());
    for (size_t b = 0; b < net_.banks.size(); ++b)
      for (const Tensor& a : net_.banks[b].edge_alpha)
        alpha_old[b].push_back(a.v());

    clip_grad_norm(w_params_, cfg_.w.clip);

    // weight masks: op-owned tensors are frozen whole when dropped (under
    // partial decay); shared weights (stem/preprocess/head) always active
    std::vector<const std::vector<std::uint8_t>*> w_masks(w_params_.size(), nullptr);
    if (cfg_.partial_decay) {
      for (size_t i = 0; i < w_infos_.size(); ++i) {
        const ParamInfo& info = w_infos_[i];
        if (info.op < 0) continue;
        const int bank = net_.cell_bank[static_cast<size_t>(info.cell)];
        const bool kept =
            last_plan_.masks[static_cast<size_t>(bank)][static_cast<size_t>(info.edge)]
                .keep[static_cast<size_t>(info.op)] != 0;
        std::fill(w_mask_store_[i].begin(), w_mask_store_[i].end(),
                  kept ? std::uint8_t(1) : std::uint8_t(0));
        w_masks[i] = &w_mask_store_[i];
      }
    }
    w_opt_.step(w_params_, &w_masks);

    // alpha masks: dropped entries are always frozen so their probabilities
    // can be preserved exactly by the adjust step
    std::vector<const std::vector<std::uint8_t>*> a_masks(a_params_.size(), nullptr);
    for (size_t i = 0; i < a_infos_.size(); ++i) {
      const ParamInfo& info = a_infos_[i];
      a_masks[i] = &last_plan_.masks[static_cast<size_t>(info.bank)]
                        [static_cast<size_t>(info.edge)].keep;
    }
    a_opt_.step(a_params_, &a_masks);

    if (cfg_.alpha_adjust) {
      for (size_t b = 0; b < net_.banks.size(); ++b)
        for (size_t e = 0; e < net_.banks[b].edge_alpha.size(); ++e) {
          const DropMask& mask = last_plan_.masks[b][e];
          if (mask.all_kept()) continue;
          Tensor& a = net_.banks[b].edge_alpha[e];
          a.v() = alpha_adjust(alpha_old[b][e], a.v(), mask);
        }
    }

    StepRecord rec;
    rec.step = step_;
    rec.loss = loss.item();
    rec.accuracy = batch_accuracy(logits, labels);
    std::uint64_t digest = 0xcbf29ce484222325ull;
    for (const auto& bank : last_plan_.masks)
      for (const DropMask& m : bank)
        digest = detail::hash_bytes(m.keep.data(), m.keep.size(), digest);
    rec.mask_digest = digest;
    std::uint64_t ah = 0xcbf29ce484222325ull;
    for (const Tensor& a : a_params_)
      ah = detail::hash_bytes(a.v().data(), a.v().size() * sizeof(Real), ah);
    rec.alpha_hash = ah;
    ++step_;
    return rec;
  }

  void set_w_lr(Real lr) { w_opt_.lr = lr; }
  Real w_lr() const { return w_opt_.lr; }
  long step_count() const { return step_; }
  const DropPlan& last_plan() const { return last_plan_; }
  const Optimizer& w_optimizer() const { return w_opt_; }
  const Optimizer& a_optimizer() const { return a_opt_; }
  const std::vector<ParamInfo>& w_infos() const { return w_infos_; }
  const std::vector<ParamInfo>& a_infos() const { return a_infos_; }

 private:
  std::string diagnostic_dump() const {
    std::ostringstream os;
    os << "last mask plan:";
    for (size_t b = 0; b < last_plan_.masks.size(); ++b) {
      os << " bank" << b << "=";
      for (const DropMask& m : last_plan_.masks[b]) {
        for (std::uint8_t k : m.keep) os << (k ? '1' : '0');
        os << '/';
      }
    }
    Real amin = 0, amax = 0;
    bool first = true;
    for (const Tensor& a : a_params_)
      for (Real v : a.v()) {
        amin = first ? v : std::min(amin, v);
        amax = first ? v : std::max(amax, v);
        first = false;
      }
    os << " alpha range [" << amin << ", " << amax << "]";
    return os.str();
  }

  Supernet& net_;
  TrainConfig cfg_;
  Optimizer w_opt_, a_opt_;
  std::vector<Tensor> w_params_, a_params_;
  std::vector<ParamInfo> w_infos_, a_infos_;
  std::vector<std::vector<std::uint8_t>> w_mask_store_;
  DropPlan last_plan_;
  Tape tape_;
  long step_ = 0;
};

// ---------------------------------------------------------------- search loop

struct SearchResult {
  Genotype genotype;
  std::string checkpoint_path;
  std::string history_path;
  std::string entropy_path;
  Real final_loss = 0;
  Real final_accuracy = 0;
  long steps = 0;
};

inline Real alpha_entropy(const std::vector<Real>& alpha) {
  const std::vector<Real> p = detail::softmax_values(alpha);
  Real h = 0;
  for (Real v : p)
    if (v > Real(0)) h -= v * std::log(v);
  return h;
}

// Full training split drives both w and alpha (one-level optimization: no
// validation split). History flushed per epoch; outputs land in out_dir.
inline SearchResult run_search(Supernet& net, const TrainConfig& cfg, const DatasetPair& data,
                               const std::string& out_dir, std::uint64_t config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  SearchResult res;
  res.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
  res.history_path = (fs::path(out_dir) / "history.csv").string();
  res.entropy_path = (fs::path(out_dir) / "alpha_entropy.csv").string();

  std::ofstream hist(res.history_path, std::ios::trunc);
  if (!hist) throw IoError("cannot write " + res.history_path);
  hist << "# schema=dropnas.history.v1 config_hash=" << std::hex << config_hash << std::dec
       << "\n";
  hist << "epoch,step,loss,acc,lr_w,masks_seed\n";
  std::ofstream ent(res.entropy_path, std::ios::trunc);
  if (!ent) throw IoError("cannot write " + res.entropy_path);
  ent << "# schema=dropnas.alpha_entropy.v1 config_hash=" << std::hex << config_hash << std::dec
      << "\n";
  ent << "epoch,bank,cell_kind,edge,entropy\n";

  if (data.train.count < cfg.batch_size)
    throw ConfigError("batch size " + std::to_string(cfg.batch_size) +
                      " exceeds the training set (" + std::to_string(data.train.count) + ")");
  Trainer trainer(net, cfg);
  const int steps_per_epoch = data.train.count / cfg.batch_size;
  std::vector<int> order(static_cast<size_t>(data.train.count));
  for (int i = 0; i < data.train.count; ++i) order[static_cast<size_t>(i)] = i;

  hist << std::setprecision(17);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.cosine_lr)
      trainer.set_w_lr(Real(0.5) * cfg.w.lr *
                       (Real(1) + std::cos(Real(M_PI) * epoch / std::max(1, cfg.epochs))));
    RngStream shuffle(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (int i = data.train.count - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<int> idx(order.begin() + static_cast<long>(s) * cfg.batch_size,
                           order.begin() + static_cast<long>(s + 1) * cfg.batch_size);
      std::vector<int> labels;
      Tensor x = make_batch(data.train, idx, labels);
      StepRecord rec = trainer.step(x, labels);
      hist << epoch << ',' << rec.step << ',' << rec.loss << ',' << rec.accuracy << ','
           << trainer.w_lr() << ',' << mix64(cfg.seed ^ static_cast<std::uint64_t>(rec.step))
           << "\n";
      res.final_loss = rec.loss;
      res.final_accuracy = rec.accuracy;
      res.steps = rec.step + 1;
    }
    hist.flush();
    for (size_t b = 0; b < net.banks.size(); ++b)
      for (size_t e = 0; e < net.banks[b].edge_alpha.size(); ++e)
        ent << epoch << ',' << b << ',' << cell_kind_name(net.banks[b].kind) << ',' << e << ','
            << alpha_entropy(net.banks[b].edge_alpha[e].v()) << "\n";
    ent.flush();
  }

  save_checkpoint(net.params, res.checkpoint_path, config_hash);
  res.genotype = derive_genotype(net);
  res.genotype.meta.seed = cfg.seed;
  res.genotype.meta.r = cfg.drop.r;
  {
    std::ostringstream hs;
    hs << std::hex << config_hash;
    res.genotype.meta.config_hash = hs.str();
  }
  return res;
}

}  // namespace dropnas

#endif
