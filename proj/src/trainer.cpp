#include "sovs/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

#include "sovs/formats.hpp"
#include "sovs/perturb.hpp"

namespace sovs {

double total_loss(double l_s, double l_u_in, double l_u_out, double lambda_out) {
  return l_s + l_u_in + lambda_out * l_u_out;
}

void TrainConfig::validate() const {
  if (tau_in < 0 || tau_in > 1 || tau_out < 0 || tau_out > 1)
    throw ConfigError("train config: tau must be in [0,1]");
  if (lambda_out < 0) throw ConfigError("train config: lambda_out must be >= 0");
  if (batch_labeled < 0 || batch_unlabeled_in < 0 || batch_unlabeled_out < 0)
    throw ConfigError("train config: batch sizes must be >= 0");
  if (batch_labeled + batch_unlabeled_in + batch_unlabeled_out == 0)
    throw ConfigError("train config: at least one flow must be active");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (learning_rate <= 0) throw ConfigError("train config: learning rate must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train config: momentum must be in [0,1)");
  if (poly_power < 0) throw ConfigError("train config: poly power must be >= 0");
  if (crop_size < 8) throw ConfigError("train config: crop size too small");
  if (cutmix_prob < 0 || cutmix_prob > 1)
    throw ConfigError("train config: cutmix probability must be in [0,1]");
}

void write_metrics_csv(const std::filesystem::path& path, const MetricHistory& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write metrics CSV " + path.string());
  out << "epoch,l_s,l_u_in,l_u_out,masked_frac_in,masked_frac_out,lr\n";
  for (const auto& r : history)
    out << r.epoch << ',' << fmt_g(r.l_s) << ',' << fmt_g(r.l_u_in) << ',' << fmt_g(r.l_u_out)
        << ',' << fmt_g(r.masked_frac_in) << ',' << fmt_g(r.masked_frac_out) << ','
        << fmt_g(r.lr) << '\n';
}

namespace {

struct FlowStats {
  double loss = 0;
  double masked = 0;
};

WeakParams draw_weak(Rng& rng, int src_h, int src_w, int crop_size) {
  const int lo = std::max(8, (3 * crop_size) / 4);
  const int hi = (3 * crop_size) / 2;
  return sample_weak(rng, src_h, src_w, lo, hi, crop_size);
}

// Weak view -> photometric strongs -> CutMix across the batch, with targets
// mixed under the same boxes. Shared by the in-distribution and OOD flows.
struct StrongBatch {
  std::vector<Image> strong;
  std::vector<Target> target;
};

StrongBatch build_strong_batch(Rng& rng, const std::vector<Image>& weak,
                               std::vector<Target> targets, double cutmix_prob) {
  const int n = static_cast<int>(weak.size());
  std::vector<int> partner(n);
  std::vector<StrongParams> sp(n);
  std::vector<Image> photo(n);
  for (int i = 0; i < n; ++i) {
    partner[i] = rng.uniform_int(0, n - 1);
    sp[i] = sample_strong(rng, weak[i].h, weak[i].w, cutmix_prob, partner[i]);
    photo[i] = photometric_apply(weak[i], sp[i]);
  }
  StrongBatch out;
  out.strong.resize(n);
  out.target.resize(n);
  for (int i = 0; i < n; ++i) {
    const Image* partner_img = sp[i].cutmix_box ? &photo[*sp[i].cutmix_partner] : nullptr;
    auto [img, mask] = strong_apply(weak[i], sp[i], partner_img);
    out.strong[i] = std::move(img);
    out.target[i] = sp[i].cutmix_box ? mix_targets(targets[i], targets[*sp[i].cutmix_partner], mask)
                                     : targets[i];
  }
  return out;
}

Target target_from_pseudo(const PseudoLabel& pl) { return Target{pl.label, pl.confidence}; }

}  // namespace

TrainResult train(TinyFcn<float>& model, const TrainData& data, const TrainConfig& cfg,
                  const std::function<void(int, const TinyFcn<float>&)>& on_step) {
  cfg.validate();
  if (cfg.batch_labeled > 0 && data.labeled.empty())
    throw ConfigError("train: labeled flow active but no labeled data");
  if (cfg.batch_unlabeled_in > 0 && data.unlabeled_in.empty())
    throw ConfigError("train: in-distribution flow active but no unlabeled data");
  if (cfg.batch_unlabeled_out > 0 && data.unlabeled_out.empty())
    throw ConfigError("train: OOD flow active but no OOD data");
  if (cfg.teacher == TeacherSource::kOvs && cfg.batch_unlabeled_out > 0)
    for (std::size_t i = 0; i < data.unlabeled_out.size(); ++i)
      if (!data.unlabeled_out[i].pseudo)
        throw ConfigError("train: missing stored pseudo-label for OOD item " + std::to_string(i));

  const int steps_per_epoch =
      cfg.batch_labeled > 0
          ? static_cast<int>((data.labeled.size() + cfg.batch_labeled - 1) / cfg.batch_labeled)
          : 1;
  const int total_steps = cfg.epochs * steps_per_epoch;

  std::vector<float> velocity(model.params().size(), 0.0f);
  TrainResult result;
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng lab_rng = Rng::derive(cfg.seed, {0xA11ull, static_cast<std::uint64_t>(epoch)});
    Rng in_rng = Rng::derive(cfg.seed, {0xB22ull, static_cast<std::uint64_t>(epoch)});
    Rng out_rng = Rng::derive(cfg.seed, {0xC33ull, static_cast<std::uint64_t>(epoch)});

    MetricRow row;
    row.epoch = epoch;

    for (int s = 0; s < steps_per_epoch; ++s, ++step) {
      const double lr =
          cfg.learning_rate * std::pow(1.0 - static_cast<double>(step) / total_steps,
                                       cfg.poly_power);
      model.zero_grads();
      FlowStats st_s, st_in, st_out;

      // ---- supervised flow -------------------------------------------------
      for (int i = 0; i < cfg.batch_labeled; ++i) {
        const auto& [image, label] = data.labeled[lab_rng.uniform_int(
            0, static_cast<int>(data.labeled.size()) - 1)];
        const WeakParams wp = draw_weak(lab_rng, image.h, image.w, cfg.crop_size);
        const Image weak_img = weak_apply_image(image, wp);
        const LabelMap weak_lbl = weak_apply_label(label, wp);

        TinyFcn<float>::Cache cache;
        const Tensor3 logits = model.forward_cached(weak_img, cache);
        const ConfMap ones(weak_lbl.h, weak_lbl.w, 1.0f);
        auto mce = masked_ce(logits, weak_lbl, ones, 0.0, true);
        st_s.loss += mce.loss / cfg.batch_labeled;
        for (float& g : mce.dlogits.v) g /= cfg.batch_labeled;
        model.backward(cache, mce.dlogits);
      }

      // ---- in-distribution flow (weak view supervises strong view) --------
      if (cfg.batch_unlabeled_in > 0) {
        const int n = cfg.batch_unlabeled_in;
        std::vector<Image> weak(n);
        std::vector<Target> targets(n);
        for (int i = 0; i < n; ++i) {
          const Image& src = data.unlabeled_in[in_rng.uniform_int(
              0, static_cast<int>(data.unlabeled_in.size()) - 1)];
          const WeakParams wp = draw_weak(in_rng, src.h, src.w, cfg.crop_size);
          weak[i] = weak_apply_image(src, wp);
          const PseudoLabel pl = self_pseudo_label(softmax_probs(model.forward(weak[i])));
          targets[i] = target_from_pseudo(pl);
        }
        StrongBatch sb = build_strong_batch(in_rng, weak, std::move(targets), cfg.cutmix_prob);
        for (int i = 0; i < n; ++i) {
          TinyFcn<float>::Cache cache;
          const Tensor3 logits = model.forward_cached(sb.strong[i], cache);
          auto mce = masked_ce(logits, sb.target[i].label, sb.target[i].confidence, cfg.tau_in, true);
          st_in.loss += mce.loss / n;
          st_in.masked += mce.masked_fraction / n;
          for (float& g : mce.dlogits.v) g /= n;
          model.backward(cache, mce.dlogits);
        }
      }

      // ---- OOD flow (stored teacher labels supervise strong view) ---------
      if (cfg.batch_unlabeled_out > 0) {
        const int n = cfg.batch_unlabeled_out;
        std::vector<Image> weak(n);
        std::vector<Target> targets(n);
        for (int i = 0; i < n; ++i) {
          const OodItem& item = data.unlabeled_out[out_rng.uniform_int(
              0, static_cast<int>(data.unlabeled_out.size()) - 1)];
          const WeakParams wp = draw_weak(out_rng, item.image.h, item.image.w, cfg.crop_size);
          weak[i] = weak_apply_image(item.image, wp);
          if (cfg.teacher == TeacherSource::kOvs) {
            targets[i] = Target{weak_apply_label(item.pseudo->label, wp),
                                weak_apply_conf(item.pseudo->confidence, wp)};
          } else {
            const PseudoLabel pl = self_pseudo_label(softmax_probs(model.forward(weak[i])));
            targets[i] = target_from_pseudo(pl);
          }
        }
        StrongBatch sb = build_strong_batch(out_rng, weak, std::move(targets), cfg.cutmix_prob);
        const bool want_grad = cfg.lambda_out > 0;
        for (int i = 0; i < n; ++i) {
          TinyFcn<float>::Cache cache;
          const Tensor3 logits = want_grad ? model.forward_cached(sb.strong[i], cache)
                                           : model.forward(sb.strong[i]);
          auto mce =
              masked_ce(logits, sb.target[i].label, sb.target[i].confidence, cfg.tau_out, want_grad);
          st_out.loss += mce.loss / n;
          st_out.masked += mce.masked_fraction / n;
          if (want_grad) {
            const float scale = static_cast<float>(cfg.lambda_out) / n;
            for (float& g : mce.dlogits.v) g *= scale;
            model.backward(cache, mce.dlogits);
          }
        }
      }

      // ---- SGD + momentum with polynomial decay ----------------------------
      auto& params = model.params();
      auto& grads = model.grads();
      for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = static_cast<float>(cfg.momentum) * velocity[i] + grads[i];
        params[i] -= static_cast<float>(lr) * velocity[i];
      }

      row.l_s += st_s.loss / steps_per_epoch;
      row.l_u_in += st_in.loss / steps_per_epoch;
      row.l_u_out += st_out.loss / steps_per_epoch;
      row.masked_frac_in += st_in.masked / steps_per_epoch;
      row.masked_frac_out += st_out.masked / steps_per_epoch;
      row.lr = lr;

      if (on_step) on_step(step, model);
    }
    result.history.push_back(row);
  }
  result.steps = step;
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const TinyFcn<float>& model,
                     std::uint64_t config_hash) {
  write_sovsckpt(path, config_hash, model.params());
}

void load_checkpoint(const std::filesystem::path& path, TinyFcn<float>& model,
                     std::uint64_t expected_hash) {
  const CkptFile file = read_sovsckpt(path);
  if (expected_hash != 0 && file.config_hash != expected_hash)
    throw ConfigError("checkpoint " + path.string() + " was produced by a different config");
  if (file.params.size() != model.params().size())
    throw ConfigError("checkpoint " + path.string() + " holds " +
                      std::to_string(file.params.size()) + " parameters, model expects " +
                      std::to_string(model.params().size()));
  model.params() = file.params;
}

namespace {

double flow_objective(TinyFcn<double>& model, const std::vector<FrozenFlowItem>& items,
                      double tau, bool with_grad, double weight) {
  if (items.empty()) return 0.0;
  double loss = 0.0;
  for (const auto& item : items) {
    TinyFcn<double>::Cache cache;
    const Tensor3T<double> logits =
        with_grad ? model.forward_cached(item.image, cache) : model.forward(item.image);
    auto mce = masked_ce(logits, item.target, item.confidence, tau, with_grad);
    loss += mce.loss / static_cast<double>(items.size());
    if (with_grad && weight != 0.0) {
      const double scale = weight / static_cast<double>(items.size());
      for (double& g : mce.dlogits.v) g *= scale;
      model.backward(cache, mce.dlogits);
    }
  }
  return loss;
}

double objective(TinyFcn<double>& model, const GradCheckBatch& batch, double tau_in,
                 double tau_out, double lambda_out, bool with_grad) {
  const double l_s = flow_objective(model, batch.labeled, 0.0, with_grad, 1.0);
  const double l_in = flow_objective(model, batch.unlabeled_in, tau_in, with_grad, 1.0);
  const double l_out = flow_objective(model, batch.unlabeled_out, tau_out,
                                      with_grad && lambda_out != 0.0, lambda_out);
  return total_loss(l_s, l_in, l_out, lambda_out);
}

}  // namespace

double gradient_check(TinyFcn<double>& model, const GradCheckBatch& batch, double tau_in,
                      double tau_out, double lambda_out, int n_probes, double epsilon,
                      std::uint64_t seed) {
  model.zero_grads();
  const double base = objective(model, batch, tau_in, tau_out, lambda_out, true);
  if (!std::isfinite(base)) return std::numeric_limits<double>::infinity();
  const std::vector<double> analytic = model.grads();

  std::vector<int> indices(model.params().size());
  std::iota(indices.begin(), indices.end(), 0);
  Rng rng = Rng::derive(seed, {0x96adull});
  rng.shuffle(indices);
  const int probes = std::min<int>(n_probes, static_cast<int>(indices.size()));

  double max_rel = 0.0;
  for (int k = 0; k < probes; ++k) {
    const int i = indices[k];
    const double saved = model.params()[i];
    model.params()[i] = saved + epsilon;
    const double up = objective(model, batch, tau_in, tau_out, lambda_out, false);
    model.params()[i] = saved - epsilon;
    const double down = objective(model, batch, tau_in, tau_out, lambda_out, false);
    model.params()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      return std::numeric_limits<double>::infinity();
    const double numeric = (up - down) / (2 * epsilon);
    // Hybrid relative/absolute error: central differences carry cancellation
    // noise of roughly machine_eps * |loss| / epsilon (~1e-10 here), so for
    // parameters whose gradient sits below the floor no oracle can resolve a
    // relative error; they are judged absolutely at the floor scale instead.
    // A genuine backward bug still trips this for any mismatch > tol * floor.
    constexpr double kDenomFloor = 1e-5;
    const double denom = std::max(std::fabs(analytic[i]) + std::fabs(numeric), kDenomFloor);
    max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace sovs
