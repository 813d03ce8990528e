"""End-to-end training loop: batching, augmentation, gating, losses, SGD, EMA.

One step:
  weak view of the labeled batch -> supervised CE
  weak view of the unlabeled batch (no grad) -> energies, gate, pseudo-classes
  prior EMA update -> adaptive margins
  strong view of the unlabeled batch -> gated margin loss
  weak/strong embeddings of selected samples -> hard triplets -> triplet loss
  weighted total -> momentum SGD update -> model-EMA update

Evaluation always runs on the EMA parameters. The unlabeled path never sees
hidden labels; the pseudo-label audit runs as a separate reporting pass.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from . import augment
from .config import TrainConfig
from .data import BatchPlan, DatasetSplit, sample_batches
from .energy import SelectionConfig, audit, select
from .errors import ConfigError, DataError, NumericError
from .losses import ClassPriorEMA, ce_supervised, total_loss, unsup_loss
from .model import ConvNet, ParamEma
from .triplet import ahtl, mine_hard, triplet_stats, triplet_weights

METRIC_COLUMNS = [
    "step",
    "lr",
    "loss_s",
    "loss_u",
    "loss_ahtl",
    "loss_total",
    "selected_count",
    "min_energy",
    "mean_energy",
    "triplet_count",
    "triplet_active_frac",
    "mean_d_ap",
    "mean_d_an",
]


def lr_schedule(iteration, total, base_lr, kind="cosine"):
    if kind == "constant" or total == 0:
        return base_lr
    if kind == "cosine":
        return base_lr * math.cos(7.0 * math.pi * iteration / (16.0 * total))
    raise ConfigError(f"unknown lr schedule {kind!r}")


@dataclass
class TrainState:
    model: ConvNet
    optimizer: torch.optim.SGD
    ema: ParamEma
    prior: ClassPriorEMA
    iteration: int
    config: TrainConfig


def init_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    model = ConvNet(
        cfg.num_classes,
        conv_widths=cfg.conv_widths,
        batch_norm=cfg.batch_norm,
    )
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=cfg.lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    return TrainState(
        model=model,
        optimizer=optimizer,
        ema=ParamEma(model, cfg.model_ema_decay),
        prior=ClassPriorEMA(cfg.num_classes, cfg.prior_decay),
        iteration=0,
        config=cfg,
    )


def _to_tensor(pixel_list):
    if not pixel_list:
        return torch.empty(0, 1, 1)
    return torch.from_numpy(np.stack(pixel_list).astype(np.float32))


def train_step(state: TrainState, labeled_batch, unlabeled_batch):
    """One optimization step; returns the metrics row for the step."""
    cfg = state.config
    it = state.iteration
    model = state.model
    model.train()

    # supervised branch on weak views of labeled data
    lab_weak = _to_tensor(
        [augment.weak_view(s.pixels, cfg, cfg.seed, s.id, it) for s in labeled_batch]
    )
    labels = torch.tensor([s.label for s in labeled_batch], dtype=torch.long)
    logits_x, _ = model(lab_weak)
    l_s = ce_supervised(logits_x, labels)

    sel_cfg = SelectionConfig(
        tau_e=cfg.tau_e,
        temperature=cfg.temperature,
        baseline_mode=cfg.baseline_mode,
        tau_c=cfg.tau_c,
    )
    n_u = len(unlabeled_batch)
    records = []
    if n_u > 0:
        ids = [s.id for s in unlabeled_batch]
        unl_weak = _to_tensor(
            [augment.weak_view(s.pixels, cfg, cfg.seed, s.id, it) for s in unlabeled_batch]
        )
        with torch.no_grad():
            weak_logits, weak_emb = model(unl_weak)
            weak_softmax = torch.softmax(weak_logits, dim=-1)
        mask, records, energies = select(ids, weak_logits, sel_cfg, it)
        pseudo = weak_logits.argmax(dim=-1)
        state.prior.update(weak_softmax)
        margins = state.prior.margins(cfg.lambda_margin)

        unl_strong = _to_tensor(
            [augment.strong_view(s.pixels, cfg, cfg.seed, s.id, it) for s in unlabeled_batch]
        )
        strong_logits, strong_emb = model(unl_strong)
        l_u = unsup_loss(strong_logits, pseudo, mask, margins)

        l_ahtl, stats = _triplet_term(
            cfg, ids, mask, pseudo, weak_emb, strong_emb
        )
        min_e = float(energies.min())
        mean_e = float(energies.mean())
        n_sel = int(mask.sum())
    else:
        l_u = logits_x.new_zeros(())
        l_ahtl = logits_x.new_zeros(())
        stats = {"count": 0, "active_frac": 0.0, "mean_d_ap": 0.0, "mean_d_an": 0.0}
        min_e = mean_e = float("nan")
        n_sel = 0

    try:
        total = total_loss(l_s, l_u, l_ahtl, cfg.lambda_u, cfg.lambda_ahtl)
    except NumericError as e:
        raise NumericError(f"step {it}: {e}") from e

    lr = lr_schedule(it, cfg.total_iters, cfg.lr, cfg.lr_schedule)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad()
    total.backward()
    state.optimizer.step()
    state.ema.update(model)
    state.iteration = it + 1

    return {
        "step": it,
        "lr": lr,
        "loss_s": float(l_s.detach()),
        "loss_u": float(l_u.detach()),
        "loss_ahtl": float(l_ahtl.detach()),
        "loss_total": float(total.detach()),
        "selected_count": n_sel,
        "min_energy": min_e,
        "mean_energy": mean_e,
        "triplet_count": stats["count"],
        "triplet_active_frac": stats["active_frac"],
        "mean_d_ap": stats["mean_d_ap"],
        "mean_d_an": stats["mean_d_an"],
        "records": records,
    }


def _triplet_term(cfg, ids, mask, pseudo, weak_emb, strong_emb):
    """Mine triplets among selected samples and evaluate the adaptive loss.

    Anchor (weak) embeddings come from the no-grad pass and act as constants;
    gradients reach the model through the strong-view positive/negative only.
    """
    if cfg.lambda_ahtl == 0:
        return strong_emb.new_zeros(()), {
            "count": 0, "active_frac": 0.0, "mean_d_ap": 0.0, "mean_d_an": 0.0,
        }
    sel = np.flatnonzero(np.asarray(mask))
    if len(sel) < 2:
        return strong_emb.new_zeros(()), {
            "count": 0, "active_frac": 0.0, "mean_d_ap": 0.0, "mean_d_an": 0.0,
        }
    sel_ids = np.asarray(ids)[sel]
    sel_classes = np.asarray(pseudo)[sel]
    w = weak_emb[sel]
    s = strong_emb[sel]
    if cfg.normalize_embeddings:
        w = torch.nn.functional.normalize(w, dim=-1)
        s = torch.nn.functional.normalize(s, dim=-1)
    triplets = mine_hard(sel_ids, sel_classes, w.detach().numpy())
    if len(triplets) == 0:
        return strong_emb.new_zeros(()), {
            "count": 0, "active_frac": 0.0, "mean_d_ap": 0.0, "mean_d_an": 0.0,
        }
    anchor = w[triplets.anchor_idx]  # no_grad pass: constant
    positive = s[triplets.pos_idx]
    negative = s[triplets.neg_idx]
    w_p, w_n = triplet_weights(
        anchor.detach().numpy(), positive.detach().numpy(), negative.detach().numpy()
    )
    loss = ahtl(anchor, positive, negative, w_p, w_n, cfg.triplet_margin)
    stats = triplet_stats(
        anchor.detach(), positive.detach(), negative.detach(), w_p, w_n, cfg.triplet_margin
    )
    return loss, stats


@torch.no_grad()
def evaluate(model: ConvNet, test_samples, num_classes, batch_size=256):
    """Accuracy and per-class recall on un-augmented test images."""
    model.eval()
    preds, labels = [], []
    for lo in range(0, len(test_samples), batch_size):
        chunk = test_samples[lo : lo + batch_size]
        x = _to_tensor([s.pixels for s in chunk])
        logits, _ = model(x)
        preds.extend(logits.argmax(dim=-1).tolist())
        labels.extend(s.label for s in chunk)
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    acc = float((preds == labels).mean()) if len(labels) else 0.0
    recalls = []
    for c in range(num_classes):
        m = labels == c
        recalls.append(float((preds[m] == c).mean()) if m.any() else float("nan"))
    return {"accuracy": acc, "per_class_recall": recalls, "predictions": preds, "labels": labels}


def audit_pass(state: TrainState, split: DatasetSplit):
    """Full-pool pseudo-label audit with the live model (reporting only)."""
    cfg = state.config
    sel_cfg = SelectionConfig(
        tau_e=cfg.tau_e,
        temperature=cfg.temperature,
        baseline_mode=cfg.baseline_mode,
        tau_c=cfg.tau_c,
    )
    records = pseudo_label_pool(state.model, split.unlabeled, cfg, sel_cfg, state.iteration)
    counts = np.zeros(cfg.num_classes, dtype=np.int64)
    for c in split.hidden_labels.values():
        counts[c] += 1
    return audit(records, split.hidden_labels, cfg.num_classes, counts)


@torch.no_grad()
def pseudo_label_pool(model, unlabeled, cfg, sel_cfg, iteration, batch_size=256):
    """Gate every unlabeled sample on its weak view; returns selected records."""
    model.eval()
    records = []
    for lo in range(0, len(unlabeled), batch_size):
        chunk = unlabeled[lo : lo + batch_size]
        ids = [s.id for s in chunk]
        x = _to_tensor(
            [augment.weak_view(s.pixels, cfg, cfg.seed, s.id, iteration) for s in chunk]
        )
        logits, _ = model(x)
        _, recs, _ = select(ids, logits, sel_cfg, iteration)
        records.extend(recs)
    return records


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def tail_class_set(num_classes):
    """Indices of the ceil(K/2) smallest training classes (largest k)."""
    n_tail = math.ceil(num_classes / 2)
    return list(range(num_classes - n_tail, num_classes))


def fit(cfg: TrainConfig, split: DatasetSplit, out_dir, resume=False, log_fn=None):
    """Run the full training loop; writes metrics, audits, and checkpoints.

    Outputs in out_dir: config.json, metrics.csv, eval.csv, audit.jsonl,
    checkpoint_final.npz, checkpoint_best.npz, report.json.
    """
    if not split.labeled:
        raise DataError("dataset has no labeled samples")
    os.makedirs(out_dir, exist_ok=True)
    torch.set_num_threads(max(1, torch.get_num_threads()))

    state = init_state(cfg)
    start_iter = 0
    final_path = os.path.join(out_dir, "checkpoint_final.npz")
    if resume and os.path.exists(final_path):
        start_iter = load_checkpoint(final_path, state)

    with open(os.path.join(out_dir, "config.json"), "w") as f:
        f.write(cfg.to_json())

    plan = BatchPlan(cfg.batch_size, cfg.unlabeled_ratio)
    mode = "a" if start_iter > 0 else "w"
    metrics_f = open(os.path.join(out_dir, "metrics.csv"), mode, newline="")
    metrics_w = csv.writer(metrics_f)
    eval_f = open(os.path.join(out_dir, "eval.csv"), mode, newline="")
    eval_w = csv.writer(eval_f)
    audit_f = open(os.path.join(out_dir, "audit.jsonl"), mode)
    eval_cols = (
        ["step", "accuracy"]
        + [f"recall_{c}" for c in range(cfg.num_classes)]
        + ["tail_recall", "head_recall"]
    )
    try:
        if start_iter == 0:
            metrics_w.writerow(METRIC_COLUMNS)
            eval_w.writerow(eval_cols)

        tails = tail_class_set(cfg.num_classes)
        best_acc = -1.0
        best_path = os.path.join(out_dir, "checkpoint_best.npz")
        last_eval = None

        def run_eval(step):
            nonlocal best_acc, last_eval
            eval_model = state.ema.build_model(state.model)
            res = evaluate(eval_model, split.test, cfg.num_classes)
            rec = res["per_class_recall"]

            def group_mean(group):
                vals = [rec[c] for c in group if not math.isnan(rec[c])]
                return float(np.mean(vals)) if vals else 0.0

            tail = group_mean(tails)
            head = group_mean([c for c in range(cfg.num_classes) if c not in tails])
            eval_w.writerow([_fmt(step)] + [_fmt(res["accuracy"])] + [_fmt(r) for r in rec]
                            + [_fmt(tail), _fmt(head)])
            eval_f.flush()
            for row in audit_pass(state, split):
                row = dict(row)
                row["epoch"] = step
                audit_f.write(json.dumps(row, sort_keys=True) + "\n")
            audit_f.flush()
            if res["accuracy"] > best_acc:
                best_acc = res["accuracy"]
                save_checkpoint(best_path, state)
            last_eval = {"step": step, "accuracy": res["accuracy"], "per_class_recall": rec,
                         "tail_recall": tail, "head_recall": head,
                         "predictions": res["predictions"], "labels": res["labels"]}
            if log_fn:
                log_fn(f"step {step}: ema accuracy {res['accuracy']:.4f} tail recall {tail:.4f}")
            return res

        if start_iter == 0:
            run_eval(0)

        for it in range(start_iter, cfg.total_iters):
            labeled_batch, unlabeled_batch = sample_batches(split, plan, cfg.seed, it)
            row = train_step(state, labeled_batch, unlabeled_batch)
            metrics_w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
            if (it + 1) % cfg.eval_interval == 0 or (it + 1) == cfg.total_iters:
                metrics_f.flush()
                run_eval(it + 1)

        if cfg.total_iters == 0 and start_iter == 0:
            pass  # initial evaluation already emitted
        save_checkpoint(final_path, state)
    finally:
        metrics_f.close()
        eval_f.close()
        audit_f.close()

    summary = {
        "fingerprint": cfg.fingerprint(),
        "best_accuracy": best_acc,
        "final": {k: v for k, v in (last_eval or {}).items()
                  if k not in ("predictions", "labels")},
    }
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return state, last_eval


# ---------------------------------------------------------------------------
# Checkpoints: a keyed container of named float32 arrays plus the config
# fingerprint. Keys: param/<name>, ema/<name>, mom/<name>, prior, iteration,
# config_fingerprint, config_json.
# ---------------------------------------------------------------------------


def save_checkpoint(path, state: TrainState):
    arrays = {}
    for name, p in state.model.state_dict().items():
        arrays[f"param/{name}"] = p.detach().numpy().astype(np.float32)
    for name, p in state.ema.shadow.items():
        arrays[f"ema/{name}"] = p.detach().numpy().astype(np.float32)
    for name, p in state.model.named_parameters():
        buf = state.optimizer.state.get(p, {}).get("momentum_buffer")
        if buf is not None:
            arrays[f"mom/{name}"] = buf.detach().numpy().astype(np.float32)
    arrays["prior"] = state.prior.p_hat.astype(np.float64)
    arrays["iteration"] = np.array([state.iteration], dtype=np.int64)
    arrays["config_fingerprint"] = np.array(state.config.fingerprint())
    arrays["config_json"] = np.array(state.config.to_json())
    np.savez(path, **arrays)


def load_checkpoint(path, state: TrainState) -> int:
    """Restore parameters, EMA, momentum, prior; returns the stored iteration."""
    with np.load(path, allow_pickle=False) as z:
        fp = str(z["config_fingerprint"])
        if fp != state.config.fingerprint():
            raise ConfigError(
                f"checkpoint fingerprint {fp} does not match current config"
            )
        sd = {}
        for name, p in state.model.state_dict().items():
            sd[name] = torch.from_numpy(z[f"param/{name}"]).to(p.dtype)
        state.model.load_state_dict(sd)
        for name in state.ema.shadow:
            state.ema.shadow[name] = torch.from_numpy(z[f"ema/{name}"]).clone()
        for name, p in state.model.named_parameters():
            key = f"mom/{name}"
            if key in z:
                state.optimizer.state[p] = {
                    "momentum_buffer": torch.from_numpy(z[key]).clone()
                }
        state.prior.p_hat = z["prior"].astype(np.float64)
        state.iteration = int(z["iteration"][0])
    return state.iteration


def load_eval_model(path, cfg: TrainConfig) -> ConvNet:
    """Build an evaluation model from a checkpoint's EMA arrays."""
    model = ConvNet(cfg.num_classes, conv_widths=cfg.conv_widths, batch_norm=cfg.batch_norm)
    with np.load(path, allow_pickle=False) as z:
        sd = {
            name: torch.from_numpy(z[f"ema/{name}"]).to(p.dtype)
            for name, p in model.state_dict().items()
        }
    model.load_state_dict(sd)
    model.eval()
    return model


def load_live_model(path, cfg: TrainConfig) -> ConvNet:
    model = ConvNet(cfg.num_classes, conv_widths=cfg.conv_widths, batch_norm=cfg.batch_norm)
    with np.load(path, allow_pickle=False) as z:
        sd = {
            name: torch.from_numpy(z[f"param/{name}"]).to(p.dtype)
            for name, p in model.state_dict().items()
        }
    model.load_state_dict(sd)
    model.eval()
    return model
