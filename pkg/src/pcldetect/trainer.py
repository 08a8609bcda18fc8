"""Training orchestration: fold loops, sampler epochs, early stopping, checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, backward, zero_grads
from .data import (
    FoldAssignment,
    ParagraphRecord,
    Vocabulary,
    binarize_label,
    compose_input,
    load_subtask1_tsv,
    load_subtask2_labels,
    pad_batch,
    stratified_kfold,
    tokenize,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    encode_batch,
    load_checkpoint,
    pooler,
    save_checkpoint,
)
from .errors import ConfigError, NumericsError, TrainingDivergedError
from .heads import (
    BinaryHeadParams,
    MultiLabelHeadParams,
    bce_loss,
    binary_forward,
    binary_loss,
    multilabel_forward,
    predict_binary,
    predict_multilabel,
)
from .metrics import macro_f1, prf1_positive
from .optim import (
    AdamW,
    ScheduleState,
    build_grouped_llrd,
    build_single_group,
    cosine_warmup_multiplier,
)
from .sampler import draw_epoch, wrs_weights

logger = logging.getLogger(__name__)

EVAL_BATCH = 32


@dataclass
class RunConfig:
    """Resolved knobs for one training run."""

    subtask: int = 1
    data_path: str = ""
    negatives_path: str = ""  # subtask 2: labeled file whose negatives join with zero vectors
    out_dir: str = "runs"
    # model
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 6
    d_ff: int = 256
    max_len: int = 250
    dropout: float = 0.4
    # recipe
    batch_size: int = 4
    epochs: int = 10
    eta: float = 1e-5
    lam: float | None = None  # defaults per subtask: 1.6 or 3.6
    groups: int = 3
    head_multiplier: float = 1.1
    weight_decay: float = 0.01
    warmup_frac: float = 0.10
    k_folds: int = 5
    eval_every_batches: int = 50
    patience_rounds: int = 10
    seed: int = 13
    fold: int = 0
    fold_seed: int | None = None  # defaults to seed
    wrs: bool = True
    grouping: str = "llrd"  # "llrd" | "single"

    def __post_init__(self):
        if self.subtask not in (1, 2):
            raise ConfigError(f"subtask must be 1 or 2, got {self.subtask}")
        positive = {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "eta": self.eta,
            "groups": self.groups,
            "head_multiplier": self.head_multiplier,
            "k_folds": self.k_folds,
            "eval_every_batches": self.eval_every_batches,
            "patience_rounds": self.patience_rounds,
            "max_len": self.max_len,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.lam is not None and self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError("warmup_frac must be in [0, 1)")
        if self.grouping not in ("llrd", "single"):
            raise ConfigError(f"grouping must be 'llrd' or 'single', got {self.grouping!r}")

    @property
    def resolved_lambda(self) -> float:
        if self.lam is not None:
            return self.lam
        return 1.6 if self.subtask == 1 else 3.6

    @property
    def resolved_fold_seed(self) -> int:
        return self.seed if self.fold_seed is None else self.fold_seed

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ff=self.d_ff,
            max_len=self.max_len,
            dropout_rate=self.dropout,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["resolved_lambda"] = self.resolved_lambda
        return d

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        """Read key=value lines ('#' comments allowed); overrides win."""
        values: dict = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}: line {lineno}: expected key=value")
                key, raw = (s.strip() for s in line.split("=", 1))
                values[key] = raw
        if overrides:
            values.update(overrides)
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, fields[key].type, key)
        return cls(**kwargs)


def _coerce(raw, annotation: str, key: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if annotation == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {key}={raw!r}")
    if annotation in ("float | None", "int | None") and text.lower() in ("", "none"):
        return None
    try:
        if annotation.startswith("int"):
            return int(text)
        if annotation.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {annotation}") from None
    return text


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass
class TrainingData:
    """Tokenized corpus plus every label view the trainer needs."""

    records: list[ParagraphRecord]
    token_ids: list[list[int]]
    binary_labels: np.ndarray  # contains-PCL flag, drives WRS and subtask 1
    label_vectors: np.ndarray | None  # (n, 7) for subtask 2
    strat_labels: list
    vocab: Vocabulary


def load_training_data(config: RunConfig) -> TrainingData:
    if config.subtask == 1:
        records = load_subtask1_tsv(config.data_path)
        vectors = None
        binary = [binarize_label(r.raw_label) for r in records]
        strat = binary
    else:
        records = load_subtask2_labels(config.data_path)
        vector_list = [list(r.category_vector) for r in records]
        binary = [int(any(v)) for v in vector_list]
        if config.negatives_path:
            extras = [
                r
                for r in load_subtask1_tsv(config.negatives_path)
                if binarize_label(r.raw_label) == 0
            ]
            records = records + extras
            vector_list += [[0] * 7 for _ in extras]
            binary += [0] * len(extras)
            strat = list(binary)
        else:
            strat = _dominant_categories(vector_list)
        vectors = np.asarray(vector_list, dtype=np.float64)
    if not records:
        raise ConfigError(f"no training examples in {config.data_path}")
    return build_training_data(records, np.asarray(binary), vectors, strat, config)


def build_training_data(records, binary, vectors, strat, config: RunConfig) -> TrainingData:
    texts = [compose_input(r) for r in records]
    vocab = Vocabulary.build(texts)
    token_ids = [tokenize(t, vocab, config.max_len) for t in texts]
    return TrainingData(list(records), token_ids, binary, vectors, list(strat), vocab)


def _dominant_categories(vector_list) -> list[int]:
    # positives-only stratification: label each paragraph by its corpus-wide
    # most frequent category bit
    counts = np.sum(vector_list, axis=0)
    out = []
    for vec in vector_list:
        present = [c for c, bit in enumerate(vec) if bit]
        out.append(max(present, key=lambda c: (counts[c], -c)) if present else -1)
    return out


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------


@dataclass
class Model:
    encoder: EncoderParams
    head: BinaryHeadParams | MultiLabelHeadParams
    subtask: int

    def named(self) -> dict:
        params = dict(self.encoder.tensors)
        params.update(self.head.named())
        return params

    def forward(self, ids, train=False, rng=None):
        h = pooler(encode_batch(self.encoder, ids, train=train, rng=rng), self.encoder)
        if self.subtask == 1:
            return binary_forward(h, self.head)
        return multilabel_forward(h, self.head)

    def loss(self, probs, golds):
        if self.subtask == 1:
            return binary_loss(probs, golds)
        return bce_loss(probs, golds)

    def predict(self, probs) -> np.ndarray:
        if self.subtask == 1:
            return predict_binary(probs)
        return predict_multilabel(probs)


def build_model(config: RunConfig, vocab_size: int, rng: np.random.Generator) -> Model:
    encoder = EncoderParams.init(config.encoder_config(vocab_size), rng)
    if config.subtask == 1:
        head = BinaryHeadParams.init(config.d_model, rng)
    else:
        head = MultiLabelHeadParams.init(config.d_model, rng)
    return Model(encoder, head, config.subtask)


def build_groups(config: RunConfig, names):
    if config.grouping == "single":
        return build_single_group(names, config.eta, config.weight_decay)
    return build_grouped_llrd(
        names,
        G=config.groups,
        eta=config.eta,
        lam=config.resolved_lambda,
        head_multiplier=config.head_multiplier,
        weight_decay=config.weight_decay,
    )


def build_optimizer(config: RunConfig, named: dict) -> AdamW:
    return AdamW(build_groups(config, named), named)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def predict_indices(model: Model, data: TrainingData, indices) -> np.ndarray:
    """Hard predictions for a set of example indices (eval mode)."""
    preds = []
    pad = data.vocab.pad_id
    for start in range(0, len(indices), EVAL_BATCH):
        chunk = indices[start : start + EVAL_BATCH]
        ids = pad_batch([data.token_ids[i] for i in chunk], pad_id=pad)
        preds.append(model.predict(model.forward(ids)))
    return np.concatenate(preds)


def eval_metric(model: Model, data: TrainingData, indices) -> float:
    """Positive-class F1 (subtask 1) or macro F1 (subtask 2) on the given split."""
    preds = predict_indices(model, data, indices)
    if model.subtask == 1:
        golds = data.binary_labels[indices]
        return prf1_positive(preds.tolist(), golds.tolist())[2]
    golds = data.label_vectors[indices].astype(int)
    return macro_f1([tuple(p) for p in preds], [tuple(g) for g in golds])[1]


# ---------------------------------------------------------------------------
# fold training
# ---------------------------------------------------------------------------


@dataclass
class FoldOutcome:
    fold: int
    best_metric: float
    best_step: int
    steps_taken: int
    planned_steps: int
    stopped_early: bool
    history: list  # [(step, metric), ...] in evaluation order
    losses: list  # per-step training loss
    checkpoint_path: str
    wall_clock: float


def _epoch_order(config, data, train_idx, epoch, order_seeds) -> np.ndarray:
    """Index order for one epoch: a weighted-sampler draw or a plain shuffle."""
    seed = order_seeds[epoch]
    train_idx = np.asarray(train_idx)
    if config.wrs:
        labels = data.binary_labels[train_idx]
        if labels.min() == labels.max():
            logger.warning(
                "training split has a single class; weighted sampler degenerates to uniform"
            )
            weights = np.ones(train_idx.size)
        else:
            weights = wrs_weights(labels).weights
        return train_idx[draw_epoch(weights, train_idx.size, seed)]
    return np.random.default_rng(seed).permutation(train_idx)


def _batch_golds(data: TrainingData, idx, subtask: int):
    if subtask == 1:
        return data.binary_labels[idx]
    return data.label_vectors[idx]


def train_fold(
    config: RunConfig,
    data: TrainingData,
    train_idx,
    val_idx,
    fold: int,
    run_dir,
) -> FoldOutcome:
    """Train on one fold split and keep the best-validation-metric checkpoint."""
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    if train_idx.size == 0 or val_idx.size == 0:
        raise ConfigError("train and validation splits must be non-empty")
    if np.intersect1d(train_idx, val_idx).size:
        raise ConfigError("train and validation splits overlap")

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()

    init_ss, dropout_ss, order_ss = np.random.SeedSequence([config.seed, fold]).spawn(3)
    model = build_model(config, len(data.vocab), np.random.default_rng(init_ss))
    named = model.named()
    optimizer = build_optimizer(config, named)
    dropout_rng = np.random.default_rng(dropout_ss)
    order_seeds = order_ss.spawn(config.epochs)

    n = train_idx.size
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    pad = data.vocab.pad_id

    step = 0
    best = -math.inf
    best_step = -1
    evals_since_improve = 0
    stopped_early = False
    history: list = []
    losses: list = []
    snapshot = None

    def take_snapshot():
        return (
            {name: t.values.copy() for name, t in named.items()},
            optimizer.state_dict(),
            {"dropout": dropout_rng.bit_generator.state, "step": step},
        )

    for epoch in range(config.epochs):
        order = _epoch_order(config, data, train_idx, epoch, order_seeds)
        for b in range(batches_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            ids = pad_batch([data.token_ids[i] for i in idx], pad_id=pad)
            golds = _batch_golds(data, idx, config.subtask)
            step += 1
            multiplier = cosine_warmup_multiplier(
                ScheduleState(step, total_steps, config.warmup_frac)
            )
            try:
                with Tape():
                    probs = model.forward(ids, train=True, rng=dropout_rng)
                    loss = model.loss(probs, golds)
                    loss_val = loss.item()
                    if not math.isfinite(loss_val):
                        raise NumericsError(f"loss is {loss_val}")
                    backward(loss)
            except NumericsError as exc:
                batch_ids = [data.records[i].par_id for i in idx]
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (epoch {epoch}): {exc}; "
                    f"lr multiplier {multiplier:.6f}, batch par_ids {batch_ids}"
                ) from exc
            optimizer.step(multiplier)
            zero_grads(named.values())
            losses.append(loss_val)

            if step % config.eval_every_batches == 0:
                metric = eval_metric(model, data, val_idx)
                history.append((step, metric))
                if metric > best:
                    best, best_step = metric, step
                    snapshot = take_snapshot()
                    evals_since_improve = 0
                else:
                    evals_since_improve += 1
                if evals_since_improve >= config.patience_rounds:
                    stopped_early = True
                    break
        logger.info(
            "fold %d epoch %d done: step %d, loss %.4f, best %.4f",
            fold, epoch, step, losses[-1], best if history else float("nan"),
        )
        if stopped_early:
            break

    if snapshot is None:  # training was shorter than one evaluation interval
        metric = eval_metric(model, data, val_idx)
        history.append((step, metric))
        best, best_step = metric, step
        snapshot = take_snapshot()

    ckpt_path = run_dir / f"fold{fold}.npz"
    _write_checkpoint(ckpt_path, config, data, model, snapshot, fold, total_steps)
    return FoldOutcome(
        fold=fold,
        best_metric=best,
        best_step=best_step,
        steps_taken=step,
        planned_steps=total_steps,
        stopped_early=stopped_early,
        history=history,
        losses=losses,
        checkpoint_path=str(ckpt_path),
        wall_clock=time.monotonic() - started,
    )


def _write_checkpoint(path, config, data, model, snapshot, fold, total_steps):
    values, opt_state, rng_meta = snapshot
    tensors = {name: ag.Tensor(arr, requires_grad=True) for name, arr in values.items()}
    groups = build_groups(config, tensors)
    meta = {
        "run_config": config.to_dict(),
        "subtask": config.subtask,
        "seed": config.seed,
        "fold": fold,
        "vocab": data.vocab.tokens,
        "rng": rng_meta,
        "schedule": {"snapshot_step": rng_meta["step"], "total_steps": total_steps},
        "optimizer_groups": [
            {"role": g.role, "base_lr": g.base_lr, "weight_decay": g.weight_decay,
             "names": list(g.names)}
            for g in groups
        ],
        "lambda": config.resolved_lambda,
        "eta": config.eta,
        "head_multiplier": config.head_multiplier,
    }
    save_checkpoint(
        path,
        config.encoder_config(len(data.vocab)),
        tensors,
        optimizer_state=opt_state,
        meta=meta,
    )


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# run entry points
# ---------------------------------------------------------------------------


def make_folds(config: RunConfig, data: TrainingData) -> FoldAssignment:
    return stratified_kfold(data.strat_labels, k=config.k_folds, seed=config.resolved_fold_seed)


def _save_vocab(run_dir, data: TrainingData) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    data.vocab.save(run_dir / "vocab.txt")


def run_single_fold(config: RunConfig, run_dir) -> FoldOutcome:
    """The `train` command: one fold of the stratified assignment."""
    data = load_training_data(config)
    folds = make_folds(config, data)
    if not 0 <= config.fold < config.k_folds:
        raise ConfigError(f"fold must be in [0, {config.k_folds}), got {config.fold}")
    train_idx, val_idx = folds.split(config.fold)
    _save_vocab(run_dir, data)
    outcome = train_fold(config, data, train_idx, val_idx, config.fold, run_dir)
    _write_metadata(run_dir, config, [outcome])
    return outcome


def run_kfold(config: RunConfig, run_dir):
    """Train every fold; returns (RunReport, fold outcomes)."""
    from .ensemble import RunReport

    data = load_training_data(config)
    folds = make_folds(config, data)
    _save_vocab(run_dir, data)
    outcomes = []
    for fold in range(config.k_folds):
        train_idx, val_idx = folds.split(fold)
        outcomes.append(train_fold(config, data, train_idx, val_idx, fold, run_dir))
    best = max(outcomes, key=lambda o: (o.best_metric, -o.fold))
    report = RunReport.create(
        config.seed, [o.best_metric for o in outcomes], best.checkpoint_path
    )
    run_dir = Path(run_dir)
    (run_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    _write_metadata(run_dir, config, outcomes)
    return report, outcomes


def _write_metadata(run_dir, config: RunConfig, outcomes):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": config.to_dict(),
        "seed": config.seed,
        "folds": [
            {
                "fold": o.fold,
                "best_metric": o.best_metric,
                "best_step": o.best_step,
                "steps_taken": o.steps_taken,
                "planned_steps": o.planned_steps,
                "stopped_early": o.stopped_early,
                "history": [[s, m] for s, m in o.history],
                "checkpoint": o.checkpoint_path,
                "checkpoint_sha256": file_sha256(o.checkpoint_path),
                "wall_clock_sec": o.wall_clock,
            }
            for o in outcomes
        ],
        "wall_clock_sec": sum(o.wall_clock for o in outcomes),
    }
    (run_dir / "metadata.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def lambda_sweep(config: RunConfig, grid, run_dir):
    """One full k-fold run per lambda; returns [(lam, mean, std), ...]."""
    grid = list(grid)
    if not grid:
        raise ConfigError("lambda grid is empty")
    run_dir = Path(run_dir)
    rows = []
    for lam in grid:
        sub = dataclasses.replace(config, lam=lam)
        report, _ = run_kfold(sub, run_dir / f"lambda_{lam:g}")
        metrics = np.array(report.fold_metrics)
        rows.append((lam, float(metrics.mean()), float(metrics.std())))
        logger.info("lambda %.2f: mean %.4f std %.4f", lam, rows[-1][1], rows[-1][2])
    table = "\n".join(f"{lam:g}\t{mean:.6f}\t{std:.6f}" for lam, mean, std in rows)
    (run_dir / "sweep.tsv").write_text(table + "\n", encoding="utf-8")
    return rows


# ---------------------------------------------------------------------------
# inference from a checkpoint
# ---------------------------------------------------------------------------


def load_model(ckpt_path):
    """Rebuild (model, vocab, meta) from a checkpoint file."""
    enc_config, params, _, meta = load_checkpoint(ckpt_path)
    encoder_tensors = {n: t for n, t in params.items() if not n.startswith("classifier.")}
    encoder = EncoderParams(enc_config, encoder_tensors)
    weight, bias = params["classifier.weight"], params["classifier.bias"]
    subtask = meta["subtask"]
    head_cls = BinaryHeadParams if subtask == 1 else MultiLabelHeadParams
    head = head_cls(weight, bias)
    vocab = Vocabulary(meta["vocab"])
    return Model(encoder, head, subtask), vocab, meta


def predict_records(ckpt_path, records):
    """Predict labels for paragraph records; returns (par_ids, labels)."""
    model, vocab, meta = load_model(ckpt_path)
    max_len = model.encoder.config.max_len
    token_ids = [tokenize(compose_input(r), vocab, max_len) for r in records]
    preds = []
    for start in range(0, len(token_ids), EVAL_BATCH):
        ids = pad_batch(token_ids[start : start + EVAL_BATCH], pad_id=vocab.pad_id)
        preds.append(model.predict(model.forward(ids)))
    flat = np.concatenate(preds)
    if model.subtask == 1:
        labels = [int(p) for p in flat]
    else:
        labels = [tuple(int(b) for b in row) for row in flat]
    return [r.par_id for r in records], labels
