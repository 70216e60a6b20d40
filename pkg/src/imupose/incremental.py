"""Incremental adaptation harness: one-to-one chains and many-to-one leave-one-out.

Reports carry, per target subject, the adapted model's score on the new
subject (incremental), its score on the previously learned subject(s)
(forgetting), the from-scratch baselines, and percent changes; per-class F1
is kept alongside every Macro F1.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .metrics import class_f1_scores, performance_change
from .nn.model import ClnModel, rebuild_head
from .pipeline import LabeledDataset, SplitSpec, merge_generalized, stratified_shuffle_split
from .training import LR_LEVELS, TrainConfig, TrainingDiverged, evaluate, train

RECOMMENDED_STRATEGY = "C1L2+MtO+LR2"

_STRATEGY_RE = re.compile(r"C([1-5])L2\+(OtO|MtO)\+(LR[123])", re.IGNORECASE)


def parse_strategy(text: str) -> tuple[int, str, str]:
    """'C1L2+MtO+LR2' -> (conv_layers, scheme, lr_level)."""
    m = _STRATEGY_RE.fullmatch(text.strip())
    if not m:
        raise ValueError(f"cannot parse strategy {text!r}; expected e.g. {RECOMMENDED_STRATEGY}")
    scheme = "oto" if m.group(2).lower() == "oto" else "mto"
    return int(m.group(1)), scheme, m.group(3).upper()


def config_hash(cfg: TrainConfig, extra: str = "") -> str:
    text = repr(sorted(asdict(cfg).items())) + "|" + extra
    return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class IlRow:
    target: str
    pre_adapt_f1: float | None = None
    incremental_f1: float | None = None
    incremental_change: float | None = None
    forgetting_f1: float | None = None
    forgetting_change: float | None = None
    baseline_personalized_f1: float | None = None
    baseline_generalized_f1: float | None = None
    per_class_incremental: dict[str, float] = field(default_factory=dict)
    per_class_forgetting: dict[str, float] = field(default_factory=dict)


@dataclass
class IlReport:
    scheme: str
    descriptor: str
    lr: float
    seed: int
    rows: list[IlRow]
    config_hash: str
    valid: bool = True

    @property
    def lr_level(self) -> str:
        for level, value in LR_LEVELS.items():
            if value == self.lr:
                return level
        return f"{self.lr:g}"

    def mean(self, column: str) -> float | None:
        """Equal-weight mean over subjects with a value in the column."""
        values = [getattr(r, column) for r in self.rows if getattr(r, column) is not None]
        return float(np.mean(values)) if values else None


def adapt(source_model: ClnModel, target_train: LabeledDataset, target_val: LabeledDataset,
          cfg: TrainConfig) -> ClnModel:
    """Continue supervised training from existing weights with fresh optimizer state.

    Target classes missing from the source head get new softmax rows (existing
    rows are copied). The source model is never modified. Zero epochs returns
    the (head-adjusted) source model unchanged.
    """
    if cfg.arch != source_model.arch:
        raise ValueError(
            f"architecture mismatch: config {cfg.arch.descriptor} vs "
            f"checkpoint {source_model.arch.descriptor} ({cfg.arch} != {source_model.arch})")
    target_classes = tuple(sorted(set(map(str, target_train.labels)) |
                                  set(map(str, target_val.labels))))
    start = rebuild_head(source_model, target_classes, seed=cfg.seed)
    if cfg.epochs == 0:
        return start
    best, _ = train(target_train, target_val, cfg, start_model=start)
    return best


def _subject_splits(subjects: list[tuple[str, LabeledDataset]], seed: int,
                    ) -> dict[str, tuple[LabeledDataset, LabeledDataset, LabeledDataset]]:
    spec = SplitSpec(rounds=1, seed=seed)
    return {name: stratified_shuffle_split(ds, spec)[0] for name, ds in subjects}


def run_oto(subjects: list[tuple[str, LabeledDataset]], cfg: TrainConfig,
            adapt_cfg: TrainConfig | None = None) -> IlReport:
    """Sequential chain: train on the first subject, adapt through the rest.

    Row for subject t records the chain model's score on t right after
    adapting to t (incremental) and its score on t after the chain moved on
    to t+1 (forgetting); baselines are per-subject personalized models.
    """
    if len(subjects) < 2:
        raise ValueError("one-to-one chain needs at least 2 subjects")
    adapt_cfg = adapt_cfg or cfg
    report = IlReport(scheme="oto", descriptor=cfg.arch.descriptor, lr=adapt_cfg.lr,
                      seed=cfg.seed, rows=[], config_hash=config_hash(cfg, "oto"))
    splits = _subject_splits(subjects, cfg.seed)
    try:
        personalized: dict[str, ClnModel] = {}
        baseline_f1: dict[str, float] = {}
        for name, _ in subjects:
            tr, va, te = splits[name]
            personalized[name], _ = train(tr, va, cfg)
            _, baseline_f1[name] = evaluate(personalized[name], te)
        rows = [IlRow(target=name, baseline_personalized_f1=baseline_f1[name])
                for name, _ in subjects]
        chain = personalized[subjects[0][0]]
        for t in range(1, len(subjects)):
            name, _ = subjects[t]
            tr, va, te = splits[name]
            row = rows[t]
            start = rebuild_head(chain, tuple(sorted(set(map(str, tr.labels)))), seed=cfg.seed)
            _, row.pre_adapt_f1 = evaluate(start, te)
            chain = adapt(chain, tr, va, adapt_cfg)
            cm, row.incremental_f1 = evaluate(chain, te)
            row.per_class_incremental = class_f1_scores(cm)
            row.incremental_change = performance_change(row.incremental_f1,
                                                        baseline_f1[name])
            prev_name = subjects[t - 1][0]
            prev_row = rows[t - 1]
            _, _, prev_te = splits[prev_name]
            cm, prev_row.forgetting_f1 = evaluate(chain, prev_te)
            prev_row.per_class_forgetting = class_f1_scores(cm)
            prev_row.forgetting_change = performance_change(prev_row.forgetting_f1,
                                                            baseline_f1[prev_name])
        report.rows = rows
    except TrainingDiverged:
        report.valid = False
    return report


def run_mto(subjects: list[tuple[str, LabeledDataset]], cfg: TrainConfig,
            adapt_cfg: TrainConfig | None = None,
            drop_labels: frozenset[str] = frozenset()) -> IlReport:
    """Leave-one-out: train generalized on the merged rest, adapt to the target."""
    if len(subjects) < 2:
        raise ValueError("many-to-one pool needs at least 2 subjects")
    adapt_cfg = adapt_cfg or cfg
    report = IlReport(scheme="mto", descriptor=cfg.arch.descriptor, lr=adapt_cfg.lr,
                      seed=cfg.seed, rows=[], config_hash=config_hash(cfg, "mto"))
    splits = _subject_splits(subjects, cfg.seed)
    try:
        for t, (name, _) in enumerate(subjects):
            rest = merge_generalized([ds for i, (_, ds) in enumerate(subjects) if i != t],
                                     drop_labels, subject=f"rest-of-{name}")
            rest_tr, rest_va, rest_te = stratified_shuffle_split(
                rest, SplitSpec(rounds=1, seed=cfg.seed))[0]
            tgt_tr, tgt_va, tgt_te = splits[name]
            generalized, _ = train(rest_tr, rest_va, cfg)
            _, gen_f1 = evaluate(generalized, rest_te)
            personalized, _ = train(tgt_tr, tgt_va, cfg)
            _, pers_f1 = evaluate(personalized, tgt_te)
            row = IlRow(target=name, baseline_personalized_f1=pers_f1,
                        baseline_generalized_f1=gen_f1)
            start = rebuild_head(generalized, tuple(sorted(set(map(str, tgt_tr.labels)))),
                                 seed=cfg.seed)
            _, row.pre_adapt_f1 = evaluate(start, tgt_te)
            adapted = adapt(generalized, tgt_tr, tgt_va, adapt_cfg)
            cm, row.incremental_f1 = evaluate(adapted, tgt_te)
            row.per_class_incremental = class_f1_scores(cm)
            row.incremental_change = performance_change(row.incremental_f1, pers_f1)
            cm, row.forgetting_f1 = evaluate(adapted, rest_te)
            row.per_class_forgetting = class_f1_scores(cm)
            row.forgetting_change = performance_change(row.forgetting_f1, gen_f1)
            report.rows.append(row)
    except TrainingDiverged:
        report.valid = False
    return report


def quasi_experiment_split(ds: LabeledDataset, seed: int = 0,
                           ) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Temporal split per contiguous same-label run: first 90% of each run to
    the train pool, last 10% to test (order kept); the pool is then shuffled
    and split 4:1 into training and validation."""
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    pool_idx: list[int] = []
    test_idx: list[int] = []
    run_start = 0
    for i in range(1, len(ds) + 1):
        if i == len(ds) or ds.labels[i] != ds.labels[run_start]:
            n = i - run_start
            n_train = int(np.floor(0.9 * n))
            pool_idx.extend(range(run_start, run_start + n_train))
            test_idx.extend(range(run_start + n_train, i))
            run_start = i
    rng = np.random.default_rng([seed, 3])
    pool = rng.permutation(np.array(pool_idx, dtype=np.intp))
    n_val = int(np.floor(0.2 * pool.size + 0.5))
    val_idx = np.sort(pool[:n_val])
    train_idx = np.sort(pool[n_val:])
    return ds.subset(train_idx), ds.subset(val_idx), ds.subset(np.array(test_idx, dtype=np.intp))


# ---------------------------------------------------------------------------
# Report CSVs
# ---------------------------------------------------------------------------

_F1_COLUMNS = ("pre_adapt_f1", "incremental_f1", "incremental_change", "forgetting_f1",
               "forgetting_change", "baseline_personalized_f1", "baseline_generalized_f1")


def _cell(value: float | None, pct: bool = False) -> str:
    if value is None:
        return ""
    return f"{value:.1f}" if pct else f"{value:.6f}"


def write_il_report_csv(report: IlReport, path: str | Path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        fh.write(f"# config={report.config_hash} seed={report.seed} valid={int(report.valid)}\n")
        fh.write("scheme,architecture,lr_level,target," + ",".join(_F1_COLUMNS) + "\n")
        for row in report.rows + [_mean_row(report)]:
            cells = [_cell(getattr(row, col), pct=col.endswith("change")) for col in _F1_COLUMNS]
            fh.write(f"{report.scheme},{report.descriptor},{report.lr_level},"
                     f"{row.target}," + ",".join(cells) + "\n")


def _mean_row(report: IlReport) -> IlRow:
    row = IlRow(target="mean")
    for col in _F1_COLUMNS:
        setattr(row, col, report.mean(col))
    return row


def write_il_per_class_csv(report: IlReport, path: str | Path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        fh.write(f"# config={report.config_hash} seed={report.seed}\n")
        fh.write("scheme,architecture,lr_level,target,kind,class,f1\n")
        for row in report.rows:
            for kind, scores in (("incremental", row.per_class_incremental),
                                 ("forgetting", row.per_class_forgetting)):
                for label in sorted(scores):
                    fh.write(f"{report.scheme},{report.descriptor},{report.lr_level},"
                             f"{row.target},{kind},{label},{scores[label]:.6f}\n")
