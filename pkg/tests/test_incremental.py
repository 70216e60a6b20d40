import numpy as np
import pytest

from imupose.incremental import (
    RECOMMENDED_STRATEGY,
    IlReport,
    IlRow,
    adapt,
    parse_strategy,
    quasi_experiment_split,
    run_oto,
    write_il_report_csv,
)
from imupose.metrics import performance_change
from imupose.nn import init_model
from imupose.pipeline import LabeledDataset
from imupose.training import TrainConfig, save_model
from tests.conftest import random_dataset, small_arch


def _cfg(**kw):
    args = dict(lr=1e-3, batch_size=32, epochs=1, seed=0, arch=small_arch())
    args.update(kw)
    return TrainConfig(**args)


def test_strategy_parser_handles_recommended_default():
    assert parse_strategy(RECOMMENDED_STRATEGY) == (1, "mto", "LR2")
    assert parse_strategy("C4L2+OtO+LR1") == (4, "oto", "LR1")
    with pytest.raises(ValueError):
        parse_strategy("C1L3+MtO+LR2")


def test_adapt_zero_epochs_returns_source_unchanged(toy_split):
    tr, va, _ = toy_split
    classes = tuple(sorted(set(tr.labels)))
    source = init_model(small_arch(), classes, seed=0)
    out = adapt(source, tr, va, _cfg(epochs=0))
    for name in source.params:
        np.testing.assert_array_equal(out.params[name], source.params[name])


def test_adapt_rejects_architecture_mismatch(toy_split):
    tr, va, _ = toy_split
    source = init_model(small_arch(conv_layers=2), tuple(sorted(set(tr.labels))), seed=0)
    with pytest.raises(ValueError, match="architecture mismatch"):
        adapt(source, tr, va, _cfg())  # config says C1L2


def test_adapt_never_mutates_source(toy_split, tmp_path):
    tr, va, _ = toy_split
    classes = tuple(sorted(set(tr.labels)))
    source = init_model(small_arch(), classes, seed=0)
    ckpt = tmp_path / "source.ckpt"
    save_model(source, ckpt)
    before = ckpt.read_bytes()
    param_bytes = {k: v.tobytes() for k, v in source.params.items()}
    adapt(source, tr, va, _cfg(epochs=2))
    assert ckpt.read_bytes() == before
    assert {k: v.tobytes() for k, v in source.params.items()} == param_bytes


def test_adapt_grows_head_for_new_classes():
    ds_old = random_dataset(40, ("BT", "ST"), seed=0)
    ds_new = random_dataset(40, ("BT", "ST", "WK"), seed=1)
    source = init_model(small_arch(), ("BT", "ST"), seed=0)
    out = adapt(source, ds_new, ds_new, _cfg(epochs=0))
    assert out.classes == ("BT", "ST", "WK")
    # existing class rows are copied verbatim
    np.testing.assert_array_equal(out.params["dense.w"][:, :2],
                                  source.params["dense.w"])


# -- quasi-experiment split ------------------------------------------------------

def _run_dataset(run_lengths, labels):
    total = sum(run_lengths)
    data = np.random.default_rng(0).standard_normal((total, 8, 3))
    lab = np.concatenate([[l] * n for n, l in zip(run_lengths, labels)]).astype("<U2")
    return LabeledDataset(data, lab, np.arange(total, dtype=float), "q")


def test_quasi_split_single_run_arithmetic():
    ds = _run_dataset([100], ["BT"])
    tr, va, te = quasi_experiment_split(ds, seed=0)
    assert len(te) == 10
    np.testing.assert_array_equal(te.starts, np.arange(90, 100, dtype=float))
    assert len(tr) == 72 and len(va) == 18


def test_quasi_split_preserves_run_adjacency_in_test():
    ds = _run_dataset([50, 30, 40], ["BT", "ST", "KN"])
    _, _, te = quasi_experiment_split(ds, seed=1)
    # test windows are the tail of each run, kept in temporal order
    np.testing.assert_array_equal(
        te.starts, np.concatenate([np.arange(45, 50), np.arange(77, 80),
                                   np.arange(116, 120)]).astype(float))


def test_quasi_split_partitions():
    ds = _run_dataset([60, 40], ["BT", "WO"])
    tr, va, te = quasi_experiment_split(ds, seed=2)
    starts = np.concatenate([tr.starts, va.starts, te.starts])
    assert len(np.unique(starts)) == len(ds)


def test_quasi_split_empty_rejected():
    ds = _run_dataset([10], ["BT"]).subset(np.array([], dtype=int))
    with pytest.raises(ValueError):
        quasi_experiment_split(ds)


# -- reports ------------------------------------------------------------------------

def test_report_changes_recomputable():
    rows = [IlRow(target="S2", incremental_f1=0.812, baseline_personalized_f1=0.828,
                  incremental_change=performance_change(0.812, 0.828))]
    report = IlReport("oto", "C1L2", 1e-3, 0, rows, "abc")
    row = report.rows[0]
    assert row.incremental_change == performance_change(
        row.incremental_f1, row.baseline_personalized_f1)


def test_report_csv_layout(tmp_path):
    rows = [
        IlRow(target="S1", baseline_personalized_f1=0.9),
        IlRow(target="S2", pre_adapt_f1=0.4, incremental_f1=0.8, incremental_change=-11.1,
              forgetting_f1=0.7, forgetting_change=-22.2, baseline_personalized_f1=0.9,
              baseline_generalized_f1=0.95),
    ]
    report = IlReport("mto", "C1L2", 1e-3, 7, rows, "deadbeef")
    path = tmp_path / "r.csv"
    write_il_report_csv(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# config=deadbeef seed=7 valid=1"
    assert lines[1].startswith("scheme,architecture,lr_level,target,")
    assert lines[2].startswith("mto,C1L2,LR2,S1,")
    assert lines[-1].startswith("mto,C1L2,LR2,mean,")
    # both baseline columns present (many-to-one layout)
    assert "baseline_personalized_f1" in lines[1] and "baseline_generalized_f1" in lines[1]


def test_run_oto_report_shape(toy_dataset):
    # two identical tiny subjects; 1-epoch budget keeps this fast
    subjects = [("A", toy_dataset), ("B", toy_dataset)]
    cfg = _cfg(epochs=1)
    report = run_oto(subjects, cfg)
    assert report.valid
    assert [r.target for r in report.rows] == ["A", "B"]
    first, last = report.rows
    assert first.incremental_f1 is None and first.forgetting_f1 is not None
    assert last.incremental_f1 is not None and last.forgetting_f1 is None
    assert first.baseline_personalized_f1 is not None
    assert last.per_class_incremental  # per-class F1 emitted alongside


def test_run_oto_flags_invalid_on_diverged_training(monkeypatch, toy_dataset):
    import imupose.incremental as inc_mod
    from imupose.training import TrainingDiverged

    def exploding(*args, **kwargs):
        raise TrainingDiverged("non-finite loss")

    monkeypatch.setattr(inc_mod, "train", exploding)
    report = run_oto([("A", toy_dataset), ("B", toy_dataset)], _cfg())
    assert not report.valid


def test_zero_shift_null_changes_small(toy_profile):
    """Identical source/target distributions: incremental and forgetting
    changes stay small (3-seed mean)."""
    from imupose import pipeline, synth
    inc_changes, fgt_changes = [], []
    for seed in (0, 1, 2):
        streams = [synth.generate_stream(toy_profile, 240, 20, 12, seed=200 + seed + i)
                   for i in range(2)]
        subjects = [(f"S{i}", pipeline.build_dataset(s, 1.0, 20, 0.0, subject=f"S{i}"))
                    for i, s in enumerate(streams)]
        cfg = _cfg(lr=1e-3, batch_size=16, epochs=12, seed=seed)
        report = run_oto(subjects, cfg, adapt_cfg=_cfg(lr=1e-3, batch_size=16,
                                                       epochs=8, seed=seed))
        inc_changes.append(report.rows[1].incremental_change)
        fgt_changes.append(report.rows[0].forgetting_change)
    assert abs(np.mean(inc_changes)) < 5.0
    assert abs(np.mean(fgt_changes)) < 5.0


def test_run_mto_zero_shift_and_report_columns(toy_profile):
    from imupose import pipeline, synth
    from imupose.incremental import run_mto
    streams = [synth.generate_stream(toy_profile, 240, 20, 12, seed=500 + i)
               for i in range(2)]
    subjects = [(f"S{i}", pipeline.build_dataset(s, 1.0, 20, 0.0, subject=f"S{i}"))
                for i, s in enumerate(streams)]
    cfg = _cfg(lr=1e-3, batch_size=16, epochs=12, seed=0)
    report = run_mto(subjects, cfg, adapt_cfg=_cfg(lr=1e-3, batch_size=16, epochs=8))
    assert report.valid and len(report.rows) == 2
    for row in report.rows:
        # both baseline columns populated in the many-to-one layout
        assert row.baseline_personalized_f1 is not None
        assert row.baseline_generalized_f1 is not None
        assert row.incremental_change == performance_change(
            row.incremental_f1, row.baseline_personalized_f1)
    assert abs(report.mean("incremental_change")) < 5.0


def test_oto_lr_sweep_forgetting_trend(toy_profile):
    """Forgetting drop shrinks as the adaptation LR shrinks (2-seed mean)."""
    from dataclasses import replace as dc_replace
    from imupose import pipeline, synth
    from imupose.pipeline import SplitSpec, stratified_shuffle_split
    from imupose.training import evaluate, train

    drops = {lr: [] for lr in (1e-2, 1e-3, 1e-4)}
    for seed in (0, 1):
        sigs = toy_profile.signatures
        labels = [s.label for s in sigs]
        rotated = synth.SubjectProfile(
            "rot", [dc_replace(sigs[(i + 1) % 3], label=labels[i]) for i in range(3)],
            dict(toy_profile.mix), toy_profile.dwell_s, toy_profile.drift)
        src = pipeline.build_dataset(
            synth.generate_stream(toy_profile, 240, 20, 12, seed=300 + seed),
            1.0, 20, 0.0, subject="src")
        tgt = pipeline.build_dataset(
            synth.generate_stream(rotated, 240, 20, 12, seed=400 + seed),
            1.0, 20, 0.0, subject="tgt")
        src_tr, src_va, src_te = stratified_shuffle_split(src, SplitSpec(rounds=1, seed=seed))[0]
        tgt_tr, tgt_va, _ = stratified_shuffle_split(tgt, SplitSpec(rounds=1, seed=seed))[0]
        cfg = _cfg(lr=1e-3, batch_size=16, epochs=12, seed=seed)
        source, _ = train(src_tr, src_va, cfg)
        _, base_f1 = evaluate(source, src_te)
        for lr in drops:
            adapted = adapt(source, tgt_tr, tgt_va,
                            _cfg(lr=lr, batch_size=16, epochs=20, seed=seed))
            _, fgt = evaluate(adapted, src_te)
            drops[lr].append(base_f1 - fgt)
    means = [float(np.mean(drops[lr])) for lr in (1e-2, 1e-3, 1e-4)]
    assert means[0] >= means[1] >= means[2] - 1e-9
    assert means[0] - means[2] >= 0.05
