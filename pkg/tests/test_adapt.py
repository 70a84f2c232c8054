from dataclasses import replace

import numpy as np
import pytest

from recap.adapt import (METHOD_KINDS, MethodConfig, bench_proxy_vs_mc, consistency_probe,
                         run_stream, step_counters)
from recap.config import RunConfig
from recap.experiment import prepare_source
from recap.model import forward_batch
from recap.numerics import make_rng
from recap.region import AffineHead, RecapHyper, RegionSpec
from recap.stream import build_stream, default_scenarios


@pytest.fixture(scope="module")
def src():
    return prepare_source(RunConfig())


@pytest.fixture(scope="module")
def streams(src):
    scs = {s.name: s for s in default_scenarios(length=1280)}
    return {name: build_stream(src.task, scs[name].with_seed(1)) for name in ("bs1-rotate", "label_shift-scale")}


def hyper(src, **kw):
    return replace(RecapHyper.for_classes(src.task.n_classes), **kw)


def test_none_leaves_model_unchanged(src, streams):
    stream = streams["bs1-rotate"]
    log, model = run_stream(src.backbone, src.head, stream, MethodConfig("none", hyper(src)), src.region)
    np.testing.assert_array_equal(model.gamma, src.backbone.gamma)
    np.testing.assert_array_equal(model.beta, src.backbone.beta)
    X = np.concatenate([b.x for b in stream])
    frozen = np.argmax(forward_batch(X, src.backbone, src.head).logits, axis=1)
    np.testing.assert_array_equal(log.pred, frozen)
    assert log.batch_backwards.sum() == 0


def test_recap_without_selection_is_identical_to_none(src, streams):
    stream = streams["label_shift-scale"]
    base, _ = run_stream(src.backbone, src.head, stream, MethodConfig("none", hyper(src)), src.region)
    log, model = run_stream(src.backbone, src.head, stream,
                            MethodConfig("recap", hyper(src, tau_re=1e-300)), src.region)
    assert not log.selected.any()
    np.testing.assert_array_equal(log.pred, base.pred)
    np.testing.assert_array_equal(model.gamma, src.backbone.gamma)
    assert log.batch_backwards.sum() == 0


def test_adaptation_only_touches_normalisation_affine(src, streams):
    log, model = run_stream(src.backbone, src.head, streams["bs1-rotate"], MethodConfig("entropy", hyper(src)))
    assert not np.array_equal(model.gamma, src.backbone.gamma)
    for name in ("W1", "c1", "W2", "c2"):
        np.testing.assert_array_equal(getattr(model, name), getattr(src.backbone, name))
    # the caller's backbone is never mutated
    assert np.all(src.backbone.gamma == prepare_source(RunConfig()).backbone.gamma)


def test_first_prediction_precedes_any_update(src, streams):
    stream = streams["label_shift-scale"]
    logs = [run_stream(src.backbone, src.head, stream, MethodConfig(k, hyper(src)), src.region)[0]
            for k in METHOD_KINDS]
    for log in logs[1:]:
        np.testing.assert_array_equal(log.pred[:64], logs[0].pred[:64])


@pytest.mark.parametrize("kind", METHOD_KINDS)
def test_counters_and_selection_accounting(src, streams, kind):
    stream = streams["label_shift-scale"]
    log, _ = run_stream(src.backbone, src.head, stream, MethodConfig(kind, hyper(src)), src.region)
    assert np.all(log.batch_forwards == 1)
    assert np.all(log.batch_backwards <= 1)
    sel_batches = np.array([log.selected[log.batch == k].any() for k in range(len(stream))])
    if kind == "none":
        assert log.batch_backwards.sum() == 0
    elif kind == "entropy":
        assert np.all(log.batch_backwards == 1)
    else:
        np.testing.assert_array_equal(log.batch_backwards == 1, sel_batches)


def test_recap_requires_region(src, streams):
    with pytest.raises(ValueError):
        run_stream(src.backbone, src.head, streams["bs1-rotate"], MethodConfig("recap", hyper(src)))
    with pytest.raises(ValueError):
        MethodConfig("tent", hyper(src))


def test_run_is_deterministic(src, streams):
    cfg = MethodConfig("recap", hyper(src))
    a, _ = run_stream(src.backbone, src.head, streams["bs1-rotate"], cfg, src.region, probe_n=8, probe_seed=2)
    b, _ = run_stream(src.backbone, src.head, streams["bs1-rotate"], cfg, src.region, probe_n=8, probe_seed=2)
    assert a.same_as(b)
    assert np.isfinite(a.probe_kl).all()


def test_probe_window(src, streams):
    cfg = MethodConfig("entropy", hyper(src))
    log, _ = run_stream(src.backbone, src.head, streams["bs1-rotate"], cfg, src.region, probe_n=8,
                        probe_last=100)
    assert np.isnan(log.probe_kl[:-100]).all() and np.isfinite(log.probe_kl[-100:]).all()


def test_collapse_guard(src, streams):
    cfg = MethodConfig("entropy", hyper(src), lr=1e9, momentum=0.0)
    log, _ = run_stream(src.backbone, src.head, streams["bs1-rotate"], cfg)
    assert log.collapse is not None
    assert log.collapse["reason"] in {"parameter norm limit", "non-finite loss"}
    assert log.n_steps < 1280


def test_probe_examples():
    rng = make_rng(0)
    head = AffineHead(rng.normal(size=(5, 3)), rng.normal(size=5))
    z = rng.normal(size=3)
    assert consistency_probe(head, z, RegionSpec(np.zeros(3)), 64, seed=1) == (0.0, 0.0)
    flat = AffineHead(np.zeros((5, 3)), np.zeros(5))
    assert consistency_probe(flat, z, RegionSpec(np.ones(3)), 64, seed=1) == (0.0, 0.0)
    frac, kl = consistency_probe(head, z, RegionSpec(np.ones(3) * 4), 256, seed=1)
    assert 0 <= frac <= 1 and kl > 0
    with pytest.raises(ValueError):
        consistency_probe(head, z, RegionSpec(np.ones(3)), 0)


def test_bench_and_step_counters(src, streams):
    rng = make_rng(3)
    head = AffineHead(rng.normal(size=(10, 16)), rng.normal(size=10))
    rep = bench_proxy_vs_mc(head, RegionSpec(np.ones(16)), rng.normal(size=(64, 16)), repeats=10)
    assert rep.batch == 64 and rep.n_mc == 128 and rep.closed_ns > 0
    with pytest.raises(ValueError):
        bench_proxy_vs_mc(head, RegionSpec(np.ones(16)), rng.normal(size=(64, 16)), repeats=5)
    rows = step_counters(src.backbone, src.head, streams["label_shift-scale"][:5], src.region, hyper(src))
    assert [r["method"] for r in rows] == list(METHOD_KINDS)
    assert {"method", "forwards", "backwards", "median_step_ns"} <= set(rows[0])
    ent = next(r for r in rows if r["method"] == "entropy")
    assert ent["forwards"] == 5 and ent["backwards"] == 5
