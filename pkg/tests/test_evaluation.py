import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierinst import evaluation as ev
from hierinst.taxonomy import expand_labels


# --------------------------------------------------------------------------- oracles


def brute_fp(pred, true):
    n = pred.shape[1]
    out = np.zeros((n, n), dtype=int)
    for f in range(pred.shape[0]):
        for i in range(n):
            for j in range(n):
                if pred[f, i] and not true[f, i] and true[f, j]:
                    out[i, j] += 1
    return out


def brute_fn(pred, true):
    n = pred.shape[1]
    out = np.zeros((n, n), dtype=int)
    for f in range(pred.shape[0]):
        for i in range(n):
            for j in range(n):
                if true[f, i] and not pred[f, i] and pred[f, j]:
                    out[i, j] += 1
    return out


def brute_cooc(true):
    n = true.shape[1]
    return np.array([[sum(1 for row in true if row[i] and row[j]) for j in range(n)] for i in range(n)])


# --------------------------------------------------------------------------- F1


def test_f1_spot_values():
    assert ev.f1_score(0.76, 0.72) == pytest.approx(0.7395, abs=1e-4)
    for p in (0.0, 0.25, 1.0):
        assert ev.f1_score(p, p) == pytest.approx(p, abs=1e-15)
    assert ev.f1_score(0.0, 0.0) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_f1_bounded_between_min_and_max(p, r):
    f = ev.f1_score(p, r)
    assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12 or (p + r == 0 and f == 0)


def test_score_counts(hs_space):
    y = np.stack([
        expand_labels(hs_space, ["tuba"]),
        expand_labels(hs_space, ["yangqin", "trombone"]),
        expand_labels(hs_space, []),
    ])
    p = np.stack([
        expand_labels(hs_space, ["trombone"]),
        expand_labels(hs_space, ["yangqin", "trombone"]),
        expand_labels(hs_space, ["female singer"]),
    ])
    r = ev.score(p, y, hs_space)
    assert r.per_label["tuba"] == ev.LabelScore(0, 0, 1)
    assert r.per_label["trombone"] == ev.LabelScore(1, 1, 0)
    assert r.micro_instruments == ev.LabelScore(2, 2, 1)
    # groups: 42 hit twice, 31 hit once and false once
    assert r.micro_groups == ev.LabelScore(3, 1, 0)
    assert r.micro_all == ev.LabelScore(5, 3, 1)
    assert r.micro_groups.f1 == pytest.approx(2 * 0.75 * 1 / 1.75)


def test_score_zero_support_label(hs_space):
    y = np.zeros((3, hs_space.dim))
    r = ev.score(y, y, hs_space)
    assert r.per_label["tuba"].f1 == 0.0
    assert r.micro_all.f1 == 0.0


def test_score_shape_mismatch(hs_space):
    with pytest.raises(ValueError):
        ev.score(np.zeros((2, 3)), np.zeros((2, 3)), hs_space)


# --------------------------------------------------------------------------- co-occurrence


def test_column_normalization_example():
    raw = np.array([[5, 1], [3, 7]])
    norm = ev.normalize_columns(raw)
    # column 0 off-diagonal {3}, column 1 off-diagonal {1}: both constant -> 0
    np.testing.assert_array_equal(norm, np.zeros((2, 2)))
    raw3 = np.array([[9, 1, 0], [1, 9, 4], [3, 2, 9]])
    norm3 = ev.normalize_columns(raw3)
    np.testing.assert_allclose(norm3[:, 0], [0, 0, 1])  # off-diagonal {1, 3} -> {0, 1}
    np.testing.assert_allclose(norm3[:, 1], [0, 0, 1])
    np.testing.assert_allclose(norm3[:, 2], [0, 1, 0])


def test_constant_and_zero_columns():
    raw = np.array([[4, 2, 0], [2, 4, 0], [2, 2, 0]])
    norm = ev.normalize_columns(raw)
    np.testing.assert_array_equal(norm, np.zeros((3, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_matrices_match_brute_force(n_labels, n_frames, seed):
    g = np.random.default_rng(seed)
    true = g.integers(0, 2, size=(n_frames, n_labels))
    pred = g.integers(0, 2, size=(n_frames, n_labels))
    labels = [f"l{i}" for i in range(n_labels)]
    fp = ev.fp_cooccurrence(pred, true, labels)
    fn = ev.fn_cooccurrence(pred, true, labels)
    co = ev.cooccurrence(true, labels)
    np.testing.assert_array_equal(fp.raw, brute_fp(pred, true))
    np.testing.assert_array_equal(fn.raw, brute_fn(pred, true))
    np.testing.assert_array_equal(co.raw, brute_cooc(true))
    for m in (fp, fn, co):
        assert np.all(np.diag(m.normalized) == 0)
        assert np.all((m.normalized >= 0) & (m.normalized <= 1))


def test_fp_diagonal_is_zero_raw(rng):
    true = rng.integers(0, 2, size=(30, 5))
    pred = rng.integers(0, 2, size=(30, 5))
    assert np.all(np.diag(ev.fp_cooccurrence(pred, true, list("abcde")).raw) == 0)
    assert np.all(np.diag(ev.fn_cooccurrence(pred, true, list("abcde")).raw) == 0)


def test_cooccurrence_instrument_block(hs_space):
    y = np.stack([expand_labels(hs_space, ["tuba", "yangqin"])] * 3)
    n = len(hs_space.instruments)
    m = ev.cooccurrence(y, hs_space.instruments, n)
    assert m.raw.shape == (n, n)
    assert m.raw[hs_space.index["tuba"], hs_space.index["yangqin"]] == 3


# --------------------------------------------------------------------------- audit


def test_consistency_audit(hs_space):
    good = np.stack([expand_labels(hs_space, ["tuba"]), expand_labels(hs_space, ["yangqin"])])
    assert ev.consistency_audit(good, hs_space) == []
    bad = good.copy()
    bad[1, hs_space.index["31"]] = 0
    bad[0, hs_space.index["trombone"]] = 1  # group 42 present: fine
    assert ev.consistency_audit(bad, hs_space) == [ev.Violation(1, "yangqin", "31")]


# --------------------------------------------------------------------------- reports


def _report_inputs(hs_space, rng):
    y = np.stack([expand_labels(hs_space, list(rng.choice(hs_space.instruments, 2, replace=False))) for _ in range(20)])
    p = np.stack([expand_labels(hs_space, list(rng.choice(hs_space.instruments, 2, replace=False))) for _ in range(20)])
    n = len(hs_space.instruments)
    names = hs_space.instruments
    mats = {
        "cooc": ev.cooccurrence(y, names, n),
        "cooc_fp": ev.fp_cooccurrence(p, y, names, n),
        "cooc_fn": ev.fn_cooccurrence(p, y, names, n),
    }
    return ev.score(p, y, hs_space), mats


def test_emit_reports_deterministic(hs_space, rng, tmp_path):
    report, mats = _report_inputs(hs_space, rng)
    a = ev.emit_reports(report, mats, tmp_path / "a")
    b = ev.emit_reports(report, mats, tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    names = {p.name for p in a}
    assert {"metrics_per_label.csv", "metrics_summary.csv", "cooc.csv", "cooc_raw.csv", "cooc_fp.csv", "cooc_fn_raw.csv"} <= names
    summary = (tmp_path / "a" / "metrics_summary.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in summary] == ["level", "groups", "instruments", "all"]


def test_per_label_sorted_by_support(hs_space, rng, tmp_path):
    report, mats = _report_inputs(hs_space, rng)
    ev.emit_reports(report, mats, tmp_path)
    rows = (tmp_path / "metrics_per_label.csv").read_text().splitlines()[1:]
    supports = [int(r.split(",")[3]) for r in rows]
    assert supports == sorted(supports, reverse=True)


def test_emit_reports_empty_test_set(hs_space, tmp_path):
    report = ev.score(np.zeros((0, hs_space.dim)), np.zeros((0, hs_space.dim)), hs_space)
    with pytest.raises(ValueError, match="empty"):
        ev.emit_reports(report, {}, tmp_path / "out")
    assert not (tmp_path / "out").exists()
