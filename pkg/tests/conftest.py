import os

import numpy as np
import pytest
import torch
import yaml

from hierinst import taxonomy as tx
from hierinst.pipeline import bundled

HS_SUBTREE = """\
# partial tree: simple chordophones and non-free aerophones
NODE 3 Chordophones
NODE 31 Simple chordophones
NODE 4 Aerophones
NODE 42 Non-free aerophones
NODE 423 Trumpets
ASSIGN male rapper 31
ASSIGN yangqin 31
ASSIGN female singer 31
ASSIGN tuba 423
ASSIGN trombone 423
"""


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, text): acceptance criterion")
    config._acceptance_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and (rep.failed or rep.skipped)):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        item.config._acceptance_results.append((marker.args[0], marker.args[1], item.name, status))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance_results", [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num, text, name, status in sorted(results, key=lambda r: (r[0], r[2])):
        terminalreporter.write_line(f"[{status}] C{num:<2} {text} ({name})")


@pytest.fixture
def hs_taxonomy():
    return tx.parse_taxonomy(HS_SUBTREE)


@pytest.fixture
def hs_space(hs_taxonomy):
    return tx.build_label_space(tx.truncate(hs_taxonomy, 2), 2)


@pytest.fixture(scope="session")
def synth_taxonomy():
    return tx.load_taxonomy(bundled("synthetic_taxonomy.txt"))


@pytest.fixture(scope="session")
def synth_space(synth_taxonomy):
    return tx.build_label_space(tx.truncate(synth_taxonomy, 2), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


TINY_CORPUS = """\
n_tracks: 5
duration: 6
polyphony: {1: 0.6, 2: 0.4}
segment_range: [1, 3]
instruments:
  bass drum: {frequencies: [55, 110, 165], noise: 0.05, amplitude: 0.4}
  violin:    {frequencies: [659, 1318, 1977], noise: 0.005, amplitude: 0.3}
  flute:     {frequencies: [1047, 2094], noise: 0.01, amplitude: 0.3}
"""


@pytest.fixture
def tiny_config(tmp_path):
    """Factory for a YAML run config over a 5-track synthetic corpus and a toy-width network."""

    def make(out, **training):
        (tmp_path / "tiny_corpus.yaml").write_text(TINY_CORPUS)
        train = {"epochs": 2, "batch_size": 8, "widths": [4, 8, 8], "hidden": [8, 8], **training}
        cfg = {
            "out": str(out),
            "taxonomy": str(bundled("synthetic_taxonomy.txt")),
            "synthetic_corpus": str(tmp_path / "tiny_corpus.yaml"),
            "split": {"test_fraction": 0.4, "iterations": 200, "max_divergence": 2.0},
            "training": train,
        }
        path = tmp_path / f"config_{os.path.basename(str(out))}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        return path

    return make
