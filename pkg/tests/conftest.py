import os
from pathlib import Path

import numpy as np
import pytest

from graffin.data import find_cora_files, make_bundle
from graffin.graph import build_graph

_acceptance: dict[int, dict] = {}


def random_graph(n: int, k: int, d: int, seed: int, p: float = 0.3):
    """Random labelled graph with every class present."""
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    rng.shuffle(labels)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return build_graph(edges, rng.standard_normal((n, d)), labels, k)


def random_bundle(n=12, k=3, d=5, seed=0, p=0.3):
    return make_bundle(random_graph(n, k, d, seed, p), "random", seed=seed)


def cora_dir() -> Path | None:
    for cand in (os.environ.get("GRAFFIN_CORA_DIR"), Path(__file__).resolve().parents[1] / "data" / "cora"):
        if cand and find_cora_files(cand) is not None:
            return Path(cand)
    return None


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _acceptance.setdefault(number, {"title": title, "ok": True, "seen": False})
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["seen"] = True
        if not rep.passed:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        e = _acceptance[number]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {e['title']}")
