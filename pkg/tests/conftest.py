import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slidegraph.preprocess import preprocess, write_edge_file, write_edge_text  # noqa: E402

# 7 vertices in three intervals; vertex 0 pulls from 1 and 3, the last
# interval holds 5 and 6 whose sources are 4 and 6.
TOY_EDGES = [
    (1, 0), (3, 0),
    (0, 1), (2, 1),
    (1, 2),
    (4, 3),
    (0, 4), (3, 4),
    (4, 5), (6, 5),
    (4, 6),
]
TOY_INTERVALS = ((0, 1), (2, 4), (5, 6))


def make_workdir(tmp_path: Path, edges, threshold=4, symmetrize=False, name="g", binary=False,
                 weighted=None, workers=1):
    """Write ``edges`` as an input file and preprocess it into a fresh work directory."""
    edges = list(edges)
    inp = tmp_path / f"{name}.{'bin' if binary else 'txt'}"
    if binary:
        arr = np.array([e[:2] for e in edges], dtype=np.int64).reshape(-1, 2)
        w = np.array([e[2] for e in edges], dtype=np.float64) if edges and len(edges[0]) > 2 else None
        write_edge_file(inp, arr[:, 0], arr[:, 1], w)
    else:
        write_edge_text(inp, edges)
    wd = tmp_path / f"{name}-work"
    preprocess(inp, wd, threshold_edge_num=threshold, symmetrize=symmetrize, weighted=weighted,
               workers=workers)
    return wd


@pytest.fixture
def toy_workdir(tmp_path):
    return make_workdir(tmp_path, TOY_EDGES, threshold=4, name="toy")


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------------

_acceptance_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _acceptance_results[item.nodeid] = (doc, report.outcome, call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for doc, outcome, duration in sorted(_acceptance_results.values()):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {doc}  ({duration:.2f}s)")
