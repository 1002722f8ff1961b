import time

import numpy as np
import pytest
from hypothesis import settings

from harmonicpd.features import extract_features
from harmonicpd.geometry import generate, make_scale_grid, pairwise_distances

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# 4-class corpus shared by the end-to-end checks; seeds are pinned
CORPUS_SHAPES = ("circle", "two_circles", "sphere", "blob")
CORPUS_N, CORPUS_K, CORPUS_T = 24, 2, 12
CORPUS_NOISE = 0.02
CORPUS_TRAIN, CORPUS_TEST = 15, 5


def corpus_seed(class_index: int, i: int) -> int:
    return 1000 * class_index + i


class Corpus:
    def __init__(self):
        t0 = time.perf_counter()
        self.clouds, self.features, self.labels, self.is_train = [], [], [], []
        for ci, shape in enumerate(CORPUS_SHAPES):
            for i in range(CORPUS_TRAIN + CORPUS_TEST):
                cloud = generate(shape, CORPUS_N, CORPUS_NOISE, corpus_seed(ci, i))
                grid = make_scale_grid(pairwise_distances(cloud), CORPUS_T, "uniform")
                self.clouds.append(cloud)
                self.features.append(extract_features(cloud, grid, CORPUS_K))
                self.labels.append(ci + 1)
                self.is_train.append(i < CORPUS_TRAIN)
        self.labels = np.array(self.labels)
        self.is_train = np.array(self.is_train)
        self.extract_seconds = time.perf_counter() - t0

    @property
    def train_idx(self):
        return np.flatnonzero(self.is_train)

    @property
    def test_idx(self):
        return np.flatnonzero(~self.is_train)


@pytest.fixture(scope="session")
def corpus():
    return Corpus()


# --- acceptance reporting -----------------------------------------------------

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.stash[_RESULTS] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    # a criterion passes only if every test carrying its marker passes
    if marker is not None and (report.when == "call" or not report.passed):
        number, title = marker.args
        entry = item.config.stash[_RESULTS].setdefault(number, {"title": title, "ok": True, "details": []})
        entry["ok"] = entry["ok"] and report.passed
        if report.when == "call":
            entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]
    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        r = results[number]
        status = "PASS" if r["ok"] else "FAIL"
        detail = "; ".join(d for d in r["details"] if d)
        terminalreporter.write_line(f"criterion {number:>2} {status}  {r['title']}" + (f"  [{detail}]" if detail else ""))
