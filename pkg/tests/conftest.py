import numpy as np
import pytest

from statexplain.datasets import collect
from statexplain.envs import make_env, planted_truth_model
from statexplain.trees import LEAF, GbdtModel, RegressionTree


def random_tree(rng, d, max_depth):
    """Random tree with integer covers that add up at every internal node."""
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def grow(depth, n):
        j = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(rng.normal()))
        cover.append(float(n))
        if depth < max_depth and n >= 2 and rng.random() < 0.8:
            n_left = int(rng.integers(1, n))
            feature[j] = int(rng.integers(d))
            threshold[j] = float(rng.normal())
            left[j] = grow(depth + 1, n_left)
            right[j] = grow(depth + 1, n - n_left)
        return j

    grow(0, int(rng.integers(20, 200)))
    return RegressionTree(feature, threshold, left, right, value, cover)


def random_ensemble(rng, d, max_depth, n_trees, n_actions=2):
    trees = [[random_tree(rng, d, max_depth) for _ in range(n_trees)] for _ in range(n_actions)]
    return GbdtModel(trees, float(rng.uniform(0.05, 1.0)), rng.normal(size=n_actions), d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def planted():
    return planted_truth_model()


@pytest.fixture(scope="session")
def planted_dataset(planted):
    model, _ = planted
    return collect(make_env("synthetic-linear"), model, episodes=100, max_steps=100, seed=0)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    """Remember one acceptance verdict for the end-of-run summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
