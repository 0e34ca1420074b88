import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from phode.model import init_weights, save_weights
from phode.toy import toy_corpus, write_corpus


@pytest.fixture(scope="session")
def benchmark_run():
    """The toy benchmark at its default configuration; trained once per session."""
    from phode.benchmark import BenchmarkConfig, run_benchmark
    return run_benchmark(BenchmarkConfig())


@pytest.fixture(scope="session")
def trained_weights(benchmark_run, tmp_path_factory):
    p = tmp_path_factory.mktemp("weights") / "toy.phw"
    save_weights(benchmark_run[1], p)
    return p


@pytest.fixture
def zero_weights(tmp_path):
    # uniform posterior, argmax is the blank everywhere: no predictions at all
    p = tmp_path / "zero.phw"
    save_weights(init_weights(4, 5, 64, 41, scale=0.0), p)
    return p


@pytest.fixture
def make_experiment(tmp_path):
    def make(weights, n=2, seed=0, **fields):
        corpus_dir = tmp_path / f"corpus{n}_{seed}"
        manifest = write_corpus(toy_corpus(n, seed, prefix="s"), corpus_dir)
        cfg = {"manifest": str(manifest), "weights": str(weights), "out": str(tmp_path / "out"),
               "conditions": ["NH"], "noise_levels": ["quiet"], "seed": 0}
        cfg.update(fields)
        path = tmp_path / f"exp{len(list(tmp_path.glob('exp*.json')))}.json"
        path.write_text(json.dumps(cfg))
        return path
    return make


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    def record(n, ok, detail):
        request.config.stash[ACCEPTANCE].append((n, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(ACCEPTANCE, []))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in lines:
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
