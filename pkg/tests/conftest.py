import os

os.environ.setdefault("GCARESUNET_TEST_MODE", "1")

import numpy as np
import pytest
import torch

from gcaresunet.training import configure_determinism

configure_determinism(force=True)
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Eight 64x64 samples, four classes, with small val and test splits."""
    from gcaresunet.data import gen_synthetic

    root = tmp_path_factory.mktemp("tiny")
    gen_synthetic(7, 8, 64, 4, root, 0.25, 0.25)
    return root


@pytest.fixture(scope="session")
def overfit_data(tmp_path_factory):
    """The overfit surrogate set: eight 64x64 samples, four classes, all in train."""
    from gcaresunet.data import gen_synthetic

    root = tmp_path_factory.mktemp("overfit")
    gen_synthetic(0, 8, 64, 4, root, 0.0, 0.0)
    return root


# --- acceptance reporting ------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    prev = _CRITERIA.get(num, ("PASS", title, 0.0))
    if rep.when == "setup" and rep.failed or rep.when == "call" and not rep.passed:
        status = "FAIL"
    else:
        status = prev[0]
    _CRITERIA[num] = (status, title, prev[2] + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, title, secs = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {status}  {title}  ({secs:.1f}s)")


# --- shared overfit runs --------------------------------------------------------

OVERFIT_TARGET = 0.95


@pytest.fixture(scope="session")
def overfit_pair(overfit_data, tmp_path_factory):
    """Two identical overfit-surrogate runs, each stopping once train DSC reaches the target."""
    import time

    from gcaresunet.data import load_dataset
    from gcaresunet.model import mini_config
    from gcaresunet.training import TrainConfig, train

    ds = load_dataset(overfit_data)
    runs = []
    for tag in ("a", "b"):
        out = tmp_path_factory.mktemp(f"overfit_{tag}")
        cfg = TrainConfig(model=mini_config(4, 64, "gca"), epochs=300, batch_size=8, lr=1e-4,
                          eval_every=5, eval_split="train", checkpoint_dir=str(out),
                          stop_at_dsc=OVERFIT_TARGET)
        t0 = time.perf_counter()
        res = train(cfg, ds)
        runs.append((cfg, res, time.perf_counter() - t0))
    return runs
