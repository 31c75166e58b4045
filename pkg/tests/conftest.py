import numpy as np
import pytest
import torch

# Keep the many small tests from oversubscribing the 2-core box.
torch.set_num_threads(2)

_ACCEPTANCE_RESULTS: dict[str, tuple[bool, str, str]] = {}


@pytest.fixture(scope="session")
def acceptance_report():
    return _ACCEPTANCE_RESULTS


def record_criterion(report, cid: str, description: str, passed: bool, detail: str = ""):
    report[cid] = (bool(passed), description, detail)
    assert passed, f"criterion {cid} failed: {description} ({detail})"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for cid in sorted(_ACCEPTANCE_RESULTS):
        passed, desc, detail = _ACCEPTANCE_RESULTS[cid]
        status = "PASS" if passed else "FAIL"
        line = f"[criterion {cid}] {status}: {desc}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture()
def tiny_bundle():
    from labelsift.data import make_synthetic_dataset

    train, test = make_synthetic_dataset(num_classes=4, n_train=120, n_test=60,
                                         modes_per_class=2, seed=11)
    return train, test


def random_probs(rng: np.random.Generator, n: int, c: int) -> np.ndarray:
    raw = rng.random((n, c)) + 1e-6
    return raw / raw.sum(axis=1, keepdims=True)
