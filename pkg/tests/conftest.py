import numpy as np
import pytest
import torch

from ranet.data.synth import SynthConfig, generate_synthetic_video
from ranet.model import ModelConfig

# Small architecture used by the unit tests; the shape laws do not depend on width.
TINY = ModelConfig(
    input_size=(32, 48),
    stem_channels=4,
    encoder_channels=(8, 16, 32),
    score_hidden=8,
    merge_channels=16,
    decoder_channels=(16, 8, 8),
    target_channels=32,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def disk_mask(shape, center, radius, label=1):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    m = np.zeros(shape, dtype=np.uint8)
    m[(yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius ** 2] = label
    return m


@pytest.fixture
def small_video():
    return generate_synthetic_video(SynthConfig(height=32, width=48, n_objects=1, length=5,
                                                radius=(0.25, 0.3), seed=3))


# -- acceptance summary ------------------------------------------------------------
# Tests marked with @pytest.mark.criterion(n, "text") get one PASS/FAIL line each
# at the end of the run (also written to acceptance_summary.txt).

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        prev = _CRITERIA.get(number, (text, True, ""))
        detail = getattr(item, "criterion_detail", "")
        _CRITERIA[number] = (text, prev[1] and not failed, detail or prev[2])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    lines = []
    for number in sorted(_CRITERIA):
        text, ok, detail = _CRITERIA[number]
        lines.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {text}" + (f" [{detail}]" if detail else ""))
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
    try:
        with open(terminalreporter.config.rootpath / "acceptance_summary.txt", "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError:
        pass
