import numpy as np
import pytest

from atsunet.model_zoo import build, default_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def identity_model(variant="ats"):
    """A real UNet whose output equals its input.

    Everything is zero except the last decoder block, which splits the raw
    input skip into relu(x) and relu(-x) on two unshifted channels, and the
    head, which recombines them.
    """
    cfg = default_config(variant)
    m = build(cfg)
    for p in m.convs.values():
        p.weight[...] = 0
        p.bias[...] = 0
    c1 = cfg.encoder_channels[0]
    kt = cfg.temporal_kernels[-1]
    mid = kt // 2
    w1 = m.convs["ub5.conv1"].weight
    w1[2, c1, 1, mid] = 1.0
    w1[3, c1, 1, mid] = -1.0
    w2 = m.convs["ub5.conv2"].weight
    w2[2, 2, 1, mid] = 1.0
    w2[3, 3, 1, mid] = 1.0
    head = m.convs["head"].weight
    head[0, 2, 1, 0] = 1.0
    head[0, 3, 1, 0] = -1.0
    return m


@pytest.fixture
def identity_ats():
    return identity_model("ats")


# acceptance criteria report: number -> (passed, detail)
ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
