import numpy as np
import pytest

from rsma_fbl.channels import ChannelSet, derive_seed, sample_channels
from rsma_fbl.model import SystemConfig


def two_user(**kw) -> SystemConfig:
    base = dict(n_tx=4, groups=((1,), (2,)), channel_variances=(1.0, 0.09), p_tx=100.0, l_total=500)
    base.update(kw)
    return SystemConfig(**base)


def coop(**kw) -> SystemConfig:
    base = dict(n_tx=2, groups=((1,), (2,), (3,)), channel_variances=(1.0, 0.09, 0.01), p_tx=100.0,
                p_relay=100.0, l_total=300, strategy="C-RSMA")
    base.update(kw)
    return SystemConfig(**base)


def fixed_channels(h, relay=None, config=None) -> ChannelSet:
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    kw = {}
    if relay is not None:
        kw = dict(relay=np.atleast_2d(np.asarray(relay, dtype=complex)),
                  relay_users=config.relay_users, co_users=config.cooperative_users)
    return ChannelSet(downlink=h, seed=0, variances=tuple([1.0] * h.shape[0]), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cfg2():
    return two_user()


@pytest.fixture
def ch2(cfg2):
    return sample_channels(cfg2, derive_seed(7, 0))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
