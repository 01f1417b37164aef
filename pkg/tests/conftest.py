import numpy as np
import pytest

from mint_snn import network as nw
from mint_snn.tensor_core import make_rng


def small_conv_net(seed=0, gain=1.5):
    net = nw.NetworkSpec((1, 6, 6), [nw.conv(4, 1), nw.conv(4, 4), nw.maxpool(2), nw.linear(3, 36)])
    return nw.init_weights(net, make_rng(seed), gain=gain)


def small_mlp(seed=0, gain=1.5):
    net = nw.NetworkSpec((1, 1, 12), [nw.linear(16, 12), nw.linear(8, 16), nw.linear(3, 8)])
    return nw.init_weights(net, make_rng(seed), gain=gain)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(params=["conv", "mlp"])
def any_net(request):
    return small_conv_net() if request.param == "conv" else small_mlp()


def uniform_input(net, batch=3, seed=5):
    return make_rng(seed).uniform(0.0, 1.0, size=(batch,) + net.input_shape)


def spikes_like(shape, p, seed):
    return (make_rng(seed).random(shape) < p).astype(np.uint8)


ACCEPTANCE_RESULTS = {}
ACCEPTANCE_CRITERIA = range(1, 11)


@pytest.fixture
def acceptance():
    """Record one criterion outcome; printed as a PASS/FAIL line at the end of the run."""
    def record(number, passed, detail):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance.py" in r.nodeid
              for key in ("passed", "failed", "error") for r in terminalreporter.stats.get(key, []))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_CRITERIA:
        if n not in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
            continue
        passed, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} ({detail})")
