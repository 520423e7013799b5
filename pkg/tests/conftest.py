import numpy as np
import pytest

from amb.config import AMBConfig
from amb.pipeline import resolve_vocab


def micro_config(**overrides):
    """Smallest config that still exercises every component, in float64."""
    base = dict(layers=2, d_model=8, heads=2, d_ff=12, max_len=16, bottleneck=4, d_enc=4,
                enc_layers=1, enc_heads=1, enc_d_ff=6, d_tok=3, d_proj=5, d_fuse=6, max_frames=8,
                d_visual=3, d_audio=4, dtype="f64", backbone_init_std=0.5, init_std=0.5)
    base.update(overrides)
    return AMBConfig.toy(**base)


@pytest.fixture
def toy_setup():
    config, vocab = resolve_vocab(AMBConfig.toy())
    return config, vocab


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
