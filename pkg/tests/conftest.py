import sys

import numpy as np
import pytest

from streamvc import kernels
from streamvc.config import AcousticConfig, ModelConfig, VocoderConfig
from streamvc.model_io import random_init


def small_config(**vocoder_kw) -> ModelConfig:
    """A narrow model that keeps unit tests fast; structure matches the default."""
    acoustic = AcousticConfig(d_model=32, heads=4, encoder_layers=2, encoder_ffn=64, decoder_layers=2,
                              decoder_conv_filter=48, decoder_conv_kernel=9, num_phones=24, num_speakers=3)
    vocoder = VocoderConfig(upsample_initial_channel=32, **vocoder_kw)
    return ModelConfig(acoustic=acoustic, vocoder=vocoder)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture(scope="session")
def small_model():
    return random_init(small_config(), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = sorted(getattr(mod, "RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
