import numpy as np
import pytest

from callsift import datagen
from callsift.traces import SyscallTrace


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_trace(events, label="malware", trace_id="t", observed_at=0):
    return SyscallTrace(
        id=trace_id, label=label, observed_at=observed_at, events=tuple(events)
    )


@pytest.fixture(scope="session")
def small_corpus():
    """Strongly separated corpus shared by model-level tests."""
    config = datagen.make_config(
        seed=101,
        goodware_count=60,
        malware_count=60,
        profiles=datagen.default_profiles(length_min=40, length_max=80),
    )
    return datagen.generate_corpus(config)


@pytest.fixture(scope="session")
def small_labels(small_corpus):
    return np.array([1 if t.label == "malware" else 0 for t in small_corpus])
