import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from imupose import pipeline, synth
from imupose.nn.model import Architecture


@pytest.fixture(scope="session", autouse=True)
def single_threaded_blas():
    # tiny matrices: thread sync costs more than it buys, and runs stay deterministic
    with threadpool_limits(limits=1):
        yield


def small_arch(**overrides) -> Architecture:
    base = dict(conv_layers=1, kernels=8, kernel_h=5, kernel_w=12,
                lstm_units=16, window_steps=20, channels=12)
    base.update(overrides)
    return Architecture(**base)


@pytest.fixture(scope="session")
def toy_profile() -> synth.SubjectProfile:
    return synth.make_profile("S1", ["BT", "ST", "WK"], channels=12,
                              freq_base_hz=1.0, freq_step_hz=2.0,
                              noise_std=0.1, dwell_s=8.0, seed=0)


@pytest.fixture(scope="session")
def toy_stream(toy_profile) -> pipeline.RecordStream:
    return synth.generate_stream(toy_profile, duration_s=240, hz=20, channels=12, seed=1)


@pytest.fixture(scope="session")
def toy_dataset(toy_stream) -> pipeline.LabeledDataset:
    return pipeline.build_dataset(toy_stream, 1.0, 20, 0.0, subject="S1")


@pytest.fixture(scope="session")
def toy_split(toy_dataset):
    return pipeline.stratified_shuffle_split(toy_dataset, pipeline.SplitSpec(rounds=1, seed=0))[0]


def random_dataset(n: int, classes: tuple[str, ...], steps: int = 20, channels: int = 12,
                   seed: int = 0, subject: str = "rnd") -> pipeline.LabeledDataset:
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((n, steps, channels))
    labels = np.array([classes[i % len(classes)] for i in range(n)], dtype="<U2")
    starts = np.arange(n, dtype=np.float64)
    return pipeline.LabeledDataset(data, labels, starts, subject)
