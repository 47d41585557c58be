import numpy as np
import pytest

from effecg import data as D
from effecg import model as M
from effecg import signal as S


def tiny_model_config(**overrides) -> M.ModelConfig:
    base = dict(
        leads=1, input_length=64, class_count=2, head="softmax",
        stem_channels=4, stem_kernel=3, stem_stride=1,
        stages=[M.StageSpec(1, 4, 3, 1, 1)],
        fc_hidden=8, dropout_rate=0.0, ae_hidden=3,
        fusion=M.FusionConfig(enabled=False),
    )
    base.update(overrides)
    return M.ModelConfig(**base)


def overfit_model_config(**overrides) -> M.ModelConfig:
    base = dict(
        leads=1, input_length=1000, class_count=2, head="softmax",
        stem_channels=8, stem_kernel=7, stem_stride=2,
        stages=[M.StageSpec(1, 8, 7, 2, 1), M.StageSpec(2, 16, 7, 2, 1)],
        fc_hidden=16, dropout_rate=0.1, ae_hidden=4,
        fusion=M.FusionConfig(enabled=False),
    )
    base.update(overrides)
    return M.ModelConfig(**base)


def make_rate_dataset(n: int, seed0: int = 100, fs: float = 250.0,
                      duration: float = 4.0, noise: float = 0.03) -> D.Dataset:
    """Two signal classes distinguished by heart rate (50 vs 120 bpm)."""
    records = []
    for i in range(n):
        cls = i % 2
        rec, _ = S.synth_ecg_fixed(duration, 50.0 if cls == 0 else 120.0, fs,
                                   noise_std=noise, seed=seed0 + i)
        rec.labels = {cls}
        records.append(rec)
    return D.Dataset(records, 2, "single")


def make_demographic_dataset(n: int, seed: int = 7, fs: float = 250.0,
                             duration: float = 4.0) -> D.Dataset:
    """Identical signal statistics; labels carried by age/gender only."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        age = int(rng.integers(20, 90))
        gender = "M" if rng.random() < 0.5 else "F"
        labels = set()
        if gender == "M":
            labels.add(0)
        if age >= 50:
            labels.add(1)
        rec, _ = S.synth_ecg_fixed(duration, 75.0, fs, noise_std=0.03, seed=500 + i)
        rec.age, rec.gender, rec.labels = age, gender, labels
        records.append(rec)
    return D.Dataset(records, 2, "multi")


def simple_batch(cfg: M.ModelConfig, batch: int = 2, seed: int = 0,
                 ages=None, genders=None) -> M.Batch:
    rng = np.random.default_rng(seed)
    return M.Batch(
        x=rng.normal(size=(batch, cfg.leads, cfg.input_length)),
        r_values=np.tile(np.array([[5.0, 20.0, -1.0]]), (batch, 1)),
        r_mask=np.tile(np.array([[1.0, 1.0, 0.0]]), (batch, 1)),
        p_values=np.tile(np.array([[2.0, -1.0]]), (batch, 1)),
        p_mask=np.tile(np.array([[1.0, 0.0]]), (batch, 1)),
        labels=[{i % cfg.class_count} for i in range(batch)],
        ages=ages,
        genders=genders,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
