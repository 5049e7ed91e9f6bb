import io
from pathlib import Path

import numpy as np
import pytest

from synthctl.panel import PanelData

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


def gaussian_mixture_panel(
    t0: int,
    seed: int,
    t1: int = 5,
    sigmas=(1.0, 2.0),
    mix: float = 0.5,
) -> PanelData:
    """Two zero-mean Gaussian units; treated draws from their mixture."""
    rng = np.random.default_rng(seed)
    t = t0 + t1
    u1 = rng.normal(0.0, sigmas[0], size=t)
    u2 = rng.normal(0.0, sigmas[1], size=t)
    pick_first = rng.random(t) < mix
    treated = np.where(
        pick_first,
        rng.normal(0.0, sigmas[0], size=t),
        rng.normal(0.0, sigmas[1], size=t),
    )
    return PanelData(
        units=("tr", "a", "b"), outcomes=np.vstack([treated, u1, u2]), t0=t0
    )


def csv_stream(text: str) -> io.StringIO:
    return io.StringIO(text)
