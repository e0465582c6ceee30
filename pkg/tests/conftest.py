import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))


def to_tensor(img_hwc: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(H, W, C) numpy -> (1, C, H, W) torch."""
    return torch.from_numpy(np.ascontiguousarray(img_hwc.transpose(2, 0, 1)))[None].to(dtype)


def to_numpy(t: torch.Tensor) -> np.ndarray:
    """(1, C, H, W) torch -> (H, W, C) numpy."""
    return t[0].detach().cpu().numpy().transpose(1, 2, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
