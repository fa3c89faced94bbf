import numpy as np
import pytest

from vitgrade.model import ModelConfig, init_params


@pytest.fixture
def tiny_config():
    """Smallest config used across the gradient and pipeline tests."""
    return ModelConfig(img_size=16, patch_size=8, embed_dim=8, depth=2,
                       num_heads=2, num_classes=4, in_channels=1)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=7, dtype=np.float64)


def param_hashes(params):
    """Stable content hash per parameter, for bit-identity checks."""
    import hashlib
    return {name: hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()
            for name, arr in params.items()}
