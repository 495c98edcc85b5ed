import os

import pytest
from hypothesis import HealthCheck, settings

from hiercm.model import save_model

# Numeric property tests do real linear algebra per example; wall-clock
# deadlines only make them flaky on loaded machines.
settings.register_profile(
    "package",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("package")


@pytest.fixture
def model_file(tmp_path):
    """Write a model to a temp file and hand back its path."""

    def _write(model, name="model.json"):
        path = os.path.join(tmp_path, name)
        save_model(model, path)
        return path

    return _write
