import pytest

from hiertpp.config import RunConfig

TINY_TOML = """
seed = 3

[synth]
n_train_users = 6
n_test_benign_users = 3
n_malicious_users = 2
train_sessions_per_user = 6
test_sessions_per_user = 5
malicious_sessions_per_user = 2

[model]
embed_dim = 4
hidden_dim = 6
upper_input_dim = 4
upper_hidden_dim = 5

[train]
epochs_lower = 2
epochs_upper = 2
batch_size = 8
calibration_sessions = 10
max_decode_len = 30
"""


@pytest.fixture
def tiny_toml(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


@pytest.fixture
def tiny_config(tiny_toml):
    return RunConfig.load(tiny_toml)
