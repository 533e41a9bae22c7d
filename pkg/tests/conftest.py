import pytest

TINY_CONFIG = """\
# small world for fast end-to-end runs
synth.dim_in = 8
synth.ids_source = 10
synth.ids_target = 6
synth.samples_per_id = 4
synth.eval_id_fraction = 0.4
model.hidden_dim = 12
model.embed_dim = 6
pretrain.epochs = 5
finetune.epochs = 2
fed.n_clients = 3
fed.local_iters = 2
fed.rounds = 3
"""


@pytest.fixture
def tiny_config_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path
