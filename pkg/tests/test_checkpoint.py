import numpy as np
import pytest

from ufo.checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from ufo.config import TrainConfig
from ufo.data import SbmConfig, generate_sbm
from ufo.rng import Rng
from ufo.trainer import run_sequence

CFG = TrainConfig(hidden=4, flow_hidden=8, n_couplings=2, epochs=20, flow_epochs=8, replay_batch=16, classes_per_task=2, noise_ratio=0.3, seed=2)
SBM = SbmConfig(n_tasks=3, classes_per_task=2, nodes_per_class=10, p_in=0.3, p_out=0.02, n_features=5)


@pytest.fixture(scope="module")
def run_with_checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    g = generate_sbm(SBM, Rng(2).fork("data"))

    def hook(state, t):
        save_checkpoint(state, root / f"after{t + 1}.bin")

    result = run_sequence(g, CFG, "ufo", on_task_end=hook)
    return g, result, root


def test_save_load_save_is_byte_identical(run_with_checkpoints, tmp_path):
    _, _, root = run_with_checkpoints
    for name in ("after1.bin", "after2.bin", "after3.bin"):
        save_checkpoint(load_checkpoint(root / name), tmp_path / name)
        assert (root / name).read_bytes() == (tmp_path / name).read_bytes()


@pytest.mark.parametrize("stop", [1, 2])
def test_resume_reproduces_final_matrix_bitwise(run_with_checkpoints, stop):
    g, full, root = run_with_checkpoints
    resumed = run_sequence(g, CFG, "ufo", resume=load_checkpoint(root / f"after{stop}.bin"))
    assert resumed.matrix.tobytes() == full.matrix.tobytes()


def test_restored_state_matches_live_parameters(run_with_checkpoints):
    _, full, root = run_with_checkpoints
    st = load_checkpoint(root / "after3.bin")
    for a, b in zip(st.parameters() + st.flow.parameters(), full.state.parameters() + full.state.flow.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    assert st.task == 3 and st.frozen.task == 2 and st.seed == 2
    opt, live = st.optimizers["classifier"], full.state.optimizers["classifier"]
    assert opt.t == live.t and all(np.array_equal(x, y) for x, y in zip(opt.m, live.m))


def test_wrong_magic_rejected(run_with_checkpoints, tmp_path):
    data = (run_with_checkpoints[2] / "after1.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"UFO2" + data[4:])
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(tmp_path / "bad.bin")


def test_truncated_and_padded_files_rejected(run_with_checkpoints, tmp_path):
    data = (run_with_checkpoints[2] / "after1.bin").read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-5])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "short.bin")
    (tmp_path / "long.bin").write_bytes(data + b"\0")
    with pytest.raises(CheckpointFormatError, match="trailing"):
        load_checkpoint(tmp_path / "long.bin")
