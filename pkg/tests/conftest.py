import numpy as np
import pytest

from imuface import pipeline, synth


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """Small still-head dataset exercising the full on-disk protocol."""
    out = tmp_path_factory.mktemp("mini_ds")
    cfg = synth.SynthConfig(seed=11, reps_single=1, reps_expr=1,
                            action_duration_s=4.0)
    manifest = synth.make_dataset(cfg, out)
    return out, manifest, cfg


@pytest.fixture(scope="session")
def mini_bundle(mini_dataset):
    root, manifest, _ = mini_dataset
    from imuface.signal_prep import PreprocConfig
    pre = PreprocConfig(patch_len=20)
    return pre, pipeline.calibration_from_dataset(root, manifest, pre)


def random_window_set(seq_len=60, patch_len=12, n_segments=2, frames_per_segment=150,
                      stride=15, seed=0, first_frame=2):
    """Synthetic WindowSet with learnable structure (AU drives patches)."""
    from imuface.train import WindowSet
    rng = np.random.default_rng(seed)
    ws = WindowSet(seq_len)
    mix = rng.normal(size=(14, 12)) * 0.3
    for _ in range(n_segments):
        au = np.clip(rng.normal(1.0, 0.8, size=(frames_per_segment, 14)), 0, 5)
        # Smooth the truth so history carries information.
        kernel = np.ones(9) / 9
        au = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="same"), 0, au)
        patches = (au @ mix)[first_frame:, None, :] \
            + rng.normal(0, 0.05, size=(frames_per_segment - first_frame, patch_len, 12))
        ws.add_segment(first_frame, patches.astype(np.float32),
                       au.astype(np.float32), stride)
    return ws
