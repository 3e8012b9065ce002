from pathlib import Path

import pytest

from meetkit.audio import write_wav
from meetkit.config import PipelineConfig
from meetkit.pipeline import simulate_array_set
from meetkit.sot import write_table
from meetkit.synth import pink_noise, speech_like


def write_sources(out_dir: Path, n: int, seconds: float = 2.0, seed: int = 0) -> Path:
    """Mono speech-like sources plus a wav.scp listing them."""
    rows = []
    for i in range(n):
        p = out_dir / "src" / f"utt{i:03d}.wav"
        write_wav(p, speech_like(seconds, 16000, seed=seed + i))
        rows.append((f"utt{i:03d}", f"src/utt{i:03d}.wav"))
    write_table(out_dir / "sources.scp", rows)
    return out_dir / "sources.scp"


def write_noises(out_dir: Path, n: int = 2) -> Path:
    rows = []
    for i in range(n):
        p = out_dir / "noise" / f"n{i}.wav"
        write_wav(p, pink_noise(3.0, 16000, seed=100 + i))
        rows.append((f"n{i}", f"noise/n{i}.wav"))
    write_table(out_dir / "noise.scp", rows)
    return out_dir / "noise.scp"


@pytest.fixture(scope="session")
def sim_set(tmp_path_factory):
    """20 simulated 8-channel noisy reverberant utterances with anechoic references."""
    root = tmp_path_factory.mktemp("sim")
    sources = write_sources(root, 20)
    noise = write_noises(root)
    simulate_array_set(PipelineConfig(seed=7), sources, root / "array", noise, self_noise_db=-40)
    return root / "array"
