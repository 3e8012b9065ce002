"""Batch execution: manifests in, per-utterance jobs with private RNG streams, manifests and reports out."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import augment as aug
from .audio import AudioBuffer, AudioError, read_wav, si_sdr, write_wav
from .beamformer import beamform, tdoa_table
from .config import PipelineConfig, utterance_seed
from .features import FeatureError, compute_features, spec_augment, write_features
from .room import NoiseSpec, RoomSpec, generate_rir, sample_room_config, simulate_array
from .sot import TranscriptError, read_table, write_table, write_timeline, TimelineEntry
from .wpe import wpe_audio

log = logging.getLogger("meetkit")

STAGES = ("augment", "wpe", "beamform", "features", "specaugment")
DATA_ERRORS = (AudioError, FeatureError, TranscriptError, OSError, ValueError)


class DataError(ValueError):
    """Missing or malformed inputs detected before processing starts."""


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    utt_id: str
    path: Path
    extra: list[str] = field(default_factory=list)


def read_manifest(path: str | Path, min_fields: int = 2) -> list[ManifestEntry]:
    """``utt-id <TAB> wav-path [<TAB> more...]``; relative paths resolve against the manifest directory."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    out, seen = [], set()
    for row in read_table(path):
        if len(row) < min_fields:
            raise DataError(f"{path}: row {row!r} has fewer than {min_fields} fields")
        if row[0] in seen:
            raise DataError(f"{path}: duplicate utterance id {row[0]!r}")
        seen.add(row[0])
        p = Path(row[1])
        out.append(ManifestEntry(row[0], p if p.is_absolute() else base / p, row[2:]))
    return out


def check_inputs(entries) -> None:
    missing = [str(e.path) for e in entries if not e.path.is_file()]
    if missing:
        raise DataError(f"{len(missing)} input file(s) missing, first: {missing[0]}")


def _rel(path: Path, base: Path) -> str:
    return os.path.relpath(path, base)


# ---------------------------------------------------------------------------
# Worker pool
# ---------------------------------------------------------------------------


def _init_worker() -> None:
    threadpool_limits(1)


def _run_jobs(fn, jobs, workers: int):
    """Map ``fn`` over ``jobs`` preserving order; BLAS is pinned to one thread in every mode so results do not depend on ``workers``."""
    if workers <= 1 or len(jobs) <= 1:
        with threadpool_limits(1):
            return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
        return list(pool.map(fn, jobs, chunksize=1))


# ---------------------------------------------------------------------------
# Processing pipeline (augment / wpe / beamform / features / specaugment)
# ---------------------------------------------------------------------------


def validate_stages(stages) -> list[str]:
    stages = list(stages)
    for s in stages:
        if s not in STAGES:
            raise DataError(f"unknown stage {s!r}; choose from {', '.join(STAGES)}")
    if len(set(stages)) != len(stages):
        raise DataError("stages may appear only once")
    order = [STAGES.index(s) for s in stages]
    if order != sorted(order):
        raise DataError(f"stages must follow the order {' -> '.join(STAGES)}")
    if "specaugment" in stages and "features" not in stages:
        raise DataError("specaugment needs the features stage")
    return stages


@dataclass
class Job:
    utt_id: str
    path: Path
    ref_path: Path | None
    stages: list[str]
    cfg: PipelineConfig
    out_dir: Path
    dump_tdoa: Path | None = None


def _ref_channel(ref: AudioBuffer, ch: int) -> np.ndarray:
    return ref.samples[0] if ref.channels == 1 else ref.samples[ch]


def augment_once(x: AudioBuffer, cfg: PipelineConfig, rng: np.random.Generator) -> AudioBuffer:
    """One random perturbation chain: speed factor, pitch shift and optional EQ."""
    factor = float(rng.choice(cfg.augment.speed_factors))
    y = aug.speed_perturb(x, factor)
    if cfg.augment.pitch_range > 0:
        y = aug.pitch_shift(y, float(rng.uniform(-cfg.augment.pitch_range, cfg.augment.pitch_range)))
    if rng.random() < cfg.augment.eq_probability:
        y = aug.eq_filter(y, aug.random_eq(rng, y.sample_rate))
    return y


def process_utterance(job: Job) -> dict:
    """Run the stage chain on one utterance; never raises for data problems."""
    row = {"utt_id": job.utt_id, "status": "ok", "error": "", "timing": {}}
    try:
        cfg = job.cfg
        rng = np.random.default_rng(utterance_seed(cfg.seed, job.utt_id))
        x = read_wav(job.path)
        ref = read_wav(job.ref_path) if job.ref_path is not None else None
        row["in_channels"] = x.channels
        x_in, x_wpe = x, None
        ch = 0
        for stage in job.stages:
            t0 = time.perf_counter()
            if stage == "augment":
                x = augment_once(x, cfg, rng)
                ref = None  # timing and pitch change, no aligned reference any more
            elif stage == "wpe":
                x = x_wpe = wpe_audio(x, cfg.wpe, cfg.stft)
            elif stage == "beamform":
                x, track, weights = beamform(x, cfg.beamform, return_details=True)
                ch = track.reference
                row["reference"] = ch
                if ref is not None:
                    row["si_sdr_beamform"] = si_sdr(_ref_channel(ref, ch), x.samples[0])
                if job.dump_tdoa is not None:
                    rows = [("segment", "channel", "lag", "score", "weight")]
                    rows += [(s, m, lag, f"{sc:.6f}", f"{w:.6f}") for s, m, lag, sc, w in tdoa_table(track, weights)]
                    write_table(job.dump_tdoa / f"{job.utt_id}.tsv", rows)
            elif stage == "features":
                feats = compute_features(x if x.channels == 1 else x.channel(ch), cfg.fbank, cfg.pitch)
            elif stage == "specaugment":
                feats = spec_augment(feats, cfg.specaugment, rng)
            row["timing"][stage] = time.perf_counter() - t0
        if any(s in job.stages for s in ("augment", "wpe", "beamform")):
            wav = job.out_dir / "wav" / f"{job.utt_id}.wav"
            write_wav(wav, x)
            row["wav"] = wav
            row["out_channels"] = x.channels
        if "features" in job.stages:
            fpath = job.out_dir / "feats" / f"{job.utt_id}.feat"
            write_features(fpath, feats)
            row["feat"] = fpath
            row["shape"] = feats.values.shape
        # all metrics on the beamformer's reference channel (channel 0 without beamforming)
        if ref is not None:
            row["si_sdr_input"] = si_sdr(_ref_channel(ref, ch), x_in.samples[ch])
            if x_wpe is not None:
                row["si_sdr_wpe"] = si_sdr(_ref_channel(ref, ch), x_wpe.samples[ch])
            last = row.get("si_sdr_beamform", row.get("si_sdr_wpe"))
            if last is not None:
                row["si_sdr_delta"] = last - row["si_sdr_input"]
    except DATA_ERRORS as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


REPORT_COLUMNS = ("utt_id", "status", "in_channels", "out_channels", "reference", "frames", "dims",
                  "si_sdr_input", "si_sdr_wpe", "si_sdr_beamform", "si_sdr_delta", "error")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v).replace("\t", " ").replace("\n", " ")


@dataclass
class RunResult:
    rows: list[dict]
    out_dir: Path

    @property
    def failures(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 3 if self.failures else 0


def run_pipeline(
    cfg: PipelineConfig,
    manifest: str | Path,
    out_dir: str | Path,
    stages=("wpe", "beamform", "features"),
    ref_manifest: str | Path | None = None,
    dump_tdoa: str | Path | None = None,
) -> RunResult:
    """Execute ``stages`` on every manifest entry and write wav.scp / feats.scp / report.tsv / summary.txt.

    Everything except the timing lines in summary.txt is a pure function of
    (config, manifest contents, seed), whatever ``cfg.workers`` is.
    """
    stages = validate_stages(stages)
    cfg.validate()
    entries = read_manifest(manifest)
    refs = {}
    if ref_manifest is not None:
        refs = {e.utt_id: e.path for e in read_manifest(ref_manifest)}
        check_inputs(read_manifest(ref_manifest))
    check_inputs(entries)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tdoa_dir = None if dump_tdoa is None else Path(dump_tdoa)
    jobs = [Job(e.utt_id, e.path, refs.get(e.utt_id), stages, cfg, out_dir, tdoa_dir) for e in entries]
    t0 = time.perf_counter()
    rows = _run_jobs(process_utterance, jobs, cfg.workers)
    wall = time.perf_counter() - t0

    ok = [r for r in rows if r["status"] == "ok"]
    for r in rows:
        if r["status"] != "ok":
            log.error("%s failed: %s", r["utt_id"], r["error"])
    if any(s in stages for s in ("augment", "wpe", "beamform")):
        write_table(out_dir / "wav.scp", [(r["utt_id"], _rel(r["wav"], out_dir)) for r in ok])
    if "features" in stages:
        write_table(out_dir / "feats.scp", [(r["utt_id"], _rel(r["feat"], out_dir), *r["shape"]) for r in ok])
    report = [REPORT_COLUMNS]
    for r in rows:
        if "shape" in r:
            r["frames"], r["dims"] = r["shape"]
        report.append(tuple(_fmt(r.get(c)) for c in REPORT_COLUMNS))
    write_table(out_dir / "report.tsv", report)

    lines = [
        f"stages: {' -> '.join(stages)}",
        f"utterances: {len(rows)} ok: {len(ok)} failed: {len(rows) - len(ok)}",
        f"workers: {cfg.workers} wall time: {wall:.2f} s",
    ]
    for s in stages:
        times = [r["timing"][s] for r in ok if s in r["timing"]]
        if times:
            lines.append(f"stage {s}: total {sum(times):.2f} s, mean {np.mean(times):.3f} s")
    for key in ("si_sdr_input", "si_sdr_wpe", "si_sdr_beamform", "si_sdr_delta"):
        vals = [r[key] for r in ok if key in r]
        if vals:
            lines.append(f"{key}: median {np.median(vals):.2f} dB, mean {np.mean(vals):.2f} dB over {len(vals)}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return RunResult(rows, out_dir)


# ---------------------------------------------------------------------------
# Simulation and augmentation batches
# ---------------------------------------------------------------------------


def _room_row(rid, room: RoomSpec, array) -> tuple:
    c = array.mics.mean(axis=0)
    return (rid, *(f"{d:.4f}" for d in room.dimensions), f"{room.t60:.4f}",
            f"{float(room.reflection_coefficients()[0, 0]):.6f}",
            *(f"{v:.4f}" for v in array.source), *(f"{v:.4f}" for v in c))


ROOM_HEADER = ("id", "length", "width", "height", "t60", "beta", "src_x", "src_y", "src_z", "array_x", "array_y", "array_z")


def _rir_job(args):
    rid, cfg, fs, duration, out_dir = args
    room, array = sample_room_config(cfg.room, seed=utterance_seed(cfg.seed, rid))
    rir = generate_rir(room, array, fs, duration or max(room.t60, 0.1))
    path = out_dir / "rirs" / f"{rid}.wav"
    write_wav(path, AudioBuffer(rir.taps, fs))
    return rid, path, _room_row(rid, room, array)


def simulate_rirs(cfg: PipelineConfig, count: int, out_dir, fs: int = 16000, duration: float | None = None) -> Path:
    """Random rooms from ``cfg.room``; writes rirs/*.wav (one channel per mic), rir.scp and rooms.tsv."""
    if count < 0:
        raise DataError("count must be non-negative")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(f"rir{i:05d}", cfg, fs, duration, out_dir) for i in range(count)]
    results = _run_jobs(_rir_job, jobs, cfg.workers)
    write_table(out_dir / "rir.scp", [(rid, _rel(p, out_dir)) for rid, p, _ in results])
    write_table(out_dir / "rooms.tsv", [ROOM_HEADER] + [row for _, _, row in results])
    return out_dir / "rir.scp"


def _array_job(args):
    utt, path, noise_paths, cfg, out_dir, self_noise_db = args
    rng = np.random.default_rng(utterance_seed(cfg.seed, utt))
    src = read_wav(path)
    if src.channels != 1:
        raise AudioError(f"{utt}: array simulation needs a mono source")
    room, array = sample_room_config(cfg.room, seed=int(rng.integers(2**63)))
    fs = src.sample_rate
    rir = generate_rir(room, array, fs, room.t60)
    anechoic = generate_rir(RoomSpec(room.dimensions, beta=0.0), array, fs, room.t60)
    noise = None
    if noise_paths:
        sig = read_wav(noise_paths[int(rng.integers(len(noise_paths)))])
        noise = NoiseSpec([sig.channel(0)], float(rng.uniform(*cfg.augment.snr_range)), room, array.mics)
    sim_seed = int(rng.integers(2**63))
    x = simulate_array(src, rir, noise, seed=sim_seed, self_noise_db=self_noise_db)
    clean = simulate_array(src, anechoic)
    wav, ref = out_dir / "wav" / f"{utt}.wav", out_dir / "ref" / f"{utt}.wav"
    write_wav(wav, x)
    write_wav(ref, clean)
    return utt, wav, ref, _room_row(utt, room, array), "" if noise is None else f"{noise.snr_db:.3f}"


def simulate_array_set(cfg: PipelineConfig, sources, out_dir, noise_manifest=None, self_noise_db: float | None = None) -> Path:
    """Far-field 8-mic copies of mono sources; writes wav.scp, ref.scp (anechoic per-mic images) and rooms.tsv."""
    entries = read_manifest(sources)
    check_inputs(entries)
    noise_paths = []
    if noise_manifest is not None:
        noise_entries = read_manifest(noise_manifest)
        check_inputs(noise_entries)
        noise_paths = [e.path for e in noise_entries]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(e.utt_id, e.path, noise_paths, cfg, out_dir, self_noise_db) for e in entries]
    results = _run_jobs(_array_job, jobs, cfg.workers)
    write_table(out_dir / "wav.scp", [(u, _rel(w, out_dir)) for u, w, _, _, _ in results])
    write_table(out_dir / "ref.scp", [(u, _rel(r, out_dir)) for u, _, r, _, _ in results])
    write_table(out_dir / "rooms.tsv", [ROOM_HEADER + ("snr_db",)] + [(*row, snr) for _, _, _, row, snr in results])
    return out_dir / "wav.scp"


def load_pools(manifest) -> dict[str, list[aug.Utterance]]:
    """Pools manifest rows: ``utt-id, wav, speaker, transcript``."""
    entries = read_manifest(manifest, min_fields=3)
    check_inputs(entries)
    pools: dict[str, list[aug.Utterance]] = {}
    for e in entries:
        spk = e.extra[0]
        text = e.extra[1] if len(e.extra) > 1 else ""
        pools.setdefault(spk, []).append(aug.Utterance(e.utt_id, spk, read_wav(e.path), text))
    return pools


def simulate_overlap_set(cfg: PipelineConfig, pools_manifest, count: int, out_dir) -> Path:
    """Writes mixtures/*.wav, wav.scp, text (SOT references) and timelines/<mix>.tsv."""
    pools = load_pools(pools_manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scp, text, stats = [], [], []
    for i in range(count):
        mid = f"mix{i:05d}"
        m = aug.simulate_overlap(pools, cfg.overlap, seed=utterance_seed(cfg.seed, mid))
        wav = out_dir / "mixtures" / f"{mid}.wav"
        write_wav(wav, m.audio)
        fs = m.audio.sample_rate
        write_timeline(out_dir / "timelines" / f"{mid}.tsv",
                       [TimelineEntry(p.utterance.id, p.utterance.speaker_id, p.onset / fs, p.utterance.duration) for p in m.timeline])
        scp.append((mid, _rel(wav, out_dir)))
        text.append((mid, str(m.sot)))
        stats.append((mid, m.n_speakers, f"{m.overlap_ratio:.4f}", f"{m.target_overlap:.4f}"))
    write_table(out_dir / "wav.scp", scp)
    write_table(out_dir / "text", text)
    write_table(out_dir / "mixtures.tsv", [("id", "n_speakers", "overlap_ratio", "target_overlap")] + stats)
    return out_dir / "wav.scp"


def _augment_job(args):
    e, cfg, out_dir, noise_paths, rir_paths = args
    rng = np.random.default_rng(utterance_seed(cfg.seed, e.utt_id))
    x = read_wav(e.path)
    copies = []
    for f in cfg.augment.speed_factors:
        copies.append((f"{e.utt_id}-sp{f:g}", aug.speed_perturb(x, f)))
    if cfg.augment.pitch_range > 0:
        copies.append((f"{e.utt_id}-pitch", aug.pitch_shift(x, float(rng.uniform(-cfg.augment.pitch_range, cfg.augment.pitch_range)))))
    if noise_paths or rir_paths:
        y = x
        if rir_paths:
            h = read_wav(rir_paths[int(rng.integers(len(rir_paths)))])
            y = aug.add_reverb(y, h.samples[0].astype(np.float64), h.sample_rate)
        if noise_paths:
            n = read_wav(noise_paths[int(rng.integers(len(noise_paths)))]).channel(0)
            y = aug.mix_noise(y, n, float(rng.uniform(*cfg.augment.snr_range)), seed=int(rng.integers(2**63)))
        copies.append((f"{e.utt_id}-noisy", y))
    if rng.random() < cfg.augment.eq_probability:
        copies.append((f"{e.utt_id}-eq", aug.eq_filter(x, aug.random_eq(rng, x.sample_rate))))
    rows = []
    for cid, buf in copies:
        path = out_dir / "wav" / f"{cid}.wav"
        write_wav(path, buf)
        rows.append((cid, path, *e.extra))
    return rows


def augment_set(cfg: PipelineConfig, manifest, out_dir, noise_manifest=None, rir_manifest=None) -> Path:
    """Speed (each configured factor), pitch, noise+reverb and EQ copies; output manifest keeps extra columns."""
    entries = read_manifest(manifest)
    check_inputs(entries)
    extra = {}
    for name, m in (("noise", noise_manifest), ("rir", rir_manifest)):
        extra[name] = []
        if m is not None:
            es = read_manifest(m)
            check_inputs(es)
            extra[name] = [x.path for x in es]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(e, cfg, out_dir, extra["noise"], extra["rir"]) for e in entries]
    rows = [r for batch in _run_jobs(_augment_job, jobs, cfg.workers) for r in batch]
    write_table(out_dir / "wav.scp", [(cid, _rel(p, out_dir), *ex) for cid, p, *ex in rows])
    return out_dir / "wav.scp"
