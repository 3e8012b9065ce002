"""``meetkit`` command line: simulation, augmentation, front-end, features, scoring and fusion.

Exit codes: 0 success, 1 usage error, 2 data error, 3 partial failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from . import rover as rv
from .config import ConfigError, dump_config, load_config
from .features import FeatureError
from .rover import RoverError
from .sot import TranscriptError, cer, read_text, read_timeline, sot_serialize, write_table

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("meetkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, seed: bool = True, workers: bool = True) -> None:
    p.add_argument("--config", help="INI config file (see README for keys)")
    if seed:
        p.add_argument("--seed", type=int, help="global seed (overrides [pipeline] seed)")
    if workers:
        p.add_argument("--workers", type=int, help="worker processes (overrides [pipeline] workers)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="meetkit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate-rirs", help="random rooms and multi-mic RIRs")
    _common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fs", type=int, default=16000)
    p.add_argument("--duration", type=float, help="RIR length in seconds (default: the room's T60)")

    p = sub.add_parser("simulate-array", help="far-field multi-channel copies of mono sources")
    _common(p)
    p.add_argument("--sources", required=True, help="wav.scp of mono sources")
    p.add_argument("--noise", help="wav.scp of noise signals placed as directional sources")
    p.add_argument("--self-noise-db", type=float, help="white sensor noise level relative to the clean reference")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("simulate-overlap", help="overlapped multi-speaker mixtures with SOT references")
    _common(p)
    p.add_argument("--pools", required=True, help="manifest: utt-id, wav, speaker, transcript")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("augment", help="speed, pitch, noise/reverb and EQ copies")
    _common(p)
    p.add_argument("--manifest", required=True, help="manifest: utt-id, wav[, speaker, transcript]")
    p.add_argument("--noise", help="wav.scp of noise signals")
    p.add_argument("--rirs", help="rir.scp from simulate-rirs (first channel is used)")
    p.add_argument("--out-dir", required=True)

    for name, stage, text in (("wpe", ["wpe"], "WPE dereverberation"),
                              ("beamform", ["beamform"], "weighted delay-and-sum beamforming"),
                              ("features", ["features"], "83-dim fbank+pitch features")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--input", required=True, help="wav.scp")
        p.add_argument("--ref", help="ref.scp of clean references for SI-SDR reporting")
        p.add_argument("--out-dir", required=True)
        p.set_defaults(stages=stage)
        if name == "wpe":
            p.add_argument("--taps", type=int)
            p.add_argument("--delay", type=int)
            p.add_argument("--iters", type=int)
        if name == "beamform":
            p.add_argument("--segment-ms", type=float)
            p.add_argument("--step-ms", type=float)
            p.add_argument("--max-lag-ms", type=float)
            p.add_argument("--npeaks", type=int)
            p.add_argument("--trans-weight", type=float)
            p.add_argument("--dump-tdoa", metavar="DIR", help="write <DIR>/<utt>.tsv of (segment, channel, lag, score, weight)")
        if name == "features":
            p.add_argument("--spec-augment", action="store_true", help="apply SpecAugment masks")

    p = sub.add_parser("pipeline", help="run a stage chain over a manifest")
    _common(p)
    p.add_argument("--manifest", help="wav.scp")
    p.add_argument("--ref", help="ref.scp of clean references for SI-SDR reporting")
    p.add_argument("--stages", default="wpe,beamform,features", help=f"comma list from {','.join(pl.STAGES)}")
    p.add_argument("--out-dir")
    p.add_argument("--dump-tdoa", metavar="DIR", help="per-utterance TDOA tables when beamforming")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")

    p = sub.add_parser("sot-serialize", help="timeline + text -> one SOT reference line")
    p.add_argument("--timeline", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--recording-id", help="id for the output line (default: timeline file stem)")
    p.add_argument("--out", help="output text file (default: stdout)")

    p = sub.add_parser("score-cer", help="per-utterance and corpus CER")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--keep-sc", action="store_true", help="score <sc> as a token")
    p.add_argument("--keep-space", action="store_true", help="score whitespace characters")
    p.add_argument("--out", help="TSV output (default: stdout)")

    p = sub.add_parser("rover", help="fuse N hypothesis text files")
    p.add_argument("hyps", nargs="+", help="text manifests, in voting order")
    p.add_argument("--ctm", action="append", default=[], help="CTM confidences, one per hypothesis, same order")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--unit", choices=("char", "word"), default="char")
    p.add_argument("--costs", default="0,4,3,3", help="match,substitution,insertion,deletion")
    p.add_argument("--out", help="fused text (default: stdout)")
    return parser


def _emit(rows, out) -> None:
    if out:
        write_table(out, rows)
    else:
        for row in rows:
            print("\t".join(str(v) for v in row))


def _config(args):
    return load_config(args.config, seed=getattr(args, "seed", None), workers=getattr(args, "workers", None))


def _cmd_sot(args) -> int:
    texts = read_text(args.text)
    items = []
    for e in read_timeline(args.timeline):
        if e.utt_id not in texts:
            raise TranscriptError(f"no transcript for {e.utt_id}")
        items.append((texts[e.utt_id], e.start, e.speaker))
    rid = args.recording_id or Path(args.timeline).stem
    _emit([(rid, str(sot_serialize(items)))], args.out)
    return EXIT_OK


def _cmd_cer(args) -> int:
    refs, hyps = read_text(args.ref), read_text(args.hyp)
    rows = [("utt_id", "substitutions", "deletions", "insertions", "ref_length", "cer")]
    total = None
    missing = 0
    for utt, ref in refs.items():
        if utt not in hyps:
            missing += 1
            log.warning("no hypothesis for %s; scored as all deletions", utt)
        rep = cer(ref, hyps.get(utt, ""), strip_sc=not args.keep_sc, remove_space=not args.keep_space)
        total = rep if total is None else total + rep
        rows.append((utt, rep.substitutions, rep.deletions, rep.insertions, rep.reference_length, f"{rep.cer:.6f}"))
    if total is None:
        raise TranscriptError("reference file is empty")
    rows.append(("TOTAL", total.substitutions, total.deletions, total.insertions, total.reference_length, f"{total.cer:.6f}"))
    _emit(rows, args.out)
    return EXIT_PARTIAL if missing else EXIT_OK


def _cmd_rover(args) -> int:
    if len(args.hyps) < 2:
        raise UsageError("rover needs at least two hypothesis files")
    if args.ctm and len(args.ctm) != len(args.hyps):
        raise UsageError("give either no --ctm or exactly one per hypothesis")
    costs = rv.AlignCosts.parse(args.costs)
    texts = [read_text(h) for h in args.hyps]
    ctms = [rv.read_ctm(c) for c in args.ctm]
    rows = []
    for utt in texts[0]:
        hyps = []
        for k, t in enumerate(texts):
            if ctms and utt in ctms[k]:
                hyps.append(ctms[k][utt])
            else:
                hyps.append(rv.tokenize(t.get(utt, ""), args.unit))
        rows.append((utt, rv.detokenize(rv.rover(hyps, args.alpha, costs), args.unit)))
    _emit(rows, args.out)
    return EXIT_OK


STAGE_FLAGS = {
    "wpe": {"taps": "taps", "delay": "delay", "iters": "iterations"},
    "beamform": {"segment_ms": "segment_ms", "step_ms": "step_ms", "max_lag_ms": "max_lag_ms",
                 "npeaks": "n_peaks", "trans_weight": "transition_weight"},
}


def _cmd_stage(args) -> int:
    cfg = _config(args)
    for block, flags in STAGE_FLAGS.items():
        changes = {field: getattr(args, flag) for flag, field in flags.items() if getattr(args, flag, None) is not None}
        if changes:
            try:
                cfg = dataclasses.replace(cfg, **{block: dataclasses.replace(getattr(cfg, block), **changes)})
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
    if args.command == "pipeline":
        if args.print_config:
            print(dump_config(cfg), end="")
            return EXIT_OK
        if not args.manifest or not args.out_dir:
            raise UsageError("pipeline needs --manifest and --out-dir")
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    else:
        stages = list(args.stages)
        if getattr(args, "spec_augment", False):
            stages.append("specaugment")
    manifest = args.manifest if args.command == "pipeline" else args.input
    result = pl.run_pipeline(cfg, manifest, args.out_dir, stages, args.ref, getattr(args, "dump_tdoa", None))
    print((Path(args.out_dir) / "summary.txt").read_text(encoding="utf-8"), end="")
    return result.exit_code


def _cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.command == "simulate-rirs":
        pl.simulate_rirs(cfg, args.count, args.out_dir, args.fs, args.duration)
    elif args.command == "simulate-array":
        pl.simulate_array_set(cfg, args.sources, args.out_dir, args.noise, args.self_noise_db)
    elif args.command == "simulate-overlap":
        pl.simulate_overlap_set(cfg, args.pools, args.count, args.out_dir)
    else:
        pl.augment_set(cfg, args.manifest, args.out_dir, args.noise, args.rirs)
    return EXIT_OK


COMMANDS = {
    "simulate-rirs": _cmd_simulate,
    "simulate-array": _cmd_simulate,
    "simulate-overlap": _cmd_simulate,
    "augment": _cmd_simulate,
    "wpe": _cmd_stage,
    "beamform": _cmd_stage,
    "features": _cmd_stage,
    "pipeline": _cmd_stage,
    "sot-serialize": _cmd_sot,
    "score-cer": _cmd_cer,
    "rover": _cmd_rover,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"meetkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"meetkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (pl.DataError, TranscriptError, FeatureError, RoverError, OSError, ValueError) as exc:
        print(f"meetkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
