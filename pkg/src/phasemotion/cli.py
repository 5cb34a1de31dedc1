"""Command-line front end: one subcommand per pipeline stage.

Every command accepts --seed/--config/--out, finishes by printing a single
JSON run summary to stdout, and signals failure with exit 1 (message on
stderr) or exit 2 (usage). Nothing here computes; it loads, calls into the
library, and writes files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

import dataclasses

from . import motiondata
from .errors import InvalidArgumentError, PhaseMotionError
from .motiondata import (MotionClip, augment_frequencies, export_clip_csv,
                         generate_corpus, load_clip, load_corpus,
                         save_clip, save_corpus)
from .network import ModelConfig, decode, load_checkpoint
from .runtime import PlaybackSession, decode_frame, fresh_reencode
from .service import PlaybackService, run_script
from .train import configs_from_mapping, parse_config_file, train

_FACTORS_DEFAULT = "0.5,0.75,1.0,1.25,1.5"


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        summary = args.func(args)
    except (PhaseMotionError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if summary is not None:
        _emit_summary(summary, getattr(args, "out", None))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phasemotion",
        description="Synthetic motion corpus, periodic-latent model, playback")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None,
                       help="key=value config file")
        p.add_argument("--out", required=out_required,
                       help="output directory or file")

    p = sub.add_parser("gen", help="synthesize a base clip corpus")
    common(p)
    p.add_argument("--base", type=int, default=34)
    p.add_argument("--joints", type=int, default=14)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--bump-clip-frac", type=float, default=0.5)
    p.add_argument("--bump-joint-frac", type=float, default=0.6)
    p.add_argument("--velocities", action="store_true")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("augment", help="frequency-warp every clip in a corpus")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--factors", default=_FACTORS_DEFAULT,
                   help="comma-separated warp factors")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("train", help="fit the model on a corpus")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--horizon", type=int, default=None,
                   help="override forward-prediction steps")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="per-window latent parameters to CSV")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="re-encode/decode round trip of a clip")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("play", help="offline scripted playback to a frame log")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--motion", default=None,
                   help="motion to start playing at tick 0")
    p.add_argument("--mode", default="replay-encoded")
    p.add_argument("--ticks", type=int, default=500)
    p.add_argument("--script", default=None,
                   help="JSON-lines command script with optional at_tick")
    p.set_defaults(func=_cmd_play)

    p = sub.add_parser("eval", help="run the experiment suite on two checkpoints")
    common(p)
    p.add_argument("--ckpt0", required=True,
                   help="checkpoint trained with horizon 0")
    p.add_argument("--ckpt100", required=True,
                   help="checkpoint trained with horizon 100")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mae", action="store_true",
                   help="tracking-error comparison only")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="stream frames over a local socket")
    common(p, out_required=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7860)
    p.set_defaults(func=_cmd_serve)

    return parser


def _emit_summary(summary: dict, out: Optional[str]) -> None:
    text = json.dumps(summary, sort_keys=True)
    print(text)
    if out and os.path.isdir(out):
        with open(os.path.join(out, "run_summary.json"), "w") as f:
            f.write(text + "\n")


def _load_model(path: str):
    params, cfg, norm = load_checkpoint(path)
    if norm is None:
        raise InvalidArgumentError(
            f"checkpoint {path} lacks normalization stats")
    return params, cfg, norm


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_gen(args) -> dict:
    clips = generate_corpus(
        args.seed, args.base, args.joints, args.duration,
        bump_clip_fraction=args.bump_clip_frac,
        bump_joint_fraction=args.bump_joint_frac,
        with_velocities=args.velocities)
    generator = {"seed": args.seed, "n_base": args.base,
                 "n_joints": args.joints, "duration_s": args.duration,
                 "bump_clip_fraction": args.bump_clip_frac,
                 "bump_joint_fraction": args.bump_joint_frac}
    save_corpus(clips, args.out, generator=generator)
    manifest_path = os.path.join(args.out, "manifest.json")
    return {"command": "gen", "status": "ok", "clips": len(clips),
            "joints": args.joints, "manifest": manifest_path,
            "outputs": [manifest_path]}


def _cmd_augment(args) -> dict:
    factors = [float(tok) for tok in args.factors.split(",") if tok.strip()]
    manifest, clips = load_corpus(args.manifest)
    out_clips = [w for c in clips for w in augment_frequencies(c, factors)]
    save_corpus(out_clips, args.out, generator=manifest.generator)
    manifest_path = os.path.join(args.out, "manifest.json")
    return {"command": "augment", "status": "ok", "factors": factors,
            "clips": len(out_clips), "manifest": manifest_path,
            "outputs": [manifest_path]}


def _cmd_train(args) -> dict:
    _, clips = load_corpus(args.manifest)
    mapping = parse_config_file(args.config) if args.config else {}
    tcfg, mcfg = configs_from_mapping(mapping, d=clips[0].states.shape[0])
    if args.horizon is not None:
        mcfg = dataclasses.replace(mcfg, horizon=args.horizon)
    if args.seed != 0 or "seed" not in mapping:
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
    result = train(clips, tcfg, mcfg, args.out)
    return {"command": "train", "status": "ok",
            "iters": int(tcfg.max_iters), "horizon": int(mcfg.horizon),
            "final_loss": (float(result.losses[-1]) if len(result.losses) else None),
            "checkpoint": result.checkpoint_path,
            "loss_log": result.log_path,
            "outputs": [result.checkpoint_path, result.log_path]}


def _check_window(clip: MotionClip, cfg: ModelConfig) -> None:
    if clip.states.shape[1] < cfg.window:
        raise InvalidArgumentError("clip shorter than window")


def _cmd_encode(args) -> dict:
    params, cfg, norm = _load_model(args.ckpt)
    clip = load_clip(args.clip)
    _check_window(clip, cfg)
    rows = []
    for seg in motiondata.segments(clip, cfg.window):
        latent = fresh_reencode(seg, params, cfg, norm)
        rows.append((seg.end_time_index * clip.dt, latent))
    path = args.out
    with open(path, "w") as f:
        cols = ["t"]
        for tag in ("phi", "f", "a", "b"):
            cols += [f"{tag}{k}" for k in range(cfg.c)]
        f.write(",".join(cols) + "\n")
        for t, la in rows:
            vals = [repr(round(t, 9))]
            for arr in (la.phi, la.freq, la.amp, la.offset):
                vals += [repr(float(v)) for v in arr]
            f.write(",".join(vals) + "\n")
    return {"command": "encode", "status": "ok", "windows": len(rows),
            "channels": cfg.c, "outputs": [path]}


def _cmd_decode(args) -> dict:
    params, cfg, norm = _load_model(args.ckpt)
    clip = load_clip(args.clip)
    _check_window(clip, cfg)
    n = clip.states.shape[1]
    out = np.empty_like(clip.states)
    for seg in motiondata.segments(clip, cfg.window):
        latent = fresh_reencode(seg, params, cfg, norm)
        if seg.end_time_index == cfg.window - 1:
            rec_seg = decode(latent, params, cfg)
            out[:, :cfg.window] = motiondata.invert_normalization(
                norm, rec_seg.values)
        else:
            out[:, seg.end_time_index] = decode_frame(latent, params, cfg, norm)
    rec = MotionClip(name=clip.name + ".decoded", states=out, dt=clip.dt,
                     base_motion_id=clip.base_motion_id,
                     freq_factor=clip.freq_factor,
                     with_velocities=clip.with_velocities)
    if args.out.endswith(".csv"):
        export_clip_csv(rec, args.out)
    else:
        save_clip(rec, args.out)
    err = float(np.mean(np.abs(out - clip.states)))
    return {"command": "decode", "status": "ok", "frames": n,
            "mean_abs_err": err, "outputs": [args.out]}


def _cmd_play(args) -> dict:
    params, cfg, norm = _load_model(args.ckpt)
    _, clips = load_corpus(args.manifest)
    session = PlaybackSession(params, cfg, norm, clips)
    script = []
    if args.motion is not None:
        script.append({"type": "play", "motion": args.motion,
                       "mode": args.mode, "at_tick": 0})
    if args.script:
        with open(args.script) as f:
            for line in f:
                line = line.strip()
                if line:
                    script.append(json.loads(line))
    messages = run_script(session, args.ticks, script)
    n_frames = sum(1 for m in messages if m.get("type") == "frame")
    with open(args.out, "w") as f:
        for m in messages:
            f.write(json.dumps(m) + "\n")
    return {"command": "play", "status": "ok", "ticks": args.ticks,
            "frames": n_frames, "messages": len(messages),
            "outputs": [args.out]}


def _cmd_eval(args) -> dict:
    from . import evalsuite
    manifest, clips = load_corpus(args.manifest)
    model0 = _load_model(args.ckpt0)
    model100 = _load_model(args.ckpt100)
    truth = None
    if manifest.generator is not None:
        truth = motiondata.corpus_bumps(**manifest.generator)
    if args.mae:
        report = evalsuite.run_mae_only(model0, model100, clips,
                                        args.out, bump_truth=truth)
    else:
        report = evalsuite.run_all(model0, model100, clips,
                                   args.out, bump_truth=truth)
    summary = {"command": "eval", "status": "ok",
               "outputs": report["outputs"]}
    for key, val in report.items():
        if key != "outputs":
            summary[key] = val
    return summary


def _cmd_serve(args) -> Optional[dict]:
    params, cfg, norm = _load_model(args.ckpt)
    _, clips = load_corpus(args.manifest)
    service = PlaybackService(params, cfg, norm, clips,
                              host=args.host, port=args.port)
    print(json.dumps({"command": "serve", "status": "listening",
                      "host": service.host, "port": service.port}))
    sys.stdout.flush()
    service.serve_forever()
    return None


if __name__ == "__main__":
    sys.exit(main())
