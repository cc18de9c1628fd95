"""Command-line driver.

Settings come from (lowest to highest precedence) built-in defaults, a named
preset, a flat ``key = value`` config file and command-line flags.  Every
config key has exactly one long flag: ``n_t`` <-> ``--n-t`` and so on.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import harness, quantizer
from .beamformer import Modulation
from .config import PRESETS, SimConfig
from .core import PartialFeedbackError
from .estimator import draw_session_inputs, run_session
from .feedback import MessageKind, encode_message


class ConfigError(PartialFeedbackError, ValueError):
    pass


def parse_range(text: str) -> tuple[float, ...]:
    """``lo:step:hi`` (inclusive) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be lo:step:hi, got {text!r}")
        lo, step, hi = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad range {text!r}")
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return tuple(round(lo + i * step, 12) for i in range(n))
    return tuple(float(v) for v in text.split(",") if v.strip())


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ConfigError(f"expected a positive integer, got {text!r}")
    return v


@dataclass(frozen=True)
class Key:
    name: str
    parse: object
    help: str
    path: str | None = None  # "in" for inputs, "out" for outputs


KEYS = [
    Key("preset", str, f"named preset: {', '.join(PRESETS)}"),
    Key("n_t", _positive_int, "transmit antennas"),
    Key("n_r", _positive_int, "receive antennas (sessions/convergence only)"),
    Key("modulation", str, "bpsk or qpsk"),
    Key("symbol_power", float, "symbol power P"),
    Key("zeta", parse_range, "error thresholds, comma list"),
    Key("tnr_db", parse_range, "TNR grid in dB, lo:step:hi or comma list"),
    Key("trials", _positive_int, "channel realizations per TNR point"),
    Key("max_iters", _positive_int, "iteration cap per session"),
    Key("bits", _positive_int, "quantizer bits per step index"),
    Key("seed", int, "master seed"),
    Key("interrupt", parse_bool, "pause data during estimation (true/false)"),
    Key("init", str, "initial estimate: zero or previous"),
    Key("block_symbols", _positive_int, "data symbols per realization and TNR point"),
    Key("training_length", int, "training vectors per session (0: 64*n_t)"),
    Key("training", str, "training sequence: pn or gaussian"),
    Key("feedback", str, "ideal or trained (3-bit Lloyd codebooks from pilot sessions)"),
    Key("pilot_sessions", _positive_int, "sessions used to train codebooks"),
    Key("sessions", _positive_int, "sessions for histogram/convergence"),
    Key("bins", _positive_int, "histogram bins"),
    Key("tol", float, "Lloyd relative distortion tolerance"),
    Key("max_rounds", _positive_int, "Lloyd round cap"),
    Key("threads", _positive_int, "worker threads (results do not depend on it)"),
    Key("codebook", str, "codebook file to use instead of training", "in"),
    Key("samples", str, "design from a file of step sizes, one per line", "in"),
    Key("out", str, "output path, '-' for stdout", "out"),
]
KEY_MAP = {k.name: k for k in KEYS}

DEFAULTS = {
    "feedback": "trained",
    "pilot_sessions": 4000,
    "sessions": 1000,
    "bins": 101,
    "tol": 1e-8,
    "max_rounds": 500,
    "threads": os.cpu_count() or 1,
    "out": "-",
}


def read_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEY_MAP:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEY_MAP[key].parse(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, preset, config file and flags into one settings dict."""
    settings = dict(DEFAULTS)
    file_values = read_config_file(args.config) if args.config else {}
    flag_values = {k.name: getattr(args, k.name) for k in KEYS if getattr(args, k.name) is not None}
    preset = flag_values.get("preset", file_values.get("preset"))
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    settings["preset"] = preset
    settings.update(file_values)
    settings.update(flag_values)
    return settings


def build_config(s: dict) -> SimConfig:
    base = PRESETS[s["preset"]] if s.get("preset") else SimConfig()
    mapping = {
        "n_t": "n_t",
        "n_r": "n_r",
        "zeta": "zeta_list",
        "tnr_db": "tnr_grid_db",
        "trials": "trials_per_point",
        "max_iters": "max_iters",
        "bits": "quantizer_bits",
        "seed": "master_seed",
        "interrupt": "interrupt_mode",
        "init": "init_mode",
        "block_symbols": "block_symbols",
        "training_length": "training_length",
        "training": "training_kind",
    }
    changes = {field: s[key] for key, field in mapping.items() if key in s}
    if "modulation" in s or "symbol_power" in s:
        changes["modulation"] = Modulation(
            s.get("modulation", base.modulation.scheme.value).lower(),
            s.get("symbol_power", base.modulation.symbol_power),
        )
    if s.get("feedback") not in ("ideal", "trained"):
        raise ConfigError("feedback must be 'ideal' or 'trained'")
    return base.with_(**changes)


def validate_paths(s: dict) -> None:
    for key in KEYS:
        val = s.get(key.name)
        if key.path is None or val is None or val == "-":
            continue
        p = Path(val)
        if key.path == "in" and not p.is_file():
            raise ConfigError(f"{key.name}: no such file: {val}")
        if key.path == "out":
            parent = p.parent if str(p.parent) else Path(".")
            if not parent.is_dir():
                raise ConfigError(f"{key.name}: directory does not exist: {parent}")
            if not os.access(parent, os.W_OK):
                raise ConfigError(f"{key.name}: directory is not writable: {parent}")


def write_output(path: str, text: str) -> None:
    """Write ``text`` atomically (temp file + rename), or to stdout for '-'."""
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _codebooks(s: dict, cfg: SimConfig, zetas):
    """Codebook(s) for the run: a file, per-threshold training, or None."""
    if s.get("codebook"):
        cb = quantizer.load(s["codebook"])
        if cb.bits != cfg.quantizer_bits:
            raise ConfigError(f"codebook has {cb.bits} bits but bits = {cfg.quantizer_bits}")
        return cb
    if s["feedback"] == "ideal":
        return None
    return {
        z: harness.train_codebook(cfg, z, s["pilot_sessions"], s["tol"], s["max_rounds"]) for z in zetas
    }


# --------------------------------------------------------------------------
# commands


def cmd_design_quantizer(s: dict, cfg: SimConfig) -> str:
    if s.get("samples"):
        samples = np.loadtxt(s["samples"], dtype=np.float64, ndmin=1)
        cb = quantizer.design_codebook(samples, cfg.quantizer_bits, s["tol"], s["max_rounds"])
    else:
        if not cfg.zeta_list:
            raise ConfigError("zeta list is empty")
        cb = harness.train_codebook(cfg, cfg.zeta_list[0], s["pilot_sessions"], s["tol"], s["max_rounds"])
    info(f"codebook: {cb.bits} bits, {cb.meta.sample_count} samples, distortion {cb.meta.distortion:.6g}")
    return quantizer.dumps(cb)


def cmd_trace_session(s: dict, cfg: SimConfig) -> str:
    if cfg.n_r != 1:
        raise ConfigError("trace-session supports n_r = 1")
    if not cfg.zeta_list:
        raise ConfigError("zeta list is empty")
    zeta = cfg.zeta_list[0]
    cb = _codebooks(s, cfg, [zeta])
    if isinstance(cb, dict):
        cb = cb[zeta]
    h, h0, train = draw_session_inputs(cfg, 0, 1)
    trace = run_session(h[0, 0], h0[0, 0], train[0], cb, zeta, cfg.max_iters)
    bits = cfg.quantizer_bits

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "k", "mu_opt", "mu_sent", "err_sq", "index", "frame"])
    steps = iter(trace.records)
    for msg in trace.messages:
        frame = encode_message(msg, bits).hex() if (msg.kind != MessageKind.STEP or msg.indices) else ""
        if msg.kind == MessageKind.START:
            w.writerow(["start", 0, "", "", repr(trace.initial_err_sq), "", frame])
        elif msg.kind == MessageKind.STEP:
            r = next(steps)
            idx = "" if r.index is None else r.index
            w.writerow(["step", r.k, repr(r.mu_opt), repr(r.mu_sent), repr(r.err_sq), idx, frame])
        else:
            w.writerow(["end", msg.iteration, "", "", repr(float(trace.err_sq[-1])), "", frame])
    info(f"session: n = {trace.n}, converged = {trace.converged}")
    return buf.getvalue()


def cmd_ber_sweep(s: dict, cfg: SimConfig) -> str:
    cb = _codebooks(s, cfg, cfg.zeta_list) if cfg.zeta_list else None

    def progress(done, total):
        info(f"ber-sweep: block {done}/{total}")

    curve = harness.run_ber_sweep(cfg, cb, threads=s["threads"], progress=progress)
    return curve.to_csv()


def cmd_histogram(s: dict, cfg: SimConfig) -> str:
    hist = harness.run_histogram(cfg, s["sessions"], s["bins"])
    info(f"histogram: {hist.samples.size} step sizes, mean {hist.samples.mean():.4g}")
    return hist.to_csv()


def cmd_convergence(s: dict, cfg: SimConfig) -> str:
    cb = _codebooks(s, cfg, cfg.zeta_list)
    stats = harness.convergence_stats(cfg, cb, s["sessions"])
    return harness.convergence_csv(stats)


COMMANDS = {
    "design-quantizer": (cmd_design_quantizer, "train a Lloyd codebook for the step sizes"),
    "trace-session": (cmd_trace_session, "trace one seeded estimation session"),
    "ber-sweep": (cmd_ber_sweep, "BER versus TNR for OBS and SOBS"),
    "histogram": (cmd_histogram, "histogram of ideal-feedback step sizes"),
    "convergence": (cmd_convergence, "session length and success statistics"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partialfb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value config file")
        for key in KEYS:
            p.add_argument("--" + key.name.replace("_", "-"), dest=key.name, type=key.parse, help=key.help)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve(args)
        cfg = build_config(settings)
        validate_paths(settings)
        func = COMMANDS[args.command][0]
        text = func(settings, cfg)
        write_output(settings["out"], text)
    except (PartialFeedbackError, OSError, ValueError, KeyError) as exc:
        print(f"partialfb: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
