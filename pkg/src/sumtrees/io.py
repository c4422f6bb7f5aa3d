"""Plain-text artifacts: posterior-draw files, run manifests and trace CSVs.

Every float is written with 17 significant digits, so reading a file back
reproduces the in-memory values exactly and equal runs give equal bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import ScalingRecord
from .model import PosteriorModel
from .priors import MOVES, Hyperparams
from .tree import PackedForest, Tree

__all__ = [
    "DrawFileError",
    "FORMAT_VERSION",
    "write_draws",
    "read_draws",
    "write_manifest",
    "read_manifest",
    "write_trace",
]

FORMAT_VERSION = 1
_MAGIC = "sumtrees-draws"


class DrawFileError(ValueError):
    """A draw file is corrupt, truncated or of an unknown version."""


def _f(x) -> str:
    return "none" if x is None else f"{float(x):.17g}"


def _floats(values) -> str:
    return " ".join(_f(v) for v in values)


def write_draws(path, model: PosteriorModel) -> None:
    hp = model.hp
    lines = [
        f"{_MAGIC} {FORMAT_VERSION}",
        f"n {model.n}",
        f"p {model.p}",
        f"m {model.m}",
        f"binary {int(model.binary)}",
        f"seed {model.seed}",
    ]
    for key, value in hp.as_dict().items():
        if key == "move_probs":
            lines.append(f"hp.{key} {_floats(value)}")
        elif key == "m":
            lines.append(f"hp.{key} {value}")
        else:
            lines.append(f"hp.{key} {_f(value)}")
    if model.scaling is None:
        lines.append("scale none")
    else:
        lines.append(f"scale {_f(model.scaling.y_min)} {_f(model.scaling.y_max)}")
    lines += [
        f"h.kind {model.h_kind}",
        f"h.intercept {int(model.h_intercept)}",
        f"x_names {json.dumps(model.x_names)}",
        f"w_names {json.dumps(model.w_names)}",
        f"group_labels {json.dumps(model.group_labels)}",
    ]
    for k in MOVES:
        lines.append(f"moves {k} {model.proposed.get(k, 0)} {model.accepted.get(k, 0)}")
    lines.append(f"ndraws {model.n_draws}")
    for d, forest in enumerate(model.forests):
        lines.append(
            f"draw {d} iter {int(model.kept_iters[d])} sigma2 {_f(model.sigma2[d])} "
            f"offset {_f(model.offset[d])}"
        )
        theta = [] if model.theta is None else model.theta[d]
        lines.append(f"theta {len(theta)} {_floats(theta)}".rstrip())
        lines.extend(forest.to_records())
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Lines:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, what: str) -> list[str]:
        if self.pos >= len(self.lines):
            raise DrawFileError(f"record count mismatch: file ended while reading {what}")
        fields = self.lines[self.pos].split(" ")
        self.pos += 1
        return fields

    def keyed(self, key: str) -> str:
        fields = self.next(key)
        if fields[0] != key:
            raise DrawFileError(f"line {self.pos}: expected {key!r}, found {fields[0]!r}")
        return " ".join(fields[1:])


def _opt_float(s: str):
    return None if s == "none" else float(s)


def read_draws(path) -> PosteriorModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"draw file not found: {path}")
    src = _Lines(path.read_text(encoding="utf-8"))
    head = src.next("header")
    if len(head) != 2 or head[0] != _MAGIC:
        raise DrawFileError(f"{path}: not a draw file")
    if head[1] != str(FORMAT_VERSION):
        raise DrawFileError(f"{path}: unsupported draw file version {head[1]}")
    try:
        n = int(src.keyed("n"))
        p = int(src.keyed("p"))
        m = int(src.keyed("m"))
        binary = bool(int(src.keyed("binary")))
        seed = int(src.keyed("seed"))
        hp_fields = {}
        for key in Hyperparams.__dataclass_fields__:
            raw = src.keyed(f"hp.{key}")
            if key == "move_probs":
                hp_fields[key] = tuple(float(v) for v in raw.split())
            elif key == "m":
                hp_fields[key] = int(raw)
            else:
                hp_fields[key] = _opt_float(raw)
        hp = Hyperparams(**hp_fields)
        scale = src.keyed("scale").split()
        scaling = None if scale == ["none"] else ScalingRecord(float(scale[0]), float(scale[1]))
        h_kind = src.keyed("h.kind")
        h_intercept = bool(int(src.keyed("h.intercept")))
        x_names = json.loads(src.keyed("x_names"))
        w_names = json.loads(src.keyed("w_names"))
        group_labels = json.loads(src.keyed("group_labels"))
        proposed, accepted = {}, {}
        for k in MOVES:
            fields = src.keyed("moves").split()
            if fields[0] != k:
                raise DrawFileError(f"line {src.pos}: expected counts for {k}")
            proposed[k], accepted[k] = int(fields[1]), int(fields[2])
        ndraws = int(src.keyed("ndraws"))
        forests, sigma2, offset, iters, thetas = [], [], [], [], []
        for d in range(ndraws):
            fields = src.keyed("draw").split()
            if int(fields[0]) != d:
                raise DrawFileError(f"line {src.pos}: draws out of order")
            iters.append(int(fields[2]))
            sigma2.append(float(fields[4]))
            offset.append(float(fields[6]))
            tfields = src.keyed("theta").split()
            k = int(tfields[0])
            if len(tfields) != k + 1:
                raise DrawFileError(f"line {src.pos}: theta length mismatch")
            thetas.append([float(v) for v in tfields[1:]])
            trees = []
            for _ in range(m):
                size = int(src.keyed("tree"))
                recs = [" ".join(src.next("tree records")) for _ in range(size)]
                trees.append(Tree.from_records(recs))
            forests.append(PackedForest(trees))
        if src.next("end marker") != ["end"]:
            raise DrawFileError(f"{path}: record count mismatch: expected end after {ndraws} draws")
    except DrawFileError:
        raise
    except (ValueError, IndexError, json.JSONDecodeError) as exc:
        raise DrawFileError(f"{path}: line {src.pos}: {exc}") from None
    theta = np.asarray(thetas) if thetas and len(thetas[0]) else None
    return PosteriorModel(
        forests=forests,
        sigma2=np.asarray(sigma2),
        hp=hp,
        binary=binary,
        scaling=scaling,
        seed=seed,
        n=n,
        p=p,
        h_kind=h_kind,
        h_intercept=h_intercept,
        theta=theta,
        offset=np.asarray(offset),
        kept_iters=np.asarray(iters, dtype=np.int64),
        x_names=x_names,
        w_names=w_names,
        group_labels=group_labels,
        proposed=proposed,
        accepted=accepted,
    )


def write_manifest(path, entries: dict) -> None:
    """Flat ``key=value`` lines in insertion order."""
    lines = []
    for key, value in entries.items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise ValueError(f"manifest entry {key!r} cannot be written on one line")
        lines.append(f"{key}={text}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    """Parse a ``key=value`` file; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_trace(path, sigma2_trace, burn_in: int) -> None:
    lines = ["iteration,sigma2,kept_phase"]
    for i, s in enumerate(np.asarray(sigma2_trace, dtype=float)):
        lines.append(f"{i + 1},{s:.17g},{'sample' if i >= burn_in else 'burn_in'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
