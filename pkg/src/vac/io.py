"""Plain-text import/export for MDPs and trajectories.

MDP files::

    # vac-mdp 1
    n_states 3
    n_actions 2
    gamma 0.9
    transitions            (n_actions * n_states rows, one row of P^a per line)
    ...
    rewards                (n_states rows of n_actions values)
    ...
    geometry 3             (optional: grid shape, then one `move` line per action)
    move 1
    move -1

Trajectory files are CSV with columns t,s,a,r after `#` header lines that
carry the MDP digest, seed and behavior policy.
"""
from __future__ import annotations

import csv
import io as _io
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .mdp import FiniteMdp, Geometry
from .model_free import Trajectory

MDP_MAGIC = "# vac-mdp 1"
TRAJ_MAGIC = "# vac-trajectory 1"


def _fmt(x) -> str:
    return repr(float(x))


def dumps_mdp(mdp: FiniteMdp) -> str:
    lines = [MDP_MAGIC, f"n_states {mdp.n_states}", f"n_actions {mdp.n_actions}", f"gamma {_fmt(mdp.gamma)}",
             "transitions"]
    for a in range(mdp.n_actions):
        lines += [" ".join(_fmt(x) for x in row) for row in mdp.transitions[a]]
    lines.append("rewards")
    lines += [" ".join(_fmt(x) for x in row) for row in mdp.rewards]
    if mdp.geometry is not None:
        lines.append("geometry " + " ".join(str(n) for n in mdp.geometry.shape))
        lines += ["move " + " ".join(str(int(x)) for x in mv) for mv in mdp.geometry.moves]
    return "\n".join(lines) + "\n"


def _numbers(line, n, what):
    try:
        vals = [float(x) for x in line.split()]
    except ValueError as exc:
        raise InvalidInputError(f"non-numeric entry in {what}: {line!r}") from exc
    if len(vals) != n:
        raise InvalidInputError(f"{what} row has {len(vals)} entries, expected {n}")
    return vals


def loads_mdp(text: str) -> FiniteMdp:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != MDP_MAGIC:
        raise InvalidInputError("not a vac MDP file (missing header)")
    header = {}
    pos = 1
    try:
        while lines[pos] != "transitions":
            key, value = lines[pos].split(maxsplit=1)
            header[key] = value
            pos += 1
        S, A, gamma = int(header["n_states"]), int(header["n_actions"]), float(header["gamma"])
    except (IndexError, KeyError, ValueError) as exc:
        raise InvalidInputError(f"malformed MDP header: {exc}") from exc
    pos += 1
    if len(lines) < pos + A * S + 1 + S:
        raise InvalidInputError("MDP file is truncated")
    P = np.array([_numbers(lines[pos + i], S, "transition") for i in range(A * S)]).reshape(A, S, S)
    pos += A * S
    if lines[pos] != "rewards":
        raise InvalidInputError(f"expected 'rewards', found {lines[pos]!r}")
    pos += 1
    r = np.array([_numbers(lines[pos + i], A, "reward") for i in range(S)])
    pos += S
    geometry = None
    if pos < len(lines):
        if not lines[pos].startswith("geometry"):
            raise InvalidInputError(f"unexpected line {lines[pos]!r}")
        shape = tuple(int(x) for x in lines[pos].split()[1:])
        moves = [[int(x) for x in ln.split()[1:]] for ln in lines[pos + 1:]]
        geometry = Geometry(shape, np.array(moves))
    return FiniteMdp(P, r, gamma, geometry)


def save_mdp(mdp: FiniteMdp, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path) -> FiniteMdp:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read MDP file {path}: {exc}") from exc
    return loads_mdp(text)


def dumps_trajectory(traj: Trajectory) -> str:
    buf = _io.StringIO()
    S, A = traj.behavior.shape
    buf.write(f"{TRAJ_MAGIC}\n# mdp {traj.mdp_digest}\n# seed {traj.seed}\n")
    buf.write(f"# behavior {S} {A} " + " ".join(_fmt(x) for x in traj.behavior.ravel()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "s", "a", "r"])
    for t, (s, a, r) in enumerate(zip(traj.states, traj.actions, traj.rewards)):
        w.writerow([t, int(s), int(a), _fmt(r)])
    return buf.getvalue()


def loads_trajectory(text: str) -> Trajectory:
    lines = text.splitlines()
    if not lines or lines[0] != TRAJ_MAGIC:
        raise InvalidInputError("not a vac trajectory file (missing header)")
    meta = {}
    body = []
    for ln in lines[1:]:
        if ln.startswith("#"):
            key, _, value = ln[1:].strip().partition(" ")
            meta[key] = value
        elif ln.strip():
            body.append(ln)
    try:
        parts = meta["behavior"].split()
        S, A = int(parts[0]), int(parts[1])
        behavior = np.array([float(x) for x in parts[2:]]).reshape(S, A)
        seed = int(meta["seed"])
        digest = meta.get("mdp", "")
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"malformed trajectory header: {exc}") from exc
    rows = list(csv.reader(body))
    if rows[0] != ["t", "s", "a", "r"]:
        raise InvalidInputError("trajectory columns must be t,s,a,r")
    data = rows[1:]
    try:
        t = np.array([int(x[0]) for x in data])
        s = np.array([int(x[1]) for x in data], dtype=np.int64)
        a = np.array([int(x[2]) for x in data], dtype=np.int64)
        r = np.array([float(x[3]) for x in data])
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"malformed trajectory row: {exc}") from exc
    if not np.array_equal(t, np.arange(len(t))):
        raise InvalidInputError("trajectory time index must run 0, 1, 2, ...")
    if s.min() < 0 or s.max() >= S or a.min() < 0 or a.max() >= A:
        raise InvalidInputError("state or action index out of range")
    return Trajectory(s, a, r, behavior, seed, digest)


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(dumps_trajectory(traj))


def load_trajectory(path) -> Trajectory:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read trajectory file {path}: {exc}") from exc
    return loads_trajectory(text)
