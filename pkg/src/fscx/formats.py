"""Plain-text file formats for models, families, controllers and trajectory datasets.

Model file (``.pomdp``)::

    pomdp v1
    objective reach-prob-max        # or reach-reward-max / reach-reward-min
    states 3
    actions 2
    observations 2
    initial 0
    targets 2                       # zero or more state ids
    observe 0 0 1                   # one observation id per state
    trans 0 1 2 1.0                 # s a s' p
    reward 0 1 5.0                  # s a r  (default 0)
    legal 0 1                       # s a    (default: all actions legal)

Family file (``.hmpomdp``): header ``hmpomdp v1`` plus ``members K``, the same
shared header and member-0 rows, then ``member i`` sections whose ``trans``
lines replace whole (s, a) rows of member 0 and whose ``reward`` lines replace
single entries.

Controller file (``.fsc``)::

    fsc v1
    nodes 2
    initial 0
    observations 2
    actions 3
    act n z a p                     # action function
    mem n z n' p                    # memory update
    sigma n z n' a p                # combined form (instead of act/mem)

Dataset file (``.traj``): ``dataset v1``, ``observations Z``, ``actions A``,
``count K``, optional ``meta key value`` lines, then one line per sequence:
``L z_0 a_0 z_1 a_1 ...``.

Floats are written with ``repr`` so that a write/read cycle is exact.
"""

from __future__ import annotations

import os
from collections import defaultdict

import numpy as np

from .dataset import TrajectoryDataset
from .errors import ModelFormatError, ValidationError
from .model import Fsc, HmPomdp, Objective, Pomdp

_HEADER_KEYS = ("objective", "states", "actions", "observations", "initial")


def _lines(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def _int(tok, no, what, path):
    try:
        return int(tok)
    except ValueError:
        raise ModelFormatError(f"expected integer for {what}, got {tok!r}", no, path) from None


def _float(tok, no, what, path):
    try:
        return float(tok)
    except ValueError:
        raise ModelFormatError(f"expected number for {what}, got {tok!r}", no, path) from None


def _expect_arity(fields, n, no, path):
    if len(fields) != n:
        raise ModelFormatError(f"'{fields[0]}' takes {n - 1} fields, got {len(fields) - 1}", no, path)


class _Section:
    def __init__(self):
        self.trans: list[tuple[int, int, int, float]] = []
        self.rewards: dict[tuple[int, int], float] = {}


def _parse_text(text, path=None):
    it = iter(_lines(text))
    try:
        no, first = next(it)
    except StopIteration:
        raise ModelFormatError("empty model file", None, path) from None
    kind = first[0]
    if kind not in ("pomdp", "hmpomdp") or len(first) != 2 or first[1] != "v1":
        raise ModelFormatError("first line must be 'pomdp v1' or 'hmpomdp v1'", no, path)

    header: dict = {}
    targets: list[int] | None = None
    observe: list[int] | None = None
    legal: list[tuple[int, int]] = []
    sections = [_Section()]
    declared_members = None

    for no, f in it:
        key = f[0]
        sec = sections[-1]
        if key in _HEADER_KEYS:
            _expect_arity(f, 2, no, path)
            if len(sections) > 1:
                raise ModelFormatError(f"'{key}' must appear before member sections", no, path)
            if key == "objective":
                try:
                    header[key] = Objective(f[1])
                except ValueError:
                    raise ModelFormatError(f"unknown objective {f[1]!r}", no, path) from None
            else:
                header[key] = _int(f[1], no, key, path)
        elif key == "members":
            _expect_arity(f, 2, no, path)
            if kind != "hmpomdp":
                raise ModelFormatError("'members' only allowed in hmpomdp files", no, path)
            declared_members = _int(f[1], no, "members", path)
        elif key == "targets":
            targets = [_int(t, no, "target", path) for t in f[1:]]
        elif key == "observe":
            observe = [_int(t, no, "observation", path) for t in f[1:]]
        elif key == "legal":
            _expect_arity(f, 3, no, path)
            legal.append((_int(f[1], no, "s", path), _int(f[2], no, "a", path)))
        elif key == "trans":
            _expect_arity(f, 5, no, path)
            sec.trans.append((_int(f[1], no, "s", path), _int(f[2], no, "a", path),
                              _int(f[3], no, "s'", path), _float(f[4], no, "p", path)))
        elif key == "reward":
            _expect_arity(f, 4, no, path)
            sec.rewards[(_int(f[1], no, "s", path), _int(f[2], no, "a", path))] = _float(f[3], no, "r", path)
        elif key == "member":
            _expect_arity(f, 2, no, path)
            if kind != "hmpomdp":
                raise ModelFormatError("'member' sections only allowed in hmpomdp files", no, path)
            idx = _int(f[1], no, "member index", path)
            if idx != len(sections):
                raise ModelFormatError(f"member sections must be numbered 1, 2, ...; expected {len(sections)}, got {idx}", no, path)
            sections.append(_Section())
        else:
            raise ModelFormatError(f"unknown keyword {key!r}", no, path)

    for key in _HEADER_KEYS:
        if key not in header:
            raise ModelFormatError(f"missing '{key}' line", None, path)
    if observe is None:
        raise ModelFormatError("missing 'observe' line", None, path)
    if len(observe) != header["states"]:
        raise ModelFormatError(f"'observe' lists {len(observe)} observations for {header['states']} states", None, path)
    if kind == "hmpomdp":
        if declared_members is None:
            raise ModelFormatError("missing 'members' line", None, path)
        if declared_members != len(sections):
            raise ModelFormatError(f"declared {declared_members} members, found {len(sections)}", None, path)

    def build(trans, rewards, name):
        try:
            return Pomdp.build(
                header["states"], header["actions"], observe, trans,
                rewards=rewards, targets=targets or (), objective=header["objective"],
                initial_state=header["initial"], legal=legal or None,
                num_observations=header["observations"], name=name,
            )
        except ValidationError as exc:
            where = f"{path}: " if path else ""
            raise ValidationError(f"{where}{name + ': ' if name else ''}{exc}") from None

    base_name = os.path.splitext(os.path.basename(path))[0] if path else ""
    base_rows = _group_rows(sections[0].trans)
    base = build(sections[0].trans, sections[0].rewards, base_name)
    if kind == "pomdp":
        return base
    members = [base]
    for i, sec in enumerate(sections[1:], start=1):
        rows = dict(base_rows)
        rows.update(_group_rows(sec.trans))
        trans = [(s, a, s2, p) for (s, a), entries in rows.items() for s2, p in entries]
        rewards = dict(sections[0].rewards)
        rewards.update(sec.rewards)
        members.append(build(trans, rewards, f"{base_name}[{i}]"))
    return HmPomdp(tuple(members), name=base_name)


def _group_rows(trans):
    rows = defaultdict(list)
    for s, a, s2, p in trans:
        rows[(s, a)].append((s2, p))
    return dict(rows)


def parse_model(path) -> Pomdp | HmPomdp:
    """Read a ``.pomdp`` or ``.hmpomdp`` file into a validated model."""
    with open(path) as fh:
        text = fh.read()
    return _parse_text(text, str(path))


def parse_model_text(text: str) -> Pomdp | HmPomdp:
    return _parse_text(text)


def _header_lines(m: Pomdp) -> list[str]:
    lines = [
        f"objective {m.objective.value}",
        f"states {m.num_states}",
        f"actions {m.num_actions}",
        f"observations {m.num_observations}",
        f"initial {m.initial_state}",
        "targets" + "".join(f" {int(g)}" for g in m.targets),
        "observe" + "".join(f" {int(z)}" for z in m.observation),
    ]
    if not m.legal.all():
        lines += [f"legal {s} {a}" for s, a in np.argwhere(m.legal)]
    return lines


def _row_lines(m: Pomdp, rows=None) -> list[str]:
    out = []
    A = m.num_actions
    flat_rows = range(m.num_states * A) if rows is None else rows
    for flat in flat_rows:
        s, a = divmod(int(flat), A)
        succ, prob = m.row(s, a)
        out += [f"trans {s} {a} {int(s2)} {float(p)!r}" for s2, p in zip(succ, prob)]
    return out


def _reward_lines(m: Pomdp, mask=None) -> list[str]:
    nz = m.reward != 0 if mask is None else mask
    return [f"reward {s} {a} {float(m.reward[s, a])!r}" for s, a in np.argwhere(nz)]


def serialize_model(model: Pomdp | HmPomdp) -> str:
    if isinstance(model, Pomdp):
        lines = ["pomdp v1", *_header_lines(model), *_row_lines(model), *_reward_lines(model)]
        return "\n".join(lines) + "\n"
    base = model.members[0]
    lines = ["hmpomdp v1", f"members {model.num_members}", *_header_lines(base),
             *_row_lines(base), *_reward_lines(base)]
    A = base.num_actions
    for i, m in enumerate(model.members[1:], start=1):
        lines.append(f"member {i}")
        changed = []
        for flat in range(base.num_states * A):
            s, a = divmod(flat, A)
            b_succ, b_prob = base.row(s, a)
            m_succ, m_prob = m.row(s, a)
            if not (np.array_equal(b_succ, m_succ) and np.array_equal(b_prob, m_prob)):
                changed.append(flat)
        lines += _row_lines(m, changed)
        lines += _reward_lines(m, m.reward != base.reward)
    return "\n".join(lines) + "\n"


def write_model(model: Pomdp | HmPomdp, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_model(model))


# -- controllers -------------------------------------------------------------


def serialize_fsc(fsc: Fsc) -> str:
    N, Z, A = fsc.num_nodes, fsc.num_observations, fsc.num_actions
    lines = ["fsc v1", f"nodes {N}", f"initial {fsc.initial_node}", f"observations {Z}", f"actions {A}"]
    if fsc.combined:
        for n, z, n2, a in np.argwhere(fsc.sigma > 0):
            lines.append(f"sigma {n} {z} {n2} {a} {float(fsc.sigma[n, z, n2, a])!r}")
    else:
        for n, z, a in np.argwhere(fsc.action_fn > 0):
            lines.append(f"act {n} {z} {a} {float(fsc.action_fn[n, z, a])!r}")
        for n, z, n2 in np.argwhere(fsc.memory_fn > 0):
            lines.append(f"mem {n} {z} {n2} {float(fsc.memory_fn[n, z, n2])!r}")
    return "\n".join(lines) + "\n"


def write_fsc(fsc: Fsc, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_fsc(fsc))


def parse_fsc_text(text: str, path=None) -> Fsc:
    it = iter(_lines(text))
    try:
        no, first = next(it)
    except StopIteration:
        raise ModelFormatError("empty controller file", None, path) from None
    if first != ["fsc", "v1"]:
        raise ModelFormatError("first line must be 'fsc v1'", no, path)
    header = {}
    acts, mems, sig = [], [], []
    for no, f in it:
        key = f[0]
        if key in ("nodes", "initial", "observations", "actions"):
            _expect_arity(f, 2, no, path)
            header[key] = _int(f[1], no, key, path)
        elif key == "act":
            _expect_arity(f, 5, no, path)
            acts.append((no, *(_int(t, no, "index", path) for t in f[1:4]), _float(f[4], no, "p", path)))
        elif key == "mem":
            _expect_arity(f, 5, no, path)
            mems.append((no, *(_int(t, no, "index", path) for t in f[1:4]), _float(f[4], no, "p", path)))
        elif key == "sigma":
            _expect_arity(f, 6, no, path)
            sig.append((no, *(_int(t, no, "index", path) for t in f[1:5]), _float(f[5], no, "p", path)))
        else:
            raise ModelFormatError(f"unknown keyword {key!r}", no, path)
    for key in ("nodes", "initial", "observations", "actions"):
        if key not in header:
            raise ModelFormatError(f"missing '{key}' line", None, path)
    N, Z, A = header["nodes"], header["observations"], header["actions"]
    if sig and (acts or mems):
        raise ModelFormatError("controller mixes combined 'sigma' lines with 'act'/'mem' lines", None, path)

    def put(arr, entry, bounds):
        no, *idx, p = entry
        if any(not 0 <= i < b for i, b in zip(idx, bounds)):
            raise ModelFormatError(f"index out of range in {tuple(idx)}", no, path)
        arr[tuple(idx)] += p

    try:
        if sig:
            sigma = np.zeros((N, Z, N, A))
            for e in sig:
                put(sigma, e, (N, Z, N, A))
            return Fsc.from_sigma(sigma, header["initial"])
        d = np.zeros((N, Z, A))
        m = np.zeros((N, Z, N))
        for e in acts:
            put(d, e, (N, Z, A))
        for e in mems:
            put(m, e, (N, Z, N))
        return Fsc(d, m, header["initial"])
    except ValidationError as exc:
        where = f"{path}: " if path else ""
        raise ValidationError(f"{where}{exc}") from None


def parse_fsc(path) -> Fsc:
    with open(path) as fh:
        return parse_fsc_text(fh.read(), str(path))


# -- datasets ----------------------------------------------------------------


def serialize_dataset(data: TrajectoryDataset) -> str:
    lines = ["dataset v1", f"observations {data.num_observations}", f"actions {data.num_actions}",
             f"count {len(data.sequences)}"]
    for k, v in sorted(data.metadata.items()):
        lines.append(f"meta {k} {v}")
    for seq in data.sequences:
        lines.append(" ".join([str(len(seq)), *(f"{int(z)} {int(a)}" for z, a in seq)]))
    return "\n".join(lines) + "\n"


def write_dataset(data: TrajectoryDataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_dataset(data))


def parse_dataset(path) -> TrajectoryDataset:
    with open(path) as fh:
        text = fh.read()
    path = str(path)
    it = iter(_lines(text))
    no, first = next(it, (None, None))
    if first != ["dataset", "v1"]:
        raise ModelFormatError("first line must be 'dataset v1'", no, path)
    header, meta, seqs = {}, {}, []
    for no, f in it:
        if f[0] in ("observations", "actions", "count"):
            _expect_arity(f, 2, no, path)
            header[f[0]] = _int(f[1], no, f[0], path)
        elif f[0] == "meta":
            if len(f) < 3:
                raise ModelFormatError("'meta' takes a key and a value", no, path)
            meta[f[1]] = " ".join(f[2:])
        else:
            length = _int(f[0], no, "sequence length", path)
            if len(f) != 1 + 2 * length:
                raise ModelFormatError(f"sequence declares {length} pairs but has {(len(f) - 1) / 2:g}", no, path)
            vals = np.array([_int(t, no, "id", path) for t in f[1:]], dtype=np.int64).reshape(length, 2)
            seqs.append(vals)
    for key in ("observations", "actions", "count"):
        if key not in header:
            raise ModelFormatError(f"missing '{key}' line", None, path)
    if header["count"] != len(seqs):
        raise ModelFormatError(f"declared {header['count']} sequences, found {len(seqs)}", None, path)
    try:
        return TrajectoryDataset(seqs, header["observations"], header["actions"], meta)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
