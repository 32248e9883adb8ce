"""Scenario documents (JSON) and their validation.

Every section is optional except ``frame``; unknown keys are rejected with
the offending field path and, when it can be located, its line number.
"""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ScenarioError
from .lattice import FrameSpec, MaterialLaw

MODES = ("full", "pod", "localglobal", "adaptive")

# section -> {key: (type check, default)}
_NUM = (int, float)
SCHEMA = {
    "frame": {
        "layout": (str, "tower"),
        "extents": (list, [8, 8, 11]),
        "origin": (list, [4.0, 4.0, 0.0]),
        "bracing": (bool, True),
        "deck_layers": (int, 2),
        "pillars": (list, [[4, 4], [11, 4], [4, 11], [11, 11]]),
        "pillar_width": (int, 1),
        "load_box": (list, [[7, 9], [8, 10], [11, 11]]),
        "load_direction": (list, [0.0, 0.0, -1.0]),
    },
    "material": {
        "alpha": (_NUM, math.sqrt(2.0)),
        "beta": (_NUM, 0.5),
        "young": (_NUM, 1.0),
        "section": (_NUM, 1.0),
        "residual_stiffness": (_NUM, 1e-6),
        "damage": (bool, True),
    },
    "control": {
        "delta_d_max": (_NUM, 1.0 / 30.0),
        "n_increments": (int, 30),
        "newton_tol": (_NUM, 1e-8),
        "newton_max_iters": (int, 30),
        "tangent": (str, "consistent"),
    },
    "pod": {
        # "self", a path to an LRMAT1 file, or an object of frame overrides
        "snapshot": ((str, dict, type(None)), None),
        "n_c": ((int, type(None)), None),
        "eps": ((float, type(None)), None),
        "snapshot_kind": (str, "increment"),
    },
    "split": {
        "rho_s": (_NUM, 2.5),
        "k_dam": (_NUM, 0.5),
        "k_locglo": (_NUM, 0.1),
    },
    "policy": {
        "eta_global": (_NUM, 1e-1),
        "eta_reduced": (_NUM, 1e-3),
        "krylov_tol_correction": (_NUM, 1e-1),
        "max_corrections_per_increment": (int, 5),
    },
    "solver": {
        "cg_tol": (_NUM, 1e-8),
        "precond": (str, "diag"),
        "compare_unaugmented": (bool, False),
        "enrich": (bool, True),
    },
}
TOP_LEVEL = {"name": str, "mode": str, **{k: dict for k in SCHEMA}}


@dataclass
class Scenario:
    name: str
    mode: str
    sections: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, section):
        return self.sections[section]

    def frame_spec(self, overrides=None) -> FrameSpec:
        fr = dict(self["frame"])
        fr.update(overrides or {})
        mat = self["material"]
        return FrameSpec(
            layout=fr["layout"], extents=tuple(fr["extents"]), origin=tuple(fr["origin"]),
            bracing=fr["bracing"], deck_layers=fr["deck_layers"],
            pillars=tuple(tuple(p) for p in fr["pillars"]), pillar_width=fr["pillar_width"],
            load_box=tuple(tuple(b) for b in fr["load_box"]),
            load_direction=tuple(fr["load_direction"]),
            material=MaterialLaw(mat["alpha"], mat["beta"], mat["residual_stiffness"], mat["damage"]),
            section=mat["section"], young=mat["young"])

    def to_dict(self) -> dict:
        return {"name": self.name, "mode": self.mode, **copy.deepcopy(self.sections)}


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(msg, text=None, key=None):
    line = _line_of(text, key) if key else None
    raise ScenarioError(f"line {line}: {msg}" if line else msg)


def _is_number(v):
    return isinstance(v, _NUM) and not isinstance(v, bool)


def _check_type(value, types, path, text, key):
    if types is _NUM:
        ok = _is_number(value)
    elif types == (float, type(None)):
        ok = value is None or _is_number(value)
    elif types is int or (isinstance(types, tuple) and int in types):
        ok = isinstance(value, types) and not isinstance(value, bool)
    else:
        ok = isinstance(value, types)
    if not ok:
        _fail(f"{path}: unexpected value {value!r}", text, key)


def parse_scenario(doc, text=None, base_dir=None) -> Scenario:
    """Validate a decoded scenario and fill defaults."""
    if not isinstance(doc, dict):
        _fail("scenario must be a JSON object")
    for key in doc:
        if key not in TOP_LEVEL:
            _fail(f"{key}: unknown key", text, key)
    if "frame" not in doc:
        _fail("frame: missing section")
    mode = doc.get("mode", "full")
    if mode not in MODES:
        _fail(f"mode: expected one of {', '.join(MODES)}, got {mode!r}", text, "mode")
    sections = {}
    for sec, keys in SCHEMA.items():
        given = doc.get(sec, {})
        if not isinstance(given, dict):
            _fail(f"{sec}: expected an object", text, sec)
        out = {}
        for key, value in given.items():
            if key not in keys:
                _fail(f"{sec}.{key}: unknown key", text, key)
            _check_type(value, keys[key][0], f"{sec}.{key}", text, key)
            out[key] = value
        for key, (_, default) in keys.items():
            out.setdefault(key, copy.deepcopy(default))
        sections[sec] = out
    _validate(sections, mode, text)
    return Scenario(str(doc.get("name", "scenario")), mode, sections, Path(base_dir or Path.cwd()))


def _validate(s, mode, text):
    ctl = s["control"]
    if not 0 < ctl["delta_d_max"] <= 1:
        _fail("control.delta_d_max: must lie in (0, 1]", text, "delta_d_max")
    if ctl["n_increments"] < 0:
        _fail("control.n_increments: must be non-negative", text, "n_increments")
    if ctl["newton_tol"] <= 0:
        _fail("control.newton_tol: must be positive", text, "newton_tol")
    if ctl["tangent"] not in ("consistent", "secant"):
        _fail("control.tangent: expected 'consistent' or 'secant'", text, "tangent")
    if len(s["frame"]["extents"]) != 3:
        _fail("frame.extents: expected three integers", text, "extents")
    pod = s["pod"]
    if pod["n_c"] is not None and pod["eps"] is not None:
        _fail("pod: give either n_c or eps, not both", text, "eps")
    if pod["snapshot_kind"] not in ("increment", "total"):
        _fail("pod.snapshot_kind: expected 'increment' or 'total'", text, "snapshot_kind")
    if mode != "full" and pod["snapshot"] is None:
        _fail(f"pod.snapshot: required for mode {mode}", text, "pod")
    if isinstance(pod["snapshot"], dict):
        for key in pod["snapshot"]:
            if key not in SCHEMA["frame"]:
                _fail(f"pod.snapshot.{key}: unknown frame key", text, key)
    if s["solver"]["precond"] not in ("diag", "identity"):
        _fail("solver.precond: expected 'diag' or 'identity'", text, "precond")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(doc, text, path.parent)


def bundled_scenarios() -> list:
    return sorted(p.name[:-5] for p in resources.files("latred.scenarios").iterdir()
                  if p.name.endswith(".json"))


def bundled_path(name: str) -> Path:
    p = resources.files("latred.scenarios") / f"{name}.json"
    if not p.is_file():
        raise ScenarioError(f"no bundled scenario {name!r} (available: {', '.join(bundled_scenarios())})")
    return Path(str(p))
