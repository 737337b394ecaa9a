"""Affordance descriptors, oracles that produce them, and motion primitives.

An oracle answers "what kind of switch is this?" in loosely structured text.
The answer is parsed into an :class:`AffordanceDescriptor` and translated into
a set of motion primitives anchored on the element pose.

Oracle selection from the environment:

* ``SWITCH_ORACLE`` -- ``mock`` (default) or ``subprocess``
* ``SWITCH_ORACLE_MAP`` -- JSON file mapping element id to a response (mock)
* ``SWITCH_ORACLE_CMD`` -- command line of the oracle process (subprocess)
"""

from __future__ import annotations

import json
import os
import re
import shlex
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InconsistentDescriptor, MalformedResponse, OracleUnavailable, ToggleUnsupported
from .geometry import ElementPose

SWITCH_TYPES = ("push_button", "rocker", "turn_button", "toggle")
ARRANGEMENTS = ("single", "side_by_side", "stacked_vertically")
SYMBOL_HINTS = ("none", "top_bottom_push")

ROTATION = "rotation"
TRANSLATION = "translation"

WORLD_UP = np.array([0.0, 0.0, 1.0])

# canonical wording used when serialising; also recognised when parsing
_TYPE_WORDS = {"push_button": "push button", "rocker": "rocker switch",
               "turn_button": "turn button", "toggle": "toggle switch"}
_ARRANGEMENT_WORDS = {"single": "single", "side_by_side": "side-by-side",
                      "stacked_vertically": "stacked vertically"}
_SYMBOL_WORDS = {"none": "none", "top_bottom_push": "top/bot push"}

_TYPE_PATTERNS = [
    ("push_button", r"push[\s_-]*button|pushbutton"),
    ("rocker", r"rocker"),
    ("turn_button", r"turn[\s_-]*button|rotary|\bturn\b|\bknob\b"),
    ("toggle", r"toggle"),
]
_ARRANGEMENT_PATTERNS = [
    ("side_by_side", r"side[\s_-]*by[\s_-]*side|horizontal"),
    ("stacked_vertically", r"stacked|vertical(?!\s*axis)"),
]
_SYMBOL_PATTERN = r"top\s*/\s*bot(?:tom)?[\s_-]*push|top[\s_-]*bottom[\s_-]*push"
_COUNT_WORDS = {"single": 1, "one": 1, "double": 2, "two": 2, "triple": 3, "three": 3, "four": 4}


@dataclass(frozen=True)
class AffordanceDescriptor:
    switch_type: str
    button_count: int = 1
    arrangement: str = "single"
    symbol_hint: str = "none"

    def __post_init__(self):
        if self.switch_type not in SWITCH_TYPES:
            raise InconsistentDescriptor(f"unknown switch type {self.switch_type!r}")
        if self.arrangement not in ARRANGEMENTS:
            raise InconsistentDescriptor(f"unknown arrangement {self.arrangement!r}")
        if self.symbol_hint not in SYMBOL_HINTS:
            raise InconsistentDescriptor(f"unknown symbol hint {self.symbol_hint!r}")
        if not isinstance(self.button_count, int) or self.button_count < 1:
            raise InconsistentDescriptor("button_count must be a positive integer")
        if (self.button_count == 1) != (self.arrangement == "single"):
            raise InconsistentDescriptor(
                f"button_count={self.button_count} conflicts with arrangement={self.arrangement}")
        if self.symbol_hint == "top_bottom_push" and self.switch_type not in ("push_button", "rocker"):
            raise InconsistentDescriptor("top/bot push only applies to push buttons and rockers")

    @property
    def motion_type(self) -> str:
        return ROTATION if self.switch_type == "turn_button" else TRANSLATION

    def to_response(self) -> dict:
        """The oracle wire format for this descriptor."""
        return {"type": _TYPE_WORDS[self.switch_type], "count": self.button_count,
                "arrangement": _ARRANGEMENT_WORDS[self.arrangement],
                "symbols": _SYMBOL_WORDS[self.symbol_hint]}

    def serialize(self) -> str:
        return json.dumps(self.to_response(), sort_keys=True)

    def to_dict(self) -> dict:
        return {"switch_type": self.switch_type, "button_count": self.button_count,
                "arrangement": self.arrangement, "symbol_hint": self.symbol_hint}

    @classmethod
    def from_dict(cls, d: dict) -> "AffordanceDescriptor":
        return cls(d["switch_type"], int(d.get("button_count", 1)), d.get("arrangement", "single"),
                   d.get("symbol_hint", "none"))


@dataclass(frozen=True)
class MotionPrimitive:
    motion_type: str
    axis: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        if self.motion_type not in (ROTATION, TRANSLATION):
            raise ValueError(f"unknown motion type {self.motion_type!r}")
        a = np.asarray(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError("axis must be a unit vector")
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))

    def to_dict(self) -> dict:
        return {"type": self.motion_type, "axis": self.axis.tolist(), "origin": self.origin.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MotionPrimitive":
        return cls(d["type"], np.asarray(d["axis"], dtype=float), np.asarray(d["origin"], dtype=float))

    def __eq__(self, other):
        if not isinstance(other, MotionPrimitive):
            return NotImplemented
        return (self.motion_type == other.motion_type and np.array_equal(self.axis, other.axis)
                and np.array_equal(self.origin, other.origin))


@dataclass(frozen=True)
class GripperOffsets:
    dy: float = 0.03
    dz: float = 0.03

    def __post_init__(self):
        if not (self.dy > 0 and self.dz > 0):
            raise ValueError("gripper offsets must be positive")


def _first_match(text: str, patterns) -> str | None:
    hits = []
    for name, pat in patterns:
        m = re.search(pat, text)
        if m:
            hits.append((m.start(), name))
    return min(hits)[1] if hits else None


def _parse_count(value) -> int | None:
    if value is None:
        return None
    if isinstance(value, bool):
        raise MalformedResponse(f"bad button count {value!r}")
    if isinstance(value, int):
        return value
    text = str(value).strip().lower()
    if text.isdigit():
        return int(text)
    for word, n in _COUNT_WORDS.items():
        if re.search(rf"\b{word}\b", text):
            return n
    m = re.search(r"\b(\d+)\b", text)
    return int(m.group(1)) if m else None


def _descriptor_from_fields(type_text: str, count, arrangement_text: str | None,
                            symbol_text: str | None) -> AffordanceDescriptor:
    switch_type = _first_match(type_text, _TYPE_PATTERNS)
    if switch_type is None:
        raise MalformedResponse(f"unrecognised switch type in {type_text!r}")
    arrangement = None
    if arrangement_text:
        arrangement = _first_match(arrangement_text, _ARRANGEMENT_PATTERNS)
        if arrangement is None and re.search(r"\bsingle\b", arrangement_text):
            arrangement = "single"
    symbol = "top_bottom_push" if symbol_text and re.search(_SYMBOL_PATTERN, symbol_text) else "none"

    if count is None:
        count = 1 if arrangement in (None, "single") else 2
    if arrangement is None:
        arrangement = "single" if count == 1 else None
    if arrangement is None:
        raise InconsistentDescriptor(f"{count} buttons but no arrangement given")
    return AffordanceDescriptor(switch_type, count, arrangement, symbol)


def parse_affordance_response(text: str) -> AffordanceDescriptor:
    """Map an oracle answer onto the descriptor vocabulary.

    Accepts either a JSON object with ``type``/``count``/``arrangement``/
    ``symbols`` keys or free text such as ``"rocker switch, top/bot push"``.
    Matching is case-insensitive.
    """
    if not isinstance(text, str) or not text.strip():
        raise MalformedResponse("empty oracle response")
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"invalid JSON response: {exc}") from None
        if not isinstance(obj, dict) or "type" not in obj:
            raise MalformedResponse("JSON response lacks a 'type' field")
        count = _parse_count(obj.get("count"))
        arr = obj.get("arrangement")
        sym = obj.get("symbols")
        return _descriptor_from_fields(str(obj["type"]).lower(), count,
                                       str(arr).lower() if arr is not None else None,
                                       str(sym).lower() if sym is not None else None)
    low = stripped.lower()
    return _descriptor_from_fields(low, _parse_count(low), low, low)


def plane_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical unit axes within the plane orthogonal to ``normal``."""
    z = WORLD_UP - np.dot(WORLD_UP, normal) * normal
    if np.linalg.norm(z) < 1e-9:
        # plane is horizontal; fall back to world x as the "vertical" reference
        ref = np.array([1.0, 0.0, 0.0])
        z = ref - np.dot(ref, normal) * normal
    z /= np.linalg.norm(z)
    y = np.cross(normal, z)
    return y / np.linalg.norm(y), z


def _symmetric_offsets(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    if n == 2:
        return np.array([-1.0, 1.0])
    return np.arange(n) - (n - 1) / 2.0


def button_origins(desc: AffordanceDescriptor, pose: ElementPose,
                   offsets: GripperOffsets | None = None) -> list[np.ndarray]:
    """Interaction points implied by a descriptor on a given pose."""
    offsets = offsets or GripperOffsets()
    y_hat, z_hat = plane_axes(pose.normal)
    if desc.arrangement == "side_by_side":
        base = [pose.center + k * offsets.dy * y_hat for k in _symmetric_offsets(desc.button_count)]
    elif desc.arrangement == "stacked_vertically":
        base = [pose.center + k * offsets.dz * z_hat for k in _symmetric_offsets(desc.button_count)]
    else:
        base = [pose.center.copy()]
    if desc.symbol_hint == "top_bottom_push":
        return [o + s * offsets.dz * z_hat for o in base for s in (1.0, -1.0)]
    return base


def primitives_from_descriptor(desc: AffordanceDescriptor, pose: ElementPose,
                               offsets: GripperOffsets | None = None) -> list[MotionPrimitive]:
    """Translate a descriptor into the element's primitive set.

    Turn buttons rotate, push buttons and rockers translate; the motion axis
    is the interaction normal in both cases. Toggle switches move orthogonal
    to the normal and are not executable.
    """
    if desc.switch_type == "toggle":
        raise ToggleUnsupported("toggle switches are identified but cannot be operated")
    return [MotionPrimitive(desc.motion_type, pose.normal, o) for o in button_origins(desc, pose, offsets)]


class AffordanceOracle:
    """Anything that answers with raw affordance text for an element."""

    def ask(self, element_ref, image_path=None) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass


class MockOracle(AffordanceOracle):
    """Answers from a fixed table keyed by element id (string keys)."""

    def __init__(self, table: dict):
        self.table = {str(k): v for k, v in table.items()}

    @classmethod
    def from_file(cls, path) -> "MockOracle":
        return cls(json.loads(Path(path).read_text()))

    def ask(self, element_ref, image_path=None) -> str:
        key = str(element_ref)
        if key not in self.table:
            raise OracleUnavailable(f"mock oracle has no entry for {key!r}")
        v = self.table[key]
        if isinstance(v, AffordanceDescriptor):
            return v.serialize()
        if isinstance(v, dict):
            return json.dumps(v, sort_keys=True)
        return str(v)


class SubprocessOracle(AffordanceOracle):
    """Talks line-delimited JSON to a long-running external process.

    Request: ``{"id": ..., "image_path": ...}``; response: one JSON line.
    Only one request is in flight per instance.
    """

    def __init__(self, command, timeout: float = 30.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._proc = None
        self._lock = threading.Lock()

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                              text=True, bufsize=1)
            except OSError as exc:
                raise OracleUnavailable(f"cannot start oracle {self.command!r}: {exc}") from None
        return self._proc

    def ask(self, element_ref, image_path=None) -> str:
        request = {"id": str(element_ref), "image_path": None if image_path is None else str(image_path)}
        with self._lock:
            proc = self._ensure()
            try:
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise OracleUnavailable(f"oracle process failed: {exc}") from None
        if not line:
            raise OracleUnavailable("oracle process closed its output")
        return line.strip()

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=self.timeout)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


MAX_ATTEMPTS = 2


def query_affordance(oracle: AffordanceOracle, element_ref, image_path=None) -> AffordanceDescriptor:
    """Ask the oracle and parse its answer, re-asking once on a garbled reply.

    Subprocess replies must be JSON; anything else counts as malformed.
    """
    last = None
    for _ in range(MAX_ATTEMPTS):
        text = oracle.ask(element_ref, image_path)
        try:
            if isinstance(oracle, SubprocessOracle) and not text.lstrip().startswith("{"):
                raise MalformedResponse(f"non-JSON oracle line: {text[:80]!r}")
            return parse_affordance_response(text)
        except MalformedResponse as exc:
            last = exc
    raise MalformedResponse(f"no parseable answer after {MAX_ATTEMPTS} attempts: {last}")


def oracle_from_env(env=None) -> AffordanceOracle:
    env = os.environ if env is None else env
    kind = env.get("SWITCH_ORACLE", "mock").lower()
    if kind == "subprocess":
        cmd = env.get("SWITCH_ORACLE_CMD")
        if not cmd:
            raise OracleUnavailable("SWITCH_ORACLE_CMD is not set")
        return SubprocessOracle(cmd)
    if kind == "mock":
        path = env.get("SWITCH_ORACLE_MAP")
        return MockOracle.from_file(path) if path else MockOracle({})
    raise OracleUnavailable(f"unknown oracle kind {kind!r}")
