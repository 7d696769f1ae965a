"""Processing-unit substrate: descriptors, the kind catalog, unit instances
with 32-bit register maps, and bounded ready/valid stream links.

A link is a bounded FIFO of items.  A producer whose items do not fit is
stalled (valid without ready), a consumer facing an empty link is stalled
too, and nothing is ever dropped or overwritten.  Items are queued as whole
windows, so a window popped intact is handed on without a copy.  A unit ``step`` is atomic: either
it consumes and produces whole per-step windows on every port, or it has no
observable effect.
"""

from __future__ import annotations

import enum
import itertools
import json
import threading
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateKind,
    InvalidDescriptor,
    ItemTypeMismatch,
    NoSuchPort,
    ParamOutOfRange,
    PortOccupied,
    UnknownKind,
    UnknownOffset,
    UnknownRegister,
    ValueOutOfRange,
    WouldBlock,
)

ITEM_DTYPES: dict[str, Any] = {
    "bit": np.uint8,
    "byte": np.uint8,
    "sample": np.complex128,
}
DEFAULT_LINK_CAPACITY = 1024
DEFAULT_CLOCK_HZ = 3.0e8
REGISTER_MAX = 0xFFFFFFFF


@dataclass(frozen=True)
class RegisterSpec:
    offset: int
    name: str
    min: int
    max: int
    default: int
    # extra domain rule beyond [min, max]; raises a ValueOutOfRange subclass
    check: Callable[[int], None] | None = field(default=None, compare=False, repr=False)

    def validate(self, value: int, error=ValueOutOfRange) -> int:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise error(f"register {self.name} takes integers, got {value!r}")
        value = int(value)
        if not self.min <= value <= self.max:
            raise error(f"{self.name}={value} outside [{self.min}, {self.max}]")
        if self.check is not None:
            self.check(value)
        return value


@dataclass(frozen=True)
class UnitDescriptor:
    kind: str
    n_inputs: int
    n_outputs: int
    samples_in_per_step: int
    samples_out_per_step: int
    throughput_sps: float
    latency_cycles: int
    cost_logic_cells: int
    cost_dsp_slices: int
    register_map: tuple[RegisterSpec, ...] = ()
    input_type: str = "sample"
    output_type: str = "sample"
    cycles_per_step: int | None = None
    partial_bitstream_bytes: int = 0
    description: str = ""

    @property
    def step_cycles(self) -> int:
        # one output item per cycle unless stated otherwise
        return self.cycles_per_step if self.cycles_per_step else max(self.samples_out_per_step, 1)

    def register(self, key: int | str) -> RegisterSpec:
        for r in self.register_map:
            if r.offset == key or r.name == key:
                return r
        if isinstance(key, str):
            raise UnknownRegister(f"{self.kind} has no register named {key!r}")
        raise UnknownOffset(f"{self.kind} has no register at offset {key:#x}")

    def validate(self) -> None:
        problems = []
        if not self.kind or not isinstance(self.kind, str):
            problems.append("kind must be a non-empty name")
        if self.n_inputs < 0 or self.n_outputs < 0:
            problems.append("port counts must be non-negative")
        if self.samples_in_per_step < 0 or self.samples_out_per_step < 0:
            problems.append("per-step counts must be non-negative")
        if not self.throughput_sps > 0:
            problems.append("throughput_sps must be > 0")
        if self.latency_cycles < 0:
            problems.append("latency_cycles must be >= 0")
        if self.cost_logic_cells < 0 or self.cost_dsp_slices < 0:
            problems.append("costs must be >= 0")
        if self.cycles_per_step is not None and self.cycles_per_step <= 0:
            problems.append("cycles_per_step must be > 0")
        for t in (self.input_type, self.output_type):
            if t not in ITEM_DTYPES:
                problems.append(f"unknown item type {t!r}")
        offsets = [r.offset for r in self.register_map]
        names = [r.name for r in self.register_map]
        if len(set(offsets)) != len(offsets):
            problems.append("register offsets must be unique")
        if len(set(names)) != len(names):
            problems.append("register names must be unique")
        for r in self.register_map:
            if r.offset % 4 or r.offset < 0:
                problems.append(f"register {r.name} offset {r.offset:#x} not 4-byte aligned")
            if not 0 <= r.min <= r.default <= r.max <= REGISTER_MAX:
                problems.append(f"register {r.name} needs 0 <= min <= default <= max < 2^32")
        if problems:
            raise InvalidDescriptor(f"{self.kind}: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["register_map"] = [
            {k: r[k] for k in ("offset", "name", "min", "max", "default")} for r in d["register_map"]
        ]
        d["cycles_per_step"] = self.step_cycles
        return d


ProcessFn = Callable[[Mapping[str, int], dict, list[np.ndarray]], list[np.ndarray]]


@dataclass(frozen=True)
class UnitKind:
    """Catalog entry: a descriptor plus the block's processing behavior.

    ``io_counts(params)`` gives per-port (consume, produce) counts when they
    depend on registers; otherwise the descriptor's fixed counts apply.
    ``init_state(params)`` builds fresh block state and is called again when
    a register commit changes the parameters.
    """

    descriptor: UnitDescriptor
    process: ProcessFn
    io_counts: Callable[[Mapping[str, int]], tuple[int, int]] | None = None
    init_state: Callable[[Mapping[str, int]], dict] | None = None


@dataclass(frozen=True)
class ClockDomain:
    name: str = "fabric"
    hz: float = DEFAULT_CLOCK_HZ

    def __post_init__(self) -> None:
        if not self.hz > 0:
            raise ValueError("clock frequency must be positive")


class Catalog:
    """Registry of instantiable unit kinds (the precompiled-module library)."""

    def __init__(self) -> None:
        self._kinds: dict[str, UnitKind] = {}
        self._lock = threading.Lock()
        self._ids = itertools.count()

    def register_kind(self, descriptor: UnitDescriptor, process: ProcessFn, *,
                      io_counts=None, init_state=None) -> UnitKind:
        descriptor.validate()
        entry = UnitKind(descriptor, process, io_counts, init_state)
        with self._lock:
            if descriptor.kind in self._kinds:
                raise DuplicateKind(f"kind {descriptor.kind!r} already registered")
            self._kinds[descriptor.kind] = entry
        return entry

    def __contains__(self, kind: str) -> bool:
        return kind in self._kinds

    def get(self, kind: str) -> UnitKind:
        try:
            return self._kinds[kind]
        except KeyError:
            raise UnknownKind(f"no unit kind {kind!r} in catalog") from None

    def descriptor(self, kind: str) -> UnitDescriptor:
        return self.get(kind).descriptor

    def kinds(self) -> list[str]:
        return sorted(self._kinds)

    def descriptors(self) -> list[UnitDescriptor]:
        return [self._kinds[k].descriptor for k in self.kinds()]

    def dump(self) -> str:
        """One JSON record per kind, sorted by kind name."""
        return "".join(json.dumps(d.to_dict(), sort_keys=True) + "\n" for d in self.descriptors())

    def create_unit(self, kind: str, initial_params: Mapping[str, int] | None = None, *,
                    name: str | None = None, clock: ClockDomain | None = None) -> "UnitInstance":
        entry = self.get(kind)
        uid = f"{kind}#{next(self._ids)}"
        return UnitInstance(uid, entry, initial_params or {}, name=name or uid,
                            clock=clock or ClockDomain())


class LinkKind(str, enum.Enum):
    DIRECT = "direct"
    CROSSBAR = "crossbar"


class Link:
    """Bounded single-producer/single-consumer FIFO of typed items."""

    def __init__(self, capacity: int = DEFAULT_LINK_CAPACITY, item_type: str = "sample", *,
                 src: tuple[str, int] | None = None, dst: tuple[str, int] | None = None,
                 kind: LinkKind = LinkKind.DIRECT) -> None:
        if capacity < 1:
            raise ValueError(f"link capacity must be >= 1, got {capacity}")
        if item_type not in ITEM_DTYPES:
            raise ValueError(f"unknown item type {item_type!r}")
        self.capacity = int(capacity)
        self.item_type = item_type
        self.dtype = ITEM_DTYPES[item_type]
        self.src = src
        self.dst = dst
        self.kind = LinkKind(kind)
        self._chunks: deque[np.ndarray] = deque()  # queued windows, oldest first
        self._count = 0
        self._cond = threading.Condition()
        self.total_pushed = 0
        self.total_popped = 0
        self._listeners: list[threading.Event] = []

    def __repr__(self) -> str:
        return f"Link({self.src}->{self.dst}, {self._count}/{self.capacity} {self.item_type})"

    def add_listener(self, event: threading.Event) -> None:
        self._listeners.append(event)

    def _notify(self) -> None:
        self._cond.notify_all()
        for ev in self._listeners:
            ev.set()

    @property
    def available(self) -> int:
        return self._count

    @property
    def room(self) -> int:
        return self.capacity - self._count

    def _write(self, items: np.ndarray) -> None:
        # items must be private to the link from here on
        if items.size:
            self._chunks.append(items)
            self._count += items.size
            self.total_pushed += items.size

    def _read(self, n: int) -> np.ndarray:
        head = self._chunks[0] if self._chunks else None
        if head is not None and head.size == n:
            out = self._chunks.popleft()
        elif head is not None and head.size > n:
            out = head[:n]
            self._chunks[0] = head[n:]
        else:
            out = np.empty(n, dtype=self.dtype)
            pos = 0
            while pos < n:
                head = self._chunks[0]
                k = min(head.size, n - pos)
                out[pos:pos + k] = head[:k]
                if k == head.size:
                    self._chunks.popleft()
                else:
                    self._chunks[0] = head[k:]
                pos += k
        self._count -= n
        self.total_popped += n
        return out

    def try_push(self, items, *, owned: bool = False) -> bool:
        """Push all items if they fit right now; otherwise push nothing.

        ``owned`` hands the array over without a copy (the caller must not
        touch it afterwards).
        """
        items = np.asarray(items, dtype=self.dtype).reshape(-1)
        if not owned:
            items = items.copy()
        with self._cond:
            if items.size > self.room:
                return False
            self._write(items)
            self._notify()
            return True

    def push(self, items, timeout: float | None = None) -> None:
        """Blocking push; larger-than-capacity inputs go in capacity-sized pieces.

        Raises WouldBlock (with ``pushed`` set) if the link stays full for
        ``timeout`` seconds.
        """
        items = np.array(items, dtype=self.dtype).reshape(-1)  # private copy
        done = 0
        with self._cond:
            while done < items.size:
                chunk = min(items.size - done, self.capacity)
                if not self._cond.wait_for(lambda: self.room >= chunk, timeout):
                    err = WouldBlock(f"link full after pushing {done}/{items.size} items")
                    err.pushed = done
                    raise err
                self._write(items[done:done + chunk])
                done += chunk
                self._notify()

    def try_pop(self, n: int) -> np.ndarray | None:
        with self._cond:
            if self._count < n:
                return None
            out = self._read(n)
            self._notify()
            return out

    def pop(self, n: int, timeout: float | None = None) -> np.ndarray:
        if n > self.capacity:
            parts = [self.pop(min(self.capacity, n - k), timeout) for k in range(0, n, self.capacity)]
            return np.concatenate(parts)
        with self._cond:
            if not self._cond.wait_for(lambda: self._count >= n, timeout):
                raise WouldBlock(f"link holds {self._count} items, wanted {n}")
            out = self._read(n)
            self._notify()
            return out

    def drain(self) -> np.ndarray:
        with self._cond:
            out = self._read(self._count)
            self._notify()
            return out

    def wait_room(self, n: int, timeout: float | None = None) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: self.room >= n, timeout)


@dataclass(frozen=True)
class StepReport:
    status: str  # "ok", "blocked-on-input", "blocked-on-output", "unlinked"
    consumed: int = 0
    produced: int = 0

    @property
    def progressed(self) -> bool:
        return self.status == "ok"


class UnitInstance:
    """A live processing unit: committed registers, block state and ports."""

    def __init__(self, uid: str, entry: UnitKind, initial_params: Mapping[str, int], *,
                 name: str, clock: ClockDomain) -> None:
        self.id = uid
        self.name = name
        self.entry = entry
        self.descriptor = entry.descriptor
        self._clock = clock
        regs = {r.offset: r.default for r in self.descriptor.register_map}
        for key, value in initial_params.items():
            try:
                spec = self.descriptor.register(key)
            except UnknownOffset as exc:
                raise ParamOutOfRange(str(exc)) from None
            regs[spec.offset] = spec.validate(value, ParamOutOfRange)
        self._regs = regs
        self._lock = threading.RLock()
        self._dirty = False
        self.state = self._fresh_state()
        self.inputs: list[Link | None] = [None] * self.descriptor.n_inputs
        self.outputs: list[Link | None] = [None] * self.descriptor.n_outputs
        self.steps = 0

    def __repr__(self) -> str:
        return f"<UnitInstance {self.name} ({self.id}) {self.params}>"

    @property
    def clock_domain(self) -> ClockDomain:
        return self._clock

    @property
    def kind(self) -> str:
        return self.descriptor.kind

    @property
    def params(self) -> dict[str, int]:
        with self._lock:
            return {r.name: self._regs[r.offset] for r in self.descriptor.register_map}

    def _fresh_state(self) -> dict:
        init = self.entry.init_state
        return init(self.params) if init else {}

    # registers ---------------------------------------------------------------

    def write_reg(self, offset: int, value: int) -> int:
        """Commit a register write.  Steps hold the unit lock, so a write lands
        between two steps, never inside one."""
        spec = self.descriptor.register(int(offset))
        value = spec.validate(value)
        with self._lock:
            if self._regs[spec.offset] != value:
                self._regs[spec.offset] = value
                self._dirty = True
        return value

    def read_reg(self, offset: int) -> int:
        spec = self.descriptor.register(int(offset))
        with self._lock:
            return self._regs[spec.offset]

    def set_param(self, name: str, value: int) -> int:
        return self.write_reg(self.descriptor.register(name).offset, value)

    def get_param(self, name: str) -> int:
        return self.read_reg(self.descriptor.register(name).offset)

    # streaming ---------------------------------------------------------------

    def io_counts(self) -> tuple[int, int]:
        fn = self.entry.io_counts
        if fn is None:
            return self.descriptor.samples_in_per_step, self.descriptor.samples_out_per_step
        return fn(self.params)

    def process(self, inputs: list[np.ndarray]) -> list[np.ndarray]:
        """Run one step's worth of processing on explicit arrays (no links)."""
        with self._lock:
            if self._dirty:
                self.state = self._fresh_state()
                self._dirty = False
            params = self.params
            n_in, n_out = self.io_counts()
            for x in inputs:
                if len(x) != n_in:
                    raise ValueError(f"{self.name} consumes {n_in} items per step, got {len(x)}")
            outs = self.entry.process(params, self.state, inputs)
            if len(outs) != self.descriptor.n_outputs:
                raise RuntimeError(f"{self.kind} produced {len(outs)} ports, expected {self.descriptor.n_outputs}")
            for y in outs:
                if len(y) != n_out:
                    raise RuntimeError(f"{self.kind} produced {len(y)} items, descriptor says {n_out}")
            self.steps += 1
            return outs


def step(unit: UnitInstance) -> StepReport:
    """Advance a linked unit by one window if inputs suffice and outputs have room."""
    with unit._lock:
        if any(l is None for l in unit.inputs) or any(l is None for l in unit.outputs):
            return StepReport("unlinked")
        n_in, n_out = unit.io_counts()
        if any(l.available < n_in for l in unit.inputs):
            return StepReport("blocked-on-input")
        if any(l.room < n_out for l in unit.outputs):
            return StepReport("blocked-on-output")
        inputs = [l.try_pop(n_in) for l in unit.inputs]
        outs = unit.process(inputs)
        for link, y in zip(unit.outputs, outs):
            if not link.try_push(y, owned=True):  # single producer: room was checked above
                raise RuntimeError(f"output link of {unit.name} lost room mid-step")
        return StepReport("ok", n_in * len(inputs), n_out * len(outs))


def _port_check(unit: UnitInstance, port: int, outputs: bool) -> None:
    arity = unit.descriptor.n_outputs if outputs else unit.descriptor.n_inputs
    if not 0 <= port < arity:
        side = "output" if outputs else "input"
        raise NoSuchPort(f"{unit.name} has no {side} port {port} (arity {arity})")


def connect(src: UnitInstance, src_port: int, dst: UnitInstance, dst_port: int,
            capacity: int = DEFAULT_LINK_CAPACITY, kind: LinkKind = LinkKind.DIRECT) -> Link:
    _port_check(src, src_port, True)
    _port_check(dst, dst_port, False)
    if dst.inputs[dst_port] is not None:
        raise PortOccupied(f"{dst.name}.in{dst_port} already has an incoming link")
    if src.outputs[src_port] is not None:
        raise PortOccupied(f"{src.name}.out{src_port} already drives a link")
    if src.descriptor.output_type != dst.descriptor.input_type:
        raise ItemTypeMismatch(
            f"{src.name} emits {src.descriptor.output_type} items, "
            f"{dst.name} expects {dst.descriptor.input_type}"
        )
    link = Link(capacity, src.descriptor.output_type, src=(src.name, src_port),
                dst=(dst.name, dst_port), kind=kind)
    src.outputs[src_port] = link
    dst.inputs[dst_port] = link
    return link


def attach_input(unit: UnitInstance, port: int, capacity: int = DEFAULT_LINK_CAPACITY) -> Link:
    """Open an input port to an external producer."""
    _port_check(unit, port, False)
    if unit.inputs[port] is not None:
        raise PortOccupied(f"{unit.name}.in{port} already has an incoming link")
    link = Link(capacity, unit.descriptor.input_type, dst=(unit.name, port))
    unit.inputs[port] = link
    return link


def attach_output(unit: UnitInstance, port: int, capacity: int = DEFAULT_LINK_CAPACITY) -> Link:
    """Open an output port to an external consumer."""
    _port_check(unit, port, True)
    if unit.outputs[port] is not None:
        raise PortOccupied(f"{unit.name}.out{port} already drives a link")
    link = Link(capacity, unit.descriptor.output_type, src=(unit.name, port))
    unit.outputs[port] = link
    return link


def run_until_idle(units: Sequence[UnitInstance], max_rounds: int | None = None) -> int:
    """Step units round-robin until none can progress; returns total steps."""
    total = 0
    rounds = 0
    while max_rounds is None or rounds < max_rounds:
        rounds += 1
        progressed = 0
        for u in units:
            while step(u).progressed:
                progressed += 1
        total += progressed
        if not progressed:
            break
    return total
