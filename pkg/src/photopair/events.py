"""Time-stamped detection records and their text file format.

Times are held internally as integer picoseconds relative to the start of
the owning channel's detection window, so serialization with three decimals
(ns) is exact and a write/read round trip is lossless.

Field-2 times are window relative: the common time axis used in the figures
(origin at the start of the write pulse) is ``time_ns + delta_t_ns``.
"""

from __future__ import annotations

import enum
import io
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np

FORMAT_VERSION = 1
T2_AXIS = "window_relative"

_SCHEDULE_KEYS = (
    "format_version",
    "trials",
    "delta_t_ns",
    "write_duration_ns",
    "read_duration_ns",
    "window_ns",
    "t2_axis",
)


class RecordParseError(ValueError):
    """Malformed event file. ``line`` is 1-based (0 when not line specific)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class RecordValidationError(ValueError):
    """Events that parse but violate the record invariants."""

    def __init__(self, message: str, offending: list | None = None):
        self.offending = offending or []
        super().__init__(message)


class DetectorChannel(enum.Enum):
    D1A = "1A"
    D1B = "1B"
    D2A = "2A"
    D2B = "2B"

    @property
    def field_id(self) -> int:
        return int(self.value[0])

    @property
    def arm(self) -> str:
        return self.value[1]

    @property
    def code(self) -> int:
        """Dense index 0..3 used in array storage (field-major, then arm)."""
        return _CHANNEL_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "DetectorChannel":
        return _CHANNELS[code]

    @classmethod
    def parse(cls, token: str) -> "DetectorChannel":
        try:
            return cls(token)
        except ValueError:
            raise ValueError(f"unknown channel {token!r}") from None


_CHANNELS = (DetectorChannel.D1A, DetectorChannel.D1B, DetectorChannel.D2A, DetectorChannel.D2B)
_CHANNEL_CODES = {ch: i for i, ch in enumerate(_CHANNELS)}


@dataclass(frozen=True)
class DetectionEvent:
    trial: int
    channel: DetectorChannel
    time_ns: float


@dataclass(frozen=True)
class TrialSchedule:
    """Pulse timing for one experimental configuration (all times in ns)."""

    delta_t_ns: float = 50.0
    write_duration_ns: float = 150.0
    read_duration_ns: float = 120.0
    window_ns: float = 200.0
    trial_count: int = 1

    def __post_init__(self):
        for name in ("write_duration_ns", "read_duration_ns", "window_ns"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if not (np.isfinite(self.delta_t_ns) and self.delta_t_ns >= 0):
            raise ValueError(f"delta_t_ns must be >= 0, got {self.delta_t_ns}")
        if self.window_ns < self.write_duration_ns:
            raise ValueError("window_ns must be >= write_duration_ns")
        if int(self.trial_count) != self.trial_count or self.trial_count < 0:
            raise ValueError(f"trial_count must be a non-negative integer, got {self.trial_count}")

    @property
    def window_ps(self) -> int:
        return int(round(self.window_ns * 1000))

    @property
    def read_end_ns(self) -> float:
        """End of retrieval on the common axis: read pulse clipped to the detection window."""
        return self.delta_t_ns + min(self.read_duration_ns, self.window_ns)

    def with_trials(self, m: int) -> "TrialSchedule":
        return TrialSchedule(self.delta_t_ns, self.write_duration_ns, self.read_duration_ns, self.window_ns, m)

    def with_delta_t(self, delta_t_ns: float) -> "TrialSchedule":
        return TrialSchedule(delta_t_ns, self.write_duration_ns, self.read_duration_ns, self.window_ns,
                             self.trial_count)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventRecord:
    """Columnar detection record.

    ``trial`` (int64), ``channel`` (int8 channel code) and ``time_ps`` (int64)
    are parallel arrays sorted by (trial, field, time, arm). Use
    :meth:`from_arrays` or :meth:`from_events` to build one; they sort and
    validate.
    """

    schedule: TrialSchedule
    trial: np.ndarray
    channel: np.ndarray
    time_ps: np.ndarray
    metadata: Mapping[str, str] = field(default_factory=dict)
    resorted: bool = False

    @classmethod
    def from_arrays(cls, schedule: TrialSchedule, trial, channel, time_ps,
                    metadata: Mapping[str, str] | None = None, check: bool = True) -> "EventRecord":
        trial = np.asarray(trial, dtype=np.int64)
        channel = np.asarray(channel, dtype=np.int8)
        time_ps = np.asarray(time_ps, dtype=np.int64)
        if not (trial.shape == channel.shape == time_ps.shape) or trial.ndim != 1:
            raise ValueError("trial, channel and time arrays must be 1-D and equal length")
        order = np.lexsort((channel & 1, time_ps, channel >> 1, trial))
        resorted = bool(np.any(order != np.arange(order.size)))
        if resorted:
            trial, channel, time_ps = trial[order], channel[order], time_ps[order]
        rec = cls(schedule, _frozen(trial), _frozen(channel), _frozen(time_ps),
                  dict(metadata or {}), resorted)
        if check:
            rec.validate()
        return rec

    @classmethod
    def from_events(cls, schedule: TrialSchedule, events: Iterable[DetectionEvent],
                    metadata: Mapping[str, str] | None = None) -> "EventRecord":
        events = list(events)
        return cls.from_arrays(
            schedule,
            [e.trial for e in events],
            [e.channel.code for e in events],
            [int(round(e.time_ns * 1000)) for e in events],
            metadata,
        )

    @classmethod
    def empty(cls, schedule: TrialSchedule, metadata: Mapping[str, str] | None = None) -> "EventRecord":
        return cls.from_arrays(schedule, [], [], [], metadata)

    def validate(self) -> None:
        bad = (self.time_ps < 0) | (self.time_ps >= self.schedule.window_ps)
        bad |= (self.trial < 0) | (self.trial >= self.schedule.trial_count)
        bad |= (self.channel < 0) | (self.channel > 3)
        if np.any(bad):
            idx = np.flatnonzero(bad)
            offending = [self._event(i) for i in idx[:20]]
            raise RecordValidationError(
                f"{idx.size} event(s) outside trial range or detection window "
                f"[0, {self.schedule.window_ns}) ns: {offending}", offending)

    def _event(self, i: int) -> DetectionEvent:
        return DetectionEvent(int(self.trial[i]), DetectorChannel.from_code(int(self.channel[i])),
                              self.time_ps[i] / 1000.0)

    def __len__(self) -> int:
        return int(self.trial.size)

    @property
    def field_id(self) -> np.ndarray:
        return (self.channel >> 1) + 1

    @property
    def arm(self) -> np.ndarray:
        """0 for arm A, 1 for arm B."""
        return self.channel & 1

    @property
    def time_ns(self) -> np.ndarray:
        return self.time_ps / 1000.0

    @property
    def events(self) -> tuple[DetectionEvent, ...]:
        return tuple(self._event(i) for i in range(len(self)))

    def select(self, mask: np.ndarray) -> "EventRecord":
        return EventRecord(self.schedule, _frozen(self.trial[mask]), _frozen(self.channel[mask]),
                           _frozen(self.time_ps[mask]), dict(self.metadata))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventRecord):
            return NotImplemented
        return (self.schedule == other.schedule
                and dict(self.metadata) == dict(other.metadata)
                and np.array_equal(self.trial, other.trial)
                and np.array_equal(self.channel, other.channel)
                and np.array_equal(self.time_ps, other.time_ps))

    __hash__ = None

    @staticmethod
    def concat(parts: list["EventRecord"], schedule: TrialSchedule,
               metadata: Mapping[str, str] | None = None) -> "EventRecord":
        if not parts:
            return EventRecord.empty(schedule, metadata)
        return EventRecord.from_arrays(
            schedule,
            np.concatenate([p.trial for p in parts]),
            np.concatenate([p.channel for p in parts]),
            np.concatenate([p.time_ps for p in parts]),
            metadata,
        )


def _fmt_ps(ps: int) -> str:
    return f"{ps // 1000}.{ps % 1000:03d}"


def _header(record: EventRecord) -> list[str]:
    s = record.schedule
    values = {
        "format_version": str(FORMAT_VERSION),
        "trials": str(int(s.trial_count)),
        "delta_t_ns": repr(float(s.delta_t_ns)),
        "write_duration_ns": repr(float(s.write_duration_ns)),
        "read_duration_ns": repr(float(s.read_duration_ns)),
        "window_ns": repr(float(s.window_ns)),
        "t2_axis": T2_AXIS,
    }
    lines = [f"# {k}={values[k]}" for k in _SCHEDULE_KEYS]
    for key in sorted(record.metadata):
        value = str(record.metadata[key])
        if key in _SCHEDULE_KEYS or not key or "=" in key or any(c in key + value for c in "\n\r"):
            raise ValueError(f"metadata entry {key!r} cannot be serialized")
        lines.append(f"# {key}={value}")
    return lines


def write_record(record: EventRecord, destination: IO[bytes] | str) -> None:
    """Serialize ``record`` as UTF-8 text with LF line endings."""
    if isinstance(destination, (str, bytes)) or hasattr(destination, "__fspath__"):
        try:
            with open(destination, "wb") as fh:
                write_record(record, fh)
        except OSError as exc:
            raise OSError(f"cannot write event record to {destination}: {exc}") from exc
        return

    out = io.StringIO()
    for line in _header(record):
        out.write(line + "\n")
    codes = [ch.value for ch in _CHANNELS]
    for t, c, ps in zip(record.trial.tolist(), record.channel.tolist(), record.time_ps.tolist()):
        out.write(f"{t}\t{codes[c]}\t{_fmt_ps(ps)}\n")
    try:
        destination.write(out.getvalue().encode("utf-8"))
    except OSError as exc:
        raise OSError(f"cannot write event record: {exc}") from exc


def _parse_time_ps(token: str, lineno: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise RecordParseError(f"bad time {token!r}", lineno) from None
    if not np.isfinite(value):
        raise RecordParseError(f"bad time {token!r}", lineno)
    return int(round(value * 1000))


def read_record(source: IO[bytes] | str) -> EventRecord:
    """Parse an event file. Out-of-order events are sorted and ``resorted`` is set."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return read_record(fh)

    text = source.read()
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RecordParseError(f"not UTF-8: {exc}") from None

    header: dict[str, str] = {}
    header_line: dict[str, int] = {}
    trials, channels, times = [], [], []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].lstrip().removesuffix("\r")
            if "=" not in body:
                raise RecordParseError("header line must be '# key=value'", lineno)
            key, value = body.split("=", 1)
            key = key.strip()
            if not key:
                raise RecordParseError("empty header key", lineno)
            if key in header:
                raise RecordParseError(f"duplicate header key {key!r}", lineno)
            header[key] = value
            header_line[key] = lineno
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise RecordParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
        tok_trial, tok_chan, tok_time = parts
        if not tok_trial.isdigit():
            raise RecordParseError(f"bad trial index {tok_trial!r}", lineno)
        try:
            ch = DetectorChannel.parse(tok_chan)
        except ValueError as exc:
            raise RecordParseError(str(exc), lineno) from None
        trials.append(int(tok_trial))
        channels.append(ch.code)
        times.append(_parse_time_ps(tok_time, lineno))

    for key in _SCHEDULE_KEYS:
        if key not in header:
            raise RecordParseError(f"missing header key {key!r}")
    if header["format_version"].strip() != str(FORMAT_VERSION):
        raise RecordParseError(f"unsupported format_version {header['format_version']!r}",
                               header_line["format_version"])
    if header["t2_axis"].strip() != T2_AXIS:
        raise RecordParseError(f"unsupported t2_axis {header['t2_axis']!r}", header_line["t2_axis"])

    def num(key, kind=float):
        try:
            return kind(header[key])
        except ValueError:
            raise RecordParseError(f"bad value for {key}: {header[key]!r}", header_line[key]) from None

    try:
        schedule = TrialSchedule(
            delta_t_ns=num("delta_t_ns"),
            write_duration_ns=num("write_duration_ns"),
            read_duration_ns=num("read_duration_ns"),
            window_ns=num("window_ns"),
            trial_count=num("trials", int),
        )
    except ValueError as exc:
        if isinstance(exc, RecordParseError):
            raise
        raise RecordParseError(f"invalid schedule: {exc}") from None

    metadata = {k: v for k, v in header.items() if k not in _SCHEDULE_KEYS}
    record = EventRecord.from_arrays(schedule, trials, channels, times, metadata)
    if record.resorted:
        warnings.warn("event lines were not in canonical order; record was re-sorted", stacklevel=2)
    return record
