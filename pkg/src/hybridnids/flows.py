"""Flow records, class labels and the nfdump-style CSV flow format.

A flow file holds one unidirectional flow per line with 13 columns::

    te,td,sa,da,sp,dp,pr,flg,fwd,stos,ipkt,ibyt,label

``te`` is the flow end timestamp ``YYYY-MM-DD hh:mm:ss[.fff]``. Timestamps
carry no zone and are interpreted as UTC so that parsing does not depend on
the host time zone.
"""
from __future__ import annotations

import calendar
import enum
import gzip
import ipaddress
import time
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import FlowParseError

__all__ = [
    "ClassLabel",
    "FlowRecord",
    "FLAG_BITS",
    "is_attack",
    "parse_label",
    "parse_flags",
    "format_flags",
    "parse_flow_line",
    "format_flow_line",
    "stream_flows",
    "write_flows",
]


class ClassLabel(str, enum.Enum):
    BACKGROUND = "background"
    BLACKLIST = "blacklist"
    NERISBOTNET = "nerisbotnet"
    SPAM = "anomaly-spam"
    DOS = "dos"
    SCAN11 = "scan11"
    SCAN44 = "scan44"
    UDPSCAN = "anomaly-udpscan"
    SSHSCAN = "anomaly-sshscan"

    def __str__(self):
        return self.value

    @property
    def is_attack(self) -> bool:
        return self is not ClassLabel.BACKGROUND


_LABELS = {label.value: label for label in ClassLabel}


def parse_label(text: str) -> ClassLabel:
    try:
        return _LABELS[text]
    except KeyError:
        raise ValueError(f"unknown class label {text!r}") from None


def is_attack(label) -> bool:
    if not isinstance(label, ClassLabel):
        label = parse_label(label)
    return label is not ClassLabel.BACKGROUND


# nfdump prints TCP flags as a fixed 6-character pattern "UAPRSF".
FLAG_BITS = "UAPRSF"
_FLAG_VALUES = {ch: 1 << (5 - i) for i, ch in enumerate(FLAG_BITS)}

_PROTOCOL_NAMES = {"1": "ICMP", "6": "TCP", "17": "UDP"}


def parse_flags(text: str) -> int:
    """Map an nfdump flag pattern such as ``"....S."`` to a 6-bit mask."""
    if len(text) != 6:
        raise ValueError(f"bad tcp flag pattern {text!r}")
    mask = 0
    for pos, ch in enumerate(text):
        if ch == ".":
            continue
        if ch != FLAG_BITS[pos]:
            raise ValueError(f"bad tcp flag pattern {text!r}")
        mask |= _FLAG_VALUES[ch]
    return mask


def format_flags(mask: int) -> str:
    return "".join(ch if mask & _FLAG_VALUES[ch] else "." for ch in FLAG_BITS)


@dataclass(frozen=True, slots=True)
class FlowRecord:
    """One unidirectional flow.

    ``protocol`` is ``"TCP"``, ``"UDP"`` or ``"ICMP"``; any other protocol is
    kept verbatim as it appeared in the file (a name or a numeric code).
    ``tcp_flags`` is a 6-bit mask in ``UAPRSF`` order and is zero for every
    non-TCP flow.
    """

    end_time: float
    duration: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str
    tcp_flags: int
    fwd_status: int
    tos: int
    packets: int
    bytes: int
    label: ClassLabel = ClassLabel.BACKGROUND

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError("duration must be >= 0")
        if self.packets < 1 or self.bytes < 1:
            raise ValueError("packets and bytes must be >= 1")
        if not (0 <= self.src_port <= 65535 and 0 <= self.dst_port <= 65535):
            raise ValueError("port out of range")
        if self.protocol != "TCP" and self.tcp_flags:
            object.__setattr__(self, "tcp_flags", 0)


# Parsing a date costs far more than the rest of the line; flow files hold
# millions of lines but only a handful of distinct dates.
_day_cache: dict[str, int] = {}


def _parse_timestamp(text: str) -> float:
    if len(text) < 19 or text[10] != " ":
        raise ValueError(f"bad timestamp {text!r}")
    day = text[:10]
    base = _day_cache.get(day)
    if base is None:
        y, m, d = day.split("-")
        base = calendar.timegm((int(y), int(m), int(d), 0, 0, 0))
        _day_cache[day] = base
    hh, mm, ss = text[11:13], text[14:16], text[17:19]
    if text[13] != ":" or text[16] != ":":
        raise ValueError(f"bad timestamp {text!r}")
    h, mi, s = int(hh), int(mm), int(ss)
    if h > 23 or mi > 59 or s > 60:
        raise ValueError(f"bad timestamp {text!r}")
    seconds = base + h * 3600 + mi * 60 + s
    frac = text[19:]
    if frac:
        if frac[0] != "." or not frac[1:].isdigit():
            raise ValueError(f"bad timestamp {text!r}")
        return seconds + int(frac[1:]) / 10 ** (len(frac) - 1)
    return float(seconds)


def _format_timestamp(ts: float) -> str:
    whole = int(ts // 1)
    text = "%04d-%02d-%02d %02d:%02d:%02d" % time.gmtime(whole)[:6]
    frac = round(ts - whole, 6)
    if frac:
        text += ("%.6f" % frac)[1:].rstrip("0")
    return text


def _parse_protocol(text: str) -> str:
    name = text.strip().upper()
    if not name:
        raise ValueError("empty protocol")
    return _PROTOCOL_NAMES.get(name, name)


def parse_flow_line(line: str, line_number: int | None = None) -> FlowRecord:
    """Parse one 13-column flow line into a :class:`FlowRecord`."""
    cols = line.rstrip("\r\n").split(",")
    if len(cols) != 13:
        raise FlowParseError(f"wrong column count ({len(cols)}, expected 13)", line_number)
    te, td, sa, da, sp, dp, pr, flg, fwd, stos, ipkt, ibyt, label = cols
    try:
        return FlowRecord(
            end_time=_parse_timestamp(te),
            duration=float(td),
            src_ip=str(ipaddress.ip_address(sa)),
            dst_ip=str(ipaddress.ip_address(da)),
            src_port=int(sp),
            dst_port=int(dp),
            protocol=_parse_protocol(pr),
            tcp_flags=parse_flags(flg),
            fwd_status=int(fwd),
            tos=int(stos),
            packets=int(ipkt),
            bytes=int(ibyt),
            label=parse_label(label.strip()),
        )
    except ValueError as exc:
        raise FlowParseError(str(exc), line_number) from None


def format_flow_line(flow: FlowRecord) -> str:
    return ",".join((
        _format_timestamp(flow.end_time),
        repr(float(flow.duration)),
        flow.src_ip,
        flow.dst_ip,
        str(flow.src_port),
        str(flow.dst_port),
        flow.protocol,
        format_flags(flow.tcp_flags),
        str(flow.fwd_status),
        str(flow.tos),
        str(flow.packets),
        str(flow.bytes),
        flow.label.value,
    ))


def _open_text(path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="ascii", newline="")
    return open(path, "rt", encoding="ascii", newline="")


def stream_flows(path) -> Iterator[FlowRecord]:
    """Yield flows from a plain or gzip-compressed CSV file, in file order.

    Blank lines are skipped. The first malformed line raises
    :class:`FlowParseError` carrying its 1-based line number.
    """
    with _open_text(path) as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield parse_flow_line(line, number)


def write_flows(flows: Iterable[FlowRecord], path) -> int:
    count = 0
    with open(path, "w", encoding="ascii", newline="") as fh:
        for flow in flows:
            fh.write(format_flow_line(flow))
            fh.write("\n")
            count += 1
    return count
