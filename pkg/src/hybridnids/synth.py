"""Seeded synthetic flow traffic: heterogeneous background plus attack archetypes.

The profiles are caricatures tuned so that a forest can learn the attacks
and a background-trained autoencoder can notice some of them. They are not
meant to be realistic traces.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._random import stream_seed
from .errors import DataError
from .flows import ClassLabel, FlowRecord, format_flow_line, parse_flags

__all__ = ["GenConfig", "DEFAULT_ATTACK_WINDOWS", "generate_flows", "generate"]

DEFAULT_ATTACK_WINDOWS = {
    "dos": 40,
    "scan11": 16,
    "scan44": 6,  # each scan44 window involves four scanners
    "nerisbotnet": 60,
    "anomaly-spam": 40,
}

SYN = parse_flags("....S.")
SESSION = parse_flags(".AP.SF")
ACK = parse_flags(".A....")
PUSH_ACK = parse_flags(".AP...")
RESET = parse_flags(".A.R..")

# Arbitrary spring 2016 dates; they only anchor timestamps.
TRAIN_START = 1458345600  # 2016-03-19 00:00:00
TEST_START = 1458518400  # 2016-03-21 00:00:00


@dataclass
class GenConfig:
    duration: float = 3 * 3600.0
    background_sources: int = 100
    train_attack_windows: dict = field(default_factory=lambda: dict(DEFAULT_ATTACK_WINDOWS))
    test_attack_windows: dict = field(default_factory=lambda: dict(DEFAULT_ATTACK_WINDOWS))
    seed: int = 0
    window_seconds: float = 180.0
    min_flows: int = 10

    def __post_init__(self):
        if self.background_sources < 1:
            raise DataError("at least one background source is required")
        if self.duration < self.window_seconds:
            raise DataError("duration must cover at least one window")
        for table in (self.train_attack_windows, self.test_attack_windows):
            for name, count in table.items():
                label = ClassLabel(name)
                if label not in ATTACK_PROFILES:
                    raise DataError(f"no generator profile for class {name!r}")
                if count < 0:
                    raise DataError("attack window counts must be >= 0")


class _Flows:
    """Accumulates flows for one source within one window."""

    def __init__(self, rng, src_ip, t0, width):
        self.rng = rng
        self.src_ip = src_ip
        self.t0 = t0
        self.width = width
        self.out = []

    def add(self, dst_ip, sport, dport, proto, flags, packets, byts, duration, label,
            end_time=None):
        if end_time is None:
            end_time = self.t0 + self.rng.uniform(0, self.width)
        # keep three decimals so every timestamp survives the CSV round trip
        end_time = min(round(end_time, 3), self.t0 + self.width - 0.001)
        self.out.append(FlowRecord(
            end_time=end_time,
            duration=round(max(0.0, float(duration)), 3),
            src_ip=self.src_ip,
            dst_ip=dst_ip,
            src_port=int(sport),
            dst_port=int(dport),
            protocol=proto,
            tcp_flags=int(flags) if proto == "TCP" else 0,
            fwd_status=0,
            tos=0,
            packets=max(1, int(packets)),
            bytes=max(1, int(byts)),
            label=label,
        ))


def _ephemeral(rng):
    return int(rng.integers(1024, 65536))


def _ip(prefix, i):
    return f"{prefix}.{(i >> 8) & 255}.{i & 255}"


# -- background ---------------------------------------------------------------

_ROLES = ("web", "dns", "mail", "server", "misc", "push")


def _bg_web(f, rng, src):
    port = rng.choice([80, 443, 443, 80, 8080])
    packets = max(1, int(rng.lognormal(2.2, 1.0)))
    f.add(_ip("172.16", src["web_pool"][rng.integers(len(src["web_pool"]))]),
          _ephemeral(rng), port, "TCP", rng.choice([SESSION, SESSION, PUSH_ACK, ACK]),
          packets, packets * rng.lognormal(6.0, 0.7), rng.lognormal(0.0, 1.5),
          ClassLabel.BACKGROUND)


def _bg_dns(f, rng, src):
    f.add(_ip("172.20", src["resolver"]), _ephemeral(rng), 53, "UDP", 0,
          rng.integers(1, 3), rng.integers(60, 300), rng.exponential(0.02),
          ClassLabel.BACKGROUND)


def _bg_mail(f, rng, src):
    port = rng.choice([25, 25, 25, 587, 110, 143])
    packets = int(rng.integers(6, 60))
    f.add(_ip("172.24", src["mx_pool"][rng.integers(len(src["mx_pool"]))]),
          _ephemeral(rng), port, "TCP", rng.choice([SESSION, SESSION, PUSH_ACK]),
          packets, packets * rng.lognormal(5.5, 0.9), rng.lognormal(1.0, 1.0),
          ClassLabel.BACKGROUND)


def _bg_server(f, rng, src):
    packets = max(1, int(rng.lognormal(2.5, 1.2)))
    f.add(_ip("100.64", int(rng.integers(0, 60000))), src["service"], _ephemeral(rng), "TCP",
          rng.choice([SESSION, PUSH_ACK, ACK]), packets, packets * rng.lognormal(6.5, 0.6),
          rng.lognormal(0.2, 1.2), ClassLabel.BACKGROUND)


def _bg_misc(f, rng, src):
    kind = rng.integers(0, 4)
    if kind == 0:
        f.add(_ip("172.28", int(rng.integers(0, 16))), 123, 123, "UDP", 0, 1, 76, 0.0,
              ClassLabel.BACKGROUND)
    elif kind == 1:
        packets = int(rng.integers(10, 400))
        f.add(_ip("172.30", int(rng.integers(0, 40))), _ephemeral(rng), 22, "TCP", SESSION,
              packets, packets * rng.lognormal(5.0, 0.5), rng.lognormal(2.0, 1.0),
              ClassLabel.BACKGROUND)
    elif kind == 2:
        packets = max(1, int(rng.lognormal(1.5, 1.0)))
        f.add(_ip("100.72", int(rng.integers(0, 60000))), _ephemeral(rng), _ephemeral(rng),
              "UDP", 0, packets, packets * rng.lognormal(6.0, 1.0), rng.lognormal(0.0, 1.0),
              ClassLabel.BACKGROUND)
    else:
        f.add(_ip("172.16", int(rng.integers(0, 200))), _ephemeral(rng),
              rng.choice([993, 995, 5222, 3478]), "TCP", rng.choice([SESSION, RESET]),
              rng.integers(1, 30), rng.integers(100, 20000), rng.lognormal(0.5, 1.0),
              ClassLabel.BACKGROUND)


def _bg_push(f, rng, src):
    # keep-alive chatter to a few servers on untracked ports; easy to confuse with C2
    packets = int(rng.integers(4, 16))
    f.add(_ip("198.18", src["push_pool"][rng.integers(len(src["push_pool"]))]), _ephemeral(rng),
          src["push_port"], "TCP", rng.choice([SESSION, PUSH_ACK]), packets,
          packets * rng.normal(150, 30), rng.lognormal(0.0, 0.6), ClassLabel.BACKGROUND)


_ROLE_FN = {"web": _bg_web, "dns": _bg_dns, "mail": _bg_mail, "server": _bg_server,
            "misc": _bg_misc, "push": _bg_push}


def _make_background_sources(rng, count, prefix):
    sources = []
    for i in range(count):
        dominant = _ROLES[i % len(_ROLES)]
        mix = rng.dirichlet(np.full(len(_ROLES), 0.3))
        mix = 0.4 * mix + 0.6 * (np.array(_ROLES) == dominant)
        sources.append({
            "ip": _ip(prefix, i + 1),
            "mix": mix / mix.sum(),
            "rate": float(rng.lognormal(3.0, 0.6)),
            "active": float(rng.uniform(0.4, 0.95)),
            "web_pool": rng.integers(0, 200, int(rng.integers(3, 40))),
            "mx_pool": rng.integers(0, 500, int(rng.integers(5, 60))),
            "resolver": int(rng.integers(0, 4)),
            "push_pool": rng.integers(0, 300, int(rng.integers(1, 5))),
            "push_port": int(rng.choice([5228, 5223, 1194, 8883])),
            "service": int(rng.choice([80, 443, 22, 25, 993])),
        })
    return sources


def _background_window(rng, src, t0, width):
    f = _Flows(rng, src["ip"], t0, width)
    n = int(rng.poisson(src["rate"]))
    roles = rng.choice(len(_ROLES), size=n, p=src["mix"])
    for r in roles:
        _ROLE_FN[_ROLES[r]](f, rng, src)
    return f.out


# -- attacks ------------------------------------------------------------------

def _mix_in_background(f, rng):
    # infected hosts keep producing some ordinary traffic in the same window
    for _ in range(int(rng.poisson(1.0))):
        _bg_dns(f, rng, {"resolver": int(rng.integers(0, 4))})


def _dos(rng, inst, t0, width):
    f = _Flows(rng, inst["src"], t0, width)
    for _ in range(int(rng.integers(40, 200))):
        packets = int(rng.integers(1, 4))
        f.add(inst["victim"], _ephemeral(rng), 80, "TCP", SYN, packets,
              packets * rng.integers(40, 61), rng.uniform(0, packets - 1 + 1e-9), ClassLabel.DOS)
    return [f.out]


def _scan_from(rng, src_ip, targets, t0, width, label):
    f = _Flows(rng, src_ip, t0, width)
    n = int(rng.integers(30, 150))
    sport = int(rng.integers(1024, 65530))
    ports = rng.choice(np.arange(1, 10001), size=n, replace=False)
    for port in ports:
        f.add(targets[rng.integers(len(targets))], sport + int(rng.integers(0, 3)), port, "TCP",
              SYN, 1, rng.integers(40, 45), 0.0, label)
    return f


def _scan11(rng, inst, t0, width):
    return [_scan_from(rng, inst["src"], [inst["victim"]], t0, width, ClassLabel.SCAN11).out]


def _scan44(rng, inst, t0, width):
    victims = [_ip("192.168", int(rng.integers(0, 60000))) for _ in range(4)]
    return [_scan_from(rng, src, victims, t0, width, ClassLabel.SCAN44).out
            for src in inst["scanners"]]


def _botnet(rng, inst, t0, width):
    f = _Flows(rng, inst["src"], t0, width)
    n = int(rng.integers(15, 60))
    period = width / n
    phase = rng.uniform(0, period)
    for k in range(n):
        end = t0 + phase + k * period + rng.normal(0, period * 0.05)
        end = min(max(end, t0), t0 + width - 0.001)
        if rng.random() < 0.15:
            f.add(_ip("172.20", int(rng.integers(0, 4))), _ephemeral(rng), 53, "UDP", 0,
                  1, rng.integers(60, 120), 0.0, ClassLabel.NERISBOTNET, end_time=end)
            continue
        packets = int(rng.integers(4, 16))
        f.add(inst["c2"][rng.integers(len(inst["c2"]))], _ephemeral(rng), inst["c2_port"],
              "TCP", rng.choice([SESSION, PUSH_ACK]), packets, packets * rng.normal(140, 25),
              rng.lognormal(0.0, 0.5), ClassLabel.NERISBOTNET, end_time=end)
    _mix_in_background(f, rng)
    return [f.out]


def _spam(rng, inst, t0, width):
    # shaped like a mail relay, but every flow goes to a fresh port-25 host
    f = _Flows(rng, inst["src"], t0, width)
    for _ in range(int(rng.integers(25, 90))):
        packets = int(rng.integers(6, 40))
        f.add(_ip("100.80", int(rng.integers(0, 60000))), _ephemeral(rng), 25, "TCP",
              rng.choice([SESSION, SESSION, PUSH_ACK]), packets,
              packets * rng.lognormal(5.5, 0.6), rng.lognormal(0.5, 0.8), ClassLabel.SPAM)
    _mix_in_background(f, rng)
    return [f.out]


ATTACK_PROFILES = {
    ClassLabel.DOS: _dos,
    ClassLabel.SCAN11: _scan11,
    ClassLabel.SCAN44: _scan44,
    ClassLabel.NERISBOTNET: _botnet,
    ClassLabel.SPAM: _spam,
}

_ATTACK_PREFIX = {
    ClassLabel.DOS: "42.219",
    ClassLabel.SCAN11: "42.220",
    ClassLabel.SCAN44: "42.221",
    ClassLabel.NERISBOTNET: "42.222",
    ClassLabel.SPAM: "42.223",
}


def _attack_instances(rng, label, count, n_windows, split):
    """Attack episodes: each one a fresh source in one randomly chosen window."""
    prefix = _ATTACK_PREFIX[label]
    base = 0 if split == "train" else 30000
    episodes = []
    windows = rng.integers(0, n_windows, count)
    for i in range(count):
        episodes.append((int(windows[i]), {
            "src": _ip(prefix, base + i + 1),
            "scanners": [_ip(prefix, base + 10000 + 4 * i + j) for j in range(4)],
            "victim": _ip("192.168", int(rng.integers(0, 60000))),
            "c2": [_ip("198.51", int(rng.integers(0, 600))) for _ in range(int(rng.integers(2, 5)))],
            "c2_port": int(rng.choice([6667, 1863, 4444, 8888, 2323])),
        }))
    return episodes


def generate_flows(config: GenConfig, split: str = "train"):
    """All flows of one split, sorted by end time. Returns ``(flows, manifest)``."""
    seed = stream_seed(config.seed, f"gen-{split}")
    rng = np.random.default_rng(seed)
    start = TRAIN_START if split == "train" else TEST_START
    width = config.window_seconds
    n_windows = int(config.duration // width)
    prefix = "10.1" if split == "train" else "10.2"
    sources = _make_background_sources(rng, config.background_sources, prefix)
    flows = []
    for w in range(n_windows):
        t0 = start + w * width
        for src in sources:
            if rng.random() < src["active"]:
                flows.extend(_background_window(rng, src, t0, width))

    table = config.train_attack_windows if split == "train" else config.test_attack_windows
    expected = {}
    for name in sorted(table):
        label = ClassLabel(name)
        episodes = _attack_instances(rng, label, table[name], n_windows, split)
        made = 0
        for w, inst in episodes:
            for window_flows in ATTACK_PROFILES[label](rng, inst, start + w * width, width):
                assert len(window_flows) > config.min_flows
                flows.extend(window_flows)
                made += 1
        expected[label.value] = made

    flows.sort(key=lambda fl: (fl.end_time, fl.src_ip, fl.dst_ip, fl.src_port, fl.dst_port))
    counts = {}
    for fl in flows:
        counts[fl.label.value] = counts.get(fl.label.value, 0) + 1
    manifest = {
        "split": split,
        "flows": len(flows),
        "flows_per_class": dict(sorted(counts.items())),
        "attack_windows_per_class": expected,
        "seed": seed,
    }
    return flows, manifest


def generate(config: GenConfig, train_path, test_path, manifest_path=None) -> dict:
    """Write train and test flow files plus a JSON manifest."""
    manifest = {"config": asdict(config), "splits": {}}
    for split, path in (("train", train_path), ("test", test_path)):
        flows, info = generate_flows(config, split)
        with open(path, "w", encoding="ascii", newline="") as fh:
            for fl in flows:
                fh.write(format_flow_line(fl))
                fh.write("\n")
        info["path"] = str(path)
        manifest["splits"][split] = info
    if manifest_path is not None:
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return manifest
