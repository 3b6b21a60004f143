"""Scenario files: an INI layout with one ``[scenario]`` section and one ``[arm.N]`` per arm.

Example::

    [scenario]
    name = example1
    horizon = 100000
    delta = 0.05
    algorithm = colored_ucrl2
    replications = 10
    seed = 1

    [arm.0]
    transitions = 0.95 0.05; 0.05 0.95
    rewards = 0 1

Numbers are parsed as exact fractions (``0.95`` or ``19/20``), so row sums
are checked without rounding and a file survives load/dump unchanged.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from ..chain import ChainError
from ..env import NOISE_TAGS, ArmSpec, BanditInstance

ALGORITHMS = (
    "colored_ucrl2",
    "doubling",
    "mixing_guess",
    "state_discovery",
    "best_fixed_arm",
    "round_robin",
    "myopic",
    "oracle_optimal",
)
BUNDLED = ("example1", "example2", "example3", "lowerbound")


class ScenarioError(ValueError):
    """Malformed or invalid scenario file."""


@dataclass(frozen=True)
class ArmRecord:
    """Exact description of one arm as written in a scenario file."""

    transitions: tuple  # tuple of rows of Fractions
    rewards: tuple
    noise: str = "bernoulli"

    def spec(self) -> ArmSpec:
        P = np.array([[float(x) for x in row] for row in self.transitions])
        return ArmSpec(P, np.array([float(x) for x in self.rewards]), noise=self.noise)


@dataclass(frozen=True)
class Scenario:
    name: str
    arms: tuple
    horizon: int
    delta: float = 0.05
    algorithm: str = "colored_ucrl2"
    replications: int = 1
    seed: int = 0
    periodic: bool = False
    eps_oracle: float = 1e-3
    instance: BanditInstance = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ScenarioError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.horizon < len(self.arms):
            raise ScenarioError(f"horizon {self.horizon} is shorter than the number of arms {len(self.arms)}")
        if self.replications < 1:
            raise ScenarioError("replications must be at least 1")
        if not 0.0 < self.delta < 1.0:
            raise ScenarioError("delta must lie in (0, 1)")
        object.__setattr__(self, "instance", BanditInstance(tuple(a.spec() for a in self.arms)))


def _fraction(token: str, where: str) -> Fraction:
    try:
        return Fraction(token)
    except (ValueError, ZeroDivisionError):
        raise ScenarioError(f"{where}: cannot parse number {token!r}") from None


def format_number(x: Fraction) -> str:
    """Shortest exact text for ``x``: a decimal when it terminates, else ``p/q``."""
    x = Fraction(x)
    d = x.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{x.numerator}/{x.denominator}"
    digits = max(twos, fives)
    if digits == 0:
        return str(x.numerator)
    scaled = x * 10**digits
    sign = "-" if scaled < 0 else ""
    s = str(abs(scaled.numerator)).rjust(digits + 1, "0")
    return f"{sign}{s[:-digits]}.{s[-digits:]}"


def _line_numbers(text: str) -> dict:
    """``(section, key) -> line`` and ``(section, None) -> line`` for error messages."""
    out = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[(.+)\]$", stripped)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = i
        elif section and stripped and not stripped.startswith(("#", ";")):
            key = re.split(r"[=:]", stripped, maxsplit=1)[0].strip().lower()
            out.setdefault((section, key), i)
    return out


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    lines = _line_numbers(text)

    def where(section, key=None):
        line = lines.get((section, key), lines.get((section, None)))
        field_ = f"{section}.{key}" if key else section
        return f"{source}:{line}: {field_}" if line else f"{source}: {field_}"

    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    if not cp.has_section("scenario"):
        raise ScenarioError(f"{source}: missing [scenario] section")
    sc = cp["scenario"]

    def get(key, conv, default=None):
        if key not in sc:
            if default is None:
                raise ScenarioError(f"{where('scenario')}: missing field {key!r}")
            return default
        raw = sc[key]
        try:
            return conv(raw)
        except (ValueError, ZeroDivisionError):
            raise ScenarioError(f"{where('scenario', key)}: invalid value {raw!r}") from None

    def boolean(raw):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)

    arm_sections = sorted(
        (s for s in cp.sections() if s.startswith("arm.")),
        key=lambda s: int(s.split(".", 1)[1]) if s.split(".", 1)[1].isdigit() else -1,
    )
    if not arm_sections:
        raise ScenarioError(f"{source}: no [arm.N] sections")
    arms = []
    for expected, sec in enumerate(arm_sections):
        if sec != f"arm.{expected}":
            raise ScenarioError(f"{where(sec)}: arm sections must be numbered arm.0, arm.1, ...")
        body = cp[sec]
        for key in ("transitions", "rewards"):
            if key not in body:
                raise ScenarioError(f"{where(sec)}: missing field {key!r}")
        rows = []
        for i, row in enumerate(r for r in body["transitions"].split(";")):
            tokens = row.split()
            if not tokens:
                raise ScenarioError(f"{where(sec, 'transitions')}: row {i} is empty")
            vals = tuple(_fraction(t, where(sec, "transitions")) for t in tokens)
            if any(v < 0 for v in vals):
                raise ScenarioError(f"{where(sec, 'transitions')}: row {i} has a negative entry")
            if sum(vals) != 1:
                raise ScenarioError(
                    f"{where(sec, 'transitions')}: row {i} sums to {format_number(sum(vals))}, not 1"
                )
            rows.append(vals)
        n = len(rows)
        if any(len(r) != n for r in rows):
            raise ScenarioError(f"{where(sec, 'transitions')}: matrix is not square")
        rewards = tuple(_fraction(t, where(sec, "rewards")) for t in body["rewards"].split())
        if len(rewards) != n:
            raise ScenarioError(f"{where(sec, 'rewards')}: {len(rewards)} rewards for {n} states")
        if any(not 0 <= r <= 1 for r in rewards):
            raise ScenarioError(f"{where(sec, 'rewards')}: rewards must lie in [0, 1]")
        noise = body.get("noise", "bernoulli").strip()
        if noise not in NOISE_TAGS:
            raise ScenarioError(f"{where(sec, 'noise')}: unknown noise {noise!r}")
        arms.append(ArmRecord(tuple(rows), rewards, noise))
    fields = dict(
        name=get("name", str.strip),
        horizon=get("horizon", int),
        delta=get("delta", float, 0.05),
        algorithm=get("algorithm", str.strip, "colored_ucrl2"),
        replications=get("replications", int, 1),
        seed=get("seed", int, 0),
        periodic=get("periodic", boolean, False),
        eps_oracle=get("eps_oracle", float, 1e-3),
    )
    try:
        return Scenario(arms=tuple(arms), **fields)
    except ChainError as exc:
        raise ScenarioError(f"{source}: invalid arm: {exc}") from None
    except ScenarioError as exc:
        raise ScenarioError(f"{where('scenario')}: {exc}") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), source=str(path))


def dump_scenario(sc: Scenario) -> str:
    """Scenario file text; ``parse_scenario(dump_scenario(sc)) == sc``."""
    out = [
        "[scenario]",
        f"name = {sc.name}",
        f"horizon = {sc.horizon}",
        f"delta = {sc.delta!r}",
        f"algorithm = {sc.algorithm}",
        f"replications = {sc.replications}",
        f"seed = {sc.seed}",
        f"periodic = {'true' if sc.periodic else 'false'}",
        f"eps_oracle = {sc.eps_oracle!r}",
    ]
    for j, arm in enumerate(sc.arms):
        rows = "; ".join(" ".join(format_number(x) for x in row) for row in arm.transitions)
        out += [
            "",
            f"[arm.{j}]",
            f"transitions = {rows}",
            f"rewards = {' '.join(format_number(x) for x in arm.rewards)}",
            f"noise = {arm.noise}",
        ]
    return "\n".join(out) + "\n"


def bundled_path(name: str):
    if name not in BUNDLED:
        raise ScenarioError(f"no bundled scenario {name!r}; available: {BUNDLED}")
    return resources.files(__package__).joinpath("scenarios").joinpath(f"{name}.cfg")


def load_bundled(name: str) -> Scenario:
    ref = bundled_path(name)
    return parse_scenario(ref.read_text(), source=f"{name}.cfg")


def resolve(name_or_path: str) -> Scenario:
    """Bundled scenario by name, or a scenario file by path."""
    if name_or_path in BUNDLED:
        return load_bundled(name_or_path)
    return load_scenario(name_or_path)


def _grid_row(rng: np.random.Generator, n: int, q: int) -> tuple:
    counts = rng.multinomial(q, np.full(n, 1.0 / n))
    return tuple(Fraction(int(c), q) for c in counts)


def random_arm(rng: np.random.Generator, n_states: int, q: int = 4, max_tries: int = 1000) -> ArmRecord:
    """Irreducible aperiodic arm with transition probabilities and rewards on the grid ``k/q``."""
    from ..chain import is_irreducible, period

    for _ in range(max_tries):
        rows = tuple(_grid_row(rng, n_states, q) for _ in range(n_states))
        P = np.array([[float(x) for x in r] for r in rows])
        if is_irreducible(P) and period(P) == 1:
            rewards = tuple(Fraction(int(k), q) for k in rng.integers(0, q + 1, size=n_states))
            return ArmRecord(rows, rewards)
    raise ScenarioError(f"no irreducible aperiodic {n_states}-state arm found on grid 1/{q}")


def random_scenario(seed: int, n_arms: int = 2, states=(2, 3), q: int = 4, horizon: int = 10_000,
                    name: str | None = None) -> Scenario:
    """Small random instance with rational parameters (transitions and rewards on ``k/q``)."""
    rng = np.random.default_rng(seed)
    lo, hi = states
    arms = tuple(random_arm(rng, int(rng.integers(lo, hi + 1)), q) for _ in range(n_arms))
    return Scenario(name=name or f"random{seed}", arms=arms, horizon=horizon, seed=seed)
