"""Run configuration: flat sectioned text format, validation and hashing."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, asdict

__all__ = ["RunConfig", "canonical_json", "config_hash"]


@dataclass
class RunConfig:
    # [grid]
    n: int = 1
    N: int = 2
    L: int = 4
    shifts: int = 2
    # [epsilons]
    eps1: float = -1.0  # negative means: derive from eps2 and net feasibility
    eps2: float = 0.1
    eps3: float = -1.0  # negative means: eps2**2 / 8
    lam: float = 16.0
    # [seeds]
    seed: int = 0
    # [tolerances]
    loewner_tol: float = 1e-9
    doubling_cap: float = 100.0

    def validate(self):
        if self.n < 1 or self.L < 0 or self.N < 1 or self.shifts < 0:
            raise ValueError("grid parameters out of range")
        if not 0.0 < self.eps2 < 1.0:
            raise ValueError("eps2 must lie in (0, 1)")
        if self.lam <= 1.0:
            raise ValueError("lambda must exceed 1")
        if self.eps3 > 0.0 and self.eps3 >= self.eps2**2 / 4.0:
            raise ValueError(
                "eps3 must stay below eps2^2/4 so the projected mean keeps half its size"
            )
        if self.eps1 > 0.5:
            raise ValueError("eps1 must not exceed 1/2")
        return self

    def resolved_eps3(self):
        return self.eps3 if self.eps3 > 0.0 else self.eps2**2 / 8.0

    def to_text(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["grid"] = {
            "n": str(self.n),
            "N": str(self.N),
            "L": str(self.L),
            "shifts": str(self.shifts),
        }
        cp["epsilons"] = {
            "eps1": repr(self.eps1),
            "eps2": repr(self.eps2),
            "eps3": repr(self.eps3),
            "lambda": repr(self.lam),
        }
        cp["seeds"] = {"seed": str(self.seed)}
        cp["tolerances"] = {
            "loewner_tol": repr(self.loewner_tol),
            "doubling_cap": repr(self.doubling_cap),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        cp.read_string(text)
        cfg = cls(
            n=cp.getint("grid", "n", fallback=1),
            N=cp.getint("grid", "N", fallback=2),
            L=cp.getint("grid", "L", fallback=4),
            shifts=cp.getint("grid", "shifts", fallback=2),
            eps1=cp.getfloat("epsilons", "eps1", fallback=-1.0),
            eps2=cp.getfloat("epsilons", "eps2", fallback=0.1),
            eps3=cp.getfloat("epsilons", "eps3", fallback=-1.0),
            lam=cp.getfloat("epsilons", "lambda", fallback=16.0),
            seed=cp.getint("seeds", "seed", fallback=0),
            loewner_tol=cp.getfloat("tolerances", "loewner_tol", fallback=1e-9),
            doubling_cap=cp.getfloat("tolerances", "doubling_cap", fallback=100.0),
        )
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_file(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    def hash(self):
        return config_hash(self.to_text())

    def as_dict(self):
        return asdict(self)


def config_hash(text):
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def canonical_json(obj):
    """Deterministic JSON: sorted keys, repr floats, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
