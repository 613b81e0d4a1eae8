"""Admissible tangential sites: the schedules ``s(i)``, inverses and validators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

KINDS = ("power2", "loggevrey")
VARIANTS = ("S1", "-S1", "-S1+S0", "S1+S0", "-S1+S2+S0")

# loggevrey prefix for i < 2, where (log i)^{1+eta} is not increasing
_LOGGEVREY_PREFIX = (1, 2)
# beyond this index the integer part is already strictly increasing
_MONOTONE_FIX_UPTO = 16


@dataclass(frozen=True)
class SiteSchedule:
    """A site generator ``s(i)`` together with the set variant it builds.

    Parameters
    ----------
    kind : {"power2", "loggevrey"}
    eta : float
        Growth exponent, ``1 < eta <= 2``.
    i_star : int
        Threshold from which the growth conditions are required, ``>= 21``.
    variant : str
        One of ``"S1"``, ``"-S1"``, ``"-S1+S0"``, ``"S1+S0"``,
        ``"-S1+S2+S0"``.
    S0 : tuple of int
        Finite prefix set.
    second : SiteSchedule, optional
        Generator of ``S2`` for the ``"-S1+S2+S0"`` variant; defaults to a
        copy of the first generator.
    """

    kind: str = "power2"
    eta: float = 1.2
    i_star: int = 21
    variant: str = "S1"
    S0: Tuple[int, ...] = ()
    second: Optional["SiteSchedule"] = field(default=None, compare=True)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not (1.0 < float(self.eta) <= 2.0):
            raise ValueError("eta must lie in (1,2]")
        if int(self.i_star) < 21:
            raise ValueError(f"i_star must be >= 21, got {self.i_star}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "S0", tuple(sorted(set(int(s) for s in self.S0))))
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "i_star", int(self.i_star))

    @property
    def s2(self):
        return self.second if self.second is not None else self


def s_of(sched: SiteSchedule, i: int) -> int:
    """The ``i``-th site of the generator (as a Python integer).

    Raises
    ------
    OverflowError
        When the loggevrey value leaves the floating point range.
    """
    i = int(i)
    if i < 0:
        raise ValueError("site index must be non-negative")
    if sched.kind == "power2":
        return 2 ** i
    if i < len(_LOGGEVREY_PREFIX):
        return _LOGGEVREY_PREFIX[i]
    if i <= _MONOTONE_FIX_UPTO:
        # minimal strictly increasing repair of the integer part near the prefix
        return max(_raw_loggevrey(i, sched.eta), s_of(sched, i - 1) + 1)
    return _raw_loggevrey(i, sched.eta)


def _raw_loggevrey(i, eta):
    expo = math.log(i) ** (1.0 + eta)
    if expo > 709.0:
        raise OverflowError(f"s({i}) exceeds the floating point range")
    return int(math.floor(math.exp(expo)))


def i_of(sched: SiteSchedule, s: int) -> Tuple[int, bool]:
    """Floor-inverse: largest ``i`` with ``s_of(i) <= s`` and a membership flag."""
    s = int(s)
    if s < s_of(sched, 0):
        raise ValueError(f"s={s} lies below s(0)={s_of(sched, 0)}")
    if sched.kind == "power2":
        i = s.bit_length() - 1
        return i, s == 2 ** i
    lo, hi = 0, 1
    while s_of(sched, hi) <= s:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if s_of(sched, mid) <= s:
            lo = mid
        else:
            hi = mid
    return lo, s_of(sched, lo) == s


@dataclass
class AdmissibilityReport:
    i_max: int
    passed: dict
    counterexample: dict
    vacuous: dict

    @property
    def ok(self):
        return all(self.passed.values())

    def lines(self):
        out = []
        for key in ("growth", "superadditive", "homogeneous", "square"):
            tag = "PASS" if self.passed[key] else "FAIL"
            note = " (vacuous)" if self.vacuous[key] else ""
            cex = self.counterexample[key]
            out.append(f"{key}: {tag}{note}" + (f" first counterexample {cex}" if cex else ""))
        return out


def validate_admissible(sched: SiteSchedule, i_max: int, s_func=None) -> AdmissibilityReport:
    """Brute-force check of the growth, superadditivity and square conditions.

    Only indices ``i >= i_star`` are tested, as the conditions are not
    required below the threshold.  The growth condition is read with the
    integer-part convention ``s(i) >= [exp((log i)^{1+eta})]``.

    ``s_func`` overrides the generator (used to probe non-admissible
    schedules such as ``s(i) = i``).
    """
    if i_max < sched.i_star:
        raise ValueError("i_max must be at least i_star")
    s = s_func if s_func is not None else (lambda k: s_of(sched, k))
    lo = sched.i_star
    cache = {}

    def sv(k):
        if k not in cache:
            cache[k] = s(k)
        return cache[k]

    passed = dict.fromkeys(("growth", "superadditive", "homogeneous", "square"), True)
    cex = dict.fromkeys(passed, None)
    vac = dict.fromkeys(passed, True)

    for i in range(lo, i_max + 1):
        vac["growth"] = False
        bound = math.floor(math.exp(math.log(i) ** (1.0 + sched.eta)))
        if sv(i) < bound:
            passed["growth"], cex["growth"] = False, {"i": i, "s": sv(i), "bound": bound}
            break
    for i in range(lo, i_max + 1):
        for ip in range(lo, i_max - i + 1):
            vac["superadditive"] = False
            if sv(i + ip) < sv(i) + sv(ip):
                passed["superadditive"], cex["superadditive"] = False, {"i": i, "i'": ip}
                break
        if not passed["superadditive"]:
            break
    for i in range(lo, i_max + 1):
        for h in range(1, i_max // i + 1):
            vac["homogeneous"] = False
            if sv(h * i) < h * sv(i):
                passed["homogeneous"], cex["homogeneous"] = False, {"i": i, "h": h}
                break
        if not passed["homogeneous"]:
            break
    i = lo
    while i * i <= i_max:
        vac["square"] = False
        if sv(i * i) < sv(i) ** 2:
            passed["square"], cex["square"] = False, {"i": i}
            break
        i += 1
    return AdmissibilityReport(i_max, passed, cex, vac)


def _positive_sites(sched: SiteSchedule, J: int):
    out = []
    i = 0
    while True:
        try:
            s = s_of(sched, i)
        except OverflowError:
            break
        if s > J:
            break
        out.append(s)
        i += 1
    return out


def gen_sites(sched: SiteSchedule, J: int) -> list:
    """Sorted, duplicate-free ``S`` intersected with ``[-J, J]``."""
    if J < 1:
        raise ValueError("J must be >= 1")
    s1 = _positive_sites(sched, J)
    v = sched.variant
    out = set()
    if v in ("S1", "S1+S0"):
        out.update(s1)
    if v in ("-S1", "-S1+S0", "-S1+S2+S0"):
        out.update(-s for s in s1)
    if v == "-S1+S2+S0":
        out.update(_positive_sites(sched.s2, J))
    if v.endswith("S0"):
        out.update(s for s in sched.S0 if abs(s) <= J)
    return sorted(out)


def site_index(sched: SiteSchedule, s: int) -> int:
    """The index ``i(s)`` entering Diophantine weights.

    Negative sites use the generator of their absolute value.  Points of
    the finite prefix ``S0`` that are not generated get index 0.
    """
    s = int(s)
    if s > 0 and sched.variant == "-S1+S2+S0":
        gen = sched.s2
    else:
        gen = sched
    a = abs(s)
    if a < s_of(gen, 0):
        return 0
    i, member = i_of(gen, a)
    if not member:
        return 0
    if s < 0 and sched.variant in ("S1", "S1+S0"):
        return 0
    if s > 0 and sched.variant in ("-S1", "-S1+S0"):
        return 0
    return i
