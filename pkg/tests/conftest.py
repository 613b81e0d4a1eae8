import numpy as np
import pytest

from nlskam.hamops import ActionVector
from nlskam.homological import FrequencyVector
from nlskam.kamflow import Schedules, nls_problem, run_kam
from nlskam.sites import SiteSchedule, gen_sites
from nlskam.spaces import jjap
from nlskam.smalldiv import DiophParams, check_diophantine, enumerate_A, sample_frequencies


def toy_setup(J=4, D=2, f1=1e-3, a=0.5, p0=2.0, gamma=0.1, seed=3, nz_max=4):
    """A small NLS problem around a flat torus with Diophantine frequencies."""
    sc = SiteSchedule()
    sites = gen_sites(sc, J)
    I = ActionVector({s: (a * jjap(s) ** -p0) ** 2 for s in sites})
    r0 = 3.0 * a
    sch = Schedules(r0, p0, (r0 - a) / 4, 0.1, 1.2)
    A = enumerate_A(J, 6, sc)
    W = sample_frequencies(sc, J, 500, seed)
    w = next(w for w in W if check_diophantine(w, DiophParams(gamma), A, J).passed)
    om = FrequencyVector(w, J, sc)
    H, N0 = nls_problem(om, [(1, f1)], D, r0, p0, nz_max=nz_max)
    return dict(J=J, sites=sites, I=I, sch=sch, om=om, H=H, N0=N0, gamma=gamma, f1=f1, r0=r0, p0=p0)


@pytest.fixture(scope="session")
def toy():
    s = toy_setup()
    s["res"] = run_kam(s["H"], s["N0"], s["om"], s["I"], s["sch"], s["gamma"], max_steps=8, tol=1e-15)
    return s


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
