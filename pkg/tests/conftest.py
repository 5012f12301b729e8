import numpy as np
import pytest

from diffbackdoor import SchedulerSpec, build_schedule


def random_schedules(n: int, seed: int = 0, max_T: int = 200):
    """Admissible VP and VE schedules with every correction kind."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        T = int(rng.integers(1, max_T + 1))
        corr = ("OneMinusAlpha", "ConstantOne", "CustomTable")[i % 3]
        table = None
        if corr == "CustomTable":
            table = np.concatenate([[0.0], rng.uniform(-1.0, 2.0, T)])
        if i % 2 == 0:
            lo = float(10 ** rng.uniform(-5, -2))
            hi = float(min(lo + 10 ** rng.uniform(-3, -0.5), 0.9))
            spec = SchedulerSpec(kind="VP", T=T, vp_beta_start=lo, vp_beta_end=hi, correction_kind=corr,
                                 custom_table=table)
        else:
            lo = float(10 ** rng.uniform(-3, 0))
            hi = float(lo * 10 ** rng.uniform(0.5, 4))
            spec = SchedulerSpec(kind="VE", T=T, ve_sigma_min=lo, ve_sigma_max=hi, correction_kind=corr,
                                 custom_table=table)
        out.append(build_schedule(spec))
    return out


@pytest.fixture(scope="session")
def schedule_corpus():
    return random_schedules(50, seed=12345)


@pytest.fixture
def vp2():
    return build_schedule(SchedulerSpec(kind="VP", T=2, vp_beta_start=0.1, vp_beta_end=0.2))


@pytest.fixture
def ve2():
    return build_schedule(SchedulerSpec(kind="VE", T=2, ve_sigma_min=1.0, ve_sigma_max=2.0))
