import numpy as np
import pytest

from thermobench.synth import desk_scenario, generate, lumped_scenario
from thermobench.timeseries import MINUTES_PER_WEEK, Dataset, split_train_test, to_minutes

FALL_MONDAY = to_minutes("2015-10-05")


def make_dataset(x, u, ta, ts, start=FALL_MONDAY, step=15, mask=None, vav_ids=None):
    x = np.asarray(x, dtype=float)
    T = x.shape[0]
    x2 = x.reshape(T, -1)
    u2 = np.asarray(u, dtype=float).reshape(T, -1)
    return Dataset(
        step_minutes=step,
        timestamps=start + step * np.arange(T),
        zone_temps=x2,
        vav_flows=u2,
        t_ambient=np.broadcast_to(np.asarray(ta, dtype=float), (T,)).copy(),
        t_supply=np.broadcast_to(np.asarray(ts, dtype=float), (T,)).copy(),
        excitation_mask=np.zeros(T, bool) if mask is None else mask,
        zone_names=tuple(f"z{i}" for i in range(x2.shape[1])),
        vav_ids=vav_ids or tuple(f"v{i}" for i in range(u2.shape[1])),
    )


def lumped_rollout(a, b, c, q, u, v, x0):
    """Reference recursion x(k+1) = a x + b u + c.v + q(k)."""
    T = len(u)
    x = np.empty(T + 1)
    x[0] = x0
    for k in range(T):
        x[k + 1] = a * x[k] + b * u[k] + c[0] * v[k, 0] + c[1] * v[k, 1] + q[k]
    return x


@pytest.fixture(scope="session")
def lumped():
    d, gt = generate(lumped_scenario(seed=0, noise_std=0.05))
    return d, gt, split_train_test(d, 0.9, seed=0)


@pytest.fixture(scope="session")
def lumped_clean():
    d, gt = generate(lumped_scenario(seed=0, noise_std=0.0))
    return d, gt, split_train_test(d, 0.9, seed=0)


@pytest.fixture(scope="session")
def desk():
    cfg = desk_scenario(seed=0)
    d, gt = generate(cfg)
    return cfg, d, gt, split_train_test(d, 0.9, seed=0)


@pytest.fixture(scope="session")
def desk_clean():
    cfg = desk_scenario(seed=0, noise_std=0.0)
    d, gt = generate(cfg)
    return cfg, d, gt, split_train_test(d, 0.9, seed=0)


@pytest.fixture(scope="session")
def desk_identified(desk):
    """Both models identified on the noisy desk scenario (slow: ~70 s)."""
    from thermobench import pipeline as pl

    cfg, d, gt, sp = desk
    pc = pl.PipelineConfig(scenario=cfg, seed=0)
    ma = pl.identify_model_a(sp, d, pc)
    mb, fit = pl.identify_model_b(sp, d, pc)
    return pc, ma, mb, fit


WEEK_STEPS = MINUTES_PER_WEEK // 15


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Criterion number -> (title, passed, detail), printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, detail = results[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")
