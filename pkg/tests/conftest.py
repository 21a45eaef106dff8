import numpy as np
import pytest

from cage2pomdp.adversary import AttackerStrategyId, make_strategy
from cage2pomdp.dynamics import CageSimulator, DefenderAction
from cage2pomdp.scenario import default_scenario, load_scenario


@pytest.fixture(scope="session")
def scn():
    return default_scenario()


@pytest.fixture(scope="session")
def toy_scn():
    return load_scenario("""
subnets: [1]
services: [WEB]
target_host: BOX
hosts:
  - name: BOX
    subnet: 1
    services: {WEB: S}
""")


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels(scn):
    # force jit compilation of every kernel before any test measures runtime
    sim = CageSimulator(scn, make_strategy(AttackerStrategyId.BLINE, scn),
                        detection_probability=1.0)
    rng = np.random.default_rng(0)
    st = sim.initial_state()
    res = sim.step(st, DefenderAction.idle(), rng)
    sim.filter_batch((st,), DefenderAction.idle(), res.observation,
                     rng.random((8, 3)), rng.random(4))
    sim2 = CageSimulator(scn, make_strategy(AttackerStrategyId.MEANDER, scn))
    sim2.step(st, DefenderAction.idle(), rng)
