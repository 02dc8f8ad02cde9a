import json
import os
import subprocess
import sys

import numpy as np
import pytest

SNIPPET = """
import json
import numpy as np
from chanceocp import hmc
from chanceocp._accel import backend_name
from chanceocp.benchmarks import lunar_ccocp, lunar_xi
from chanceocp.kernels import BiasedKernel, kde_mean, kde_pdf_weighted_mean
from chanceocp.ocp import SolveConfig, solve_ccocp

rng = np.random.default_rng(0)
psi = rng.normal(size=10000)
w = rng.normal(size=10000)
kde = {}
for kind in ("split-bernstein", "epanechnikov", "gaussian"):
    bk = BiasedKernel(kind, 0.05)
    kde[kind] = [kde_mean(psi, 0.3, bk), kde_mean(psi, 0.3, bk, "above"),
                 kde_pdf_weighted_mean(psi, 0.3, bk, w)]
s = hmc.sample(lunar_xi(), hmc.HmcConfig(n_samples=3000, seed=4))
sol = solve_ccocp(lunar_ccocp(), SolveConfig(kernel="epanechnikov", seed=1,
                                             hmc=hmc.HmcConfig(n_samples=3000)))
print(json.dumps({"backend": backend_name(), "kde": kde, "draws": s.draws.tolist(),
                  "J": sol.objective, "status": sol.status.value}))
"""


def run(flag):
    env = dict(os.environ, CHANCEOCP_DISABLE_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def both():
    return run(""), run("1")


def test_flag_selects_backend(both):
    fast, slow = both
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"


def test_kde_values_agree(both):
    fast, slow = both
    for kind in fast["kde"]:
        assert np.allclose(fast["kde"][kind], slow["kde"][kind], rtol=0, atol=1e-13)


def test_hmc_chains_agree(both):
    fast, slow = both
    assert np.allclose(fast["draws"], slow["draws"], rtol=0, atol=1e-10)


def test_full_solve_agrees(both):
    fast, slow = both
    assert fast["status"] == slow["status"] == "Converged"
    assert fast["J"] == pytest.approx(slow["J"], abs=1e-8)
