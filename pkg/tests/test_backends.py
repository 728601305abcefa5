"""The numpy fallback (PCBF_NUMBA=0) must agree with the jitted kernels."""

import json
import os
import subprocess
import sys

import numpy as np

from predcbf import _jit, invariance, model, pcbf, safempc

SCRIPT = r"""
import json
import numpy as np
from predcbf import _jit, invariance, model, pcbf, safempc
lin = model.preset("linear-unstable")
sol = safempc.solve(safempc.SafeMpcProblem.soft(lin), [-1.2, 0.8])
ker = invariance.viability_kernel_grid(lin.system, lin.X, lin.U, 41, 21, mode="outer")
g = pcbf.ValueGrid.from_function(lambda p: float(np.hypot(*p) - 0.5), [[-1, 1], [-1, 1]], 41)
con = pcbf.extract_contour(g, 0.0, eps0=0.0)
print(json.dumps({"backend": _jit.backend_name(), "V": sol.V, "u": sol.u.ravel().tolist(),
                  "kernel": ker.member.ravel().astype(int).tolist(),
                  "contour": con.points().tolist()}))
"""


def test_numpy_path_matches():
    env = dict(os.environ, PCBF_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                         text=True, check=True).stdout
    ref = json.loads(out.strip().splitlines()[-1])
    assert ref["backend"] == "numpy"

    lin = model.preset("linear-unstable")
    sol = safempc.solve(safempc.SafeMpcProblem.soft(lin), [-1.2, 0.8])
    ker = invariance.viability_kernel_grid(lin.system, lin.X, lin.U, 41, 21, mode="outer")
    g = pcbf.ValueGrid.from_function(lambda p: float(np.hypot(*p) - 0.5), [[-1, 1], [-1, 1]], 41)
    con = pcbf.extract_contour(g, 0.0, eps0=0.0)
    assert abs(sol.V - ref["V"]) < 1e-9
    assert np.allclose(sol.u.ravel(), ref["u"], atol=1e-6)
    assert np.array_equal(ker.member.ravel().astype(int), ref["kernel"])
    assert np.allclose(con.points(), ref["contour"])


def test_backend_name():
    assert _jit.backend_name() in ("numba", "numpy")
