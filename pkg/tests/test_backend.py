import math
import os
import subprocess
import sys

import numpy as np
import pytest

from acstab import _backend, _pykernel
from acstab.potentials import (compile_program, exponential, periodic, power_oscillatory,
                               random_decaying, sum_of, tabulated, wigner_von_neumann, zero)

compiled = pytest.importorskip("acstab._kernel")

PROGRAMS = [
    power_oscillatory(1.0, 0.7, 1.3, 0.2),
    wigner_von_neumann(8.0, 1.0),
    exponential(2.0, 0.5, 1.0),
    periodic([0.3, 2.0, -0.5, 0.1, 0.4], 2 * math.pi),
    random_decaying(1.0, 0.6, seed=5),
    tabulated([0.0, 1.0, 2.5, 4.0], [1.0, -2.0, 0.5, 0.0]),
    tabulated([0.0, 1.0, 2.5, 4.0], [1.0, -2.0, 0.5, 0.0], interpolation="step"),
    sum_of(power_oscillatory(1.0, 0.9, 1.0), exponential(1.0, 1.0)),
    power_oscillatory(1.0, 0.7, 1.0, support="negative"),
]


def test_default_backend_is_compiled():
    assert _backend.NAME == "compiled"


@pytest.mark.parametrize("spec", PROGRAMS, ids=lambda s: s.kind)
def test_evaluate_agrees(spec):
    prog = compile_program(spec)
    x = np.linspace(-3.0, 40.0, 997)
    np.testing.assert_allclose(compiled.evaluate(prog, x), _pykernel.evaluate(prog, x),
                               rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("mode", [0, 1])
def test_propagate_agrees(mode):
    U = compile_program(periodic([0.0, 2.0, 0.0], 2 * math.pi))
    V = compile_program(power_oscillatory(1.0, 0.7, 1.0))
    xs = np.linspace(0.0, 60.0, 121)
    y0 = np.array([1.0, 0.3j] if mode == 0 else [1.0, 0.3j, 0, 0, 0], dtype=complex)
    kw = dict(kappa=0.7j, rtol=1e-10, atol=1e-12, max_step=0.1)
    a = compiled.propagate(mode, U, V, 3.4, 0.0, xs, y0, **kw)
    b = _pykernel.propagate(mode, U, V, 3.4, 0.0, xs, y0, **kw)
    assert a[1] == b[1] == 0
    assert a[2] == b[2] and a[3] == b[3]
    np.testing.assert_allclose(a[0], b[0], rtol=1e-11, atol=1e-13)


def test_propagate_zero_background_free_solution():
    Z = compile_program(zero())
    xs = np.linspace(0.0, 20.0, 41)
    for kern in (compiled, _pykernel):
        st = kern.propagate(0, Z, Z, 4.0, 0.0, xs, np.array([0.0, 1.0], complex),
                            rtol=1e-12, atol=1e-14, max_step=0.1)[0]
        np.testing.assert_allclose(st[:, 0], np.sin(2 * xs) / 2, atol=1e-10)


def test_env_selects_python_fallback():
    code = "from acstab import _backend; print(_backend.NAME)"
    env = dict(os.environ, ACSTAB_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.strip()
    assert out == "python"
