"""Reference values for crates/core/tests/oracles.rs.

Independent dense-matrix implementation of the implicit scheme, the
Girsanov exponent and the weak-form residual, plus scipy's two-sample KS
statistic. Run with `python3 tools/oracle_values.py` and paste the output.
"""
import numpy as np
from scipy.stats import ks_2samp

def noise(nt, nx):
    k = np.arange(nt)[:, None]
    j = np.arange(nx)[None, :]
    return 0.05 * np.sin(1.3 * k + 0.7 * j + 0.1)

def laplacian(nx, dx, boundary):
    m = np.zeros((nx, nx))
    for j in range(nx):
        m[j, j] = -2.0
        if j > 0:
            m[j, j - 1] = 1.0
        if j < nx - 1:
            m[j, j + 1] = 1.0
    ghost = 1.0 if boundary == "neumann" else -1.0
    m[0, 0] += ghost
    m[-1, -1] += ghost
    return m / dx**2

def simulate(T, L, nt, nx, a, drift, h, dw, boundary="neumann"):
    dt, dx = T / nt, L / nx
    x = (np.arange(nx) + 0.5) * dx
    A = np.eye(nx) - dt * laplacian(nx, dx, boundary)
    u = np.empty((nt + 1, nx))
    u[0] = h(x)
    for k in range(nt):
        rhs = u[k] + dt * drift(u[k]) + a(u[k]) * dw[k] / dx
        u[k + 1] = np.linalg.solve(A, rhs)
    return x, u

def residual(T, L, nt, nx, a, drift, h, dw, u, m):
    dt, dx = T / nt, L / nx
    x = (np.arange(nx) + 0.5) * dx
    kw = m * np.pi / L
    phi = np.cos(kw * x)
    mass = np.sum((u[-1] - h(x)) * phi) * dx
    lap = np.sum(u[:-1] * (-kw**2) * phi) * dt * dx
    sto = np.sum(a(u[:-1]) * phi * dw)
    dri = np.sum(drift(u[:-1]) * phi) * dt * dx
    return abs(mass - lap - sto - dri)

def show(name, v):
    v = np.atleast_1d(v)
    print(f"{name}: [{', '.join(repr(float(t)) for t in v)}]")

T, L, nt, nx = 0.1, 1.0, 5, 4
dw = noise(nt, nx)
gamma, C = 0.5, 1.0
a = lambda u: C * np.sign(u) * np.abs(u) ** gamma
d = lambda u: 2 * u * (1 - u**2)
zero = lambda u: 0.0 * u
h = lambda x: 0.5 * np.cos(np.pi * x / L)
R = lambda u: (2 / C) * np.abs(u) ** (1 - gamma) * (1 - u**2)

_, ud = simulate(T, L, nt, nx, a, d, h, dw)
show("allen_cahn_direct_terminal", ud[-1])
show("allen_cahn_direct_residual_m1", residual(T, L, nt, nx, a, d, h, dw, ud, 1))
_, u0 = simulate(T, L, nt, nx, a, zero, h, dw)
show("allen_cahn_driftless_terminal", u0[-1])
r = R(u0[:-1])
dt, dx = T / nt, L / nx
show("allen_cahn_driftless_log_xi", np.sum(r * dw) - 0.5 * np.sum(r**2) * dt * dx)
show("allen_cahn_driftless_r2", np.sum(r**2) * dt * dx)

_, ub = simulate(T, L, nt, nx, lambda u: 0 * u + 1.0, lambda u: 0 * u + 0.3,
                 lambda x: 0 * x + 0.2, dw, boundary="dirichlet")
show("dirichlet_constant_terminal", ub[-1])

xa = np.array([0.3, -1.2, 2.5, 0.0, 0.7, 1.1, -0.4])
xb = np.array([0.1, 0.9, 2.0, -0.5, 1.4])
show("ks_unit_weights", ks_2samp(xa, xb).statistic)
wa = np.array([2, 1, 3, 1, 1, 2, 1])
wb = np.array([1, 4, 1, 2, 1])
show("ks_integer_weights", ks_2samp(np.repeat(xa, wa), np.repeat(xb, wb)).statistic)
