"""Independent fixed-step integrators used as test oracles.

Deliberately separate from the package: these integrate the raw ODEs
numerically so the closed-form solvers are checked against something that
shares none of their code.
"""

from __future__ import annotations


def rk4(f, y0, t_end, n_steps):
    """Classical RK4 with n_steps fixed steps over [0, t_end]."""
    y = list(y0)
    t = 0.0
    h = t_end / n_steps
    for _ in range(n_steps):
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, [yi + 0.5 * h * ki for yi, ki in zip(y, k1)])
        k3 = f(t + 0.5 * h, [yi + 0.5 * h * ki for yi, ki in zip(y, k2)])
        k4 = f(t + h, [yi + h * ki for yi, ki in zip(y, k3)])
        y = [yi + h / 6.0 * (a + 2 * b + 2 * c + d)
             for yi, a, b, c, d in zip(y, k1, k2, k3, k4)]
        t += h
    return y


def charge_rhs(params):
    return lambda t, y: [(params.v_in - params.r_charge * y[0]) / params.l]


def discharge_rhs(string):
    return lambda t, y: [-(y[0] - string.v_f) / (string.c_out * string.r_led)]


def freewheel_rhs(params):
    return lambda t, y: [-params.r_fw * y[0] / params.l]


def transfer_rhs(params, string, conducting=True):
    def f(t, y):
        v, i = y
        i_led = (v - string.v_f) / string.r_led if conducting else 0.0
        return [(i - i_led) / string.c_out,
                (params.v_in - v - params.r_transfer * i) / params.l]
    return f
