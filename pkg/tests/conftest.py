import math

import numpy as np
import pytest

from ssmgrad import (
    DerivativeBundle,
    SeasonalArSpec,
    SeasonalSpec,
    StateSpaceModel,
    SystemMatrices,
    TrendSpec,
    available_backends,
    simulate_series,
)


def pytest_generate_tests(metafunc):
    if "backend" in metafunc.fixturenames:
        metafunc.parametrize("backend", available_backends())


class WobbleSpec(StateSpaceModel):
    """Test-only 2-state model with parameter-dependent F, G, H and Q.

    Exercises every derivative path of the recursions, including the
    H- and G-derivative terms that the shipped model families never use.
    """

    @property
    def p(self):
        return 4

    @property
    def m(self):
        return 2

    @property
    def k(self):
        return 1

    def realize(self, theta):
        a, b, c, d = self.validate_theta(theta)
        F = np.array([[math.tanh(a), 0.3], [0.1, 0.5 + 0.2 * math.tanh(c)]])
        G = np.array([[1.0 + 0.5 * math.sin(b)], [0.25]])
        H = np.array([1.0, math.sin(c)])
        Q = np.array([[math.exp(d)]])
        return SystemMatrices(F=F, G=G, H=H, Q=Q)

    def differentiate(self, theta):
        a, b, c, d = self.validate_theta(theta)
        p, m = self.p, self.m
        dF = np.zeros((p, m, m))
        d2F = np.zeros((p, p, m, m))
        sech2_a = 1.0 - math.tanh(a) ** 2
        sech2_c = 1.0 - math.tanh(c) ** 2
        dF[0, 0, 0] = sech2_a
        d2F[0, 0, 0, 0] = -2.0 * math.tanh(a) * sech2_a
        dF[2, 1, 1] = 0.2 * sech2_c
        d2F[2, 2, 1, 1] = -0.4 * math.tanh(c) * sech2_c

        dG = np.zeros((p, m, 1))
        d2G = np.zeros((p, p, m, 1))
        dG[1, 0, 0] = 0.5 * math.cos(b)
        d2G[1, 1, 0, 0] = -0.5 * math.sin(b)

        dH = np.zeros((p, m))
        d2H = np.zeros((p, p, m))
        dH[2, 1] = math.cos(c)
        d2H[2, 2, 1] = -math.sin(c)

        dQ = np.zeros((p, 1, 1))
        d2Q = np.zeros((p, p, 1, 1))
        dQ[3, 0, 0] = math.exp(d)
        d2Q[3, 3, 0, 0] = math.exp(d)

        return DerivativeBundle(
            dF=dF, dG=dG, dH=dH, dQ=dQ, dR=np.zeros(p),
            d2F=d2F, d2G=d2G, d2H=d2H, d2Q=d2Q, d2R=np.zeros((p, p)),
        )

    def describe(self, theta):
        a, b, c, d = self.validate_theta(theta)
        return {"a": a, "b": b, "c": c, "q": math.exp(d)}


def model_zoo():
    """(label, spec, reference theta) for every shipped family."""
    return [
        ("trend1", TrendSpec(order=1), np.array([-0.7])),
        ("trend2", TrendSpec(order=2), np.array([-2.0])),
        ("seasonal12", SeasonalSpec(period=12), np.array([-2.0, -1.0])),
        ("sar1", SeasonalArSpec(period=12, ar_order=1), np.array([-2.0, -1.5, -0.5, 0.8])),
        ("sar2", SeasonalArSpec(period=12, ar_order=2), np.array([-2.0, -1.5, -0.5, 0.8, -0.4])),
        ("sar3", SeasonalArSpec(period=4, ar_order=3), np.array([-2.0, -1.5, -0.5, 0.8, -0.4, 0.3])),
    ]


@pytest.fixture(params=model_zoo(), ids=lambda c: c[0])
def model_case(request):
    return request.param


def make_series(spec, theta, n=100, seed=42):
    return simulate_series(spec, theta, n, seed=seed)


def bimodal_trend_series():
    """Series whose order-2 trend likelihood has two separated maxima.

    A gently curving path plus a strong period-20 cycle: the trend either
    smooths over the cycle (small variance mode) or tracks it (large
    variance mode).
    """
    rng = np.random.default_rng(0)
    n = 155
    t = np.arange(n)
    return (
        0.03 * (t - n / 2)
        + 5.0 * np.sin(2 * np.pi * t / 155)
        + 8.0 * np.sin(2 * np.pi * t / 20.0)
        + 0.3 * rng.standard_normal(n)
    )
