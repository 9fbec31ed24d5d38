import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tone(freq_hz, rate_hz, n, amp=1.0, phase=0.0):
    t = np.arange(n) / rate_hz
    return amp * np.sin(2 * np.pi * freq_hz * t + phase)


def fft_peak_hz(x, rate_hz, pad=8):
    """Peak frequency via a zero-padded, Hann-windowed FFT with parabolic refinement."""
    n = len(x) * pad
    mag = np.abs(np.fft.rfft(x * np.hanning(len(x)), n))
    k = int(np.argmax(mag[1:-1])) + 1
    a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
    delta = 0.5 * (a - c) / (a - 2 * b + c)
    return (k + delta) * rate_hz / n


def numeric_grad(f, x, h=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (modified in place)."""
    grad = np.zeros_like(x)
    for idx in (np.ndindex(x.shape) if indices is None else indices):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-7):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def t_two_sided_quad(t, df):
    """Two-sided Student-t p-value by adaptive quadrature of the density."""
    from math import lgamma, exp, log, pi
    from scipy.integrate import quad

    c = exp(lgamma((df + 1) / 2) - lgamma(df / 2) - 0.5 * log(df * pi))
    pdf = lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2)  # noqa: E731
    body, _ = quad(pdf, 0.0, abs(t), epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - 2.0 * body


def f_sf_quad(f, d1, d2):
    """Upper tail of the F distribution by quadrature of the density."""
    from math import lgamma, exp, log
    from scipy.integrate import quad

    logc = lgamma((d1 + d2) / 2) - lgamma(d1 / 2) - lgamma(d2 / 2) + (d1 / 2) * log(d1 / d2)

    def pdf(x):
        if x <= 0:
            return 0.0
        return exp(logc + (d1 / 2 - 1) * log(x) - ((d1 + d2) / 2) * log(1 + d1 * x / d2))

    tail, _ = quad(pdf, f, np.inf, epsabs=1e-14, epsrel=1e-12, limit=400)
    return tail


# ---------------------------------------------------------------- network gradient checks

def _tiny_arch():
    from psent import nn
    return nn.ArchConfig(in_channels=2, widths=(4, 8), blocks=(1, 1), se_ratio=2, stem_kernel=3)


TINY = _tiny_arch()


def check_layer(forward, backward, inputs, rng):
    """Worst relative error of sum(forward(*inputs) * R) gradients over every input."""
    out, cache = forward(*inputs)
    weight = rng.standard_normal(out.shape)
    grads = backward(weight, cache)
    worst = 0.0
    for x, g in zip(inputs, grads):
        num = numeric_grad(lambda: float(np.sum(forward(*inputs)[0] * weight)), x)
        worst = max(worst, max_rel_error(g, num))
    return worst


def network_gradcheck(seed, samples_per_tensor=4):
    """Worst relative error over sampled entries of every parameter tensor of a tiny
    float64 network (one identity block, one projection block) under focal loss."""
    from psent import nn

    rng = np.random.default_rng(seed)
    model = nn.SEResNet(TINY, seed=seed, dtype=np.float64)
    x = rng.standard_normal((3, 2, 8, 8))
    y = np.array([0, 1, 1])
    params = nn.FocalLossParams(2.0, (0.4, 0.6))
    _, grads = nn.backward(model, x, y, params)
    worst = {}
    for name, p in model.params.items():
        flat = rng.choice(p.size, min(samples_per_tensor, p.size), replace=False)
        idx = [np.unravel_index(i, p.shape) for i in flat]
        num = numeric_grad(lambda: nn.backward(model, x, y, params)[0], p, indices=idx)
        worst[name] = max_rel_error(np.array([grads[name][i] for i in idx]), np.array([num[i] for i in idx]))
    return worst


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE = {}


def record_criterion(number, title, ok, detail=""):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
