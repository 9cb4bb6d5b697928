import math

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def conv1d_loops(x, w, b, stride=1, pad=0):
    """Nested-loop cross-correlation oracle, x [C, L], w [O, C, K]."""
    c_in, length = x.shape
    c_out, _, k = w.shape
    l_out = (length + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, l_out), dtype=np.float64)
    for o in range(c_out):
        for j in range(l_out):
            acc = float(b[o])
            for c in range(c_in):
                for t in range(k):
                    i = j * stride + t - pad
                    if 0 <= i < length:
                        acc += float(x[c, i]) * float(w[o, c, t])
            out[o, j] = acc
    return out


def conv2d_loops(x, w, b, stride=(1, 1), pad=(0, 0)):
    """Nested-loop 2-D cross-correlation oracle, x [C, H, W], w [O, C, KH, KW]."""
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    ho = (h + 2 * pad[0] - kh) // stride[0] + 1
    wo = (wd + 2 * pad[1] - kw) // stride[1] + 1
    out = np.zeros((c_out, ho, wo), dtype=np.float64)
    for o in range(c_out):
        for r in range(ho):
            for s in range(wo):
                acc = float(b[o])
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            i, j = r * stride[0] + u - pad[0], s * stride[1] + v - pad[1]
                            if 0 <= i < h and 0 <= j < wd:
                                acc += float(x[c, i, j]) * float(w[o, c, u, v])
                out[o, r, s] = acc
    return out


# --- metric oracles: plain python sums and an explicit DFT ---

SEG_N, SEG_FS = 800, 200.0
_k = np.arange(SEG_N // 2 + 1)[:, None]
_n = np.arange(SEG_N)[None, :]
_COS, _SIN = np.cos(2 * np.pi * _k * _n / SEG_N), np.sin(2 * np.pi * _k * _n / SEG_N)
HANN = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(SEG_N) / SEG_N)  # periodic Hann


def rms_bf(x):
    return math.sqrt(sum(v * v for v in x) / len(x))


def psd_bf(x):
    xw = np.asarray(x) * HANN
    power = (_COS @ xw) ** 2 + (_SIN @ xw) ** 2
    p = power / (SEG_FS * np.sum(HANN**2))
    p[1:-1] *= 2
    return p


def cc_bf(y, x):
    y, x = list(y), list(x)
    my, mx = sum(y) / len(y), sum(x) / len(x)
    cov = sum((a - my) * (b - mx) for a, b in zip(y, x)) / len(y)
    vy = sum((a - my) ** 2 for a in y) / len(y)
    vx = sum((b - mx) ** 2 for b in x) / len(x)
    return cov / math.sqrt(vy * vx)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
