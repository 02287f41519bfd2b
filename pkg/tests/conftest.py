import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_circular_convolve(img, k):
    """Spatial-domain circular convolution with the kernel center at the origin."""
    H, W = img.shape
    n = k.shape[0]
    r = n // 2
    out = np.zeros_like(img, dtype=float)
    for i in range(H):
        for j in range(W):
            s = 0.0
            for a in range(n):
                for b in range(n):
                    s += k[a, b] * img[(i - (a - r)) % H, (j - (b - r)) % W]
            out[i, j] = s
    return out


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
