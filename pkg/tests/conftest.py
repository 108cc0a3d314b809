import numpy as np
import pytest
import torch

FD_STEP = 1e-5


def central_diff(fn, x, step=FD_STEP, max_coords=None, seed=0):
    """Central finite differences of scalar ``fn(x)`` w.r.t. ``x``.

    Returns ``(coords, values)``; with ``max_coords`` only a random subset of
    flat coordinates is probed.
    """
    flat = x.detach().clone().reshape(-1)
    n = flat.numel()
    if max_coords is None or max_coords >= n:
        coords = np.arange(n)
    else:
        coords = np.random.default_rng(seed).choice(n, size=max_coords, replace=False)
    vals = []
    for k in coords:
        orig = flat[k].item()
        flat[k] = orig + step
        up = float(fn(flat.reshape(x.shape)).detach())
        flat[k] = orig - step
        down = float(fn(flat.reshape(x.shape)).detach())
        flat[k] = orig
        vals.append((up - down) / (2 * step))
    return coords, np.asarray(vals)


def analytic_grad(fn, x):
    x = x.detach().clone().requires_grad_(True)
    out = fn(x)
    (g,) = torch.autograd.grad(out, x)
    return g.detach().reshape(-1).numpy()


def grad_rel_error(fn, x, max_coords=None, seed=0):
    """Relative L2 error between autograd and finite-difference gradients on probed coords."""
    coords, num = central_diff(fn, x, max_coords=max_coords, seed=seed)
    ana = analytic_grad(fn, x)[coords]
    return float(np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-12))


@pytest.fixture
def f64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------

_acceptance: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or report.outcome != "passed":
        prev = _acceptance.get(number, (title, "PASS"))[1]
        status = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"
        _acceptance[number] = (title, status)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("acceptance")
    if m is not None:
        outcome.get_result().acceptance = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, status = _acceptance[number]
        terminalreporter.write_line(f"AC{number:02d} {status}  {title}")
