import numpy as np
import pytest

from jmnav.gaitsim import preset_profile, simulate
from jmnav.rotations import quat_from_rotvec
from jmnav.strapdown import NoiseConfig

_ACCEPTANCE = []


def random_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_rotvec(rng, max_angle=np.pi):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0.0, max_angle)


def random_rotation_quat(rng, max_angle=np.pi):
    return quat_from_rotvec(random_rotvec(rng, max_angle))


def euler_grid_best(M, step_deg=1.0):
    """Largest tr(M^T C) over a Z-Y-X Euler grid, with its Euler angles."""
    yaw = np.deg2rad(np.arange(0, 360, step_deg))
    pitch = np.deg2rad(np.arange(-90, 90, step_deg))
    roll = np.deg2rad(np.arange(0, 360, step_deg))
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    # A = Rz(yaw) Ry(pitch) for every pair, B = Rx(roll)
    Y, P = np.meshgrid(np.arange(yaw.size), np.arange(pitch.size), indexing="ij")
    Y, P = Y.ravel(), P.ravel()
    A = np.zeros((Y.size, 3, 3))
    A[:, 0, 0] = cy[Y] * cp[P]
    A[:, 0, 1] = -sy[Y]
    A[:, 0, 2] = cy[Y] * sp[P]
    A[:, 1, 0] = sy[Y] * cp[P]
    A[:, 1, 1] = cy[Y]
    A[:, 1, 2] = sy[Y] * sp[P]
    A[:, 2, 0] = -sp[P]
    A[:, 2, 2] = cp[P]
    B = np.zeros((roll.size, 3, 3))
    B[:, 0, 0] = 1.0
    B[:, 1, 1] = np.cos(roll)
    B[:, 1, 2] = -np.sin(roll)
    B[:, 2, 1] = np.sin(roll)
    B[:, 2, 2] = np.cos(roll)
    # tr(M^T A B) = sum((A^T M) * B)
    N = np.einsum("nji,jk->nik", A, M).reshape(-1, 9)
    score = N @ B.reshape(-1, 9).T
    k = np.unravel_index(np.argmax(score), score.shape)
    return score[k], (yaw[Y[k[0]]], pitch[P[k[0]]], roll[k[1]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def walk_data():
    """Noisy 20 s walk."""
    return simulate(preset_profile("walk", 20.0, seed=3))


@pytest.fixture(scope="session")
def quiet_walk():
    """Noise-free 60 s walk."""
    return simulate(preset_profile("walk", 60.0, seed=0, noise=NoiseConfig(sigma_s=0.0, sigma_w=0.0)))


@pytest.fixture(scope="session")
def stationary_data():
    return simulate(preset_profile("stationary", 60.0, seed=5))


@pytest.fixture
def acceptance():
    """Record one result line per acceptance criterion for the terminal summary."""

    def record(number, name, passed, detail):
        line = f"[{number}] {name}: {'PASS' if passed else 'FAIL'} ({detail})"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


def state_difference(a, b):
    """Error-state difference ``a - b`` in the navigation-frame attitude convention."""
    from jmnav.rotations import quat_conjugate, quat_multiply, rotvec_from_quat

    d = np.concatenate([a.r - b.r, a.v - b.v, rotvec_from_quat(quat_multiply(a.q, quat_conjugate(b.q)))])
    if a.xi is not None:
        d = np.append(d, a.xi - b.xi)
    return d


def perturb(x, dx):
    """Apply an error-state perturbation to a NavState."""
    from jmnav.eskf import inject

    return inject(x, dx)


def fd_jacobian(func, x, d, h=1e-6):
    """Central-difference Jacobian of ``func(NavState) -> NavState`` in error-state coordinates."""
    y0 = func(x)
    J = np.zeros((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        J[:, i] = (state_difference(func(perturb(x, e)), y0) - state_difference(func(perturb(x, -e)), y0)) / (2 * h)
    return J


def random_state(rng, height=False):
    from jmnav.strapdown import NavState

    return NavState(rng.standard_normal(3), rng.standard_normal(3), random_quat(rng), 0.3 if height else None)


def random_sample(rng):
    from jmnav.strapdown import ImuSample

    return ImuSample(0.0, rng.standard_normal(3) * 3 + [0, 0, 9.81], rng.standard_normal(3))


def enumerate_sequences(model, prior, samples, mode_prior=None, noise=None, total=False):
    """Exhaustive mixture over every admissible mode sequence.

    Each sequence runs its own reference error-state filter. Returns a dict
    mapping the mode history (initial mode first) to ``(log_weight, belief)``
    with normalized weights. With ``total`` the log of the unnormalized sum
    over sequences, i.e. ``log p(y_2:N | y_1)``, is returned as well.
    """
    from jmnav.eskf import predict, update
    from jmnav.strapdown import ImuSample, NoiseConfig, sample_interval

    noise = noise or NoiseConfig(g=model.gravity)
    L = model.n_modes
    mode_prior = np.full(L, 1.0 / L) if mode_prior is None else np.asarray(mode_prior, dtype=float)
    pi = model.transition.values
    hyps = [((m + 1,), np.log(mode_prior[m]), prior) for m in range(L) if mode_prior[m] > 0]
    for k in range(1, len(samples)):
        row = samples[k]
        u = ImuSample(row[0], row[1:4], row[4:7])
        dt = sample_interval(samples[k - 1][0], row[0], noise)
        nxt = []
        for seq, logw, b in hyps:
            parent = seq[-1]
            pred = predict(b, u, noise, dt, assign_height=model.assigns_height(parent))
            for child in range(1, L + 1):
                p = pi[child - 1, parent - 1]
                if p <= 0.0:
                    continue
                post, ll = update(pred, model.constraint(child, pred.mean, u))
                nxt.append((seq + (child,), logw + np.log(p) + ll, post))
        hyps = nxt
    logs = np.array([h[1] for h in hyps])
    norm = np.logaddexp.reduce(logs)
    out = {seq: (logw - norm, b) for seq, logw, b in hyps}
    return (out, norm) if total else out
