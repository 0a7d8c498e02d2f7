"""Central finite-difference verification of reverse-mode gradients."""
import numpy as np

from .tensor import no_grad, precision, record_kinks


class NonDifferentiablePoint(RuntimeError):
    """A finite-difference probe crossed a kink (ReLU sign flip or max tie)."""


def _same_branches(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def relative_error(g_ad, g_fd):
    return np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))


def grad_check(loss_fn, params, h=1e-5, coords=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    Args:
        loss_fn: zero-argument callable returning a scalar ``Tensor`` that
            depends on ``params``. Must be deterministic.
        params: tensors to probe.
        h: finite-difference step.
        coords: if set, probe only this many randomly chosen coordinates per
            tensor (drawn from ``rng``) instead of all of them.
        rng: generator for the coordinate sample.

    Raises:
        NonDifferentiablePoint: a probe changed a ReLU mask or a max index,
            so the point must be re-sampled.
    """
    with precision("f64"):
        for p in params:
            if p.dtype != np.float64:
                raise TypeError("grad_check needs float64 tensors")
            p.grad = None
        with record_kinks() as base:
            loss = loss_fn()
        loss.backward()
        worst = 0.0
        for p in params:
            g_ad = np.zeros_like(p.data).reshape(-1) if p.grad is None else p.grad.reshape(-1).copy()
            flat = p.data.reshape(-1)
            if coords is None or coords >= flat.size:
                probes = np.arange(flat.size)
            else:
                probes = np.sort(rng.choice(flat.size, coords, replace=False))
            g_fd = np.empty(probes.size)
            for j, i in enumerate(probes):
                orig = flat[i]
                vals = []
                for step in (h, -h):
                    flat[i] = orig + step
                    with no_grad(), record_kinks() as probe:
                        vals.append(float(loss_fn().data))
                    if not _same_branches(base, probe):
                        flat[i] = orig
                        raise NonDifferentiablePoint(f"probe {i} of a {p.shape} tensor crossed a kink")
                flat[i] = orig
                g_fd[j] = (vals[0] - vals[1]) / (2 * h)
            worst = max(worst, float(relative_error(g_ad[probes], g_fd).max(initial=0.0)))
            p.grad = None
    return worst


def grad_check_resampled(make_case, rng, attempts=20, h=1e-5, coords=None):
    """Run ``grad_check`` on ``make_case(rng_split)``, re-sampling on kinks.

    ``make_case`` returns ``(loss_fn, params)``.
    """
    last = None
    for attempt in range(attempts):
        case_rng = rng.split("attempt", attempt)
        loss_fn, params = make_case(case_rng)
        try:
            return grad_check(loss_fn, params, h, coords, case_rng.split("coords"))
        except NonDifferentiablePoint as exc:
            last = exc
    raise NonDifferentiablePoint(f"no smooth point found in {attempts} attempts: {last}")
