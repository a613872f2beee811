import numpy as np

from ames.autodiff import Tape


def finite_difference(fn, value, h=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. ``value`` (perturbed in place)."""
    grad = np.zeros_like(value)
    for idx in np.ndindex(value.shape):
        orig = value[idx]
        value[idx] = orig + h
        up = fn()
        value[idx] = orig - h
        down = fn()
        value[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def rel_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def check_gradients(build, inputs, h=1e-5):
    """Compare reverse-mode gradients with central differences.

    ``build(tape, nodes)`` returns a 1x1 loss given one tape constant per
    array in ``inputs``. Returns the worst relative error over all inputs.
    """
    tape = Tape()
    nodes = [tape.constant(x) for x in inputs]
    loss = build(tape, nodes)
    tape.backward(loss)
    analytic = [tape.grad(n).copy() for n in nodes]

    def scalar():
        t = Tape()
        return float(build(t, [t.constant(x) for x in inputs]).value[0, 0])

    return max(rel_error(a, finite_difference(scalar, x, h)) for a, x in zip(analytic, inputs))


ACCEPTANCE_LINES: list[str] = []


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    """Record and print one acceptance verdict line."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
