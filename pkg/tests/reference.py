"""Slow, independent reference implementations used as test oracles.

They work in exact rational arithmetic or plain Python loops and share no code
with the package.
"""

from fractions import Fraction


def sum_trace(x0, grads, alpha, beta, s):
    """Scalar SUM iterates x_0..x_T in exact arithmetic."""
    alpha, beta, s = Fraction(alpha), Fraction(beta), Fraction(s)
    x = ys = Fraction(x0)
    out = [x]
    for g in grads:
        g = Fraction(g)
        y_new = x - alpha * g
        ys_new = x - s * alpha * g
        x = y_new + beta * (ys_new - ys)
        ys = ys_new
        out.append(x)
    return out


def eta_exact(beta, s, t, k):
    beta, s = Fraction(beta), Fraction(s)
    return (1 - beta ** (t - k + 1) * (1 - s * (1 - beta))) / (1 - beta)


def stability_recursion(alpha, beta, s, G, L, n, steps):
    """Forward recursion for Delta_t as a double loop over plain floats."""
    delta = [0.0] * (steps + 1)
    for t in range(steps):
        total = 0.0
        for k in range(t + 1):
            eta = (1.0 - beta ** (t - k + 1) * (1.0 - s * (1.0 - beta))) / (1.0 - beta)
            total += eta * alpha * (2.0 * G / n + (1.0 - 1.0 / n) * L * delta[k])
        delta[t + 1] = total
    return delta
